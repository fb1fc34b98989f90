"""Panel serialization: ``manifest.yaml`` plus one data CSV per unit."""
import os
import logging
from collections import OrderedDict

import numpy as np
import yaml

from model.build_model import build_unit
from model.panel import PanelModel, plot_data
from util.errors import ConstructionError
from util.params import ParamSet
from util.util import LOGGER_NAME, Table, check_makedirs

MANIFEST = "manifest.yaml"

logger = logging.getLogger(LOGGER_NAME)


def _unit_file(name):
    return "unit_{}.csv".format(name)


def save_panel(panel, path):
    check_makedirs(path)
    units = []
    for u in panel.units:
        if u.model_key is None:
            raise ConstructionError("unit '{}' has no model key and cannot be rebuilt".format(u.name))
        rec = OrderedDict([("name", u.name), ("model", u.model_key), ("t0", u.t0), ("delta_t", u.delta_t),
                           ("obs_names", list(u.obs_names)), ("file", _unit_file(u.name))])
        units.append(dict(rec))
        rows = []
        for n, t in enumerate(u.times.tolist()):
            obs = [float(v) for v in u.data[:, n]] if u.data is not None else [float("nan")] * len(u.obs_names)
            rows.append([t] + obs)
        Table(["time"] + list(u.obs_names), rows).to_csv(os.path.join(path, rec["file"]))
    p = panel.params
    manifest = {
        "units": units,
        "params": {
            "shared": dict(p.shared),
            "specific_names": list(p.specific_names),
            "specific": {u: {b: float(p.specific[i, k]) for i, b in enumerate(p.specific_names)}
                         for k, u in enumerate(p.unit_names)},
        },
        "has_data": all(u.data is not None for u in panel.units),
    }
    with open(os.path.join(path, MANIFEST), "w") as f:
        yaml.safe_dump(manifest, f, default_flow_style=False, sort_keys=False)
    logger.info("Saved panel of {} units to {}".format(panel.U, path))
    return path


def load_panel(path):
    manifest_path = os.path.join(path, MANIFEST)
    if not os.path.isfile(manifest_path):
        raise (RuntimeError("Panel manifest does not exist: " + manifest_path + "\n"))
    with open(manifest_path) as f:
        manifest = yaml.safe_load(f)
    spec = manifest["params"]
    specific_names = list(spec.get("specific_names") or [])
    names = [rec["name"] for rec in manifest["units"]]
    params = ParamSet(spec.get("shared") or {},
                      np.array([[spec["specific"][u][b] for u in names] for b in specific_names], dtype=float),
                      specific_names, names)
    units = []
    for rec in manifest["units"]:
        table = Table.from_csv(os.path.join(path, rec["file"]))
        if list(table.columns) != ["time"] + list(rec["obs_names"]):
            raise (RuntimeError("Unit data columns do not match the manifest: " + rec["file"] + "\n"))
        times = [float(t) for t in table.column("time")]
        data = table.array(rec["obs_names"]).T if manifest.get("has_data", True) else None
        units.append(build_unit(rec["model"], rec["name"], times, t0=rec["t0"], data=data,
                                delta_t=rec.get("delta_t"), params=params.unit_params(rec["name"])))
    return PanelModel(units, params)


def save_plot_data(panel, path):
    return plot_data(panel).to_csv(path)
