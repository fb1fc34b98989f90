import json
import os

import numpy as np
import pytest
import yaml
from scipy import stats

from model.build_model import kalman_loglik
from tool import run
from util import config
from util.dataset import load_panel, save_panel
from util.errors import ConfigError
from util.parallel import parallel_map
from util.util import Table


def _write_cfg(path, sections):
    with open(str(path), "w") as f:
        yaml.safe_dump(sections, f, default_flow_style=False)
    return str(path)


RW_MODEL = {"model": "random_walk", "U": 2, "N": 8, "params": {"sigmaX": 1.0, "sigmaY": 1.0, "X_0": 0.0}}


def test_config_sections_are_flattened(tmp_path):
    path = _write_cfg(tmp_path / "a.yaml", {"MODEL": {"U": 3}, "RUN": {"seed": 1, "save_path": "exp/x"}})
    cfg = config.load_cfg_from_cfg_file(path)
    assert cfg.U == 3 and cfg.seed == 1 and cfg.save_path == "exp/x"


def test_config_rejects_bad_files(tmp_path):
    path = _write_cfg(tmp_path / "dup.yaml", {"MODEL": {"U": 3}, "RUN": {"U": 4}})
    with pytest.raises(ConfigError):
        config.load_cfg_from_cfg_file(path)
    txt = tmp_path / "a.txt"
    txt.write_text("MODEL: {U: 3}\n")
    with pytest.raises(ConfigError):
        config.load_cfg_from_cfg_file(str(txt))


def test_config_overrides():
    cfg = config.CfgNode({"pf_J": 100, "cooling_fraction": 0.5, "save_path": "exp/run", "max_fail": None})
    new = config.merge_cfg_from_list(cfg, ["pf_J", "200", "cooling_fraction", "1", "save_path", "/tmp/out",
                                           "max_fail", "3"])
    assert new.pf_J == 200
    assert new.cooling_fraction == 1.0 and isinstance(new.cooling_fraction, float)
    assert new.save_path == "/tmp/out"
    assert new.max_fail == 3
    assert cfg.pf_J == 100
    with pytest.raises(ConfigError):
        config.merge_cfg_from_list(cfg, ["pf_J", "'many'"])
    with pytest.raises(ConfigError):
        config.merge_cfg_from_list(cfg, ["bogus", "1"])
    with pytest.raises(ConfigError):
        config.merge_cfg_from_list(cfg, ["pf_J"])


def test_load_config_rejects_unknown_keys(tmp_path):
    path = _write_cfg(tmp_path / "a.yaml", {"MODEL": {"modle": "gompertz"}})
    with pytest.raises(ConfigError):
        run.load_config(path)


def test_panel_round_trip(tmp_path, gomp):
    path = save_panel(gomp, str(tmp_path / "panel"))
    back = load_panel(path)
    assert back.unit_names == gomp.unit_names
    assert back.params == gomp.params
    for a, b in zip(gomp.units, back.units):
        assert np.array_equal(a.data, b.data)
        assert np.array_equal(a.times, b.times)
    assert kalman_loglik(back)[1] == pytest.approx(kalman_loglik(gomp)[1], rel=1e-12)
    with pytest.raises(RuntimeError):
        load_panel(str(tmp_path / "missing"))


def test_parallel_map_serial():
    assert parallel_map(abs, [-1, 2, -3]) == [1, 2, 3]
    assert parallel_map(abs, []) == []


@pytest.mark.slow
def test_parallel_map_pool_keeps_order():
    assert parallel_map(abs, list(range(-6, 0)), workers=2) == [6, 5, 4, 3, 2, 1]


def test_expand_names(rw):
    layout = rw.params.layout
    assert run.expand_names(["sigmaX", "X_0"], layout) == ["sigmaX", "X_0[rw1]", "X_0[rw2]"]
    assert run.expand_names([], layout) == list(layout.flat_names)


def test_kalman_command(tmp_path):
    path = _write_cfg(tmp_path / "k.yaml", {"MODEL": RW_MODEL, "KALMAN": {"kalman_mle": True,
                                                                          "estimated": ["sigmaY"]}})
    out = str(tmp_path / "out")
    assert run.main(["--config", path, "--out", out, "kalman"]) == run.EXIT_OK
    with open(os.path.join(out, "manifest.yaml")) as f:
        manifest = yaml.safe_load(f)
    assert manifest["status"] == "ok" and manifest["command"] == "kalman"
    table = Table.from_csv(os.path.join(out, "kalman.csv"))
    assert table.column("unit") == ["rw1", "rw2", "total"]
    assert os.path.isfile(os.path.join(out, "kalman_mle.csv"))


def test_stochastic_command_needs_a_seed(tmp_path):
    path = _write_cfg(tmp_path / "p.yaml", {"MODEL": RW_MODEL})
    out = str(tmp_path / "out")
    assert run.main(["--config", path, "--out", out, "pfilter"]) == run.EXIT_CONFIG
    with open(os.path.join(out, "error.json")) as f:
        record = json.load(f)
    assert record["error"] == "ConfigError" and record["exit_code"] == run.EXIT_CONFIG


def test_unknown_intensity_name_is_a_config_error(tmp_path):
    path = _write_cfg(tmp_path / "m.yaml", {"MODEL": RW_MODEL, "SEARCH": {"rw_sd": {"sigmaZ": 0.1}},
                                            "RUN": {"seed": 1}})
    assert run.main(["--config", path, "--out", str(tmp_path / "out"), "mif2"]) == run.EXIT_CONFIG


def test_unknown_command(tmp_path):
    path = _write_cfg(tmp_path / "m.yaml", {"MODEL": RW_MODEL, "RUN": {"seed": 1}})
    assert run.main(["--config", path, "--out", str(tmp_path / "out"), "train"]) == run.EXIT_CONFIG


def test_pfilter_command(tmp_path):
    path = _write_cfg(tmp_path / "p.yaml", {"MODEL": RW_MODEL, "PFILTER": {"pf_J": 50, "pf_reps": 3},
                                            "RUN": {"seed": 4}})
    out = str(tmp_path / "out")
    assert run.main(["--config", path, "--out", out, "pfilter", "resample", "systematic"]) == run.EXIT_OK
    summary = Table.from_csv(os.path.join(out, "pfilter_summary.csv"))
    assert summary.column("estimator") == ["panel_total", "unit_product", "kalman"]
    assert len(Table.from_csv(os.path.join(out, "pfilter_replicates.csv"))) == 2 * 3
    assert len(Table.from_csv(os.path.join(out, "pfilter_cond.csv"))) == 3 * 2 * 8
    assert len(Table.from_csv(os.path.join(out, "pfilter_units.csv"))) == 2


def test_pfilter_command_is_reproducible(tmp_path):
    path = _write_cfg(tmp_path / "p.yaml", {"MODEL": RW_MODEL, "PFILTER": {"pf_J": 30, "pf_reps": 2},
                                            "RUN": {"seed": 4}})
    outs = [str(tmp_path / "a"), str(tmp_path / "b")]
    for out in outs:
        assert run.main(["--config", path, "--out", out, "pfilter"]) == run.EXIT_OK
    a, b = [Table.from_csv(os.path.join(out, "pfilter_replicates.csv")) for out in outs]
    assert a == b


def test_mif2_command(tmp_path):
    path = _write_cfg(tmp_path / "m.yaml", {
        "MODEL": RW_MODEL,
        "SEARCH": {"mif_M": 2, "mif_J": 20, "rw_sd": {"sigmaX": 0.02, "X_0": 0.1}, "rw_sd_ivp": ["X_0"],
                   "nseq": 2, "eval_reps": 2, "eval_J": 20},
        "RUN": {"seed": 3}})
    out = str(tmp_path / "out")
    assert run.main(["--config", path, "--out", out, "mif2"]) == run.EXIT_OK
    estimates = Table.from_csv(os.path.join(out, "estimates.csv"))
    assert len(estimates) == 2
    assert estimates.columns[:4] == ("search", "sigmaX", "sigmaY", "X_0[rw1]")
    assert estimates.column("sigmaY") == [1.0, 1.0]
    assert os.path.isfile(os.path.join(out, "traces_1.csv"))
    assert len(Table.from_csv(os.path.join(out, "design.csv"))) == 2


def test_filtering_failures_exit_with_their_own_code(tmp_path):
    path = _write_cfg(tmp_path / "g.yaml", {
        "MODEL": {"model": "gompertz", "U": 2, "N": 5, "params": {"tau": 1.0e-200}},
        "PFILTER": {"pf_J": 20, "pf_reps": 2, "max_fail": 0},
        "RUN": {"seed": 1}})
    out = str(tmp_path / "out")
    assert run.main(["--config", path, "--out", out, "pfilter"]) == run.EXIT_FAILURES
    with open(os.path.join(out, "manifest.yaml")) as f:
        assert yaml.safe_load(f)["status"] == "failed"
    assert os.path.isfile(os.path.join(out, "pfilter_summary.csv"))


def _read(path):
    with open(path, "rb") as f:
        return f.read()


def test_simulate_command(tmp_path):
    path = _write_cfg(tmp_path / "s.yaml", {"MODEL": dict(RW_MODEL, nsim=2), "RUN": {"seed": 5}})
    out = str(tmp_path / "out")
    assert run.main(["--config", path, "--out", out, "simulate"]) == run.EXIT_OK
    sims = [load_panel(os.path.join(out, "sim_{}".format(k))) for k in range(2)]
    for k, sim in enumerate(sims):
        assert sim.unit_names == ("rw1", "rw2")
        assert sim.units[0].data.shape == (1, 8)
        assert len(Table.from_csv(os.path.join(out, "sim_{}".format(k), "plot_data.csv"))) == 2 * 8 * 2
    assert not np.array_equal(sims[0].units[0].data, sims[1].units[0].data)


def test_block_refine_command(tmp_path):
    path = _write_cfg(tmp_path / "b.yaml", {
        "MODEL": RW_MODEL,
        "SEARCH": {"mif_M": 2, "mif_J": 20, "rw_sd": {"sigmaX": 0.02, "X_0": 0.1}, "eval_reps": 2, "eval_J": 20},
        "BLOCK": {"block_reps": 2},
        "RUN": {"seed": 3}})
    out = str(tmp_path / "out")
    assert run.main(["--config", path, "--out", out, "block-refine"]) == run.EXIT_OK
    estimates = Table.from_csv(os.path.join(out, "block_estimates.csv"))
    assert len(estimates) == 1
    row = estimates.row(0)
    assert row["sigmaX"] == 1.0 and row["sigmaY"] == 1.0
    assert row["X_0[rw1]"] != 0.0 and row["X_0[rw2]"] != 0.0
    units = Table.from_csv(os.path.join(out, "block_units.csv"))
    assert units.column("unit") == ["rw1", "rw2"]
    assert set(units.column("best_rep")) <= {0, 1}
    path = _write_cfg(tmp_path / "b0.yaml", {"MODEL": RW_MODEL, "RUN": {"seed": 3}})
    assert run.main(["--config", path, "--out", str(tmp_path / "zero"), "block-refine"]) == run.EXIT_CONFIG


PROFILE_GRID = [0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 2.2]


def _profile_cfg(tmp_path):
    return _write_cfg(tmp_path / "p.yaml", {
        "MODEL": RW_MODEL,
        "SEARCH": {"mif_M": 1, "mif_J": 20, "rw_sd": {"sigmaX": 0.02}, "eval_reps": 2, "eval_J": 20},
        "PROFILE": {"focal": "sigmaY", "grid": PROFILE_GRID, "nprof": 1, "profile_lower": {"sigmaX": 0.5},
                    "profile_upper": {"sigmaX": 2.0}, "kalman_profile": True},
        "KALMAN": {"estimated": ["sigmaX"]},
        "RUN": {"seed": 8}})


def test_profile_command(tmp_path):
    out = str(tmp_path / "out")
    assert run.main(["--config", _profile_cfg(tmp_path), "--out", out, "profile"]) == run.EXIT_OK
    design = Table.from_csv(os.path.join(out, "profile_design.csv"))
    assert design.column("sigmaY") == PROFILE_GRID
    assert all(0.5 <= v <= 2.0 for v in design.column("sigmaX"))
    assert design.column("X_0[rw1]") == [0.0] * len(PROFILE_GRID)
    profile = Table.from_csv(os.path.join(out, "profile.csv"))
    assert profile.column("sigmaY") == PROFILE_GRID
    assert profile.columns[-2:] == ("loglik", "loglik_se")
    assert len(Table.from_csv(os.path.join(out, "kalman_profile.csv"))) == len(PROFILE_GRID)
    summary = Table.from_csv(os.path.join(out, "mcap.csv"))
    assert summary.row(0)["delta"] >= stats.chi2.ppf(0.95, df=1) / 2.0 - 1e-12
    assert len(Table.from_csv(os.path.join(out, "mcap_curve.csv"))) == 1000


def test_profile_command_checks_the_focal_name(tmp_path):
    out = str(tmp_path / "out")
    argv = ["--config", _profile_cfg(tmp_path), "--out", out, "profile", "focal", "sigmaZ"]
    assert run.main(argv) == run.EXIT_CONFIG


def test_mcap_command(tmp_path):
    x = np.linspace(0.5, 1.5, 21)
    ll = -0.5 * ((x - 1.0) / 0.1) ** 2 - 40.0
    rows = [[v, 1.0, l, 0.0] for v, l in zip(x.tolist(), ll.tolist())]
    csv = Table(("sigmaY", "sigmaX", "loglik", "loglik_se"), rows).to_csv(str(tmp_path / "profile.csv"))
    path = _write_cfg(tmp_path / "m.yaml", {"MODEL": RW_MODEL, "MCAP": {"profile_csv": csv, "level": 0.9},
                                            "PROFILE": {"focal": "sigmaY"}})
    out = str(tmp_path / "out")
    assert run.main(["--config", path, "--out", out, "mcap"]) == run.EXIT_OK
    row = Table.from_csv(os.path.join(out, "mcap.csv")).row(0)
    half = stats.chi2.ppf(0.9, df=1) / 2.0
    assert row["level"] == 0.9
    assert row["delta"] == pytest.approx(half, rel=1e-6)
    assert row["mle"] == pytest.approx(1.0, abs=1e-3)
    assert row["upper"] - row["lower"] == pytest.approx(2 * 0.1 * np.sqrt(2 * half), abs=3e-3)
    argv = ["--config", path, "--out", str(tmp_path / "bad"), "mcap", "focal", "tau"]
    assert run.main(argv) == run.EXIT_CONFIG


@pytest.mark.slow
@pytest.mark.parametrize("command, csv", [("mif2", "estimates.csv"), ("profile", "profile.csv")])
def test_results_do_not_depend_on_workers(tmp_path, command, csv):
    path = _write_cfg(tmp_path / "w.yaml", {
        "MODEL": RW_MODEL,
        "SEARCH": {"mif_M": 2, "mif_J": 20, "rw_sd": {"sigmaX": 0.02, "X_0": 0.1}, "nseq": 3, "eval_reps": 2,
                   "eval_J": 20, "lower": {"sigmaX": 0.5, "sigmaY": 0.5, "X_0": -1.0},
                   "upper": {"sigmaX": 2.0, "sigmaY": 2.0, "X_0": 1.0}},
        "PROFILE": {"focal": "sigmaY", "grid": [0.5, 1.0, 1.5], "nprof": 2, "profile_lower": {"sigmaX": 0.5},
                    "profile_upper": {"sigmaX": 2.0}},
        "RUN": {"seed": 11}})
    outs = []
    for workers in ("1", "2"):
        out = str(tmp_path / "w{}".format(workers))
        assert run.main(["--config", path, "--out", out, "--workers", workers, command]) == run.EXIT_OK
        outs.append(os.path.join(out, csv))
    assert _read(outs[0]) == _read(outs[1])
