"""Unit models and panels.

A ``UnitModel`` carries the simulator and density slots of one partially
observed Markov process together with its data. All slots work on batches:
states are ``(J, S)`` float64 tensors, parameters are mappings from base name
to tensors broadcastable to ``(J,)``.

    rinit(params, J, t0, rng)                  -> (J, S) initial states
    rprocess(x, t_from, t_to, params, rng)     -> (J, S) states at t_to
    rmeasure(x, t, params, rng)                -> (J, O) observations
    dmeasure(y, x, t, params, log=True)        -> (J,) measurement (log-)densities
    dprocess(x_from, x_to, t_from, t_to, params, log=True), dinit(x, t0, params, log=True)  optional

A ``PanelModel`` is an ordered collection of units plus a ``ParamSet``.
"""
from collections import OrderedDict

import numpy as np
import torch

from util.errors import ConstructionError, CapabilityError
from util.params import ParamSet, set_coef
from util.rng import as_stream
from util.transform import ParTrans
from util.util import Table


SLOTS = ("rinit", "rprocess", "rmeasure", "dmeasure", "dprocess", "dinit")


class UnitModel(object):
    def __init__(self, name, times, t0, rinit=None, rprocess=None, rmeasure=None, dmeasure=None,
                 data=None, dprocess=None, dinit=None, partrans=None, params=None,
                 obs_names=("Y",), state_names=("X",), model_key=None, states=None, delta_t=None):
        self.name = str(name)
        self.times = np.array(times, dtype=float).reshape(-1)
        self.t0 = float(t0)
        if self.times.size and np.any(np.diff(self.times) <= 0):
            raise ConstructionError("unit '{}': observation times must be strictly increasing".format(self.name))
        if self.times.size and self.t0 > self.times[0]:
            raise ConstructionError("unit '{}': t0={} is after the first observation time {}".format(
                self.name, self.t0, self.times[0]))
        self.obs_names = tuple(obs_names)
        self.state_names = tuple(state_names)
        if data is not None:
            data = np.array(data, dtype=float).reshape(len(self.obs_names), -1)
            if data.shape[1] != self.times.size:
                raise ConstructionError("unit '{}': data has {} columns for {} observation times".format(
                    self.name, data.shape[1], self.times.size))
            data.setflags(write=False)
        self.data = data
        if states is not None:
            states = np.array(states, dtype=float).reshape(len(self.state_names), -1)
            states.setflags(write=False)
        self.states = states
        self.rinit = rinit
        self.rprocess = rprocess
        self.rmeasure = rmeasure
        self.dmeasure = dmeasure
        self.dprocess = dprocess
        self.dinit = dinit
        self.partrans = partrans if partrans is not None else ParTrans()
        self.params = OrderedDict((k, float(v)) for k, v in (params or {}).items())
        self.model_key = model_key
        self.delta_t = delta_t

    @property
    def N(self):
        return self.times.size

    def replace(self, **changes):
        kw = dict(name=self.name, times=self.times, t0=self.t0, data=self.data, partrans=self.partrans,
                  params=self.params, obs_names=self.obs_names, state_names=self.state_names,
                  model_key=self.model_key, states=self.states, delta_t=self.delta_t)
        kw.update({s: getattr(self, s) for s in SLOTS})
        kw.update(changes)
        return UnitModel(**kw)

    def require(self, *slots):
        for s in slots:
            if getattr(self, s) is None:
                raise CapabilityError("unit '{}' has no '{}' function".format(self.name, s))
        if "dmeasure" in slots and self.data is None:
            raise CapabilityError("unit '{}' has no data".format(self.name))

    def observation(self, n):
        return torch.from_numpy(np.array(self.data[:, n]))

    def __repr__(self):
        return "UnitModel(name={!r}, N={}, model_key={!r})".format(self.name, self.N, self.model_key)


def param_tensors(params):
    return OrderedDict((k, torch.as_tensor(v, dtype=torch.float64)) for k, v in params.items())


class PanelModel(object):
    def __init__(self, units, params):
        self.units = tuple(units)
        names = [u.name for u in self.units]
        if len(set(names)) != len(names):
            raise ConstructionError("unit names must be unique: {}".format(names))
        if tuple(names) != params.unit_names:
            raise ConstructionError("parameter columns {} do not match units {}".format(params.unit_names, names))
        self.params = params
        known = set(params.shared_names) | set(params.specific_names)
        for u in self.units:
            missing = set(u.params) - known
            if missing:
                raise ConstructionError("unit '{}' uses parameters {} absent from the panel".format(u.name, sorted(missing)))

    @property
    def unit_names(self):
        return tuple(u.name for u in self.units)

    @property
    def U(self):
        return len(self.units)

    def unit(self, name):
        for u in self.units:
            if u.name == str(name):
                return u
        raise KeyError("unknown unit '{}'".format(name))

    def coef(self):
        return self.params.flatten()

    def shared(self):
        return self.params.shared

    def specific(self):
        return self.params.specific_dict()

    def with_params(self, params):
        return PanelModel(self.units, params)

    def with_coef(self, updates):
        return PanelModel(self.units, set_coef(self.params, updates))

    def with_units(self, units):
        return PanelModel(units, self.params)

    def sub_panel(self, names):
        names = [str(n) for n in names]
        units = [self.unit(n) for n in names]
        idx = [self.unit_names.index(n) for n in names]
        p = ParamSet(self.params.shared, self.params.specific[:, idx], self.params.specific_names, names)
        return PanelModel(units, p)

    @property
    def partrans(self):
        # every unit of a panel shares one transform specification
        return self.units[0].partrans if self.units else ParTrans()

    def __repr__(self):
        return "PanelModel(U={}, A={}, B={})".format(self.U, self.params.A, self.params.B)


def build_panel(units, shared=None, specific=None):
    """Assemble a panel from unit models.

    ``shared`` gives values that replace the units' own defaults. ``specific``
    is either a list of names whose values are taken from each unit's
    defaults, or a mapping name -> per-unit values (sequence in unit order or
    ``{unit: value}``). When omitted, every unit default not listed in
    ``shared`` becomes unit-specific.
    """
    units = list(units)
    if not units:
        raise ConstructionError("a panel needs at least one unit")
    names = [u.name for u in units]
    if len(set(names)) != len(names):
        raise ConstructionError("unit names must be unique: {}".format(names))
    shared = OrderedDict((k, float(v)) for k, v in (shared or {}).items())
    if specific is None:
        specific = []
        for u in units:
            specific.extend(k for k in u.params if k not in shared and k not in specific)
    if isinstance(specific, dict):
        spec_names = list(specific)
    else:
        spec_names = list(specific)
    overlap = set(shared) & set(spec_names)
    if overlap:
        raise ConstructionError("parameters {} are listed as both shared and specific".format(sorted(overlap)))
    matrix = np.zeros((len(spec_names), len(units)))
    for i, b in enumerate(spec_names):
        if isinstance(specific, dict):
            vals = specific[b]
            if isinstance(vals, dict):
                missing = set(names) - set(map(str, vals))
                if missing:
                    raise ConstructionError("specific parameter '{}' has no value for units {}".format(b, sorted(missing)))
                vals = [vals[n] for n in names]
            vals = np.asarray(vals, dtype=float).reshape(-1)
            if vals.size == 1:
                vals = np.repeat(vals, len(units))
            if vals.size != len(units):
                raise ConstructionError("specific parameter '{}' needs {} values".format(b, len(units)))
            matrix[i] = vals
        else:
            for k, u in enumerate(units):
                if b not in u.params:
                    raise ConstructionError("specific parameter '{}' is missing from unit '{}'".format(b, u.name))
                matrix[i, k] = u.params[b]
    for u in units:
        uncovered = [k for k in u.params if k not in shared and k not in spec_names]
        if uncovered:
            raise ConstructionError("unit '{}' parameters {} are neither shared nor specific".format(u.name, uncovered))
    try:
        params = ParamSet(shared, matrix, spec_names, names)
    except ValueError as e:
        raise ConstructionError(str(e))
    units = [u.replace(params=params.unit_params(u.name)) for u in units]
    return PanelModel(units, params)


def get_unit_params(panel, unit):
    return panel.params.unit_params(unit)


def as_unit_list(panel):
    return [u.replace(params=panel.params.unit_params(u.name)) for u in panel.units]


def unit_panel(unit, params=None):
    """A one-unit panel with every parameter shared."""
    params = unit.params if params is None else params
    u = unit.replace(params=params)
    return PanelModel([u], ParamSet(params, None, (), (u.name,)))


def simulate_unit(unit, params, nsim, rng, keep_states=False):
    unit.require("rinit", "rprocess", "rmeasure")
    theta = param_tensors(params)
    x = unit.rinit(theta, nsim, unit.t0, rng)
    ys, xs = [], []
    t_prev = unit.t0
    for n in range(unit.N):
        t = float(unit.times[n])
        x = unit.rprocess(x, t_prev, t, theta, rng)
        ys.append(unit.rmeasure(x, t, theta, rng))
        if keep_states:
            xs.append(x)
        t_prev = t
    if unit.N:
        y = torch.stack(ys, dim=2).numpy()
        states = torch.stack(xs, dim=2).numpy() if keep_states else None
    else:
        y = np.zeros((nsim, len(unit.obs_names), 0))
        states = np.zeros((nsim, len(unit.state_names), 0)) if keep_states else None
    return y, states


def simulate(panel, nsim=1, rng=None, keep_states=False):
    """Draw ``nsim`` data sets from the full generative model.

    Each unit draws from its own stream ``rng.spawn("simulate", unit)``, so a
    unit's simulations do not depend on which other units are in the panel.
    """
    rng = as_stream(rng)
    draws = []
    for u in panel.units:
        draws.append(simulate_unit(u, panel.params.unit_params(u.name), nsim, rng.spawn("simulate", u.name), keep_states))
    out = []
    for k in range(nsim):
        units = []
        for u, (y, states) in zip(panel.units, draws):
            units.append(u.replace(data=y[k], states=None if states is None else states[k]))
        out.append(PanelModel(units, panel.params))
    return out


def plot_data(panel):
    rows = []
    for u in panel.units:
        blocks = []
        if u.data is not None:
            blocks.append((u.obs_names, u.data))
        if u.states is not None:
            blocks.append((u.state_names, u.states))
        for n, t in enumerate(u.times.tolist()):
            for names, values in blocks:
                for i, v in enumerate(names):
                    rows.append((u.name, t, v, float(values[i, n])))
    return Table(("unit", "time", "variable", "value"), rows)
