"""Panel parameter sets.

A panel's parameters are held as a ``ParamSet``: an ordered vector of
shared values and a dense matrix of unit-specific values (rows = parameter
names, columns = units). The flattened form names shared entries
``base`` and specific entries ``base[unit]``; shared entries come first,
then specific entries unit by unit.
"""
import re
from collections import OrderedDict, namedtuple

import numpy as np
import torch

from util.errors import NameFormatError, UnknownParameterError, BoundsError
from util.util import Table


_BASE_PATTERN = r"[A-Za-z_][A-Za-z0-9_.]*"
_BASE_RE = re.compile(r"^" + _BASE_PATTERN + r"$")
_NAME_RE = re.compile(r"^(" + _BASE_PATTERN + r")(?:\[([^\[\]]+)\])?$")


def parse_param_name(flat_name):
    if not flat_name:
        raise NameFormatError("parameter name must be nonempty")
    m = _NAME_RE.match(flat_name)
    if m is None:
        raise NameFormatError("malformed parameter name '{}', expected 'base' or 'base[unit]'".format(flat_name))
    return m.group(1), m.group(2)


def format_param_name(base, unit=None):
    if not _BASE_RE.match(base or ""):
        raise NameFormatError("malformed base parameter name '{}'".format(base))
    if unit is None:
        return base
    unit = str(unit)
    if not unit or "[" in unit or "]" in unit:
        raise NameFormatError("malformed unit name '{}'".format(unit))
    return "{}[{}]".format(base, unit)


class ParamLayout(namedtuple("ParamLayout", ["shared_names", "specific_names", "unit_names"])):
    __slots__ = ()

    @property
    def flat_names(self):
        names = list(self.shared_names)
        for u in self.unit_names:
            names.extend(format_param_name(b, u) for b in self.specific_names)
        return names

    @property
    def base_names(self):
        return list(self.shared_names) + list(self.specific_names)


class ParamSet(object):
    """A shared values plus a B x U matrix of unit-specific values."""

    def __init__(self, shared=None, specific=None, specific_names=(), unit_names=()):
        shared = OrderedDict() if shared is None else OrderedDict((k, float(v)) for k, v in shared.items())
        specific_names = tuple(specific_names)
        unit_names = tuple(str(u) for u in unit_names)
        if specific is None:
            specific = np.zeros((len(specific_names), len(unit_names)))
        specific = np.array(specific, dtype=float).reshape(len(specific_names), len(unit_names))
        for n in list(shared) + list(specific_names):
            format_param_name(n)
        for u in unit_names:
            format_param_name("x", u)
        if len(set(unit_names)) != len(unit_names):
            raise ValueError("unit names must be unique: {}".format(unit_names))
        if len(set(specific_names)) != len(specific_names):
            raise ValueError("specific parameter names must be unique: {}".format(specific_names))
        overlap = set(shared) & set(specific_names)
        if overlap:
            raise ValueError("parameters cannot be both shared and specific: {}".format(sorted(overlap)))
        specific.setflags(write=False)
        self._shared = shared
        self._specific = specific
        self._specific_names = specific_names
        self._unit_names = unit_names

    @property
    def shared(self):
        return OrderedDict(self._shared)

    @property
    def specific(self):
        return self._specific

    @property
    def shared_names(self):
        return tuple(self._shared)

    @property
    def specific_names(self):
        return self._specific_names

    @property
    def unit_names(self):
        return self._unit_names

    @property
    def layout(self):
        return ParamLayout(self.shared_names, self.specific_names, self.unit_names)

    @property
    def A(self):
        return len(self._shared)

    @property
    def B(self):
        return len(self._specific_names)

    @property
    def U(self):
        return len(self._unit_names)

    @property
    def D(self):
        return self.A + self.B * self.U

    def specific_row(self, name):
        return self._specific[self._specific_names.index(name)].copy()

    def specific_dict(self):
        return OrderedDict((b, OrderedDict(zip(self._unit_names, self._specific[i].tolist())))
                           for i, b in enumerate(self._specific_names))

    def coef_list(self):
        return self.shared, self._specific.copy()

    def unit_params(self, unit):
        unit = str(unit)
        if unit not in self._unit_names:
            raise KeyError("unknown unit '{}'".format(unit))
        k = self._unit_names.index(unit)
        out = OrderedDict(self._shared)
        for i, b in enumerate(self._specific_names):
            out[b] = float(self._specific[i, k])
        return out

    def flatten(self):
        out = OrderedDict(self._shared)
        for k, u in enumerate(self._unit_names):
            for i, b in enumerate(self._specific_names):
                out[format_param_name(b, u)] = float(self._specific[i, k])
        return out

    @classmethod
    def unflatten(cls, flat, layout):
        flat = dict(flat)
        expected = set(layout.flat_names)
        extra = set(flat) - expected
        missing = expected - set(flat)
        if extra:
            raise UnknownParameterError("unknown parameters {}".format(sorted(extra)))
        if missing:
            raise UnknownParameterError("missing parameters {}".format(sorted(missing)))
        shared = OrderedDict((n, flat[n]) for n in layout.shared_names)
        specific = np.array([[flat[format_param_name(b, u)] for u in layout.unit_names]
                             for b in layout.specific_names], dtype=float)
        return cls(shared, specific, layout.specific_names, layout.unit_names)

    def __eq__(self, other):
        return (isinstance(other, ParamSet) and self.layout == other.layout
                and list(self._shared.values()) == list(other._shared.values())
                and np.array_equal(self._specific, other._specific))

    def __ne__(self, other):
        return not self.__eq__(other)

    def __repr__(self):
        return "ParamSet(shared={}, specific={})".format(dict(self._shared), dict(self.specific_dict()))


def flatten(p):
    return p.flatten()


def unflatten(flat, layout):
    return ParamSet.unflatten(flat, layout)


def reclassify_to_shared(p, name, value):
    if name in p.shared_names:
        shared = p.shared
        shared[name] = float(value)
        return ParamSet(shared, p.specific, p.specific_names, p.unit_names)
    if name not in p.specific_names:
        raise UnknownParameterError("unknown parameter '{}': parameters cannot be created".format(name))
    i = p.specific_names.index(name)
    shared = p.shared
    shared[name] = float(value)
    keep = [k for k in range(p.B) if k != i]
    return ParamSet(shared, p.specific[keep], [p.specific_names[k] for k in keep], p.unit_names)


def _unit_values(p, name, values):
    if isinstance(values, dict):
        unknown = set(map(str, values)) - set(p.unit_names)
        if unknown:
            raise KeyError("unknown units {}".format(sorted(unknown)))
        return values
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size == 1:
        return np.repeat(values, p.U)
    if values.size != p.U:
        raise ValueError("'{}' needs {} unit values, got {}".format(name, p.U, values.size))
    return values


def reclassify_to_specific(p, name, values=None):
    if name in p.specific_names:
        if values is None:
            return p
        specific = p.specific.copy()
        i = p.specific_names.index(name)
        vals = _unit_values(p, name, values)
        if isinstance(vals, dict):
            for u, v in vals.items():
                specific[i, p.unit_names.index(str(u))] = float(v)
        else:
            specific[i] = vals
        return ParamSet(p.shared, specific, p.specific_names, p.unit_names)
    if name not in p.shared_names:
        raise UnknownParameterError("unknown parameter '{}': parameters cannot be created".format(name))
    shared = p.shared
    current = shared.pop(name)
    row = np.full(p.U, current)
    if values is not None:
        vals = _unit_values(p, name, values)
        if isinstance(vals, dict):
            for u, v in vals.items():
                row[p.unit_names.index(str(u))] = float(v)
        else:
            row = vals
    specific = np.vstack([p.specific, row.reshape(1, -1)]) if p.B else row.reshape(1, -1)
    return ParamSet(shared, specific, p.specific_names + (name,), p.unit_names)


def set_coef(p, updates):
    """Update flattened entries, e.g. ``set_coef(p, {"K[unit2]": 0.9})``."""
    flat = p.flatten()
    for k, v in updates.items():
        if k not in flat:
            raise UnknownParameterError("unknown parameter '{}': parameters cannot be created".format(k))
        flat[k] = float(v)
    return ParamSet.unflatten(flat, p.layout)


def to_est(p, partrans):
    shared = partrans.to_est({n: v for n, v in p.shared.items()})
    specific = partrans.to_est({b: torch.from_numpy(p.specific_row(b)) for b in p.specific_names})
    out = OrderedDict((n, float(shared[n])) for n in p.shared_names)
    for k, u in enumerate(p.unit_names):
        for b in p.specific_names:
            out[format_param_name(b, u)] = float(specific[b][k])
    return out


def from_est(v, partrans, layout):
    v = dict(v)
    shared = partrans.from_est({n: v[n] for n in layout.shared_names})
    specific = partrans.from_est({b: torch.as_tensor([v[format_param_name(b, u)] for u in layout.unit_names],
                                                     dtype=torch.float64)
                                  for b in layout.specific_names})
    return ParamSet(OrderedDict((n, float(shared[n])) for n in layout.shared_names),
                    np.array([specific[b].numpy() for b in layout.specific_names]).reshape(
                        len(layout.specific_names), len(layout.unit_names)),
                    layout.specific_names, layout.unit_names)


class RwSdSpec(object):
    """Random-walk intensities on the estimation scale.

    ``sd`` maps a base parameter name to one intensity (recycled over units)
    or to a ``{unit: intensity}`` mapping; a flattened key ``tau[unit2]`` sets
    one unit. Names in ``ivp`` are perturbed only at n = 0. ``time_profile``
    maps a name to per-n multipliers (index 0 is the initial perturbation).
    Absent parameters have intensity 0.
    """

    def __init__(self, sd=None, ivp=(), time_profile=None, **kwargs):
        entries = OrderedDict()
        for k, v in list((sd or {}).items()) + list(kwargs.items()):
            base, unit = parse_param_name(k)
            if unit is not None:
                entry = entries.get(base)
                if not isinstance(entry, dict):
                    entry = OrderedDict() if entry is None else OrderedDict([("*", float(entry))])
                entry[unit] = float(v)
                entries[base] = entry
            elif isinstance(v, dict):
                entries[base] = OrderedDict((str(u), float(x)) for u, x in v.items())
            else:
                entries[base] = float(v)
        for base, entry in entries.items():
            vals = entry.values() if isinstance(entry, dict) else [entry]
            for x in vals:
                if not (x >= 0) or not np.isfinite(x):
                    raise ValueError("random walk intensity for '{}' must be finite and >= 0, got {}".format(base, x))
        self._sd = entries
        self.ivp = frozenset(ivp)
        self.time_profile = OrderedDict((k, tuple(float(x) for x in v)) for k, v in (time_profile or {}).items())
        for k, v in self.time_profile.items():
            if any(x < 0 for x in v):
                raise ValueError("time profile for '{}' must be nonnegative".format(k))

    @property
    def names(self):
        out = []
        for base, entry in self._sd.items():
            vals = entry.values() if isinstance(entry, dict) else [entry]
            if any(x > 0 for x in vals):
                out.append(base)
        return out

    def sd(self, name, unit=None, n=0):
        entry = self._sd.get(name)
        if entry is None:
            return 0.0
        if isinstance(entry, dict):
            if unit is None:
                raise ValueError("'{}' has per-unit intensities; a unit is required".format(name))
            v = entry.get(str(unit), entry.get("*", 0.0))
        else:
            v = entry
        if name in self.ivp and n > 0:
            return 0.0
        if name in self.time_profile:
            tab = self.time_profile[name]
            if n >= len(tab):
                raise ValueError("time profile for '{}' has {} entries, time index {} requested".format(name, len(tab), n))
            v = v * tab[n]
        return v

    def validate(self, layout):
        known = set(layout.shared_names) | set(layout.specific_names)
        unknown = set(self._sd) - known
        if unknown:
            raise UnknownParameterError("random walk intensities for unknown parameters {}".format(sorted(unknown)))
        for base, entry in self._sd.items():
            if isinstance(entry, dict):
                if base in layout.shared_names:
                    raise ValueError("shared parameter '{}' cannot have per-unit intensities".format(base))
                bad = set(entry) - set(layout.unit_names) - {"*"}
                if bad:
                    raise UnknownParameterError("random walk intensities for unknown units {}".format(sorted(bad)))
        return self

    def _replace(self, entries):
        out = RwSdSpec(ivp=self.ivp, time_profile=self.time_profile)
        out._sd = entries
        return out

    def freeze(self, flat_name):
        base, unit = parse_param_name(flat_name)
        entries = OrderedDict(self._sd)
        if base not in entries:
            return self._replace(entries)
        if unit is None:
            entries.pop(base)
        else:
            entry = entries[base]
            entry = OrderedDict(entry) if isinstance(entry, dict) else OrderedDict([("*", entry)])
            entry[unit] = 0.0
            entries[base] = entry
        return self._replace(entries)

    def restrict(self, names):
        names = set(names)
        return self._replace(OrderedDict((k, v) for k, v in self._sd.items() if k in names))

    def for_unit(self, unit):
        entries = OrderedDict()
        for base, entry in self._sd.items():
            entries[base] = entry.get(str(unit), entry.get("*", 0.0)) if isinstance(entry, dict) else entry
        return self._replace(entries)

    def describe(self):
        d = OrderedDict((k, dict(v) if isinstance(v, dict) else v) for k, v in self._sd.items())
        out = {"sd": d}
        if self.ivp:
            out["ivp"] = sorted(self.ivp)
        if self.time_profile:
            out["time_profile"] = {k: list(v) for k, v in self.time_profile.items()}
        return out

    def __eq__(self, other):
        return isinstance(other, RwSdSpec) and self.describe() == other.describe()

    def __repr__(self):
        return "RwSdSpec({})".format(self.describe())


class DesignMatrix(Table):
    """Starting points: one row per draw, columns are flattened parameter names."""

    def __init__(self, columns, rows=()):
        super(DesignMatrix, self).__init__(columns, [tuple(float(x) for x in r) for r in rows])
        for c in self.columns:
            parse_param_name(c)

    def check_layout(self, layout):
        if set(self.columns) != set(layout.flat_names):
            missing = sorted(set(layout.flat_names) - set(self.columns))
            extra = sorted(set(self.columns) - set(layout.flat_names))
            raise UnknownParameterError("design columns do not match the panel: missing {}, unknown {}".format(missing, extra))
        return self

    def param_set(self, i, layout):
        return ParamSet.unflatten(self.row(i), layout)


def _check_bounds(lower, upper):
    if set(lower) != set(upper):
        raise ValueError("lower and upper must name the same parameters")
    for k in lower:
        if not float(lower[k]) <= float(upper[k]):
            raise BoundsError("lower bound exceeds upper bound for '{}': {} > {}".format(k, lower[k], upper[k]))


def _draw(lo, hi, u):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    return np.where(hi > lo, lo + (hi - lo) * u, lo)


def runif_panel_design(lower, upper, specific_names, unit_names, nseq, rng):
    _check_bounds(lower, upper)
    specific_names = list(specific_names)
    missing = [n for n in specific_names if n not in lower]
    if missing:
        raise ValueError("specific names {} need lower and upper bounds".format(missing))
    shared_names = [n for n in lower if n not in specific_names]
    layout = ParamLayout(tuple(shared_names), tuple(specific_names), tuple(str(u) for u in unit_names))
    columns = layout.flat_names
    bases = [parse_param_name(c)[0] for c in columns]
    lo = np.array([float(lower[b]) for b in bases])
    hi = np.array([float(upper[b]) for b in bases])
    u = rng.uniform((int(nseq), len(columns))).numpy()
    return DesignMatrix(columns, _draw(lo, hi, u).tolist())


def _canonical_columns(names):
    shared, bases, units = [], [], []
    for n in names:
        b, u = parse_param_name(n)
        if u is None:
            shared.append(n)
        else:
            if b not in bases:
                bases.append(b)
            if u not in units:
                units.append(u)
    specific = [format_param_name(b, u) for u in units for b in bases if format_param_name(b, u) in names]
    return shared + specific


def profile_design(focal, grid, lower, upper, nprof, rng):
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("profile grid must be nonempty")
    if focal in lower or focal in upper:
        raise ValueError("focal parameter '{}' must not be randomized".format(focal))
    _check_bounds(lower, upper)
    parse_param_name(focal)
    columns = _canonical_columns([focal] + list(lower))
    others = [c for c in columns if c != focal]
    nrow = len(grid) * int(nprof)
    lo = np.array([float(lower[c]) for c in others])
    hi = np.array([float(upper[c]) for c in others])
    draws = _draw(lo, hi, rng.uniform((nrow, len(others))).numpy())
    rows = []
    for i in range(nrow):
        rec = dict(zip(others, draws[i].tolist()))
        rec[focal] = grid[i % len(grid)]
        rows.append([rec[c] for c in columns])
    return DesignMatrix(columns, rows)
