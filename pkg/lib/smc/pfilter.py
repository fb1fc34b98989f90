import math
import logging
from collections import OrderedDict, namedtuple

import numpy as np
import torch

from lib.smc.functional import get_resampler, effective_sample_size, panel_logmeanexp, logmeanexp
from model.panel import param_tensors
from util.errors import FilteringFailure
from util.rng import as_stream
from util.util import LOGGER_NAME, Table

__all__ = ['UnitFilterResult', 'FilterResult', 'pfilter_unit', 'pfilter_panel', 'replicate_pfilter',
           'ReplicateLogliks']

logger = logging.getLogger(LOGGER_NAME)


class UnitFilterResult(namedtuple("UnitFilterResult", ["unit", "loglik", "cond_loglik", "ess", "failed_at"])):
    """One unit's filter output. ``failed_at`` is the time index of a filtering failure or None."""
    __slots__ = ()


def _filter_unit(unit, params, J, rng, resample, on_failure):
    unit.require("rinit", "rprocess", "dmeasure")
    if J < 1:
        raise ValueError("particle filter needs J >= 1, got {}".format(J))
    resampler = get_resampler(resample)
    theta = param_tensors(params)
    cond = np.zeros(unit.N)
    ess = np.full(unit.N, np.nan)
    x = unit.rinit(theta, J, unit.t0, rng)
    t_prev = unit.t0
    log_J = math.log(J)
    for n in range(unit.N):
        t = float(unit.times[n])
        x = unit.rprocess(x, t_prev, t, theta, rng)
        logw = unit.dmeasure(unit.observation(n), x, t, theta, log=True)
        top = torch.max(logw)
        if not bool(torch.isfinite(top)) or bool(torch.any(torch.isnan(logw))):
            if on_failure == "raise":
                raise FilteringFailure(unit.name, n)
            cond[n] = -np.inf
            return UnitFilterResult(unit.name, -np.inf, cond, ess, n)
        w = torch.exp(logw - top)
        cond[n] = float(top + torch.log(torch.sum(w))) - log_J
        ess[n] = effective_sample_size(w)
        x = x[resampler(w, rng)]
        t_prev = t
    return UnitFilterResult(unit.name, sum(cond.tolist()), cond, ess, None)


def pfilter_unit(unit, params, J, rng, resample="multinomial"):
    """Bootstrap particle filter for one unit; resamples at every observation."""
    return _filter_unit(unit, params, J, as_stream(rng), resample, "raise")


class FilterResult(object):
    def __init__(self, units, params, J):
        self.units = OrderedDict((r.unit, r) for r in units)
        self.params = params
        self.J = J

    @property
    def unit_names(self):
        return tuple(self.units)

    @property
    def unit_logliks(self):
        return OrderedDict((u, r.loglik) for u, r in self.units.items())

    @property
    def total_loglik(self):
        return sum(r.loglik for r in self.units.values())

    @property
    def cond_logliks(self):
        return OrderedDict((u, r.cond_loglik) for u, r in self.units.items())

    @property
    def ess(self):
        return OrderedDict((u, r.ess) for u, r in self.units.items())

    @property
    def failures(self):
        return [(u, r.failed_at) for u, r in self.units.items() if r.failed_at is not None]

    def to_rows(self, times=None):
        rows = []
        for u, r in self.units.items():
            for n in range(len(r.cond_loglik)):
                t = float(times[u][n]) if times is not None else n + 1
                rows.append((u, n, t, float(r.cond_loglik[n]), float(r.ess[n])))
        return Table(("unit", "time_index", "time", "cond_loglik", "ess"), rows)

    def summary(self):
        return Table(("unit", "loglik", "failed_at"),
                     [(u, float(r.loglik), -1 if r.failed_at is None else int(r.failed_at))
                      for u, r in self.units.items()])

    def __repr__(self):
        return "FilterResult(U={}, J={}, loglik={:.4f})".format(len(self.units), self.J, self.total_loglik)


def pfilter_panel(panel, J, rng, on_failure="raise", resample="multinomial"):
    """Filter every unit on its own stream ``rng.spawn(unit)``.

    With ``on_failure="neginf"`` a failing unit gets log-likelihood -inf
    (-inf at the failing step, zeros after it) and is listed in ``failures``.
    """
    assert on_failure in ("raise", "neginf"), "on_failure must be 'raise' or 'neginf'"
    rng = as_stream(rng)
    out = []
    for u in panel.units:
        r = _filter_unit(u, panel.params.unit_params(u.name), J, rng.spawn(u.name), resample, on_failure)
        if r.failed_at is not None:
            logger.warning("Filtering failure in unit {} at time index {}.".format(u.name, r.failed_at))
        out.append(r)
    return FilterResult(out, panel.params, J)


def _pfilter_task(args):
    panel, J, stream, on_failure, resample = args
    return pfilter_panel(panel, J, stream, on_failure=on_failure, resample=resample)


class ReplicateLogliks(object):
    """Unit-by-replicate log-likelihood matrix from independent filter runs."""

    def __init__(self, unit_names, matrix, nfail, results=None):
        self.unit_names = tuple(unit_names)
        self.matrix = np.asarray(matrix, dtype=float).reshape(len(self.unit_names), -1)
        self.nfail = nfail
        self.results = results

    @property
    def totals(self):
        return [sum(self.matrix[:, i].tolist()) for i in range(self.matrix.shape[1])]

    def lambda1(self):
        return logmeanexp(self.totals, se=True)

    def lambda2(self):
        return panel_logmeanexp(self.matrix, se=True)

    def to_table(self):
        rows = [(i, u, float(self.matrix[k, i])) for i in range(self.matrix.shape[1])
                for k, u in enumerate(self.unit_names)]
        return Table(("replicate", "unit", "loglik"), rows)


def replicate_pfilter(panel, J, reps, rng, map_fn=map, on_failure="neginf", resample="multinomial", keep=False):
    """``reps`` independent panel filters on streams ``rng.spawn("rep", i)``."""
    rng = as_stream(rng)
    tasks = [(panel, J, rng.spawn("rep", i), on_failure, resample) for i in range(reps)]
    results = list(map_fn(_pfilter_task, tasks))
    matrix = np.array([[r.unit_logliks[u] for r in results] for u in panel.unit_names], dtype=float)
    nfail = sum(len(r.failures) for r in results)
    return ReplicateLogliks(panel.unit_names, matrix.reshape(panel.U, reps), nfail, results if keep else None)
