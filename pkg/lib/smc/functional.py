"""Resampling and log-likelihood averaging"""
import math

import numpy as np
import torch
from scipy.special import logsumexp

from util.errors import FilteringFailure

__all__ = ['multinomial_resample', 'systematic_resample', 'get_resampler', 'effective_sample_size',
           'logmeanexp', 'panel_logmeanexp']


def _check_weights(weights):
    w = torch.as_tensor(weights, dtype=torch.float64).reshape(-1)
    if w.numel() == 0:
        raise ValueError("resampling needs at least one weight")
    if not bool(torch.all(torch.isfinite(w))) or bool(torch.any(w < 0)) or not bool(torch.any(w > 0)):
        raise FilteringFailure()
    return w


def _invert_cdf(w, u):
    cdf = torch.cumsum(w, dim=0)
    idx = torch.searchsorted(cdf, u * cdf[-1], right=True)
    # u * total can round up to total; fall back to the last positive weight
    last = int(torch.nonzero(w > 0)[-1])
    return torch.clamp(idx, max=last)


def multinomial_resample(weights, rng, n=None):
    """i.i.d. categorical draws with probabilities proportional to ``weights``."""
    w = _check_weights(weights)
    n = w.numel() if n is None else int(n)
    return _invert_cdf(w, rng.uniform((n,)))


def systematic_resample(weights, rng, n=None):
    w = _check_weights(weights)
    n = w.numel() if n is None else int(n)
    u = (torch.arange(n, dtype=torch.float64) + rng.uniform((1,))) / n
    return _invert_cdf(w, u)


def get_resampler(name):
    if name == "multinomial":
        return multinomial_resample
    elif name == "systematic":
        return systematic_resample
    raise ValueError("unknown resampling scheme '{}'".format(name))


def effective_sample_size(weights):
    w = torch.as_tensor(weights, dtype=torch.float64)
    return float(torch.sum(w) ** 2 / torch.sum(w * w))


def _lme(x):
    return float(logsumexp(x, b=1.0 / x.size))


def logmeanexp(values, se=False):
    """log(mean(exp(values))), optionally with its delete-one jackknife SE.

    The SE is nan for a single value.
    """
    x = np.asarray(values, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValueError("logmeanexp needs at least one value")
    est = _lme(x)
    if not se:
        return est
    n = x.size
    if n < 2:
        return est, float("nan")
    jack = np.array([_lme(np.delete(x, i)) for i in range(n)])
    return est, math.sqrt((n - 1.0) / n * float(np.sum((jack - jack.mean()) ** 2)))


def _as_matrix(unit_by_replicate):
    rows = [list(r) for r in unit_by_replicate]
    if not rows:
        raise ValueError("panel_logmeanexp needs at least one unit row")
    lengths = set(len(r) for r in rows)
    if len(lengths) != 1:
        raise ValueError("ragged unit-by-replicate matrix: row lengths {}".format(sorted(lengths)))
    m = np.array(rows, dtype=float)
    if m.shape[1] == 0:
        raise ValueError("panel_logmeanexp needs at least one replicate column")
    return m


def _panel_lme(m):
    return sum(_lme(row) for row in m)


def panel_logmeanexp(unit_by_replicate, se=False):
    """Sum over units of the per-unit logmeanexp across replicate columns.

    The SE deletes one replicate column at a time from the whole statistic.
    """
    m = _as_matrix(unit_by_replicate)
    est = _panel_lme(m)
    if not se:
        return est
    n = m.shape[1]
    if n < 2:
        return est, float("nan")
    jack = np.array([_panel_lme(np.delete(m, i, axis=1)) for i in range(n)])
    return est, math.sqrt((n - 1.0) / n * float(np.sum((jack - jack.mean()) ** 2)))
