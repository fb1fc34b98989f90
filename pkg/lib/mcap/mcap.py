"""Monte Carlo adjusted profile confidence intervals.

The profile is smoothed, the maximum located on a fine grid and a weighted
quadratic fitted to the raw points near it. Its curvature gives the
statistical standard error; the sampling variance of the quadratic's
argmax gives the Monte Carlo one. The usual chi-square cutoff is inflated by
(se_stat^2 + se_mc^2) / se_stat^2.
"""
import math
import logging
from collections import OrderedDict

import numpy as np
from scipy import linalg, stats

from lib.mcap.loess import loess_smooth, tricube
from util.util import LOGGER_NAME, Table

__all__ = ['McapResult', 'mcap', 'quadratic_fit']

logger = logging.getLogger(LOGGER_NAME)


class McapResult(object):
    def __init__(self, level, span, mle, delta, ci, lower_open, upper_open, se_stat, se_mc, concave, quadratic,
                 grid, smoothed):
        self.level = level
        self.span = span
        self.mle = mle
        self.delta = delta
        self.ci = ci
        self.lower_open = lower_open
        self.upper_open = upper_open
        self.se_stat = se_stat
        self.se_mc = se_mc
        self.concave = concave
        self.quadratic = quadratic
        self.grid = grid
        self.smoothed = smoothed

    @property
    def se_total(self):
        return math.sqrt(self.se_stat ** 2 + self.se_mc ** 2) if self.concave else float("inf")

    @property
    def curvature(self):
        return -self.quadratic["b"]

    def summary(self):
        rec = OrderedDict([("level", self.level), ("span", self.span), ("mle", self.mle), ("delta", self.delta),
                           ("lower", self.ci[0]), ("upper", self.ci[1]),
                           ("lower_open", int(self.lower_open)), ("upper_open", int(self.upper_open)),
                           ("se_stat", self.se_stat), ("se_mc", self.se_mc), ("se_total", self.se_total),
                           ("concave", int(self.concave))])
        return Table(list(rec), [list(rec.values())])

    def curve(self):
        return Table(("parameter", "smoothed"), zip(self.grid.tolist(), self.smoothed.tolist()))

    def __repr__(self):
        return "McapResult(mle={:.6g}, ci=({:.6g}, {:.6g}), delta={:.5f})".format(self.mle, self.ci[0], self.ci[1],
                                                                              self.delta)


def quadratic_fit(x, y, w, center):
    """Weighted fit y ~ c + a (x - center) + b (x - center)^2.

    Returns the coefficients and their covariance s^2 (X'WX)^-1, with s^2
    estimated on the points of positive weight.
    """
    keep = w > 0
    X = np.vander(x[keep] - center, 3, increasing=True)
    sw = np.sqrt(w[keep])
    coef, _, rank, _ = linalg.lstsq(X * sw[:, None], y[keep] * sw, check_finite=False)
    if rank < 3:
        return None, None
    resid = y[keep] - X @ coef
    dof = np.count_nonzero(keep) - 3
    s2 = float(np.sum(w[keep] * resid ** 2) / dof) if dof > 0 else 0.0
    vcov = s2 * linalg.inv((X * w[keep][:, None]).T @ X)
    return coef, vcov


def mcap(loglik, parameter, level=0.95, span=0.75, ngrid=1000):
    loglik = np.asarray(loglik, dtype=float).reshape(-1)
    parameter = np.asarray(parameter, dtype=float).reshape(-1)
    if loglik.size != parameter.size:
        raise ValueError("loglik and parameter have different lengths: {} vs {}".format(loglik.size, parameter.size))
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1), got {}".format(level))
    if loglik.size < 10:
        logger.warning("MCAP with {} profile points; at least 10 are recommended.".format(loglik.size))

    # fits run on loglik - max(loglik) so the interval ignores vertical shifts
    shift = float(np.max(loglik))
    y = loglik - shift
    grid = np.linspace(parameter.min(), parameter.max(), int(ngrid))
    smoothed, _ = loess_smooth(parameter, y, span, grid)
    top = int(np.argmax(smoothed))
    mle = float(grid[top])

    # quadratic on the raw points within one span of the maximum
    dist = np.abs(parameter - mle)
    k = min(max(int(span * dist.size), 4), dist.size)
    h = np.sort(dist)[k - 1]
    w = tricube(dist / (h * (1 + 1e-10))) if h > 0 else np.ones(dist.size)
    coef, vcov = quadratic_fit(parameter, y, w, mle)
    if coef is None:
        coef, vcov = quadratic_fit(parameter, y, np.ones(dist.size), mle)

    chi2_half = stats.chi2.ppf(level, df=1) / 2.0
    concave = coef is not None and coef[2] < 0
    if concave:
        a, b = coef[1], coef[2]
        se_stat2 = -1.0 / (2.0 * b)
        grad = np.array([-1.0 / (2.0 * b), a / (2.0 * b * b)])
        se_mc2 = max(float(grad @ vcov[1:, 1:] @ grad), 0.0)
        delta = chi2_half * (se_stat2 + se_mc2) / se_stat2
        se_stat, se_mc = math.sqrt(se_stat2), math.sqrt(se_mc2)
    else:
        logger.warning("Profile is not concave near its maximum; MCAP interval uses the unadjusted cutoff.")
        delta = chi2_half
        se_stat, se_mc = float("inf"), float("nan")

    cutoff = smoothed[top] - delta
    lo = top
    while lo > 0 and smoothed[lo - 1] >= cutoff:
        lo -= 1
    hi = top
    while hi < grid.size - 1 and smoothed[hi + 1] >= cutoff:
        hi += 1
    quad = OrderedDict(zip(("c", "a", "b"), coef.tolist() if coef is not None else [float("nan")] * 3))
    quad["c"] += shift
    return McapResult(level, span, mle, float(delta), (float(grid[lo]), float(grid[hi])), lo == 0,
                      hi == grid.size - 1, se_stat, se_mc, bool(concave), quad, grid, smoothed + shift)
