"""Local polynomial regression with tricube weights."""
import numpy as np
from scipy import linalg

from util.errors import SmoothingError

__all__ = ['tricube', 'loess_smooth']


def tricube(d):
    d = np.clip(np.abs(d), 0.0, 1.0)
    return (1 - d ** 3) ** 3


def _local_row(x, x0, w, degree):
    # row l of the local fit such that fitted(x0) = l @ y
    keep = w > 0
    for deg in range(degree, -1, -1):
        if np.count_nonzero(keep) < deg + 1:
            continue
        X = np.vander(x[keep] - x0, deg + 1, increasing=True)
        sw = np.sqrt(w[keep])
        coef, _, rank, _ = linalg.lstsq(X * sw[:, None], np.diag(sw), check_finite=False)
        if rank < deg + 1:
            continue
        row = np.zeros(x.size)
        row[keep] = coef[0]
        return row
    raise SmoothingError("local neighbourhood of {} is empty".format(x0))


def loess_smooth(x, y, span=0.75, eval_points=None, degree=2):
    """Local quadratic fit at each evaluation point.

    Each fit uses the floor(n * span) nearest points with tricube weights;
    a neighbourhood that cannot support a quadratic falls back to a lower
    degree. Returns the fitted values and the squared norm of each
    smoother row, proportional to the pointwise variance of the fit.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.size != y.size:
        raise ValueError("x and y have different lengths: {} vs {}".format(x.size, y.size))
    if x.size < 5:
        raise SmoothingError("loess needs at least 5 points, got {}".format(x.size))
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise SmoothingError("loess inputs must be finite")
    if np.ptp(x) == 0:
        raise SmoothingError("loess needs at least two distinct x values")
    if not 0 < span <= 1:
        raise ValueError("span must lie in (0, 1], got {}".format(span))
    eval_points = x if eval_points is None else np.asarray(eval_points, dtype=float).reshape(-1)

    q = max(int(np.floor(x.size * span)), degree + 1)
    q = min(q, x.size)
    fitted = np.zeros(eval_points.size)
    var = np.zeros(eval_points.size)
    for i, x0 in enumerate(eval_points.tolist()):
        d = np.abs(x - x0)
        h = np.sort(d)[q - 1]
        if h <= 0:
            h = np.min(d[d > 0])
        # widen slightly so the q-th neighbour keeps a positive weight
        w = tricube(d / (h * (1 + 1e-10)))
        row = _local_row(x, x0, w, degree)
        fitted[i] = row @ y
        var[i] = row @ row
    return fitted, var
