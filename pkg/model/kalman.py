"""Exact likelihoods for the scalar linear-Gaussian models and a
derivative-free maximizer built on them."""
import math
import logging
from collections import OrderedDict

import numpy as np
from scipy import optimize

from util.params import ParamSet, set_coef, to_est, from_est
from util.errors import TransformDomainError
from util.util import LOGGER_NAME


logger = logging.getLogger(LOGGER_NAME)

_LOG_2PI = math.log(2.0 * math.pi)


def euler_steps(t_from, t_to, delta_t):
    """Equal substeps no longer than ``delta_t`` covering (t_from, t_to]."""
    span = float(t_to) - float(t_from)
    if span <= 0:
        return []
    if delta_t is None:
        return [span]
    nstep = max(1, int(math.ceil(span / float(delta_t) - 1e-9)))
    return [span / nstep] * nstep


def compose(first, second):
    # x -> a x + b + N(0, q), applied `first` then `second`
    a1, b1, q1 = first
    a2, b2, q2 = second
    return a2 * a1, a2 * b1 + b2, a2 * a2 * q1 + q2


def scalar_kalman_loglik(z, m0, p0, transitions, meas_var):
    """Log-likelihood of z_n = x_n + N(0, meas_var), x_n = a_n x_{n-1} + b_n + N(0, q_n).

    ``transitions`` holds one (a, b, q) per observation. Returns the
    per-observation conditional log-likelihoods.
    """
    m, p = float(m0), float(p0)
    cond = np.zeros(len(z))
    for n, (a, b, q) in enumerate(transitions):
        m = a * m + b
        p = a * a * p + q
        s = p + meas_var
        resid = z[n] - m
        cond[n] = -0.5 * (_LOG_2PI + math.log(s) + resid * resid / s)
        gain = p / s
        m = m + gain * resid
        p = (1.0 - gain) * p
    return cond


def maximize_kalman_loglik(panel, estimated, loglik_fn=None, maxiter=None, xatol=1e-6, fatol=1e-8):
    """Maximize ``loglik_fn(panel)`` over the flattened names in ``estimated``.

    The search runs Nelder-Mead on the estimation scale of the panel's
    parameter transforms; the remaining parameters stay at their current
    values. ``loglik_fn`` defaults to the registered exact likelihood of the
    panel's model. Returns the maximizing ParamSet and its log-likelihood.
    """
    if loglik_fn is None:
        from model.build_model import kalman_loglik

        def loglik_fn(p):
            return kalman_loglik(p)[1]
    estimated = list(estimated)
    partrans = panel.partrans
    layout = panel.params.layout
    start = to_est(panel.params, partrans)
    unknown = [n for n in estimated if n not in start]
    if unknown:
        raise KeyError("unknown parameters {}".format(unknown))
    x0 = np.array([start[n] for n in estimated])

    fixed = OrderedDict((n, v) for n, v in panel.params.flatten().items() if n not in estimated)

    def unpack(x):
        v = dict(start)
        v.update(zip(estimated, x.tolist()))
        # parameters outside the search keep their exact values
        return set_coef(from_est(v, partrans, layout), fixed)

    def objective(x):
        if not np.all(np.isfinite(x)):
            return np.inf
        try:
            ll = loglik_fn(panel.with_params(unpack(x)))
        except (TransformDomainError, ValueError, OverflowError):
            return np.inf
        return -ll if np.isfinite(ll) else np.inf

    if not estimated:
        return panel.params, loglik_fn(panel)
    maxiter = maxiter if maxiter is not None else 400 * len(estimated)
    res = optimize.minimize(objective, x0, method="Nelder-Mead",
                            options=dict(maxiter=maxiter, maxfev=2 * maxiter, xatol=xatol, fatol=fatol,
                                         adaptive=len(estimated) > 3))
    best = unpack(res.x)
    logger.info("Kalman maximization: {} evaluations, loglik {:.4f} ({}).".format(res.nfev, -res.fun, res.message))
    return best, -float(res.fun)


def best_of(params_a, ll_a, params_b, ll_b):
    assert isinstance(params_a, ParamSet) and isinstance(params_b, ParamSet)
    return (params_a, ll_a) if ll_a >= ll_b else (params_b, ll_b)
