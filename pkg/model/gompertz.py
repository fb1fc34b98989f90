"""Stochastic Gompertz population model.

    X_{n+1} = K^(1 - S) X_n^S eps_n,   S = exp(-r dt),   log eps_n ~ N(0, sigma^2 dt)
    log Y_n | X_n ~ N(log X_n, tau^2)

The process is advanced in Euler substeps of at most ``delta_t`` between
observation times; the log-scale model is linear-Gaussian, which gives the
exact likelihood in ``gompertz_kalman_loglik``.
"""
import math
from collections import OrderedDict
from functools import partial

import numpy as np
import torch

from model.kalman import euler_steps, compose, scalar_kalman_loglik
from model.panel import UnitModel, build_panel, simulate
from util.errors import DomainError, DegenerateMeasurementError, CapabilityError
from util.rng import as_stream
from util.transform import ParTrans


MODEL_KEY = "gompertz"
PARAM_NAMES = ("K", "r", "sigma", "tau", "X_0")
DEFAULTS = OrderedDict([("K", 1.0), ("r", 0.1), ("sigma", 0.1), ("tau", 0.1), ("X_0", 1.0)])
DEFAULT_SHARED = ("r", "sigma")
DEFAULT_SPECIFIC = ("K", "tau", "X_0")

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _t(v):
    return torch.as_tensor(v, dtype=torch.float64)


def gompertz_step(x, params, rng, dt=1.0):
    x = _t(x)
    if not bool(torch.all(x > 0)):
        raise DomainError("Gompertz state must be positive, got {}".format(x.min().item()))
    K, r, sigma = _t(params["K"]), _t(params["r"]), _t(params["sigma"])
    S = torch.exp(-r * dt)
    eps = torch.exp(sigma * math.sqrt(dt) * rng.normal(tuple(x.shape)))
    return torch.pow(K, 1.0 - S) * torch.pow(x, S) * eps


def gompertz_rinit(params, J, t0, rng):
    x0 = _t(params["X_0"])
    return (torch.ones(J, dtype=torch.float64) * x0).reshape(J, 1)


def gompertz_rprocess(x, t_from, t_to, params, rng, delta_t=1.0):
    for h in euler_steps(t_from, t_to, delta_t):
        # params broadcast against the particle axis
        x = gompertz_step(x[:, 0], params, rng, h).reshape(-1, 1)
    return x


def gompertz_rmeasure(x, t, params, rng):
    tau = _t(params["tau"]).reshape(-1, 1)
    return x[:, :1] * torch.exp(tau * rng.normal((x.shape[0], 1)))


def gompertz_dmeasure(y, x, tau, log=True):
    y, x, tau = _t(y), _t(x), _t(tau)
    if not bool(torch.all(tau > 0)):
        raise DegenerateMeasurementError("lognormal measurement density needs tau > 0")
    if not bool(torch.all(y > 0)) or not bool(torch.all(x > 0)):
        raise DomainError("lognormal measurement density needs positive y and x")
    logy = torch.log(y)
    z = (logy - torch.log(x)) / tau
    ll = -0.5 * z * z - torch.log(tau) - _HALF_LOG_2PI - logy
    return ll if log else torch.exp(ll)


def _dmeasure_slot(y, x, t, params, log=True):
    return gompertz_dmeasure(y[0], x[:, 0], params["tau"], log=log)


def gompertz_unit(name, times, t0=0.0, K=1.0, r=0.1, sigma=0.1, tau=0.1, X_0=1.0, data=None, delta_t=1.0):
    params = OrderedDict([("K", K), ("r", r), ("sigma", sigma), ("tau", tau), ("X_0", X_0)])
    return UnitModel(name, times, t0, rinit=gompertz_rinit, rprocess=partial(gompertz_rprocess, delta_t=delta_t),
                     rmeasure=gompertz_rmeasure, dmeasure=_dmeasure_slot, data=data,
                     partrans=ParTrans(log=PARAM_NAMES), params=params,
                     obs_names=("Y",), state_names=("X",), model_key=MODEL_KEY, delta_t=delta_t)


def panel_gompertz(U=50, N=100, params=None, shared=DEFAULT_SHARED, specific=DEFAULT_SPECIFIC, rng=0,
                   t0=0.0, delta_t=1.0):
    """U Gompertz units observed at times 1..N, data filled by one simulation.

    ``params`` overrides the defaults; a specific parameter may be given as
    one value or one value per unit. Like the constructor it mirrors, the
    data are drawn from a fixed default seed unless ``rng`` is given.
    """
    if U < 1 or N < 1:
        raise ValueError("panel_gompertz needs U >= 1 and N >= 1, got U={} N={}".format(U, N))
    values = OrderedDict(DEFAULTS)
    values.update(params or {})
    unknown = set(values) - set(PARAM_NAMES)
    if unknown:
        raise ValueError("unknown Gompertz parameters {}".format(sorted(unknown)))
    names = ["unit{}".format(k + 1) for k in range(U)]
    times = np.arange(1, N + 1, dtype=float)
    units = [gompertz_unit(n, times, t0=t0, delta_t=delta_t) for n in names]
    panel = build_panel(units,
                        shared=OrderedDict((b, float(values[b])) for b in shared),
                        specific=OrderedDict((b, values[b]) for b in specific))
    return simulate(panel, nsim=1, rng=as_stream(rng).spawn(MODEL_KEY))[0]


def _unit_transitions(unit, params):
    logK = math.log(params["K"])
    r, q = params["r"], params["sigma"] ** 2
    out = []
    t_prev = unit.t0
    for t in unit.times.tolist():
        step = (1.0, 0.0, 0.0)
        for h in euler_steps(t_prev, t, unit.delta_t):
            a = math.exp(-r * h)
            step = compose(step, (a, (1.0 - a) * logK, q * h))
        out.append(step)
        t_prev = t
    return out


def gompertz_unit_loglik(unit, params):
    if unit.model_key != MODEL_KEY:
        raise CapabilityError("unit '{}' is not a Gompertz model (model key {!r})".format(unit.name, unit.model_key))
    unit.require("dmeasure")
    if not params["tau"] > 0:
        raise DegenerateMeasurementError("unit '{}': the exact likelihood needs tau > 0".format(unit.name))
    for b in ("K", "X_0"):
        if not params[b] > 0:
            raise DomainError("unit '{}': {} must be positive".format(unit.name, b))
    y = unit.data[0]
    if np.any(y <= 0):
        raise DomainError("unit '{}': Gompertz observations must be positive".format(unit.name))
    z = np.log(y)
    cond = scalar_kalman_loglik(z, math.log(params["X_0"]), 0.0, _unit_transitions(unit, params), params["tau"] ** 2)
    return float(np.sum(cond - z))


def gompertz_kalman_loglik(panel):
    """Exact per-unit log-likelihoods (in unit order) and their total."""
    lls = OrderedDict()
    for u in panel.units:
        lls[u.name] = gompertz_unit_loglik(u, panel.params.unit_params(u.name))
    return lls, sum(lls.values())
