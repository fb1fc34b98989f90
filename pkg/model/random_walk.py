"""Gaussian random walk observed with Gaussian noise.

    X_n = X_{n-1} + N(0, sigmaX^2 dt),   Y_n = X_n + N(0, sigmaY^2)
"""
import math
from collections import OrderedDict

import numpy as np
import torch

from model.kalman import scalar_kalman_loglik
from model.panel import UnitModel, build_panel, simulate
from util.errors import CapabilityError, DegenerateMeasurementError
from util.rng import as_stream
from util.transform import ParTrans


MODEL_KEY = "random_walk"
PARAM_NAMES = ("sigmaX", "sigmaY", "X_0")

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _t(v):
    return torch.as_tensor(v, dtype=torch.float64)


def rw_rinit(params, J, t0, rng):
    return (torch.ones(J, dtype=torch.float64) * _t(params["X_0"])).reshape(J, 1)


def rw_rprocess(x, t_from, t_to, params, rng):
    dt = float(t_to) - float(t_from)
    if dt <= 0:
        return x
    sd = _t(params["sigmaX"]).reshape(-1, 1) * math.sqrt(dt)
    return x + sd * rng.normal(tuple(x.shape))


def rw_rmeasure(x, t, params, rng):
    return x[:, :1] + _t(params["sigmaY"]).reshape(-1, 1) * rng.normal((x.shape[0], 1))


def rw_dmeasure(y, x, t, params, log=True):
    sd = _t(params["sigmaY"])
    if not bool(torch.all(sd > 0)):
        raise DegenerateMeasurementError("Gaussian measurement density needs sigmaY > 0")
    z = (_t(y[0]) - x[:, 0]) / sd
    ll = -0.5 * z * z - torch.log(sd) - _HALF_LOG_2PI
    return ll if log else torch.exp(ll)


def random_walk_unit(name, times, t0=0.0, sigmaX=1.0, sigmaY=1.0, X_0=0.0, data=None):
    params = OrderedDict([("sigmaX", sigmaX), ("sigmaY", sigmaY), ("X_0", X_0)])
    return UnitModel(name, times, t0, rinit=rw_rinit, rprocess=rw_rprocess, rmeasure=rw_rmeasure,
                     dmeasure=rw_dmeasure, data=data, partrans=ParTrans(log=("sigmaX", "sigmaY")),
                     params=params, obs_names=("Y",), state_names=("X",), model_key=MODEL_KEY)


def panel_random_walk(U=2, N=10, sd=1.0, sigmaY=1.0, X_0=0.0, rng=0):
    if U < 1 or N < 1:
        raise ValueError("panel_random_walk needs U >= 1 and N >= 1, got U={} N={}".format(U, N))
    names = ["rw{}".format(k + 1) for k in range(U)]
    times = np.arange(1, N + 1, dtype=float)
    units = [random_walk_unit(n, times) for n in names]
    panel = build_panel(units, shared=OrderedDict([("sigmaX", sd), ("sigmaY", sigmaY)]),
                        specific=OrderedDict([("X_0", X_0)]))
    return simulate(panel, nsim=1, rng=as_stream(rng).spawn(MODEL_KEY))[0]


def random_walk_unit_loglik(unit, params):
    if unit.model_key != MODEL_KEY:
        raise CapabilityError("unit '{}' is not a random walk model (model key {!r})".format(unit.name, unit.model_key))
    unit.require("dmeasure")
    if not params["sigmaY"] > 0:
        raise DegenerateMeasurementError("unit '{}': the exact likelihood needs sigmaY > 0".format(unit.name))
    q = params["sigmaX"] ** 2
    dts = np.diff(np.concatenate([[unit.t0], unit.times]))
    transitions = [(1.0, 0.0, q * dt) for dt in dts.tolist()]
    cond = scalar_kalman_loglik(unit.data[0], params["X_0"], 0.0, transitions, params["sigmaY"] ** 2)
    return float(np.sum(cond))


def random_walk_kalman_loglik(panel):
    lls = OrderedDict()
    for u in panel.units:
        lls[u.name] = random_walk_unit_loglik(u, panel.params.unit_params(u.name))
    return lls, sum(lls.values())
