from model import gompertz, random_walk
from util.errors import CapabilityError, ConfigError


MODEL_KEYS = (gompertz.MODEL_KEY, random_walk.MODEL_KEY)


def build_model(model_key, U=None, N=None, params=None, rng=0, **kwargs):
    """Construct a built-in panel with data simulated from ``rng``."""
    if model_key == gompertz.MODEL_KEY:
        args = dict(kwargs)
        if U is not None:
            args["U"] = U
        if N is not None:
            args["N"] = N
        return gompertz.panel_gompertz(params=params, rng=rng, **args)

    if model_key == random_walk.MODEL_KEY:
        params = dict(params or {})
        unknown = set(params) - set(random_walk.PARAM_NAMES)
        if unknown:
            raise ConfigError("unknown random walk parameters {}".format(sorted(unknown)))
        args = dict(kwargs)
        if "sigmaX" in params:
            args["sd"] = params["sigmaX"]
        for k in ("sigmaY", "X_0"):
            if k in params:
                args[k] = params[k]
        return random_walk.panel_random_walk(U=U or 2, N=N or 10, rng=rng, **args)

    raise ConfigError("unknown model '{}', expected one of {}".format(model_key, list(MODEL_KEYS)))


def build_unit(model_key, name, times, t0=0.0, data=None, delta_t=None, params=None):
    """Rebuild one unit from its registry key, as stored in a panel manifest."""
    params = dict(params or {})
    if model_key == gompertz.MODEL_KEY:
        return gompertz.gompertz_unit(name, times, t0=t0, data=data,
                                      delta_t=1.0 if delta_t is None else delta_t, **params)
    if model_key == random_walk.MODEL_KEY:
        return random_walk.random_walk_unit(name, times, t0=t0, data=data, **params)
    raise ConfigError("unknown model '{}', expected one of {}".format(model_key, list(MODEL_KEYS)))


def kalman_loglik(panel):
    """Exact per-unit log-likelihoods and total for panels of one linear-Gaussian model."""
    keys = set(u.model_key for u in panel.units)
    if keys == {gompertz.MODEL_KEY}:
        return gompertz.gompertz_kalman_loglik(panel)
    if keys == {random_walk.MODEL_KEY}:
        return random_walk.random_walk_kalman_loglik(panel)
    raise CapabilityError("no exact likelihood for panels of model {}".format(sorted(map(str, keys))))
