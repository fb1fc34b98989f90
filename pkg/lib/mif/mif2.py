"""Panel iterated filtering.

Each iteration m filters the units one after another. The shared-parameter
swarm is carried from unit to unit; the specific-parameter swarm of the unit
being filtered is perturbed and resampled with the states. Without
marginalization the other units' specific swarms follow the same resampling
indices; with it they are left untouched.
"""
import time
import logging
from collections import OrderedDict, namedtuple

import numpy as np
import torch

from lib.mif.cooling import CoolingSchedule
from lib.smc.functional import multinomial_resample
from model.panel import unit_panel
from util.errors import MifFailure
from util.params import ParamSet, RwSdSpec, format_param_name
from util.rng import as_stream
from util.util import LOGGER_NAME, AverageMeter, Table, remain_time

__all__ = ['Swarm', 'MifSettings', 'MifResult', 'perturb', 'perturbation_sd', 'swarm_estimate',
           'mif2_panel', 'mif2_unit', 'block_refine', 'traces']

logger = logging.getLogger(LOGGER_NAME)


def _constant(v):
    # per row: a (U, J) tensor gives U flags, a (J,) tensor gives one
    return torch.all(v == v[..., :1], dim=-1)


def perturb(values, sd, scale, partrans, rng):
    """Gaussian random walk on the estimation scale.

    ``values`` maps names to tensors with the particles on the last axis;
    ``sd`` maps names to intensities. Names with intensity 0 are returned as
    the same tensors. Members of a transform group are mapped together.
    """
    active = [n for n in values if sd.get(n, 0.0) > 0]
    out = OrderedDict(values)
    if not active or scale == 0:
        return out
    est = partrans.to_est(values, names=active)
    for n in active:
        est[n] = est[n] + scale * sd[n] * rng.normal(tuple(est[n].shape))
    out.update(partrans.from_est(est))
    return out


def perturbation_sd(rw_sd, name, unit, n, m, cooling):
    """Random-walk intensity of ``name`` at time index n of iteration m."""
    return rw_sd.sd(name, unit, n) * cooling.multiplier(m)


def _reduce(values, partrans):
    # estimation-scale mean over particles; rows whose transform group is
    # constant are copied exactly
    keep = OrderedDict()
    for n in values:
        flags = [_constant(values[g]) for g in partrans.group_of(n) if g in values]
        keep[n] = flags[0]
        for f in flags[1:]:
            keep[n] = keep[n] & f
    out = OrderedDict((n, values[n][..., 0]) for n in values)
    varying = [n for n in values if not bool(torch.all(keep[n]))]
    if varying:
        est = partrans.to_est(values, names=varying)
        nat = partrans.from_est(OrderedDict((n, v.mean(dim=-1)) for n, v in est.items()))
        for n in varying:
            out[n] = torch.where(keep[n], values[n][..., 0], nat[n])
    return out


class Swarm(object):
    """Parameter particles on the natural scale: shared (J,) and specific (U, J) tensors."""

    def __init__(self, shared, specific, unit_names):
        self.shared = OrderedDict(shared)
        self.specific = OrderedDict(specific)
        self.unit_names = tuple(unit_names)

    @classmethod
    def from_params(cls, params, J):
        values, matrix = params.coef_list()
        shared = OrderedDict((n, torch.full((J,), v, dtype=torch.float64)) for n, v in values.items())
        specific = OrderedDict()
        for i, b in enumerate(params.specific_names):
            specific[b] = torch.from_numpy(matrix[i]).reshape(-1, 1).repeat(1, J)
        return cls(shared, specific, params.unit_names)

    @property
    def J(self):
        for v in list(self.shared.values()) + list(self.specific.values()):
            return v.shape[-1]
        return 0

    def copy(self):
        return Swarm(OrderedDict((n, v.clone()) for n, v in self.shared.items()),
                     OrderedDict((n, v.clone()) for n, v in self.specific.items()), self.unit_names)

    def unit_values(self, k):
        out = OrderedDict(self.shared)
        for b, v in self.specific.items():
            out[b] = v[k]
        return out

    def __repr__(self):
        return "Swarm(J={}, shared={}, specific={})".format(self.J, list(self.shared), list(self.specific))


def swarm_estimate(swarm, partrans):
    shared = _reduce(swarm.shared, partrans)
    specific = _reduce(swarm.specific, partrans)
    return ParamSet(OrderedDict((n, float(v)) for n, v in shared.items()),
                    np.array([specific[b].numpy() for b in swarm.specific]).reshape(len(swarm.specific),
                                                                                    len(swarm.unit_names)),
                    tuple(swarm.specific), swarm.unit_names)


class MifSettings(namedtuple("MifSettings", ["M", "J", "rw_sd", "cooling", "marginalize", "max_fail"])):
    __slots__ = ()

    def __new__(cls, M=25, J=250, rw_sd=None, cooling=None, marginalize=False, max_fail=float("inf")):
        return super(MifSettings, cls).__new__(cls, int(M), int(J), rw_sd if rw_sd is not None else RwSdSpec(),
                                               cooling if cooling is not None else CoolingSchedule(),
                                               bool(marginalize), max_fail)

    def update(self, **overrides):
        return self._replace(**{k: v for k, v in overrides.items() if v is not None})

    def describe(self):
        return OrderedDict([("M", self.M), ("J", self.J), ("rw_sd", self.rw_sd.describe()),
                            ("cooling", self.cooling.describe()), ("marginalize", self.marginalize),
                            ("max_fail", self.max_fail)])


class MifResult(object):
    def __init__(self, panel, final_swarm, estimate, traces, settings, nfail, failures, unit_logliks):
        self.base_panel = panel
        self.final_swarm = final_swarm
        self.estimate = estimate
        self.traces = traces
        self.settings = settings
        self.nfail = nfail
        self.failures = list(failures)
        self.unit_logliks = OrderedDict(unit_logliks)
        self.refined = None

    @classmethod
    def from_estimate(cls, panel, estimate, settings=None):
        """Wrap a stored estimate so it can be refined without a search."""
        return cls(panel, None, estimate, Table(("iteration",), []), settings or MifSettings(), 0, (),
                   OrderedDict())

    @property
    def loglik(self):
        # perturbed-filter estimate from the last iteration
        return sum(self.unit_logliks.values())

    @property
    def panel(self):
        return self.base_panel.with_params(self.estimate)

    def estimate_table(self):
        flat = self.estimate.flatten()
        return Table(list(flat) + ["loglik", "nfail"], [list(flat.values()) + [self.loglik, self.nfail]])

    def __repr__(self):
        return "MifResult(M={}, J={}, loglik={:.4f}, nfail={})".format(self.settings.M, self.settings.J,
                                                                      self.loglik, self.nfail)


def traces(r):
    return r.traces


def _as_start(panel, start):
    if start is None:
        return panel.params
    if isinstance(start, ParamSet):
        if start.layout != panel.params.layout:
            raise ValueError("start layout {} does not match the panel layout {}".format(start.layout, panel.params.layout))
        return start
    return ParamSet.unflatten(start, panel.params.layout)


def _trace_row(m, est, unit_logliks, nfail):
    ll = sum(unit_logliks.values()) if unit_logliks else float("nan")
    return [m, ll, nfail] + list(est.flatten().values()) + list(unit_logliks.values())


def mif2_panel(panel, start=None, M=None, J=None, rw_sd=None, cooling=None, marginalize=None, max_fail=None,
               rng=None, settings=None, hooks=None, writer=None):
    """Run M iterations of panel iterated filtering with J particles.

    ``start`` is a ParamSet or a flattened mapping such as a design row;
    explicit arguments override ``settings``. ``hooks(event, m, unit, swarm)``
    is called with "unit_start" and "unit_end" around each unit; ``writer``
    is a tensorboardX SummaryWriter.
    """
    settings = (settings or MifSettings()).update(M=M, J=J, rw_sd=rw_sd, cooling=cooling,
                                                  marginalize=marginalize, max_fail=max_fail)
    if settings.M < 1 or settings.J < 1:
        raise ValueError("mif2 needs M >= 1 and J >= 1, got M={} J={}".format(settings.M, settings.J))
    rng = as_stream(rng)
    start = _as_start(panel, start)
    layout = start.layout
    settings.rw_sd.validate(layout)
    partrans = panel.partrans
    J = settings.J
    shared_names = list(start.shared_names)

    swarm = Swarm.from_params(start, J)
    unit_names = [u.name for u in panel.units]
    columns = ["iteration", "loglik", "nfail"] + layout.flat_names + [format_param_name("loglik", u) for u in unit_names]
    rows = [_trace_row(0, start, OrderedDict((u, float("nan")) for u in unit_names), 0)]
    nfail, failures = 0, []
    unit_logliks = OrderedDict()
    iter_time = AverageMeter()
    end = time.time()
    for m in range(1, settings.M + 1):
        scale = settings.cooling.multiplier(m)
        unit_logliks = OrderedDict()
        nfail_m = 0
        for k, unit in enumerate(panel.units):
            unit.require("rinit", "rprocess", "dmeasure")
            if hooks is not None:
                hooks("unit_start", m, unit.name, swarm.copy())
            stream = rng.spawn(m, unit.name)

            def sds(n):
                return {b: settings.rw_sd.sd(b, unit.name, n) for b in layout.base_names}

            theta = perturb(swarm.unit_values(k), sds(0), scale, partrans, stream)
            x = unit.rinit(theta, J, unit.t0, stream)
            cond = np.zeros(unit.N)
            t_prev = unit.t0
            for n in range(unit.N):
                t = float(unit.times[n])
                theta = perturb(theta, sds(n + 1), scale, partrans, stream)
                x = unit.rprocess(x, t_prev, t, theta, stream)
                logw = unit.dmeasure(unit.observation(n), x, t, theta, log=True)
                top = torch.max(logw)
                if not bool(torch.isfinite(top)) or bool(torch.any(torch.isnan(logw))):
                    nfail += 1
                    nfail_m += 1
                    failures.append((unit.name, n))
                    logger.warning("Filtering failure in unit {} at time index {} (iteration {}).".format(unit.name, n, m))
                    if nfail > settings.max_fail:
                        raise MifFailure(nfail, settings.max_fail, failures)
                    w = torch.ones(J, dtype=torch.float64)
                    cond[n] = -np.inf
                else:
                    w = torch.exp(logw - top)
                    cond[n] = float(top + torch.log(torch.mean(w)))
                idx = multinomial_resample(w, stream)
                x = x[idx]
                theta = OrderedDict((b, v[idx]) for b, v in theta.items())
                if not settings.marginalize:
                    for b in swarm.specific:
                        swarm.specific[b] = swarm.specific[b][:, idx]
                t_prev = t
            for b in shared_names:
                swarm.shared[b] = theta[b]
            for b in list(swarm.specific):
                row = swarm.specific[b].clone()
                row[k] = theta[b]
                swarm.specific[b] = row
            unit_logliks[unit.name] = sum(cond.tolist())
            if hooks is not None:
                hooks("unit_end", m, unit.name, swarm.copy())

        est = swarm_estimate(swarm, partrans)
        rows.append(_trace_row(m, est, unit_logliks, nfail_m))
        loglik = sum(unit_logliks.values())
        iter_time.update(time.time() - end)
        end = time.time()
        logger.info('Mif: [{}/{}] Loglik {:.4f} Nfail {} Iter {:.3f} ({:.3f}) Remain {}'.format(
            m, settings.M, loglik, nfail_m, iter_time.val, iter_time.avg,
            remain_time((settings.M - m) * iter_time.avg)))
        if writer is not None:
            writer.add_scalar('loglik', loglik, m)
            for u, ll in unit_logliks.items():
                writer.add_scalar('unit_loglik/' + u, ll, m)
            for name, v in est.flatten().items():
                writer.add_scalar('param/' + name, v, m)

    return MifResult(panel, swarm, swarm_estimate(swarm, partrans), Table(columns, rows), settings, nfail, failures,
                     unit_logliks)


def mif2_unit(unit, params=None, settings=None, rng=None, **overrides):
    """Iterated filtering on a single unit, every parameter treated as shared.

    Settings recycle those of a panel-level search; per-unit intensities are
    resolved for this unit.
    """
    settings = (settings or MifSettings()).update(**overrides)
    settings = settings._replace(rw_sd=settings.rw_sd.for_unit(unit.name))
    return mif2_panel(unit_panel(unit, params), settings=settings, rng=rng)


def _block_task(args):
    unit, params, settings, streams = args
    lls, estimates = [], []
    for stream in streams:
        r = mif2_unit(unit, params, settings=settings, rng=stream)
        lls.append(r.loglik)
        estimates.append(r.estimate.shared)
    best = int(np.argmax(lls))
    return best, lls[best], estimates[best]


def block_refine(r, panel=None, reps=1, rng=None, rw_sd=None, map_fn=map):
    """Re-maximize each unit's specific parameters with the shared ones held fixed.

    Every unit runs ``reps`` single-unit searches perturbing only its specific
    parameters (streams ``rng.spawn("block", unit, rep)``); the search with
    the highest log-likelihood supplies the unit's new values.
    """
    if reps < 1:
        raise ValueError("block_refine needs reps >= 1, got {}".format(reps))
    rng = as_stream(rng)
    panel = (panel if panel is not None else r.base_panel).with_params(r.estimate)
    specific_names = list(r.estimate.specific_names)
    settings = r.settings._replace(rw_sd=(rw_sd if rw_sd is not None else r.settings.rw_sd).restrict(specific_names))
    tasks = []
    for u in panel.units:
        streams = [rng.spawn("block", u.name, i) for i in range(reps)]
        tasks.append((u, r.estimate.unit_params(u.name), settings, streams))
    outcomes = list(map_fn(_block_task, tasks))

    updates = OrderedDict()
    refined = OrderedDict()
    for u, (best, ll, values) in zip(panel.units, outcomes):
        refined[u.name] = (best, ll)
        for b in specific_names:
            updates[format_param_name(b, u.name)] = values[b]
        logger.info("Block refinement: unit {} best replicate {} loglik {:.4f}.".format(u.name, best, ll))
    estimate = panel.with_coef(updates).params
    out = MifResult(r.base_panel, r.final_swarm, estimate, r.traces, r.settings, r.nfail, r.failures, r.unit_logliks)
    out.refined = refined
    return out
