import logging
from collections import OrderedDict

from lib.mif.mif2 import MifSettings, mif2_panel, block_refine
from lib.smc.functional import logmeanexp
from lib.smc.pfilter import replicate_pfilter
from model.kalman import maximize_kalman_loglik, best_of
from util.rng import as_stream
from util.util import LOGGER_NAME, Table

__all__ = ['ProfileTable', 'run_profile', 'kalman_profile']

logger = logging.getLogger(LOGGER_NAME)


class ProfileTable(Table):
    """Profile points: flattened parameters, loglik and loglik_se."""

    def __init__(self, columns, rows=(), focal=None, dropped=0):
        super(ProfileTable, self).__init__(columns, rows)
        for c in ("loglik", "loglik_se"):
            if c not in self.columns:
                raise ValueError("profile table needs a '{}' column".format(c))
        self.focal = focal
        self.dropped = dropped

    @classmethod
    def from_csv(cls, path, focal=None):
        t = Table.from_csv(path)
        return cls(t.columns, t.rows, focal=focal)

    def parameter(self, name=None):
        return [float(v) for v in self.column(name or self.focal)]

    def loglik(self):
        return [float(v) for v in self.column("loglik")]


def _max_per_focal(columns, rows, focal):
    j = columns.index(focal)
    k = columns.index("loglik")
    best = OrderedDict()
    for r in rows:
        v = r[j]
        if v not in best or r[k] > best[v][k]:
            best[v] = r
    return [best[v] for v in sorted(best)]


def _profile_task(args):
    panel, start, settings, block_reps, block_rw_sd, reps, J_eval, stream = args
    r = mif2_panel(panel, start=start, settings=settings, rng=stream.spawn("mif"))
    if block_reps and r.estimate.B:
        r = block_refine(r, reps=block_reps, rng=stream.spawn("block"), rw_sd=block_rw_sd)
    evals = replicate_pfilter(r.panel, J_eval, reps, stream.spawn("eval"), on_failure="neginf")
    totals = evals.totals
    if all(t == float("-inf") for t in totals):
        return r.estimate, None, None
    ll, se = logmeanexp(totals, se=True)
    return r.estimate, ll, se


def run_profile(panel, focal, design, settings=None, reps=10, J_eval=2500, block_reps=0, block_rw_sd=None, rng=None,
                map_fn=map):
    """Profile likelihood over the focal values of ``design``.

    Each design row starts a search with the focal parameter frozen,
    optionally followed by block refinement of the unit-specific parameters;
    the result is re-evaluated by ``reps`` unperturbed filters with
    ``J_eval`` particles. Rows are reduced to the best per focal value.
    """
    if reps < 2:
        raise ValueError("profile evaluation needs reps >= 2 for a standard error, got {}".format(reps))
    rng = as_stream(rng)
    settings = settings or MifSettings()
    settings = settings._replace(rw_sd=settings.rw_sd.freeze(focal))
    block_rw_sd = (block_rw_sd if block_rw_sd is not None else settings.rw_sd).freeze(focal)
    layout = panel.params.layout
    design.check_layout(layout)
    if focal not in design.columns:
        raise ValueError("focal parameter '{}' is not a design column".format(focal))

    tasks = []
    for i in range(len(design)):
        tasks.append((panel, design.param_set(i, layout), settings, block_reps, block_rw_sd, reps, J_eval,
                      rng.spawn("profile", i)))
    outcomes = list(map_fn(_profile_task, tasks))

    columns = layout.flat_names + ["loglik", "loglik_se"]
    rows, dropped = [], 0
    for i, (estimate, ll, se) in enumerate(outcomes):
        if ll is None:
            dropped += 1
            continue
        rows.append(list(estimate.flatten().values()) + [ll, se])
    if dropped:
        logger.warning("Profile: {} of {} points dropped, every evaluation failed.".format(dropped, len(design)))
    return ProfileTable(columns, _max_per_focal(columns, rows, focal), focal=focal, dropped=dropped)


def kalman_profile(panel, focal, grid, estimated, loglik_fn=None):
    """Deterministic profile from the exact likelihood.

    At each focal value the ``estimated`` parameters are maximized from both
    the panel's values and the previous optimum; the better one is kept.
    """
    estimated = [e for e in estimated if e != focal]
    columns = panel.params.layout.flat_names + ["loglik", "loglik_se"]
    rows = []
    previous = None
    for g in sorted(float(v) for v in grid):
        p = panel.with_coef({focal: g})
        best, ll = maximize_kalman_loglik(p, estimated, loglik_fn)
        if previous is not None:
            warm = p.with_coef({k: v for k, v in previous.flatten().items() if k != focal})
            best, ll = best_of(best, ll, *maximize_kalman_loglik(warm, estimated, loglik_fn))
        previous = best
        rows.append(list(best.flatten().values()) + [ll, 0.0])
        logger.info("Kalman profile: {}={:.6g} loglik {:.4f}".format(focal, g, ll))
    return ProfileTable(columns, rows, focal=focal)
