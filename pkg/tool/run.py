import os
import sys
import json
import time
import argparse
import platform

import numpy as np
import scipy
import torch
import yaml
from tensorboardX import SummaryWriter

from lib.mcap import ProfileTable, kalman_profile, mcap, run_profile
from lib.mif import CoolingSchedule, MifResult, MifSettings, block_refine, mif2_panel
from lib.smc import logmeanexp, replicate_pfilter
from model.build_model import MODEL_KEYS, build_model, kalman_loglik
from model.kalman import maximize_kalman_loglik
from model.panel import simulate
from util import config
from util.dataset import load_panel, save_panel, save_plot_data
from util.errors import (CapabilityError, ConfigError, FilteringFailure, MifFailure, SmoothingError,
                         UnknownParameterError)
from util.params import DesignMatrix, RwSdSpec, format_param_name, parse_param_name, profile_design, runif_panel_design
from util.parallel import get_map
from util.rng import Stream
from util.util import Table, check_makedirs, get_logger

COMMANDS = ('simulate', 'pfilter', 'mif2', 'block-refine', 'profile', 'mcap', 'kalman')
STOCHASTIC = ('simulate', 'pfilter', 'mif2', 'block-refine', 'profile')

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_FAILURES = 0, 1, 2, 3

logger = get_logger()

# every key a config file may set; sections are flattened on load
DEFAULTS = {
    # MODEL
    'model': 'gompertz', 'U': 50, 'N': 100, 'params': {}, 'shared': None, 'specific': None,
    'data_dir': None, 'data_seed': 0, 'nsim': 1,
    # PFILTER
    'pf_J': 2000, 'pf_reps': 10, 'resample': 'multinomial', 'max_fail': None,
    # SEARCH
    'mif_M': 25, 'mif_J': 250, 'rw_sd': {}, 'rw_sd_ivp': [], 'cooling_type': 'geometric', 'cooling_fraction': 0.5,
    'marginalize': False, 'nseq': 1, 'lower': {}, 'upper': {}, 'start_csv': None, 'eval_reps': 10, 'eval_J': 1000,
    # BLOCK
    'block_reps': 0, 'block_rw_sd': None,
    # PROFILE
    'focal': None, 'grid': [], 'nprof': 1, 'profile_lower': {}, 'profile_upper': {}, 'kalman_profile': False,
    # KALMAN
    'kalman_mle': False, 'estimated': [],
    # MCAP
    'level': 0.95, 'span': 0.75, 'ngrid': 1000, 'profile_csv': None,
    # RUN
    'seed': None, 'workers': 1, 'save_path': 'exp/run', 'tensorboard': False,
}


def get_parser(argv=None):
    parser = argparse.ArgumentParser(description='PanelPOMP inference')
    parser.add_argument('--config', type=str, default='config/gompertz/gompertz_pfilter.yaml', help='config file')
    parser.add_argument('--model', type=str, default=None, help='model registry key, one of {}'.format(list(MODEL_KEYS)))
    parser.add_argument('--seed', type=int, default=None, help='master seed')
    parser.add_argument('--workers', type=int, default=None, help='worker processes')
    parser.add_argument('--out', type=str, default=None, help='output directory')
    parser.add_argument('command', type=str, help='one of {}'.format(list(COMMANDS)))
    parser.add_argument('opts', help='KEY VALUE overrides, see config/gompertz/*.yaml for all options', default=None,
                        nargs=argparse.REMAINDER)
    args = parser.parse_args(argv)
    assert args.config is not None
    cfg = load_config(args.config, args.opts)
    for key, value in (('model', args.model), ('seed', args.seed), ('workers', args.workers),
                       ('save_path', args.out)):
        if value is not None:
            cfg[key] = value
    return args.command, cfg


def load_config(path, opts=None):
    cfg = config.CfgNode(dict(DEFAULTS))
    from_file = config.load_cfg_from_cfg_file(path)
    unknown = sorted(set(from_file) - set(DEFAULTS))
    if unknown:
        raise ConfigError('unknown config keys {} in {}'.format(unknown, path))
    cfg.update(from_file)
    if opts:
        cfg = config.merge_cfg_from_list(cfg, opts)
    return cfg


def check(command, cfg):
    def need(ok, message):
        if not ok:
            raise ConfigError(message)

    need(command in COMMANDS, 'unknown command {}, expected one of {}'.format(command, list(COMMANDS)))
    need(cfg.model in MODEL_KEYS, 'unknown model {}, expected one of {}'.format(cfg.model, list(MODEL_KEYS)))
    need(command not in STOCHASTIC or cfg.seed is not None, 'command {} needs a seed'.format(command))
    need(cfg.seed is None or 0 <= int(cfg.seed) < 2 ** 64, 'seed must be a 64-bit nonnegative integer')
    need(int(cfg.workers) >= 1, 'workers must be >= 1')
    need(cfg.resample in ('multinomial', 'systematic'), 'resample must be multinomial or systematic')
    need(cfg.max_fail is None or float(cfg.max_fail) >= 0, 'max_fail must be >= 0')
    need(cfg.shared is None and cfg.specific is None or cfg.model == 'gompertz',
         'shared/specific classification is only configurable for the gompertz panel')
    if command == 'simulate':
        need(int(cfg.nsim) >= 1, 'nsim must be >= 1')
    if command == 'pfilter':
        need(cfg.pf_J >= 1 and cfg.pf_reps >= 1, 'pfilter needs pf_J >= 1 and pf_reps >= 1')
    if command in ('mif2', 'block-refine', 'profile'):
        need(cfg.mif_M >= 1 and cfg.mif_J >= 1, 'search needs mif_M >= 1 and mif_J >= 1')
        need(cfg.cooling_type in ('geometric', 'hyperbolic'), 'cooling_type must be geometric or hyperbolic')
        need(0 < cfg.cooling_fraction <= 1, 'cooling_fraction must lie in (0, 1]')
        need(cfg.nseq >= 1, 'nseq must be >= 1')
        need(cfg.eval_reps >= 0 and cfg.eval_J >= 1, 'evaluation needs eval_reps >= 0 and eval_J >= 1')
        need(set(cfg.lower) == set(cfg.upper), 'lower and upper must name the same parameters')
    if command == 'block-refine':
        need(cfg.block_reps >= 1, 'block-refine needs block_reps >= 1')
    if command == 'profile':
        need(cfg.focal is not None, 'profile needs a focal parameter')
        need(len(cfg.grid) > 0, 'profile needs a nonempty grid')
        need(cfg.nprof >= 1, 'nprof must be >= 1')
        need(cfg.eval_reps >= 2, 'profile evaluation needs eval_reps >= 2')
        need(set(cfg.profile_lower) == set(cfg.profile_upper),
             'profile_lower and profile_upper must name the same parameters')
    if command in ('profile', 'mcap'):
        need(0 < cfg.level < 1, 'level must lie in (0, 1)')
        need(0 < cfg.span <= 1, 'span must lie in (0, 1]')
        need(cfg.ngrid >= 2, 'ngrid must be >= 2')
    if command == 'mcap':
        need(cfg.profile_csv is not None, 'mcap needs profile_csv')
        need(cfg.focal is not None, 'mcap needs a focal parameter')


def make_panel(cfg):
    if cfg.data_dir:
        if not os.path.isdir(cfg.data_dir):
            raise ConfigError('data_dir {} does not exist'.format(cfg.data_dir))
        return load_panel(cfg.data_dir)
    kwargs = {}
    if cfg.shared is not None:
        kwargs['shared'] = tuple(cfg.shared)
    if cfg.specific is not None:
        kwargs['specific'] = tuple(cfg.specific)
    try:
        return build_model(cfg.model, U=cfg.U, N=cfg.N, params=dict(cfg.params), rng=cfg.data_seed, **kwargs)
    except (ValueError, KeyError) as e:
        raise ConfigError('cannot build the {} panel: {}'.format(cfg.model, e))


def _rw_sd(sd, ivp):
    return RwSdSpec(sd=sd, ivp=ivp)


def check_names(command, cfg, panel):
    layout = panel.params.layout
    bases = set(layout.base_names)
    try:
        _rw_sd(cfg.rw_sd, cfg.rw_sd_ivp).validate(layout)
        if cfg.block_rw_sd is not None:
            _rw_sd(cfg.block_rw_sd, cfg.rw_sd_ivp).validate(layout)
    except (UnknownParameterError, ValueError) as e:
        raise ConfigError(str(e))
    for key in ('rw_sd_ivp', 'lower', 'profile_lower'):
        unknown = sorted(set(cfg[key]) - bases)
        if unknown:
            raise ConfigError('{} names unknown parameters {}'.format(key, unknown))
    unknown = sorted(set(cfg.estimated) - set(layout.flat_names) - bases)
    if unknown:
        raise ConfigError('estimated names unknown parameters {}'.format(unknown))
    if command == 'profile' and cfg.focal not in layout.flat_names:
        raise ConfigError('focal parameter {} is not in the panel layout {}'.format(cfg.focal, layout.flat_names))


def expand_names(names, layout):
    """Flat names; a unit-specific base name stands for all its units, no names for every parameter."""
    if not names:
        return list(layout.flat_names)
    out = []
    for n in names:
        if n in layout.specific_names:
            out.extend(format_param_name(n, u) for u in layout.unit_names)
        else:
            out.append(n)
    return out


def make_settings(cfg):
    return MifSettings(M=cfg.mif_M, J=cfg.mif_J, rw_sd=_rw_sd(cfg.rw_sd, cfg.rw_sd_ivp),
                       cooling=CoolingSchedule(cfg.cooling_type, cfg.cooling_fraction),
                       marginalize=cfg.marginalize, max_fail=_max_fail(cfg))


def _max_fail(cfg):
    return float('inf') if cfg.max_fail is None else float(cfg.max_fail)


def read_starts(path, layout):
    table = Table.from_csv(path)
    missing = [c for c in layout.flat_names if c not in table.columns]
    if missing:
        raise ConfigError('{} lacks parameter columns {}'.format(path, missing))
    return DesignMatrix(layout.flat_names, table.array(layout.flat_names).tolist())


def search_design(cfg, panel, rng):
    """Starting points: a CSV, a uniform box, or nseq copies of the panel's values."""
    layout = panel.params.layout
    if cfg.start_csv:
        return read_starts(cfg.start_csv, layout)
    if not cfg.lower:
        flat = panel.params.flatten()
        return DesignMatrix(list(flat), [list(flat.values())] * cfg.nseq)
    lower, upper = dict(cfg.lower), dict(cfg.upper)
    for b in layout.shared_names:
        if b not in lower:
            lower[b] = upper[b] = panel.params.shared[b]
    missing = [b for b in layout.specific_names if b not in lower]
    if missing:
        raise ConfigError('unit-specific parameters {} need lower and upper bounds'.format(missing))
    return runif_panel_design(lower, upper, layout.specific_names, layout.unit_names, cfg.nseq, rng)


def flat_bounds(panel, lower, upper, focal):
    """Expand base-name bounds over units; unbounded entries stay at the panel's value."""
    lo, hi = {}, {}
    for name, value in panel.params.flatten().items():
        if name == focal:
            continue
        base, _ = parse_param_name(name)
        lo[name], hi[name] = (lower[base], upper[base]) if base in lower else (value, value)
    return lo, hi


def evaluate(panel, J, reps, rng, map_fn=map):
    if reps < 1:
        return float('nan'), float('nan')
    totals = replicate_pfilter(panel, J, reps, rng, map_fn=map_fn, on_failure='neginf').totals
    if reps == 1:
        return totals[0], float('nan')
    return logmeanexp(totals, se=True)


def _search_task(args):
    panel, start, settings, stream, log_dir, eval_J, eval_reps = args
    writer = SummaryWriter(log_dir) if log_dir else None
    try:
        r = mif2_panel(panel, start=start, settings=settings, rng=stream.spawn('mif'), writer=writer)
    except MifFailure as e:
        return None, float('nan'), float('nan'), e
    finally:
        if writer is not None:
            writer.close()
    ll, se = evaluate(r.panel, eval_J, eval_reps, stream.spawn('eval'))
    return r, ll, se, None


def cmd_simulate(cfg, panel, root, map_fn, out):
    sims = simulate(panel, nsim=cfg.nsim, rng=root, keep_states=True)
    for k, sim in enumerate(sims):
        path = os.path.join(out, 'sim_{}'.format(k))
        save_panel(sim, path)
        save_plot_data(sim, os.path.join(path, 'plot_data.csv'))
    logger.info('Simulated {} data sets of {} units.'.format(len(sims), panel.U))
    return {'nfail': 0}


def cmd_pfilter(cfg, panel, root, map_fn, out):
    reps = replicate_pfilter(panel, cfg.pf_J, cfg.pf_reps, root.spawn('pfilter'), map_fn=map_fn,
                             on_failure='neginf', resample=cfg.resample, keep=True)
    reps.to_table().to_csv(os.path.join(out, 'pfilter_replicates.csv'))
    times = {u.name: u.times for u in panel.units}
    rows = []
    for i, res in enumerate(reps.results):
        table = res.to_rows(times)
        rows.extend((i,) + r for r in table.rows)
    Table(('replicate',) + table.columns, rows).to_csv(os.path.join(out, 'pfilter_cond.csv'))

    units = []
    for k, u in enumerate(reps.unit_names):
        ll, se = logmeanexp(reps.matrix[k], se=True)
        units.append((u, ll, se))
    Table(('unit', 'loglik', 'se'), units).to_csv(os.path.join(out, 'pfilter_units.csv'))

    summary = [('panel_total',) + tuple(reps.lambda1()), ('unit_product',) + tuple(reps.lambda2())]
    try:
        summary.append(('kalman', kalman_loglik(panel)[1], 0.0))
    except CapabilityError:
        pass
    Table(('estimator', 'loglik', 'se'), summary).to_csv(os.path.join(out, 'pfilter_summary.csv'))
    for name, ll, se in summary:
        logger.info('Pfilter {}: loglik {:.4f} (se {:.4f})'.format(name, ll, se))
    if reps.nfail > _max_fail(cfg):
        raise FilteringFailure(message='{} filtering failures exceed max_fail={}'.format(reps.nfail, cfg.max_fail))
    return {'nfail': reps.nfail}


def cmd_mif2(cfg, panel, root, map_fn, out):
    settings = make_settings(cfg)
    layout = panel.params.layout
    design = search_design(cfg, panel, root.spawn('design'))
    design.check_layout(layout)
    design.to_csv(os.path.join(out, 'design.csv'))
    tasks = []
    for i in range(len(design)):
        log_dir = os.path.join(out, 'tb', 'search_{}'.format(i)) if cfg.tensorboard else None
        tasks.append((panel, design.param_set(i, layout), settings, root.spawn('search', i), log_dir,
                      cfg.eval_J, cfg.eval_reps))
    outcomes = list(map_fn(_search_task, tasks))

    rows, failures, nfail = [], [], 0
    for i, (r, ll, se, err) in enumerate(outcomes):
        if err is not None:
            logger.error('Search {} stopped: {}'.format(i, err))
            failures.append(err)
            nfail += err.nfail
            continue
        r.traces.to_csv(os.path.join(out, 'traces_{}.csv'.format(i)))
        nfail += r.nfail
        rows.append([i] + list(r.estimate.flatten().values()) + [r.loglik, r.nfail, ll, se])
        logger.info('Search {}: mif loglik {:.4f}, evaluated {:.4f} (se {:.4f})'.format(i, r.loglik, ll, se))
    columns = ['search'] + layout.flat_names + ['loglik_mif', 'nfail', 'loglik', 'loglik_se']
    Table(columns, rows).to_csv(os.path.join(out, 'estimates.csv'))
    if failures:
        raise failures[0]
    return {'nfail': nfail, 'searches': len(rows)}


def cmd_block_refine(cfg, panel, root, map_fn, out):
    settings = make_settings(cfg)
    layout = panel.params.layout
    if cfg.start_csv:
        starts = read_starts(cfg.start_csv, layout)
    else:
        flat = panel.params.flatten()
        starts = DesignMatrix(list(flat), [list(flat.values())])
    block_rw_sd = _rw_sd(cfg.block_rw_sd, cfg.rw_sd_ivp) if cfg.block_rw_sd is not None else None
    rows, units = [], []
    for i in range(len(starts)):
        r = MifResult.from_estimate(panel, starts.param_set(i, layout), settings)
        refined = block_refine(r, reps=cfg.block_reps, rng=root.spawn('refine', i), rw_sd=block_rw_sd,
                               map_fn=map_fn)
        ll, se = evaluate(refined.panel, cfg.eval_J, cfg.eval_reps, root.spawn('eval', i), map_fn=map_fn)
        rows.append([i] + list(refined.estimate.flatten().values()) + [ll, se])
        units.extend((i, u, best, unit_ll) for u, (best, unit_ll) in refined.refined.items())
        logger.info('Refined start {}: loglik {:.4f} (se {:.4f})'.format(i, ll, se))
    Table(['start'] + layout.flat_names + ['loglik', 'loglik_se'], rows).to_csv(
        os.path.join(out, 'block_estimates.csv'))
    Table(('start', 'unit', 'best_rep', 'loglik_mif'), units).to_csv(os.path.join(out, 'block_units.csv'))
    return {'nfail': 0}


def _write_mcap(table, cfg, out):
    try:
        m = mcap(table.loglik(), table.parameter(), level=cfg.level, span=cfg.span, ngrid=cfg.ngrid)
    except SmoothingError as e:
        logger.warning('MCAP skipped: {}'.format(e))
        return None
    m.summary().to_csv(os.path.join(out, 'mcap.csv'))
    m.curve().to_csv(os.path.join(out, 'mcap_curve.csv'))
    logger.info('MCAP: mle {:.6g}, {:.0%} interval ({:.6g}, {:.6g}), se_stat {:.4g}, se_mc {:.4g}'.format(
        m.mle, m.level, m.ci[0], m.ci[1], m.se_stat, m.se_mc))
    return m


def cmd_profile(cfg, panel, root, map_fn, out):
    settings = make_settings(cfg)
    lower, upper = flat_bounds(panel, cfg.profile_lower, cfg.profile_upper, cfg.focal)
    design = profile_design(cfg.focal, cfg.grid, lower, upper, cfg.nprof, root.spawn('design'))
    design.to_csv(os.path.join(out, 'profile_design.csv'))
    block_rw_sd = _rw_sd(cfg.block_rw_sd, cfg.rw_sd_ivp) if cfg.block_rw_sd is not None else None
    table = run_profile(panel, cfg.focal, design, settings=settings, reps=cfg.eval_reps, J_eval=cfg.eval_J,
                        block_reps=cfg.block_reps, block_rw_sd=block_rw_sd, rng=root, map_fn=map_fn)
    table.to_csv(os.path.join(out, 'profile.csv'))
    if cfg.kalman_profile:
        estimated = expand_names(cfg.estimated, panel.params.layout)
        kalman_profile(panel, cfg.focal, cfg.grid, estimated).to_csv(os.path.join(out, 'kalman_profile.csv'))
    _write_mcap(table, cfg, out)
    return {'nfail': 0, 'dropped': table.dropped}


def cmd_mcap(cfg, panel, root, map_fn, out):
    table = ProfileTable.from_csv(cfg.profile_csv, focal=cfg.focal)
    if cfg.focal not in table.columns:
        raise ConfigError('{} has no column {}'.format(cfg.profile_csv, cfg.focal))
    _write_mcap(table, cfg, out)
    return {'nfail': 0}


def cmd_kalman(cfg, panel, root, map_fn, out):
    per_unit, total = kalman_loglik(panel)
    rows = [(u, ll) for u, ll in per_unit.items()] + [('total', total)]
    Table(('unit', 'loglik'), rows).to_csv(os.path.join(out, 'kalman.csv'))
    logger.info('Exact log-likelihood {:.4f}'.format(total))
    if cfg.kalman_mle:
        estimated = expand_names(cfg.estimated, panel.params.layout)
        best, ll = maximize_kalman_loglik(panel, estimated)
        flat = best.flatten()
        Table(list(flat) + ['loglik'], [list(flat.values()) + [ll]]).to_csv(os.path.join(out, 'kalman_mle.csv'))
    return {'nfail': 0}


RUNNERS = {
    'simulate': cmd_simulate,
    'pfilter': cmd_pfilter,
    'mif2': cmd_mif2,
    'block-refine': cmd_block_refine,
    'profile': cmd_profile,
    'mcap': cmd_mcap,
    'kalman': cmd_kalman,
}


def versions():
    return {'python': platform.python_version(), 'torch': str(torch.__version__), 'numpy': np.__version__,
            'scipy': scipy.__version__, 'pyyaml': yaml.__version__}


def write_manifest(out, command, cfg, status, elapsed, info):
    manifest = {'command': command, 'status': status, 'wall_clock': round(elapsed, 3), 'versions': versions(),
                'config': cfg.to_dict() if cfg is not None else None}
    manifest.update(info)
    with open(os.path.join(out, 'manifest.yaml'), 'w') as f:
        yaml.safe_dump(manifest, f, default_flow_style=False, sort_keys=False)


def write_error(out, command, code, err):
    record = {'command': command, 'exit_code': code, 'error': type(err).__name__, 'message': str(err)}
    for attr in ('nfail', 'max_fail', 'unit', 'time_index'):
        if hasattr(err, attr):
            value = getattr(err, attr)
            record[attr] = value if value is None or isinstance(value, (int, str)) else float(value)
    with open(os.path.join(out, 'error.json'), 'w') as f:
        json.dump(record, f, indent=2)


def run(command, cfg):
    """Validate, build the panel, run one command; returns the exit status."""
    start = time.time()
    out = cfg.save_path
    check_makedirs(out)
    try:
        check(command, cfg)
        panel = make_panel(cfg)
        check_names(command, cfg, panel)
    except ConfigError as e:
        logger.error('Invalid config: {}'.format(e))
        write_error(out, command, EXIT_CONFIG, e)
        return EXIT_CONFIG
    logger.info(cfg)
    logger.info('=> {} on {}'.format(command, panel))
    root = Stream(cfg.seed) if cfg.seed is not None else None
    map_fn = get_map(int(cfg.workers))
    try:
        info = RUNNERS[command](cfg, panel, root, map_fn, out)
    except (MifFailure, FilteringFailure) as e:
        logger.error('Failure threshold exceeded: {}'.format(e))
        write_error(out, command, EXIT_FAILURES, e)
        write_manifest(out, command, cfg, 'failed', time.time() - start, {'nfail': getattr(e, 'nfail', None)})
        return EXIT_FAILURES
    except ConfigError as e:
        logger.error('Invalid config: {}'.format(e))
        write_error(out, command, EXIT_CONFIG, e)
        return EXIT_CONFIG
    except Exception as e:
        logger.exception('{} failed'.format(command))
        write_error(out, command, EXIT_ERROR, e)
        write_manifest(out, command, cfg, 'error', time.time() - start, {})
        return EXIT_ERROR
    write_manifest(out, command, cfg, 'ok', time.time() - start, info)
    logger.info('<<<<<<<<<<<<<<<<< End {} in {:.1f}s <<<<<<<<<<<<<<<<<'.format(command, time.time() - start))
    return EXIT_OK


def main(argv=None):
    try:
        command, cfg = get_parser(argv)
    except ConfigError as e:
        logger.error('Invalid config: {}'.format(e))
        return EXIT_CONFIG
    return run(command, cfg)


if __name__ == '__main__':
    sys.exit(main())
