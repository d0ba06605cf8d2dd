"""
Command line driver of sbridge experiments.

Every subcommand resolves its configuration (defaults, ``--config`` file, flags), validates it
before doing any work and echoes it, together with the code version, as ``config.json`` into the
output directory.

Exit codes: 0 on success, 2 for invalid configuration or input files, 3 for numeric divergence
and 4 for I/O errors.
"""
import os
import csv
import json
import logging
import argparse
import sys
from typing import Optional

import numpy as np

from . import __version__
from .config import CONFIG_FILE, ExperimentConfig, echo_config, resolve_config
from .csbi import Policy, TrainingLog, impute, init_pair, train
from .data import (Dataset, FeatureStats, TargetStrategy, TimeSeriesWindow, destandardize, feature_stats,
                   generate, load_dataset, make_masks, save_dataset, split_dataset, standardize, time_grid,
                   windows_to_csv)
from .errors import DatasetFormatError, DivergenceError, DomainError, SbridgeError, ValidationError
from .metrics import evaluate
from .neural import zeros_like
from .sde import SdeSpec
from .sinkhorn import (coupling_from_potentials, diagnose_trace, random_instance, run_aipf, run_exact_ipf,
                       schrodinger_residuals, sublinear_bound_constant, trace_to_csv)
from .storage import SampleStore, ensure_directory, load_checkpoint, save_checkpoint
from .utils import ParallelMap, stream

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

INSTANCE_STREAM = 20
AIPF_STREAM = 21
REMASK_STREAM = 30
WINDOW_SEED_STREAM = 31

N_PREVIEW_WINDOWS = 4

DATASET_FILE = 'dataset.jsonl'
PREVIEW_FILE = 'preview.csv'
SUMMARY_FILE = 'summary.json'
TRAIN_LOG_FILE = 'train_log.jsonl'
STATS_FILE = 'stats.json'
SAMPLES_FILE = 'samples.zarr'
QUANTILES_FILE = 'quantiles.csv'
METRICS_FILE = 'metrics.json'


def _prepare(args, overrides: dict) -> ExperimentConfig:
    """Resolve and validate the configuration, then create the output directory and echo the config"""
    config = resolve_config(args.config, overrides)
    ensure_directory(args.output)
    echo_config(config, os.path.join(args.output, CONFIG_FILE), __version__, args.cmd)
    return config


def _common_overrides(args) -> dict:
    return {'seed': args.seed, 'threads': args.threads}


# -- gen-data --

def cmd_gen_data(args) -> int:
    overrides = _common_overrides(args)
    overrides.update({'data.n_samples': args.samples, 'data.K': args.K, 'data.L': args.L,
                      'data.noise_sigma': args.noise_sigma, 'data.drop_ratio': args.drop_ratio,
                      'data.strategy': args.strategy})
    config = _prepare(args, overrides)
    dataset = generate(config.data, config.seed)
    save_dataset(dataset, os.path.join(args.output, DATASET_FILE))
    windows_to_csv(dataset.windows[:N_PREVIEW_WINDOWS], os.path.join(args.output, PREVIEW_FILE))
    return EXIT_OK


# -- sinkhorn --

def _aipf_unit(mu, nu, cost, eps: float, n_iters: int, seed: int, replicate: int, pi_star, slack: float,
               bound: float, tail_fraction: float):
    trace = run_aipf(mu, nu, cost, eps, n_iters, rng=stream(seed, AIPF_STREAM, replicate), pi_star=pi_star)
    return trace, diagnose_trace(trace, eps, slack=slack, bound=bound, tail_fraction=tail_fraction)


def _trace_name(eps: float, replicate: int) -> str:
    return "trace_eps%g_seed%d.csv" % (eps, replicate)


def run_sinkhorn_study(config: ExperimentConfig, output: Optional[str] = None) -> dict:
    """
    Run the approximate IPF sweep of ``config.sinkhorn`` on one seeded instance: an exact oracle run
    gives the reference coupling, then every eps is run on ``n_seeds`` independent tilt streams.

    :returns: summary ``{'instance': ..., 'eps': {eps: {A, B, violations, bound_check, ...}}}``
    """
    settings = config.sinkhorn
    mu, nu, cost = random_instance(settings.n, settings.m, settings.d, settings.sde, settings.reg,
                                   stream(config.seed, INSTANCE_STREAM))
    oracle = run_exact_ipf(mu, nu, cost, settings.oracle_iters)
    pi_star = coupling_from_potentials(oracle, cost, mu, nu)
    bound = sublinear_bound_constant(pi_star, cost, mu, nu)
    logger.info("oracle residuals %.3e / %.3e, bound constant %.6g"
                % (schrodinger_residuals(oracle, cost, mu, nu) + (bound,)))

    units = [(eps, r) for eps in settings.eps_list for r in range(settings.n_seeds)]
    runner = ParallelMap(number_of_jobs=config.threads, max_threads_per_process=1 if config.threads > 1 else None,
                         description="aipf")
    results = runner.map(_aipf_unit, [(mu, nu, cost, eps, settings.n_iters, config.seed, r, pi_star, settings.slack,
                                       bound, settings.tail_fraction) for eps, r in units])
    per_eps = {}
    for (eps, r), (trace, diagnostics) in zip(units, results):
        if output is not None:
            trace_to_csv(trace, os.path.join(output, _trace_name(eps, r)))
        per_eps.setdefault(eps, []).append((trace, diagnostics))

    summary = {'instance': {'n': settings.n, 'm': settings.m, 'd': settings.d, 'reg': settings.reg,
                            'bound_constant': bound},
               'eps': {}}
    for eps, runs in per_eps.items():
        diagnostics = [d for _, d in runs]
        summary['eps'][repr(eps)] = {
            'A': float(np.mean([d.fit_a for d in diagnostics])),
            'B': float(np.mean([d.fit_b for d in diagnostics])),
            'violations': int(sum(d.violations for d in diagnostics)),
            'bound_check': all(d.bound_ok for d in diagnostics),
            'final_kl_mu': float(np.mean([t.kl_mu[-1] for t, _ in runs])),
            'max_scaled_kl_mu': float(max(np.max(t.k * t.kl_mu) for t, _ in runs)),
            'seeds': [dict(d.to_dict(), trace=_trace_name(eps, r)) for r, d in enumerate(diagnostics)],
        }
    return summary


def cmd_sinkhorn(args) -> int:
    overrides = _common_overrides(args)
    overrides.update({'sinkhorn.eps_list': args.eps, 'sinkhorn.n_iters': args.iters,
                      'sinkhorn.n_seeds': args.seeds, 'sinkhorn.n': args.n, 'sinkhorn.m': args.m,
                      'sinkhorn.reg': args.reg})
    config = _prepare(args, overrides)
    summary = run_sinkhorn_study(config, args.output)
    path = os.path.join(args.output, SUMMARY_FILE)
    with open(path, 'w') as f:
        f.write(json.dumps(summary, indent=2))
    logger.info("wrote %s" % path)
    return EXIT_OK


# -- train --

def _split(config: ExperimentConfig, dataset: Dataset):
    """Leading training windows, trailing validation windows and the training feature statistics"""
    train_set, val_set = split_dataset(dataset, config.n_train)
    return train_set, val_set, feature_stats(train_set)


def cmd_train(args) -> int:
    overrides = _common_overrides(args)
    overrides.update({'n_train': args.n_train, 'train.stages': args.stages,
                      'train.warmup_iters': args.warmup_iters, 'train.iters_per_stage': args.iters_per_stage,
                      'train.freeze_forward': args.freeze_forward or None})
    config = _prepare(args, overrides)
    dataset = load_dataset(args.data)
    train_set, _, stats = _split(config, dataset)
    with open(os.path.join(args.output, STATS_FILE), 'w') as f:
        f.write(json.dumps(stats.to_dict(), indent=2))
    log = TrainingLog(os.path.join(args.output, TRAIN_LOG_FILE))
    pair, log = train(config.train, standardize(train_set, stats), log)
    extra = {'stats': stats.to_dict(), 'sde': config.train.sde.to_dict()}
    step = pair.backward_state.step if pair.backward_state is not None else 0
    save_checkpoint(pair.backward, os.path.join(args.output, 'backward'), step=step, seed=config.seed, extra=extra)
    if pair.forward is not None:
        step = pair.forward_state.step if pair.forward_state is not None else 0
        save_checkpoint(pair.forward, os.path.join(args.output, 'forward'), step=step, seed=config.seed,
                        extra=extra)
    return EXIT_OK


# -- impute --

def _impute_window(policy: Policy, x_cond: np.ndarray, m_cond: np.ndarray, n_samples: int, spec: SdeSpec,
                   seed: int, n_corrector_steps: int, snr: float) -> np.ndarray:
    return impute(policy, x_cond, m_cond, n_samples, spec, seed, n_corrector_steps=n_corrector_steps, snr=snr)


def _select_windows(config: ExperimentConfig, dataset: Dataset):
    train_set, val_set, stats = _split(config, dataset)
    chosen = {'train': train_set, 'val': val_set, 'all': dataset}[config.impute.split]
    windows = chosen.windows
    if config.impute.max_windows is not None:
        windows = windows[:config.impute.max_windows]
    if config.impute.strategy is not None:
        strategy = TargetStrategy.parse(config.impute.strategy)
        windows = [TimeSeriesWindow(w.values, make_masks(w.masks.m_obs, strategy, stream(config.seed, REMASK_STREAM, i)))
                   for i, w in enumerate(windows)]
    if not windows:
        raise ValidationError("the %s split holds no windows" % config.impute.split)
    return windows, stats


def _load_policy(args, config: ExperimentConfig, K: int, L: int, stats: FeatureStats):
    """The backward policy with its diffusion and data statistics, or the all-zero policy"""
    if args.zero_policy:
        backward = init_pair(config.train, K, L).backward
        return backward.with_params(zeros_like(backward.params)), config.train.sde, stats
    policy, sidecar = load_checkpoint(os.path.join(args.checkpoint, 'backward'))
    if (policy.K, policy.L) != (K, L):
        raise ValidationError("checkpoint was trained on %d x %d windows, dataset holds %d x %d"
                              % (policy.K, policy.L, K, L))
    extra = sidecar.get('extra', {})
    spec = SdeSpec.from_dict(extra['sde']) if 'sde' in extra else config.train.sde
    if 'stats' in extra:
        stats = FeatureStats.from_dict(extra['stats'])
    return policy, spec, stats


def _write_quantiles(path: str, samples: np.ndarray, windows):
    """Per-entry median and 10% / 90% quantiles, one row per window entry"""
    median, q10, q90 = np.quantile(samples, [0.5, 0.1, 0.9], axis=1, method='linear')
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['window', 'feature', 'time', 'median', 'q10', 'q90', 'cond', 'target'])
        for i, w in enumerate(windows):
            grid = time_grid(w.values.shape[1])
            for k in range(w.values.shape[0]):
                for t in range(w.values.shape[1]):
                    writer.writerow([i, k + 1, repr(float(grid[t])), repr(float(median[i, k, t])),
                                     repr(float(q10[i, k, t])), repr(float(q90[i, k, t])),
                                     int(w.masks.m_cond[k, t]), int(w.masks.m_target[k, t])])


def cmd_impute(args) -> int:
    if not args.zero_policy and args.checkpoint is None:
        raise ValidationError("impute needs --checkpoint or --zero-policy")
    overrides = _common_overrides(args)
    overrides.update({'n_train': args.n_train, 'impute.n_samples': args.samples, 'impute.split': args.split,
                      'impute.strategy': args.strategy, 'impute.max_windows': args.max_windows,
                      'impute.n_corrector_steps': args.corrector_steps})
    config = _prepare(args, overrides)
    dataset = load_dataset(args.data)
    windows, stats = _select_windows(config, dataset)
    policy, spec, stats = _load_policy(args, config, dataset.K, dataset.L, stats)
    settings = config.impute

    units = []
    for i, w in enumerate(windows):
        x_cond = (w.values - stats.mean[:, None]) / stats.std[:, None] * w.masks.m_cond
        seed = int(stream(config.seed, WINDOW_SEED_STREAM, i).integers(2 ** 31))
        units.append((policy, x_cond, w.masks.m_cond, settings.n_samples, spec, seed, settings.n_corrector_steps,
                      settings.snr))
    runner = ParallelMap(number_of_jobs=config.threads, max_threads_per_process=1 if config.threads > 1 else None,
                         description="impute")
    results = runner.map(_impute_window, units)

    samples = np.stack([np.where(w.masks.m_cond, w.values, stats_samples)
                        for w, stats_samples in zip(windows, (destandardize(r, stats) for r in results))])
    store = SampleStore(os.path.join(args.output, SAMPLES_FILE), mode='w')
    store.create(len(windows), settings.n_samples, dataset.K, dataset.L)
    for i, w in enumerate(windows):
        store.write_window(i, samples[i], w.x_cond, w.masks.m_cond, w.masks.m_target, w.values)
    store.consolidate()
    _write_quantiles(os.path.join(args.output, QUANTILES_FILE), samples, windows)
    logger.info("imputed %d windows with %d samples each" % (len(windows), settings.n_samples))
    return EXIT_OK


# -- eval --

def cmd_eval(args) -> int:
    config = _prepare(args, _common_overrides(args))
    if not SampleStore.can_read(args.store):
        raise ValidationError("%s is not a sample store" % args.store)
    store = SampleStore(args.store)
    report = evaluate(store.read('samples'), store.read('truth'), store.read('m_target'))
    path = os.path.join(args.output, METRICS_FILE)
    with open(path, 'w') as f:
        f.write(report.to_json())
    logger.info("rmse %.6g, mae %.6g, crps %.6g (seed %d)" % (report.rmse, report.mae, report.crps, config.seed))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='sbridge', description=__doc__.strip().splitlines()[0])
    parser.add_argument('--version', action='version', version='%(prog)s ' + __version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-o', '--output', required=True, help="output directory")
    common.add_argument('--config', default=None, help="JSON configuration file; flags override its values")
    common.add_argument('--seed', type=int, default=None, help="experiment seed")
    common.add_argument('--threads', type=int, default=None,
                        help="worker processes for path sampling and seed sweeps; 1 is bitwise reproducible")
    common.add_argument('--log-level', default='WARNING', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])

    sub = parser.add_subparsers(dest='cmd', required=True)

    p = sub.add_parser('gen-data', parents=[common], help="generate the sinusoid dataset")
    p.add_argument('--samples', type=int, default=None, help="number of windows")
    p.add_argument('--K', type=int, default=None, help="number of features")
    p.add_argument('--L', type=int, default=None, help="window length")
    p.add_argument('--noise-sigma', type=float, default=None)
    p.add_argument('--drop-ratio', type=float, default=None, help="fraction of entries marked unobserved")
    p.add_argument('--strategy', default=None, help="target strategy kind:value, e.g. consecutive_block:20")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser('sinkhorn', parents=[common], help="approximate IPF convergence study")
    p.add_argument('--eps', type=float, nargs='*', default=None, help="approximation levels")
    p.add_argument('--iters', type=int, default=None, help="iterations per run")
    p.add_argument('--seeds', type=int, default=None, help="tilt streams per eps")
    p.add_argument('--n', type=int, default=None, help="source support size")
    p.add_argument('--m', type=int, default=None, help="target support size")
    p.add_argument('--reg', type=float, default=None, help="entropic regularizer of the cost")
    p.set_defaults(handler=cmd_sinkhorn)

    p = sub.add_parser('train', parents=[common], help="train a conditional bridge on a dataset")
    p.add_argument('--data', required=True, help="JSON-lines dataset")
    p.add_argument('--n-train', type=int, default=None, help="leading windows used for training")
    p.add_argument('--stages', type=int, default=None, help="alternating stages; 0 trains the score-only baseline")
    p.add_argument('--warmup-iters', type=int, default=None)
    p.add_argument('--iters-per-stage', type=int, default=None)
    p.add_argument('--freeze-forward', action='store_true', help="keep the forward drift at zero")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser('impute', parents=[common], help="draw imputation samples")
    p.add_argument('--data', required=True, help="JSON-lines dataset")
    p.add_argument('--checkpoint', default=None, help="output directory of a train run")
    p.add_argument('--zero-policy', action='store_true', help="sample with the all-zero backward policy")
    p.add_argument('--n-train', type=int, default=None, help="leading windows used for training")
    p.add_argument('--samples', type=int, default=None, help="samples per window")
    p.add_argument('--split', default=None, choices=['train', 'val', 'all'])
    p.add_argument('--strategy', default=None, help="re-mask targets, e.g. forecast:40 for prediction")
    p.add_argument('--max-windows', type=int, default=None)
    p.add_argument('--corrector-steps', type=int, default=None, help="Langevin corrector steps per grid point")
    p.set_defaults(handler=cmd_impute)

    p = sub.add_parser('eval', parents=[common], help="score a sample store")
    p.add_argument('--store', required=True, help="sample store written by impute")
    p.set_defaults(handler=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(name)s %(levelname)s: %(message)s")
    try:
        return args.handler(args)
    except (ValidationError, DatasetFormatError, DomainError) as e:
        logger.error("invalid input: %s" % e)
        return EXIT_INVALID
    except DivergenceError as e:
        logger.error("numeric divergence: %s" % e)
        return EXIT_DIVERGED
    except OSError as e:
        logger.error("I/O error: %s" % e)
        return EXIT_IO
    except SbridgeError as e:
        logger.error(str(e))
        return 1


if __name__ == '__main__':  # pragma: no cover
    sys.exit(main())
