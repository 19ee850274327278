"""
Command-line entry point

    python -m src.cli run --config configs/kd_uniform.yaml --seed 7
    python -m src.cli acceptance --out data/reports --threads 4
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from src import __version__
from src.chain_numerics import Q_METHODS, generator, poisson_residuals, q_matrix
from src.config import CONFIG_DIR, REPORTS_DIR
from src.diagnostics import decompose_trajectory, distance_rate
from src.ensemble import EnsembleRunner, sample_skeletons
from src.exceptions import ConfigError, TruncationError, VrrwError
from src.experiment_config import ENGINES, ExperimentConfig, load_config
from src.functionals import parse_functional
from src.pipeline import (
    EXIT_CLAIM_FAILED,
    EXIT_CONFIG_ERROR,
    EXIT_PASSED,
    EXIT_TRUNCATED,
    ExperimentPipeline,
    load_suite,
    suite_exit_code,
)
from src.report import write_csv
from src.sampling import (
    PURPOSE_ALARMS,
    PURPOSE_PATH,
    RngStream,
    alarm_sequence,
    sample_gamma_weights,
    sample_sojourn,
    vrrw_alarm_sequence,
)
from src.stat_tests import compare_path_laws, exact_vrrw_path_law

logger = logging.getLogger(__name__)

SAMPLE_KINDS = ('exponential', 'uniform', 'alarm', 'poisson_alarm', 'vrrw_alarm', 'sojourn', 'gamma')


def _floats(text: str) -> List[float]:
    return [float(v) for v in text.split(',') if v.strip()]


def _load(args) -> ExperimentConfig:
    return load_config(args.config).with_overrides(
        seed=args.seed, replicas=args.replicas, out=args.out, threads=args.threads,
    )


def _output_dir(args, config: Optional[ExperimentConfig] = None) -> Path:
    if config is not None:
        return Path(config.output_dir)
    return Path(args.out) if args.out else REPORTS_DIR


def _print_json(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


def cmd_run(args) -> int:
    outcome = ExperimentPipeline(threads=args.threads).run_experiment(_load(args))
    return outcome.exit_code


def cmd_acceptance(args) -> int:
    configs = load_suite(
        Path(args.configs) if args.configs else CONFIG_DIR,
        seed=args.seed, replicas=args.replicas, out=args.out, threads=args.threads,
    )
    if args.only:
        configs = [c for c in configs if c.experiment in set(args.only)]
    outcomes = ExperimentPipeline(threads=args.threads).run_suite(configs, out=args.out or REPORTS_DIR)
    for o in outcomes:
        print(f"{o.experiment:<24} {o.status}")
    return suite_exit_code(outcomes)


def cmd_simulate(args) -> int:
    config = _load(args)
    run = config.run
    if args.engine:
        run = replace(run, engine=args.engine)
    if run.engine in ('vrrw', 'gamma_mixture'):
        raise ConfigError(f"simulate needs a continuous-time engine, got '{run.engine}'")
    if args.horizon is not None:
        run = replace(run, horizon=args.horizon)
    if run.horizon is None:
        raise ConfigError("simulate needs run.horizon or --horizon")
    config = replace(config, run=run)

    out = _output_dir(args, config)
    results = EnsembleRunner(run.threads).run(config)
    for r in results:
        traj = r.value
        traj.to_csv(out / f"trajectory_{r.replica}.csv")
        if len(traj.event_times):
            traj.events_to_csv(out / f"events_{r.replica}.csv")
        print(f"replica {r.replica}: {traj.n_events} events, "
              f"log||pi - y*|| = {traj.log_dist[-1]:.6g}"
              + (" (truncated)" if r.truncated else ""))
    return EXIT_TRUNCATED if any(r.truncated for r in results) else EXIT_PASSED


def cmd_vrrw(args) -> int:
    config = _load(args)
    run = replace(config.run, engine='vrrw')
    if args.steps is not None:
        run = replace(run, steps=args.steps)
    if run.steps is None:
        raise ConfigError("vrrw needs run.steps or --steps")
    config = replace(config, run=run)

    out = _output_dir(args, config)
    for r in EnsembleRunner(run.threads).run(config):
        path = write_csv(r.value.to_frame(), out / f"vrrw_{r.replica}.csv")
        print(f"replica {r.replica}: Z(n) = {np.round(r.value.final.Z, 3).tolist()} -> {path}")
    return EXIT_PASSED


def cmd_qmatrix(args) -> int:
    graph = _load(args).build_graph()
    T = np.array(_floats(args.T)) if args.T else np.zeros(graph.n_vertices)
    if len(T) != graph.n_vertices:
        raise ConfigError(f"--T needs {graph.n_vertices} entries, got {len(T)}")
    cm = generator(graph, T)
    Q = q_matrix(graph, T, args.method, cm)
    payload = {
        'method': args.method,
        'T': T.tolist(),
        'pi': cm.pi.tolist(),
        'log_total_rate': float(cm.logZsum),
        'Q': Q.tolist(),
        'residuals': poisson_residuals(cm.L, Q, cm.pi),
    }
    if args.out:
        path = Path(args.out) / 'qmatrix.json'
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    _print_json(payload)
    return EXIT_PASSED


def cmd_decompose(args) -> int:
    config = _load(args)
    if config.run.engine in ('hybrid', 'vrrw', 'gamma_mixture'):
        raise ConfigError("decompose needs an exact continuous-time engine")
    out = _output_dir(args, config)
    for r in EnsembleRunner(config.run.threads).run(config):
        traj = r.value
        report = decompose_trajectory(traj, traj.graph, parse_functional(args.functional, traj.graph))
        write_csv(report.to_frame(), out / f"decomposition_{r.replica}.csv")
        print(f"replica {r.replica}: M_f(t) = {report.residual[-1]:.6g}, "
              f"int g_f = {report.qv[-1]:.6g}, identity gap = {np.abs(report.identity_gap()).max():.2e}")
    return EXIT_PASSED


def cmd_rates(args) -> int:
    config = _load(args)
    t_range = tuple(args.t_range) if args.t_range else config.estimators.get('t_range')
    rows = []
    for r in EnsembleRunner(config.run.threads).run(config):
        fit = distance_rate(r.value, t_range=tuple(t_range) if t_range else None)
        rows.append({'replica': r.replica, **vars(fit)})
    table = pd.DataFrame(rows)
    write_csv(table, _output_dir(args, config) / 'rate_fits.csv')
    print(table.to_string(index=False))
    return EXIT_PASSED


def cmd_mixture_test(args) -> int:
    config = _load(args)
    graph = config.build_graph()
    samples = sample_skeletons(replace(config, run=replace(config.run, engine=args.engine)), args.steps)
    if args.against == 'exact':
        a = config.run.a or [1.0] * graph.n_vertices
        law = exact_vrrw_path_law(graph, config.run.start, a, args.steps)
        report = compare_path_laws(samples, exact=law, n_vertices=graph.n_vertices)
    else:
        other = sample_skeletons(replace(config, run=replace(config.run, engine=args.against)), args.steps)
        report = compare_path_laws(samples, other, n_vertices=graph.n_vertices)
    payload = {'engine': args.engine, 'against': args.against, 'steps': args.steps, **report.to_dict()}
    out = _output_dir(args, config)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"mixture_{args.engine}_vs_{args.against}.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    _print_json(payload)
    return EXIT_PASSED if report.passed else EXIT_CLAIM_FAILED


def cmd_graph_validate(args) -> int:
    report = _load(args).build_graph().invariant_report()
    _print_json(report)
    return EXIT_PASSED if report['valid'] else EXIT_CONFIG_ERROR


def cmd_sample(args) -> int:
    seed = args.seed if args.seed is not None else 0
    rng = RngStream(seed, args.stream, args.vertex, PURPOSE_ALARMS if 'alarm' in args.kind else PURPOSE_PATH)
    n = args.count
    if args.kind == 'exponential':
        values = rng.exponentials(n)
    elif args.kind == 'uniform':
        values = np.array([rng.uniform() for _ in range(n)])
    elif args.kind == 'alarm':
        values = alarm_sequence(args.weight, n, rng, 'sequential').alarms
    elif args.kind == 'poisson_alarm':
        values = alarm_sequence(args.weight, n, rng, 'poisson_embed').alarms
    elif args.kind == 'vrrw_alarm':
        values = vrrw_alarm_sequence(args.shape, n, rng).alarms
    elif args.kind == 'sojourn':
        values = np.array([sample_sojourn(args.log_z, rng) for _ in range(n)])
    else:
        shapes = _floats(args.a) if args.a else [args.shape]
        values = np.array([sample_gamma_weights(shapes, rng) for _ in range(n)])

    frame = pd.DataFrame(values.reshape(-1, 1) if values.ndim == 1 else values)
    frame.columns = ['value'] if frame.shape[1] == 1 else [f"W_{i}" for i in range(frame.shape[1])]
    path = write_csv(frame, Path(args.out or REPORTS_DIR) / f"sample_{args.kind}_{seed}_{args.stream}.csv")
    print(f"Saved {len(frame)} {args.kind} draws to {path}")
    return EXIT_PASSED


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=None, help='Master seed (overrides run.seed)')
    common.add_argument('--replicas', type=int, default=None, help='Replica count (overrides run.replicas)')
    common.add_argument('--out', type=str, default=None, help='Output directory')
    common.add_argument('--threads', type=int, default=None, help='Worker processes for replicas')

    with_config = argparse.ArgumentParser(add_help=False, parents=[common])
    with_config.add_argument('--config', required=True, help='Experiment YAML file')

    parser = argparse.ArgumentParser(
        prog='vrrw-lab',
        description='Vertex-reinforced walk simulation and acceptance experiments',
    )
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    parser.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('run', parents=[with_config], help='Run one experiment and write its report')
    p.set_defaults(func=cmd_run)

    p = sub.add_parser('acceptance', parents=[common], help='Run the bundled acceptance suite')
    p.add_argument('--configs', default=None, help=f"Config directory (default: {CONFIG_DIR})")
    p.add_argument('--only', nargs='*', default=None, help='Experiment ids to run')
    p.set_defaults(func=cmd_acceptance)

    p = sub.add_parser('simulate', parents=[with_config], help='Continuous-time trajectories to CSV')
    p.add_argument('--engine', choices=[e for e in ENGINES if e not in ('vrrw', 'gamma_mixture')])
    p.add_argument('--horizon', type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('vrrw', parents=[with_config], help='Discrete walk Z histories to CSV')
    p.add_argument('--steps', type=int, default=None)
    p.set_defaults(func=cmd_vrrw)

    p = sub.add_parser('qmatrix', parents=[with_config], help='Fundamental matrix at fixed local times')
    p.add_argument('--T', default=None, help='Comma-separated local times (default: zeros)')
    p.add_argument('--method', choices=Q_METHODS, default='linear_solve')
    p.set_defaults(func=cmd_qmatrix)

    p = sub.add_parser('decompose', parents=[with_config], help='Pathwise decomposition of a functional')
    p.add_argument('--functional', default='T_1', help="constant, T_i, H, V or contrast:i,j")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser('rates', parents=[with_config], help='Exponential rate fits of ||pi - y*||')
    p.add_argument('--t-range', type=float, nargs=2, default=None, metavar=('LOW', 'HIGH'))
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser('mixture-test', parents=[with_config], help='Chi-square comparison of path laws')
    p.add_argument('--steps', type=int, default=4)
    p.add_argument('--engine', choices=ENGINES, default='gamma_mixture')
    p.add_argument('--against', choices=('exact',) + ENGINES, default='exact')
    p.set_defaults(func=cmd_mixture_test)

    p = sub.add_parser('graph', help='Graph utilities')
    graph_sub = p.add_subparsers(dest='graph_command', required=True)
    g = graph_sub.add_parser('validate', parents=[with_config], help='Print the graph invariant report')
    g.set_defaults(func=cmd_graph_validate)

    p = sub.add_parser('sample', parents=[common], help='Raw sampler draws to CSV')
    p.add_argument('--kind', choices=SAMPLE_KINDS, default='exponential')
    p.add_argument('--count', type=int, default=10000)
    p.add_argument('--stream', type=int, default=0, help='Stream (replica) id')
    p.add_argument('--vertex', type=int, default=None)
    p.add_argument('--weight', type=float, default=1.0)
    p.add_argument('--shape', type=float, default=1.0)
    p.add_argument('--log-z', type=float, default=0.0)
    p.add_argument('--a', default=None, help='Comma-separated Gamma shapes')
    p.set_defaults(func=cmd_sample)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    try:
        return args.func(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG_ERROR
    except TruncationError as e:
        logger.error(f"Event cap reached: {e}")
        return EXIT_TRUNCATED
    except VrrwError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_CLAIM_FAILED


if __name__ == "__main__":
    sys.exit(main())
