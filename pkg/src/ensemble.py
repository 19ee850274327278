"""
Ensemble Module
Runs independent replicas of an experiment, serially or in worker
processes, and returns their results ordered by replica index
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Any, Callable, List, Optional, Sequence

import numpy as np

from src.config import SIMULATION_DEFAULTS
from src.exceptions import TruncationError
from src.experiment_config import ExperimentConfig
from src.sampling import RngStream, derive_seed
from src.walkers import (
    gamma_mixture_skeleton,
    jump_skeleton,
    make_grid,
    run_cvrrw,
    run_vrrw,
    run_vrrw_embedded,
    vrrw_embedded_skeleton,
)

logger = logging.getLogger(__name__)


@dataclass
class ReplicaResult:
    """Output of one replica; `value` is whatever the task returned"""

    replica: int
    value: Any
    truncated: bool = False
    message: str = ''


def replica_stream(config: ExperimentConfig, replica: int, attempt: int = 0) -> RngStream:
    """Path stream of one replica; a retry attempt uses a derived seed"""
    seed = config.run.seed if attempt == 0 else derive_seed(config.run.seed, attempt)
    return RngStream(seed, replica)


def simulate_replica(config: ExperimentConfig, replica: int, attempt: int = 0,
                     horizon: Optional[float] = None, steps: Optional[int] = None):
    """
    Run the configured engine once.

    Returns:
        Trajectory for continuous-time engines, VrrwRun for 'vrrw'
    """
    run = config.run
    graph = config.build_graph()
    rng = replica_stream(config, replica, attempt)
    horizon = run.horizon if horizon is None else horizon
    steps = run.steps if steps is None else steps

    if run.engine == 'vrrw':
        return run_vrrw(graph, run.start, run.a or [1.0] * graph.n_vertices, steps, rng,
                        grid_points=run.grid_points, keep_path=False)

    grid = make_grid(horizon, run.grid_points, run.grid_kind)
    if run.engine == 'vrrw_embedded':
        return run_vrrw_embedded(graph, run.start, run.a or [1.0] * graph.n_vertices, horizon,
                                 rng, grid, max_events=run.max_events)
    return run_cvrrw(
        graph, run.start, horizon, grid, run.engine, rng,
        max_events=run.max_events,
        keep_events=run.engine != 'hybrid',
        switch_rate=run.switch_rate,
        dt=run.dt,
    )


def sample_skeleton(config: ExperimentConfig, replica: int, steps: int, attempt: int = 0,
                    graph=None) -> np.ndarray:
    """First `steps` jump destinations under the configured engine"""
    run = config.run
    graph = graph or config.build_graph()
    rng = replica_stream(config, replica, attempt)
    a = run.a or [1.0] * graph.n_vertices
    if run.engine == 'vrrw':
        path = run_vrrw(graph, run.start, a, steps, rng, grid_points=2).path
        return path[1:steps + 1]
    if run.engine == 'gamma_mixture':
        return gamma_mixture_skeleton(graph, a, steps, rng, start=run.start)
    if run.engine == 'vrrw_embedded':
        return vrrw_embedded_skeleton(graph, run.start, a, steps, rng)
    return jump_skeleton(graph, run.start, steps, run.engine, rng)


def sample_skeletons(config: ExperimentConfig, steps: int, replicas: Optional[int] = None,
                     attempt: int = 0) -> np.ndarray:
    """(replicas, steps) array of skeleton paths, one stream per replica"""
    replicas = replicas or config.run.replicas
    graph = config.build_graph()
    return np.array([sample_skeleton(config, r, steps, attempt, graph) for r in range(replicas)], dtype=int)


def _guarded(task: Callable, replica: int) -> ReplicaResult:
    try:
        return ReplicaResult(replica, task(replica))
    except TruncationError as e:
        return ReplicaResult(replica, e.trajectory, truncated=True, message=str(e))


class EnsembleRunner:
    """
    Executes `task(replica)` for replicas 0..n-1.
    Tasks must be picklable (module-level functions or partials) when
    threads > 1; results always come back sorted by replica.
    """

    def __init__(self, threads: Optional[int] = None):
        self.threads = max(1, threads or SIMULATION_DEFAULTS['threads'])

    def map(self, task: Callable[[int], Any], replicas: Sequence[int]) -> List[ReplicaResult]:
        start = time.perf_counter()
        replicas = list(replicas)
        if self.threads == 1 or len(replicas) == 1:
            results = [_guarded(task, r) for r in replicas]
        else:
            with ProcessPoolExecutor(max_workers=self.threads) as pool:
                results = list(pool.map(partial(_guarded, task), replicas))
        results.sort(key=lambda r: r.replica)

        truncated = sum(r.truncated for r in results)
        if truncated:
            logger.warning(f"{truncated} of {len(results)} replicas hit the event cap")
        logger.info(
            f"Ran {len(results)} replicas on {self.threads} worker(s) "
            f"in {time.perf_counter() - start:.2f}s"
        )
        return results

    def run(self, config: ExperimentConfig, attempt: int = 0, replicas: Optional[int] = None,
            **overrides) -> List[ReplicaResult]:
        """Simulate the configured engine for every replica"""
        count = replicas or config.run.replicas
        task = partial(_simulate_task, config, attempt, overrides)
        return self.map(task, range(count))


def _simulate_task(config: ExperimentConfig, attempt: int, overrides: dict, replica: int):
    return simulate_replica(config, replica, attempt, **overrides)
