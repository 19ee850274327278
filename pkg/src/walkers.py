"""
Walkers Module
Simulation engines for the continuous-time walk (direct, timelines,
Poisson-embedded and hybrid), the discrete vertex-reinforced walk, its
continuous-time embedding and the Gamma-mixture skeleton
"""

import logging
import math
from array import array
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from src.chain_numerics import log_norm, reference_profile, stationary_deviation
from src.config import NUMERIC_TOLERANCES, SCHEMA_VERSION, SIMULATION_DEFAULTS
from src.diffusion import DiffusionIntegrator
from src.exceptions import NumericalError, StructuralError, TruncationError
from src.graph_model import WeightedGraph
from src.sampling import (
    PURPOSE_ALARMS,
    PURPOSE_WEIGHTS,
    AlarmStream,
    RngStream,
    sample_gamma_weights,
    sample_sojourn,
)

logger = logging.getLogger(__name__)

ENGINES = ('direct', 'timelines', 'poisson_embed', 'hybrid')
_ALARM_METHOD = {'timelines': 'sequential', 'poisson_embed': 'poisson_embed', 'vrrw_embedded': 'vrrw'}

# How often (in events) the hybrid engine checks its hand-over rate
_SWITCH_CHECK_EVERY = 64


@dataclass
class LocalTimeState:
    """Position, elapsed time, local times T, neighbor sums N and visit counts Y"""

    current: int
    t: float
    T: List[float]
    N: List[float]
    Y: List[float]

    @classmethod
    def initial(cls, graph: WeightedGraph, start: int) -> 'LocalTimeState':
        if not 0 <= start < graph.n_vertices:
            raise ValueError(f"start vertex {start} outside 0..{graph.n_vertices - 1}")
        n = graph.n_vertices
        return cls(current=start, t=0.0, T=[0.0] * n, N=[0.0] * n, Y=[0.0] * n)

    def advance(self, graph: WeightedGraph, dt: float) -> None:
        """Let dt time units pass at the current vertex"""
        x = self.current
        self.T[x] += dt
        for k in graph.neighbors[x]:
            self.N[k] += dt
        self.t += dt

    def jump(self, destination: int) -> None:
        self.current = destination
        self.Y[destination] += 1

    def check_consistency(self, graph: WeightedGraph) -> None:
        """Raise NumericalError when sum T != t or N drifted from A T"""
        tol = NUMERIC_TOLERANCES['local_time_sum'] * max(self.t, 1.0)
        if abs(math.fsum(self.T) - self.t) > tol:
            raise NumericalError(f"sum of local times {math.fsum(self.T)} != t {self.t}")
        N = np.asarray(self.T) @ graph.adjacency
        drift = np.abs(N - np.asarray(self.N)).max()
        if drift > tol:
            raise NumericalError(f"neighbor sums drifted by {drift:.3e}")
        if min(self.T) < 0:
            raise NumericalError("negative local time")


def propose_jump(state: LocalTimeState, graph: WeightedGraph, rng: RngStream) -> Tuple[float, int]:
    """
    Sojourn and destination from the current state, without moving.

    The sojourn has survival exp(-Z (e^s - 1)) with Z = sum_{j ~ X} W_j e^{N_j};
    the destination is the Gumbel argmax of log W_j + N_j, smallest index on ties.
    """
    candidates = graph.neighbors[state.current]
    if not candidates:
        raise StructuralError(f"vertex {state.current} has no neighbors")
    lw = graph.log_weight_list
    N = state.N
    logits = [lw[j] + N[j] for j in candidates]
    top = max(logits)
    logZ = top + math.log(math.fsum(math.exp(v - top) for v in logits))
    sojourn = sample_sojourn(logZ, rng)

    best = candidates[0]
    best_score = -math.inf
    for j, v in zip(candidates, logits):
        score = v - math.log(rng.exponential())
        if score > best_score:
            best, best_score = j, score
    return sojourn, best


def cvrrw_step(state: LocalTimeState, graph: WeightedGraph, rng: RngStream) -> Tuple[float, int]:
    """One jump of the continuous-time walk; the state is advanced in place"""
    sojourn, destination = propose_jump(state, graph, rng)
    state.advance(graph, sojourn)
    state.jump(destination)
    return sojourn, destination


def make_grid(horizon: float, points: int = 101, kind: str = 'linear') -> np.ndarray:
    """
    Record times in [0, horizon].

    kind='geometric' spaces points logarithmically from horizon / points.
    """
    if horizon <= 0 or points <= 1:
        return np.array([0.0, float(horizon)]) if horizon > 0 else np.array([0.0])
    if kind == 'linear':
        return np.linspace(0.0, horizon, points)
    if kind == 'geometric':
        return np.concatenate([[0.0], np.geomspace(horizon / points, horizon, points - 1)])
    raise ValueError(f"grid kind must be 'linear' or 'geometric', got '{kind}'")


@dataclass
class Trajectory:
    """
    Output of a continuous-time run.

    Grid rows hold local times T, visit counts Y and centered coordinates E
    (T minus its limit profile); pi, pi - y*, log ||pi - y*|| and logZsum are
    derived from E. Position is -1 on rows produced by the diffusion regime.
    """

    graph: WeightedGraph
    start: int
    engine: str
    horizon: float
    grid: np.ndarray
    T: np.ndarray
    Y: np.ndarray
    E: np.ndarray
    position: np.ndarray
    event_times: np.ndarray
    event_from: np.ndarray
    event_to: np.ndarray
    n_events: int
    switch_time: Optional[float] = None
    truncated: bool = False
    pi: np.ndarray = field(init=False)
    pi_dev: np.ndarray = field(init=False)
    logZsum: np.ndarray = field(init=False)
    log_dist: np.ndarray = field(init=False)

    def __post_init__(self):
        self.pi, self.pi_dev, self.logZsum = stationary_deviation(self.graph, self.grid, self.E)
        self.log_dist = log_norm(self.pi_dev)

    @property
    def final_T(self) -> np.ndarray:
        return self.T[-1]

    def row_at(self, t: float) -> int:
        """Index of the grid row at time t (nearest)"""
        return int(np.argmin(np.abs(self.grid - t)))

    def to_frame(self) -> pd.DataFrame:
        """Long table with one row per (grid time, vertex)"""
        G, V = self.T.shape
        return pd.DataFrame({
            'grid_time': np.repeat(self.grid, V),
            'vertex_id': np.tile(np.arange(V), G),
            'T': self.T.ravel(),
            'Y': self.Y.ravel(),
            'pi': self.pi.ravel(),
        })

    def events_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'n': np.arange(1, len(self.event_times) + 1),
            'eta_n': self.event_times,
            'from': self.event_from,
            'to': self.event_to,
        })

    def to_csv(self, path: Path) -> Path:
        return _write_versioned_csv(self.to_frame(), path, 'trajectory')

    def events_to_csv(self, path: Path) -> Path:
        return _write_versioned_csv(self.events_frame(), path, 'events')


def _write_versioned_csv(df: pd.DataFrame, path: Path, kind: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as f:
        f.write(f"# {kind} schema {SCHEMA_VERSION}\n")
        df.to_csv(f, index=False, float_format='%.17g')
    logger.info(f"Saved {len(df)} {kind} rows to {path}")
    return path


class _GridRecorder:
    """Fills grid rows while an exact engine runs"""

    def __init__(self, grid: np.ndarray, n_vertices: int):
        self.grid = grid
        self.k = 0
        self.T = np.zeros((len(grid), n_vertices))
        self.Y = np.zeros((len(grid), n_vertices))
        self.position = np.full(len(grid), -1, dtype=int)

    def fill_before(self, state: LocalTimeState, t_end: float, inclusive: bool = False) -> None:
        """Record every grid time in [state.t, t_end) (or ]-closed) from the linear T path"""
        grid = self.grid
        while self.k < len(grid) and (grid[self.k] < t_end or (inclusive and grid[self.k] <= t_end)):
            row = self.k
            self.T[row] = state.T
            self.T[row, state.current] += max(grid[row] - state.t, 0.0)
            self.Y[row] = state.Y
            self.position[row] = state.current
            self.k += 1


def _validate_run(graph: WeightedGraph, start: int, horizon: float, grid) -> np.ndarray:
    if not 0 <= start < graph.n_vertices:
        raise ValueError(f"start vertex {start} outside 0..{graph.n_vertices - 1}")
    if horizon < 0 or math.isnan(horizon):
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    if grid is None:
        grid = make_grid(horizon) if math.isfinite(horizon) else np.array([0.0])
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0:
        raise ValueError("grid must be a non-empty list of times")
    if np.any(np.diff(grid) < 0) or grid[0] < 0 or grid[-1] > horizon:
        raise ValueError("grid must be sorted and lie within [0, horizon]")
    return grid


class _ExactRun:
    """
    Shared loop of the exact engines.

    `choose` returns (sojourn, destination) for the current state; the loop
    handles censoring at the horizon, grid records, the event log and caps.
    """

    def __init__(
        self,
        graph: WeightedGraph,
        start: int,
        horizon: float,
        grid: np.ndarray,
        engine: str,
        max_events: int,
        keep_events: bool,
        debug: bool,
    ):
        self.graph = graph
        self.start = start
        self.horizon = horizon
        self.engine = engine
        self.max_events = max_events
        self.keep_events = keep_events
        self.debug = debug
        self.state = LocalTimeState.initial(graph, start)
        self.recorder = _GridRecorder(grid, graph.n_vertices)
        self.times = array('d')
        self.sources = array('l')
        self.targets = array('l')
        self.n_events = 0

    def run(self, choose, max_jumps: Optional[int] = None, stop_log_rate: Optional[float] = None) -> bool:
        """
        Iterate until the horizon, `max_jumps` jumps or the hand-over rate.

        Returns:
            True when stopped early by max_jumps or stop_log_rate
        """
        state = self.state
        graph = self.graph
        lw = graph.log_weights
        while True:
            if max_jumps is not None and self.n_events >= max_jumps:
                return True
            if stop_log_rate is not None and self.n_events % _SWITCH_CHECK_EVERY == 0:
                if logsumexp(lw + np.asarray(state.N)) >= stop_log_rate:
                    return True

            sojourn, destination = choose(state)
            t_next = state.t + sojourn
            if t_next > self.horizon:
                self.recorder.fill_before(state, self.horizon, inclusive=True)
                state.advance(graph, self.horizon - state.t)
                return False

            self.recorder.fill_before(state, t_next)
            source = state.current
            state.advance(graph, sojourn)
            state.jump(destination)
            self.n_events += 1
            if self.keep_events:
                self.times.append(state.t)
                self.sources.append(source)
                self.targets.append(destination)

            if self.debug and self.n_events % 1000 == 0:
                state.check_consistency(graph)
            if self.n_events >= self.max_events:
                self.recorder.fill_before(state, state.t, inclusive=True)
                partial = self.trajectory()
                partial.truncated = True
                raise TruncationError(
                    f"event cap {self.max_events} reached at t={state.t:.4f} "
                    f"before horizon {self.horizon}",
                    trajectory=partial,
                )

    def trajectory(self, tail=None, switch_time: Optional[float] = None) -> Trajectory:
        rec = self.recorder
        rows = rec.k
        grid = rec.grid[:rows]
        T, Y, position = rec.T[:rows], rec.Y[:rows], rec.position[:rows]
        profile = reference_profile(self.graph)
        E = profile.center(grid, T)
        if tail is not None:
            grid = np.concatenate([grid, tail.grid])
            E = np.vstack([E, tail.E])
            T = np.vstack([T, profile.uncenter(tail.grid, tail.E)])
            Y = np.vstack([Y, tail.Y])
            position = np.concatenate([position, np.full(len(tail.grid), -1, dtype=int)])
        return Trajectory(
            graph=self.graph,
            start=self.start,
            engine=self.engine,
            horizon=self.horizon,
            grid=grid,
            T=T,
            Y=Y,
            E=E,
            position=position,
            event_times=np.frombuffer(self.times, dtype=float).copy(),
            event_from=np.frombuffer(self.sources, dtype=self.sources.typecode).astype(int),
            event_to=np.frombuffer(self.targets, dtype=self.targets.typecode).astype(int),
            n_events=self.n_events,
            switch_time=switch_time,
        )


def _timelines_chooser(graph: WeightedGraph, start: int, rng: RngStream, method: str, shapes=None):
    """Per-vertex alarm clocks; the earliest-ringing neighbor wins"""
    streams = []
    for v in range(graph.n_vertices):
        streams.append(AlarmStream(
            rng.child(vertex=v, purpose=PURPOSE_ALARMS),
            method,
            weight=graph.weights[v],
            shape=1.0 if shapes is None else float(shapes[v]),
            start=(v == start),
        ))
    pending = [s.next() for s in streams]
    pending[start] = streams[start].next()

    def choose(state: LocalTimeState) -> Tuple[float, int]:
        N = state.N
        best = -1
        best_wait = math.inf
        for j in graph.neighbors[state.current]:
            wait = pending[j] - N[j]
            if wait < best_wait:
                best, best_wait = j, wait
        if best < 0:
            raise StructuralError(f"vertex {state.current} has no neighbors")
        pending[best] = streams[best].next()
        return max(best_wait, 0.0), best

    return choose


def run_cvrrw(
    graph: WeightedGraph,
    start: int,
    horizon: float,
    grid: Optional[Sequence[float]] = None,
    engine: str = 'direct',
    rng: Optional[RngStream] = None,
    *,
    max_events: Optional[int] = None,
    keep_events: bool = True,
    debug: bool = False,
    switch_rate: Optional[float] = None,
    dt: Optional[float] = None,
    stochastic: bool = True,
) -> Trajectory:
    """
    Simulate the continuous-time walk up to `horizon`.

    Args:
        engine: direct (sojourn + categorical jump), timelines (per-vertex
            alarm clocks), poisson_embed (clocks from Poisson processes) or
            hybrid (direct until the total rate reaches `switch_rate`, then
            the diffusion regime)
        max_events: Event cap; TruncationError carries the partial trajectory
        keep_events: Store the event log (counts are always kept)
        debug: Check the local-time invariants every 1000 events

    Returns:
        Trajectory with one row per grid time
    """
    if engine not in ENGINES:
        raise ValueError(f"engine must be one of {ENGINES}, got '{engine}'")
    grid = _validate_run(graph, start, horizon, grid)
    rng = rng or RngStream(0)
    cap = max_events or SIMULATION_DEFAULTS['event_cap']

    run = _ExactRun(graph, start, horizon, grid, engine, cap, keep_events, debug)
    if engine in ('direct', 'hybrid'):
        def choose(state):
            return propose_jump(state, graph, rng)
    else:
        choose = _timelines_chooser(graph, start, rng, _ALARM_METHOD[engine])

    if engine != 'hybrid':
        run.run(choose)
        logger.debug(f"{engine} engine: {run.n_events} events to t={horizon}")
        return run.trajectory()

    integrator = DiffusionIntegrator(graph, rng, dt=dt, stochastic=stochastic)
    rate = switch_rate or SIMULATION_DEFAULTS['switch_rate']
    handed_over = run.run(choose, stop_log_rate=math.log(rate))
    if not handed_over:
        return run.trajectory()

    state = run.state
    run.recorder.fill_before(state, state.t, inclusive=True)
    remaining = grid[run.recorder.k:]
    logger.debug(f"Hybrid engine hands over at t={state.t:.4f} after {run.n_events} events")
    tail = integrator.run(state.t, np.asarray(state.T), np.asarray(state.Y), horizon, remaining)
    return run.trajectory(tail=tail, switch_time=state.t)


def jump_skeleton(
    graph: WeightedGraph,
    start: int,
    steps: int,
    engine: str = 'direct',
    rng: Optional[RngStream] = None,
    shapes: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """First `steps` jump destinations of a continuous-time engine"""
    rng = rng or RngStream(0)
    run = _ExactRun(graph, start, math.inf, np.array([0.0]), engine, steps + 1, True, False)
    if engine in ('direct', 'hybrid'):
        def choose(state):
            return propose_jump(state, graph, rng)
    else:
        method = _ALARM_METHOD[engine]
        choose = _timelines_chooser(graph, start, rng, method, shapes)
    run.run(choose, max_jumps=steps)
    return np.frombuffer(run.targets, dtype=run.targets.typecode).astype(int)


@dataclass
class VrrwState:
    """Discrete walk state: Z_i(n) = a_i + visits to i among X_0..X_n"""

    current: int
    n: int
    Z: np.ndarray
    a: np.ndarray

    def check(self) -> None:
        if not math.isclose(self.Z.sum(), self.a.sum() + self.n + 1, rel_tol=1e-12):
            raise NumericalError("sum of Z differs from sum of a + n + 1")
        if np.any(self.Z < self.a):
            raise NumericalError("Z dropped below its initial value")


@dataclass
class VrrwRun:
    """Path and Z history of a discrete run"""

    path: Optional[np.ndarray]
    steps: np.ndarray
    Z: np.ndarray
    final: VrrwState

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.Z, columns=[f"Z_{i}" for i in range(self.Z.shape[1])])
        frame.insert(0, 'n', self.steps)
        return frame


def step_grid(steps: int, points: int = 60) -> np.ndarray:
    """Geometric step checkpoints 1..steps"""
    if steps < 1:
        return np.array([0], dtype=np.int64)
    return np.unique(np.geomspace(1, steps, points).round().astype(np.int64))


def run_vrrw(
    graph: WeightedGraph,
    start: int,
    a: Sequence[float],
    steps: int,
    rng: Optional[RngStream] = None,
    grid_points: int = 60,
    keep_path: bool = True,
) -> VrrwRun:
    """
    Discrete vertex-reinforced walk.

    P(X_{n+1} = j | past) is proportional to Z_j(n) over neighbors j of X_n.

    Returns:
        VrrwRun with the path (if kept) and Z at geometric checkpoints
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (graph.n_vertices,) or np.any(a <= 0) or not np.all(np.isfinite(a)):
        raise ValueError("a must hold one positive value per vertex")
    if not 0 <= start < graph.n_vertices:
        raise ValueError(f"start vertex {start} outside 0..{graph.n_vertices - 1}")
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    rng = rng or RngStream(0)

    checkpoints = step_grid(steps, grid_points)
    history = np.zeros((len(checkpoints), graph.n_vertices))
    Z = a.tolist()
    Z[start] += 1.0
    nbrs = graph.neighbors
    path = array('l', [start]) if keep_path else None

    x = start
    next_k = 0
    if steps == 0:
        history[0] = Z
    uniform = rng.uniform
    for n in range(1, steps + 1):
        candidates = nbrs[x]
        total = 0.0
        for j in candidates:
            total += Z[j]
        u = uniform() * total
        acc = 0.0
        destination = candidates[-1]
        for j in candidates:
            acc += Z[j]
            if u < acc:
                destination = j
                break
        x = destination
        Z[x] += 1.0
        if keep_path:
            path.append(x)
        if n == checkpoints[next_k]:
            history[next_k] = Z
            next_k += 1
            if next_k == len(checkpoints):
                next_k -= 1

    final = VrrwState(current=x, n=steps, Z=np.array(Z), a=a)
    return VrrwRun(
        path=np.frombuffer(path, dtype=path.typecode).astype(int) if keep_path else None,
        steps=checkpoints,
        Z=history,
        final=final,
    )


def run_vrrw_embedded(
    graph: WeightedGraph,
    start: int,
    a: Sequence[float],
    horizon: float,
    rng: Optional[RngStream] = None,
    grid: Optional[Sequence[float]] = None,
    max_events: Optional[int] = None,
) -> Trajectory:
    """
    Timelines engine driven by VRRW clocks.

    Alarms of vertex i are partial sums of xi_l / (a_i + l); the jump
    skeleton has the law of the discrete walk.
    """
    grid = _validate_run(graph, start, horizon, grid)
    rng = rng or RngStream(0)
    cap = max_events or SIMULATION_DEFAULTS['event_cap']
    run = _ExactRun(graph, start, horizon, grid, 'vrrw_embedded', cap, True, False)
    run.run(_timelines_chooser(graph, start, rng, 'vrrw', a))
    return run.trajectory()


def vrrw_embedded_skeleton(
    graph: WeightedGraph,
    start: int,
    a: Sequence[float],
    steps: int,
    rng: Optional[RngStream] = None,
) -> np.ndarray:
    """First `steps` destinations of the VRRW-clock timelines walk"""
    return jump_skeleton(graph, start, steps, 'vrrw_embedded', rng, shapes=a)


def gamma_mixture_skeleton(
    graph: WeightedGraph,
    a: Sequence[float],
    steps: int,
    rng: Optional[RngStream] = None,
    start: int = 0,
    engine: str = 'direct',
) -> np.ndarray:
    """
    Jump destinations of a continuous-time walk with Gamma(a_i, 1) weights.

    Weights come from a dedicated stream of the replica so the path stream
    is unaffected by the number of vertices.
    """
    rng = rng or RngStream(0)
    weights = sample_gamma_weights(a, rng.child(purpose=PURPOSE_WEIGHTS))
    return jump_skeleton(graph.with_weights(weights), start, steps, engine, rng)
