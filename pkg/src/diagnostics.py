"""
Diagnostics Module
Entropy, Lyapunov and dissipation functionals, the pathwise
stochastic-approximation decomposition, and the rate and limit estimators
applied to simulated trajectories
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.polynomial.legendre import leggauss
from scipy import stats
from scipy.special import logsumexp

from src.chain_numerics import (
    batch_chain,
    batch_q_derivative,
    reference_profile,
)
from src.config import STAT_DEFAULTS
from src.exceptions import FamilyMismatchError, InsufficientSamplesError
from src.functionals import Functional
from src.graph_model import WeightedGraph, require_family
from src.walkers import Trajectory, VrrwRun

logger = logging.getLogger(__name__)

SIMPLEX_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ProbVector:
    """Nonnegative per-vertex values summing to one"""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or np.any(values < -SIMPLEX_TOLERANCE):
            raise ValueError("probability vector needs nonnegative entries")
        if abs(values.sum() - 1.0) > SIMPLEX_TOLERANCE * max(1, len(values)):
            raise ValueError(f"probability vector sums to {values.sum()!r}, not 1")
        object.__setattr__(self, 'values', values)

    def __len__(self):
        return len(self.values)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def _values(y) -> np.ndarray:
    return y.values if isinstance(y, ProbVector) else np.asarray(y, dtype=float)


def entropy_H(y, graph: WeightedGraph) -> float:
    """H(y) = sum_i y_i N_i(y)"""
    v = _values(y)
    return float(v @ graph.adjacency @ v)


def dissipation_J(x, graph: WeightedGraph) -> float:
    """J(x) = 2 sum_i x_i (N_i(x) - H(x))^2"""
    v = _values(x)
    N = v @ graph.adjacency
    H = float(v @ N)
    return float(2.0 * np.sum(v * (N - H) ** 2))


def z_star(graph: WeightedGraph) -> ProbVector:
    """1/d on the core, 0 on leaves"""
    if graph.family not in ('complete', 'complete_like'):
        raise FamilyMismatchError(f"z* is defined for complete-like graphs, got {graph.family}")
    z = np.zeros(graph.n_vertices)
    z[list(graph.core)] = 1.0 / graph.n_core
    return ProbVector(z)


def limit_occupancy(graph: WeightedGraph) -> ProbVector:
    """Limit of pi(T(t)): z* on complete-like graphs, W-weighted 1/d per part on multipartite ones"""
    profile = reference_profile(graph)
    if not profile.supported:
        raise FamilyMismatchError(f"no limit occupancy for {graph.family} graphs")
    return ProbVector(np.array(profile.y_star))


def lyapunov_V(graph: WeightedGraph, T) -> float:
    """
    Lyapunov functional, in log domain.

    complete / complete-like: (1/d) sum_{i in core} log pi_i(T)
    d-partite: -log sum_x W_x e^{N_x} + (1/d) sum_q (sum_{x in core \\ V_q} T_x + log W(V_q))
    with W(V_q) the total weight of part q.

    The part term log W(V_q) replaces sum_{y in V_q} log W_y. Both agree when
    every part is a single vertex; with larger parts the sum-of-logs form stays
    below part_mass_bound only while prod_y W_y <= sum_y W_y in each part,
    whereas log W(V_q) keeps V <= part_mass_bound for any weights, with
    equality on leafless graphs.
    """
    T = np.asarray(T, dtype=float)
    log_rates = graph.log_weights + T @ graph.adjacency
    logZ = float(logsumexp(log_rates))
    d = graph.d
    core = list(graph.core)
    if graph.family in ('complete', 'complete_like'):
        return float(np.sum(log_rates[core] - logZ) / d)
    if graph.family == 'd_partite':
        total = 0.0
        core_sum = T[core].sum()
        for part in graph.partition:
            members = list(part)
            total += core_sum - T[members].sum() + math.log(sum(graph.weights[v] for v in members))
        return -logZ + total / d
    raise FamilyMismatchError(f"V is undefined on {graph.family} graphs")


def part_mass_bound(graph: WeightedGraph, T) -> float:
    """sum_q (1/d) log(sum_{y in V_q} pi_y(T)), the upper bound of V on multipartite graphs"""
    require_family(graph, 'd_partite')
    T = np.asarray(T, dtype=float)
    log_rates = graph.log_weights + T @ graph.adjacency
    logZ = logsumexp(log_rates)
    return float(sum(logsumexp(log_rates[list(part)]) - logZ for part in graph.partition) / graph.d)


def sandwich_constants(
    graph: WeightedGraph,
    delta: float = 0.05,
    samples: int = 1000,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[float, float]:
    """
    Smallest and largest J(x) / (H(z*) - H(x)) over random x in B(z*, delta).

    Returns:
        (C1, C2); on K_d they bracket 2/d for small delta
    """
    require_family(graph, 'complete')
    rng = rng or np.random.default_rng(0)
    d = graph.n_vertices
    z = np.full(d, 1.0 / d)
    H_star = entropy_H(z, graph)
    ratios = []
    while len(ratios) < samples:
        direction = rng.standard_normal(d)
        direction -= direction.mean()
        norm = np.linalg.norm(direction)
        radius = delta * rng.uniform()
        if norm == 0 or radius == 0:
            continue
        x = z + radius * direction / norm
        if np.any(x < 0):
            continue
        gap = H_star - entropy_H(x, graph)
        if gap > 0:
            ratios.append(dissipation_J(x, graph) / gap)
    return float(min(ratios)), float(max(ratios))


# Pathwise decomposition


@dataclass
class DecompositionReport:
    """
    Terms of the decomposition of f(T(t)) at each grid time.

    f(T(t)) - f(T(0)) - drift = boundary_t - boundary_0 + residual
                                - correction_Q - correction_grad
    so `residual` is the martingale part M_f(t) and `qv` its compensator.
    """

    functional: str
    grid: np.ndarray
    f_initial: float
    f_values: np.ndarray
    drift: np.ndarray
    boundary_t: np.ndarray
    boundary_0: float
    correction_Q: np.ndarray
    correction_grad: np.ndarray
    residual: np.ndarray
    qv: np.ndarray
    richardson_error: float
    n_segments: int

    def identity_gap(self) -> np.ndarray:
        """Left side minus right side of the identity (zero up to rounding)"""
        lhs = self.f_values - self.f_initial - self.drift
        rhs = (
            self.boundary_t - self.boundary_0 + self.residual
            - self.correction_Q - self.correction_grad
        )
        return lhs - rhs

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'grid_time': self.grid,
            'f': self.f_values,
            'drift': self.drift,
            'boundary_t': self.boundary_t,
            'correction_Q': self.correction_Q,
            'correction_grad': self.correction_grad,
            'M_f': self.residual,
            'qv': self.qv,
        })


def _segment_layout(traj: Trajectory):
    """Sub-segments of [0, horizon] split at jumps and grid times, with their vertex"""
    if traj.switch_time is not None:
        raise ValueError("decomposition needs an exact trajectory, not a hybrid one")
    if traj.n_events and len(traj.event_times) != traj.n_events:
        raise ValueError("decomposition needs the event log (keep_events=True)")
    end = traj.grid[-1]
    events = traj.event_times[traj.event_times <= end]
    cuts = np.union1d(np.union1d(events, traj.grid), [0.0])
    positions = np.concatenate([[traj.start], traj.event_to[:len(events)]])
    # Vertex occupied on [cuts[m], cuts[m+1]) is the right-continuous position at cuts[m]
    seg_vertex = positions[np.searchsorted(events, cuts[:-1], side='right')]
    lengths = np.diff(cuts)

    V = traj.graph.n_vertices
    increments = np.zeros((len(lengths), V))
    increments[np.arange(len(lengths)), seg_vertex] = lengths
    T_cuts = np.vstack([np.zeros(V), np.cumsum(increments, axis=0)])
    grid_index = np.searchsorted(cuts, traj.grid)
    X_cuts = positions[np.searchsorted(events, cuts, side='right')]
    return cuts, seg_vertex, lengths, T_cuts, grid_index, X_cuts


def _segment_integrals(
    graph: WeightedGraph,
    f: Functional,
    T_start: np.ndarray,
    vertex: np.ndarray,
    lengths: np.ndarray,
    nodes: np.ndarray,
    weights: np.ndarray,
) -> np.ndarray:
    """
    Gauss-Legendre integrals over each segment of the four path integrands.

    Returns:
        (S, 4) array: drift, correction_Q, correction_grad, g_f
    """
    S, V = T_start.shape
    m = len(nodes)
    u = (nodes + 1.0) / 2.0
    T_nodes = np.repeat(T_start, m, axis=0)
    k = np.repeat(vertex, m)
    rows = np.arange(S * m)
    T_nodes[rows, k] += np.tile(u, S) * np.repeat(lengths, m)

    pi, rates, Q = batch_chain(graph, T_nodes)
    grad = f.grad(T_nodes)
    dgrad = f.grad_derivative(T_nodes, k)
    dQ = batch_q_derivative(graph, k, pi, rates, Q)

    Qgrad = np.einsum('bij,bj->bi', Q, grad)
    drift = np.einsum('bi,bi->b', pi, grad)
    corr_q = np.einsum('bj,bj->b', dQ[rows, k], grad)
    corr_grad = np.einsum('bj,bj->b', Q[rows, k], dgrad)
    diff = Qgrad - Qgrad[rows, k][:, None]
    g = np.einsum('bp,bp->b', graph.adjacency[k] * rates, diff ** 2)

    values = np.stack([drift, corr_q, corr_grad, g], axis=1).reshape(S, m, 4)
    w = np.tile(weights / 2.0, (S, 1)) * lengths[:, None]
    return np.einsum('sm,smk->sk', w, values)


def decompose_trajectory(
    traj: Trajectory,
    graph: WeightedGraph,
    f: Functional,
    nodes: int = 5,
) -> DecompositionReport:
    """
    Evaluate every term of the pathwise decomposition of f(T(t)).

    Integrals are split at jump events and grid times; each segment is
    integrated by Gauss-Legendre quadrature and again on its two halves
    (Richardson check). M_f is defined by rearranging the identity.

    Raises:
        OverflowGuardError: the path leaves the linear-domain guard
    """
    cuts, seg_vertex, lengths, T_cuts, grid_index, X_cuts = _segment_layout(traj)
    x, w = leggauss(nodes)
    T_start = T_cuts[:-1]
    integrals = _segment_integrals(graph, f, T_start, seg_vertex, lengths, x, w)

    half = lengths / 2.0
    T_mid = T_start.copy()
    T_mid[np.arange(len(half)), seg_vertex] += half
    halves = (
        _segment_integrals(graph, f, T_start, seg_vertex, half, x, w)
        + _segment_integrals(graph, f, T_mid, seg_vertex, half, x, w)
    )

    cumulative = np.vstack([np.zeros(4), np.cumsum(integrals, axis=0)])
    cumulative_half = np.vstack([np.zeros(4), np.cumsum(halves, axis=0)])
    at_grid = cumulative[grid_index]
    scale = np.abs(cumulative_half).max(axis=0)
    gap = np.abs(cumulative - cumulative_half).max(axis=0)
    richardson = float(max(
        (g / s if s > 0 else 0.0) for g, s in zip(gap, scale)
    ))

    # Row 0 is the initial state T = 0 at the start vertex
    T_eval = np.vstack([np.zeros(graph.n_vertices), T_cuts[grid_index]])
    X_eval = np.concatenate([[traj.start], X_cuts[grid_index]])
    _, _, Q_eval = batch_chain(graph, T_eval)
    Qgrad = np.einsum('bij,bj->bi', Q_eval, f.grad(T_eval))
    boundary_all = Qgrad[np.arange(len(X_eval)), X_eval]
    f_all = f.value(T_eval)
    boundary_0, boundary = float(boundary_all[0]), boundary_all[1:]
    f_initial, f_values = float(f_all[0]), f_all[1:]

    drift, corr_q, corr_grad, qv = at_grid.T
    residual = f_values - f_initial - drift - boundary + boundary_0 + corr_q + corr_grad

    logger.debug(
        f"Decomposed {f.label} over {len(lengths)} segments, Richardson {richardson:.2e}"
    )
    return DecompositionReport(
        functional=f.label,
        grid=np.asarray(traj.grid, dtype=float),
        f_initial=f_initial,
        f_values=f_values,
        drift=drift,
        boundary_t=boundary,
        boundary_0=boundary_0,
        correction_Q=corr_q,
        correction_grad=corr_grad,
        residual=residual,
        qv=qv,
        richardson_error=richardson,
        n_segments=len(lengths),
    )


# Rate and limit estimators


@dataclass
class RateFit:
    """Least-squares slope of log value against the abscissa"""

    slope: float
    stderr: float
    intercept: float
    n_points: int
    window: Tuple[float, float]


def fit_exponential_rate(
    t: Sequence[float],
    values: Optional[Sequence[float]] = None,
    window: Optional[float] = None,
    log_values: Optional[Sequence[float]] = None,
    t_range: Optional[Tuple[float, float]] = None,
    min_points: int = 10,
) -> RateFit:
    """
    OLS of log(value) against t over the trailing window.

    Args:
        t: Abscissa (time, or log n for discrete runs)
        values: Positive values; alternatively pass `log_values` directly
        window: Trailing fraction of the abscissa span (default STAT_DEFAULTS)
        t_range: Explicit [lo, hi] range, overriding `window`

    Raises:
        ValueError: nonpositive values inside the window
        InsufficientSamplesError: fewer than `min_points` points in the window
    """
    t = np.asarray(t, dtype=float)
    if t_range is not None:
        lo, hi = t_range
    else:
        frac = STAT_DEFAULTS['rate_window'] if window is None else window
        hi = t.max()
        lo = hi - frac * (hi - t.min())
    mask = (t >= lo) & (t <= hi)

    if log_values is not None:
        y = np.asarray(log_values, dtype=float)[mask]
        if not np.all(np.isfinite(y)):
            raise ValueError("log values in the fit window must be finite")
    else:
        v = np.asarray(values, dtype=float)[mask]
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise ValueError("values in the fit window must be positive and finite")
        y = np.log(v)

    if mask.sum() < min_points:
        raise InsufficientSamplesError(f"{mask.sum()} points in fit window, need {min_points}")
    fit = stats.linregress(t[mask], y)
    return RateFit(
        slope=float(fit.slope),
        stderr=float(fit.stderr),
        intercept=float(fit.intercept),
        n_points=int(mask.sum()),
        window=(float(lo), float(hi)),
    )


def distance_rate(traj: Trajectory, t_range: Optional[Tuple[float, float]] = None,
                  window: Optional[float] = None) -> RateFit:
    """Exponential rate of ||pi(T(t)) - y*||, fitted in log domain"""
    rows = np.isfinite(traj.log_dist) & (traj.grid > 0)
    return fit_exponential_rate(
        traj.grid[rows], log_values=traj.log_dist[rows], t_range=t_range, window=window
    )


@dataclass
class LeafExponent:
    """Growth exponent of a leaf count Z_j(n) against n"""

    leaf: int
    slope: float
    stderr: float
    predicted: float
    core_frequency: float
    ratio_variation: float


def leaf_exponent(run: VrrwRun, graph: WeightedGraph, leaf: int, decades: float = 1.0) -> LeafExponent:
    """
    Slope of log Z_leaf(n) against log n over the trailing decades.

    The predictor is d/(d-1) times the measured frequency of the anchor,
    which equals 1/(d-1) on complete-like graphs. ratio_variation is the
    relative spread of Z_leaf(n) / n^predicted over the window.
    """
    if not graph.is_leaf(leaf):
        raise ValueError(f"vertex {leaf} is not a leaf")
    n = run.steps.astype(float)
    Zj = run.Z[:, leaf]
    log_n = np.log(np.maximum(n, 1.0))
    fit = fit_exponential_rate(
        log_n, Zj, t_range=(log_n.max() - decades * math.log(10.0), log_n.max()), min_points=3
    )
    anchor = graph.anchor_of[leaf]
    freq = float(run.final.Z[anchor] / run.final.Z.sum())
    d = graph.d
    predicted = d / (d - 1) * freq

    exponent = 1.0 / (d - 1) if graph.family == 'complete_like' else predicted
    lo = log_n.max() - decades * math.log(10.0)
    window = log_n >= lo
    ratio = Zj[window] / n[window] ** exponent
    variation = float((ratio.max() - ratio.min()) / ratio.mean())
    return LeafExponent(
        leaf=leaf,
        slope=fit.slope,
        stderr=fit.stderr,
        predicted=predicted,
        core_frequency=freq,
        ratio_variation=variation,
    )


def t_over_d_limit(traj: Trajectory, graph: WeightedGraph) -> pd.DataFrame:
    """
    Measured T_i(t) - t/d at the last grid time against its predicted limit.

    Complete graphs: log W_i - (1/d) sum_x log W_x. Complete-like graphs add
    the leaf term T_l(i) - (2/d) sum_j T_j with terminal leaf local times.
    """
    require_family(graph, 'complete', 'complete_like', min_d=4)
    profile = reference_profile(graph)
    d = graph.d
    t = float(traj.grid[-1])
    E = traj.E[-1]
    T = traj.T[-1]
    lw = graph.log_weights
    leaf_total = sum(T[leaf] for leaf in graph.leaves)

    rows = []
    for i in graph.core:
        measured = t * (profile.y_star[i] - 1.0 / d) + profile.kappa[i] + E[i]
        leaf = graph.leaf_of(i)
        predicted = lw[i] + (T[leaf] if leaf is not None else 0.0) - (
            lw[list(graph.core)].sum() + 2.0 * leaf_total
        ) / d
        rows.append({'vertex_id': i, 'measured': measured, 'predicted': predicted})
    frame = pd.DataFrame(rows)
    frame['abs_error'] = (frame['measured'] - frame['predicted']).abs()
    return frame


@dataclass
class ScaledGrowth:
    """Running maxima of e^{u/3} ||pi - z*|| and its normalizations, in log form"""

    grid: np.ndarray
    log_scaled: np.ndarray
    log_running_max: np.ndarray
    log_ratio_sqrt: np.ndarray
    log_ratio_kappa: np.ndarray
    kappa: float

    def running_max_at(self, t: float) -> float:
        return float(np.exp(self.log_running_max[np.argmin(np.abs(self.grid - t))]))

    def kappa_ratio_at(self, t: float) -> float:
        return float(np.exp(self.log_ratio_kappa[np.argmin(np.abs(self.grid - t))]))


def k3_scaled_growth(traj: Trajectory, kappa: Optional[float] = None) -> ScaledGrowth:
    """Scaled distance process u -> e^{u/3} ||pi(T(u)) - z*|| on K_3"""
    require_family(traj.graph, 'complete')
    if traj.graph.n_vertices != 3:
        raise FamilyMismatchError("k3_scaled_growth needs K_3")
    kappa = STAT_DEFAULTS['kappa'] if kappa is None else kappa
    if kappa <= 0.5:
        raise ValueError(f"kappa must exceed 1/2, got {kappa}")
    rows = traj.grid > 0
    u = traj.grid[rows]
    log_scaled = traj.log_dist[rows] + u / 3.0
    running = np.maximum.accumulate(log_scaled)
    return ScaledGrowth(
        grid=u,
        log_scaled=log_scaled,
        log_running_max=running,
        log_ratio_sqrt=running - 0.5 * np.log(u),
        log_ratio_kappa=running - kappa * np.log(u),
        kappa=kappa,
    )


def optimality_exceedance(
    trajectories: Sequence[Trajectory],
    epsilon: float = 0.1,
    threshold: Callable[[float], float] = math.log,
) -> float:
    """
    Fraction of replicas with log(||pi - y*|| e^{(1+eps) t/d}) above threshold(t)
    at the last grid time (threshold given in log form).
    """
    if not trajectories:
        raise InsufficientSamplesError("no trajectories")
    hits = 0
    for traj in trajectories:
        t = float(traj.grid[-1])
        scaled = traj.log_dist[-1] + (1.0 + epsilon) * t / traj.graph.d
        hits += int(scaled > threshold(t))
    return hits / len(trajectories)


def vrrw_distance_series(run: VrrwRun, graph: WeightedGraph) -> Tuple[np.ndarray, np.ndarray]:
    """(log n, log ||z(n) - z*||) with z(n) the normalized counts Z / sum Z"""
    z = z_star(graph).values
    freq = run.Z / run.Z.sum(axis=1, keepdims=True)
    dist = np.linalg.norm(freq - z[None, :], axis=1)
    keep = (run.steps > 0) & (dist > 0)
    return np.log(run.steps[keep].astype(float)), np.log(dist[keep])


def within_part_ratios(traj: Trajectory, graph: WeightedGraph) -> pd.DataFrame:
    """Terminal pi_i / sum_{y in part} pi_y against W_i / W(part)"""
    require_family(graph, 'd_partite')
    pi = traj.pi[-1]
    rows = []
    for p, part in enumerate(graph.partition):
        members = list(part)
        mass = pi[members].sum()
        weight = sum(graph.weights[v] for v in members)
        for v in members:
            rows.append({
                'vertex_id': v,
                'part': p,
                'pi': pi[v],
                'ratio': pi[v] / mass,
                'predicted_ratio': graph.weights[v] / weight,
                'predicted_pi': graph.weights[v] / weight / graph.d,
            })
    return pd.DataFrame(rows)


def visit_ratio(traj: Trajectory, row: int = -1) -> np.ndarray:
    """Y_x / (W_x (e^{N_x} - 1)) per vertex at a grid row, computed in log domain"""
    graph = traj.graph
    N = traj.T[row] @ graph.adjacency
    with np.errstate(divide='ignore'):
        log_expected = graph.log_weights + N + np.log(-np.expm1(-N))
        return np.exp(np.log(traj.Y[row]) - log_expected)


def exact_phase_row(traj: Trajectory) -> int:
    """
    Last grid row simulated event by event.

    After a hybrid hand-over the visit counts are drawn from their
    compensator, so count-based estimators must stop at the switch time.
    """
    if traj.switch_time is None:
        return len(traj.grid) - 1
    return int(np.searchsorted(traj.grid, traj.switch_time, side='right')) - 1


def leaf_visit_ratio(traj: Trajectory, leaf: int, row: int = -1) -> float:
    """Y_j / (sum_x Y_x)^{1/(d-1)} for a leaf j"""
    if not traj.graph.is_leaf(leaf):
        raise ValueError(f"vertex {leaf} is not a leaf")
    Y = traj.Y[row]
    return float(Y[leaf] / Y.sum() ** (1.0 / (traj.graph.d - 1)))


def summarize_ensemble(values: Sequence[float]) -> Dict[str, float]:
    """Mean, standard error, median and quartiles of replica values"""
    v = np.sort(np.asarray(values, dtype=float))
    if len(v) == 0:
        raise InsufficientSamplesError("no values to summarize")
    return {
        'n': int(len(v)),
        'mean': float(math.fsum(v) / len(v)),
        'stderr': float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else float('nan'),
        'median': float(np.median(v)),
        'q25': float(np.quantile(v, 0.25)),
        'q75': float(np.quantile(v, 0.75)),
    }
