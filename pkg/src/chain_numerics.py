"""
Chain Numerics Module
Frozen-environment Markov chain of a walk with local times T: generator,
stationary law, hitting times, fundamental matrix Q and its derivatives
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from src.config import NUMERIC_TOLERANCES, SIMULATION_DEFAULTS
from src.exceptions import (
    FamilyMismatchError,
    NumericalError,
    OverflowGuardError,
    StructuralError,
)
from src.graph_model import WeightedGraph

logger = logging.getLogger(__name__)

Q_METHODS = ('linear_solve', 'hitting_formula', 'kd_closed', 'quadrature')
PROFILE_FAMILIES = ('complete', 'complete_like', 'd_partite')


@dataclass
class ChainMatrices:
    """Generator L (row = departure), stationary row pi and normalization"""

    L: np.ndarray
    pi: np.ndarray
    logZsum: float
    log_rates: np.ndarray
    log_domain_only: bool
    Q: Optional[np.ndarray] = None

    @property
    def Pi(self) -> np.ndarray:
        return np.tile(self.pi, (len(self.pi), 1))


def _as_local_times(graph: WeightedGraph, T) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    if T.shape != (graph.n_vertices,):
        raise ValueError(f"T must have {graph.n_vertices} entries, got shape {T.shape}")
    if not np.all(np.isfinite(T)):
        raise ValueError("T must be finite")
    if graph.n_vertices > SIMULATION_DEFAULTS['dense_max_vertices']:
        raise StructuralError(
            f"{graph.n_vertices} vertices exceed the dense cap "
            f"{SIMULATION_DEFAULTS['dense_max_vertices']}"
        )
    return T


def neighbor_sums(graph: WeightedGraph, T) -> np.ndarray:
    """N_i(T) = sum over neighbors k of T_k (works on batches of T rows)"""
    return np.asarray(T, dtype=float) @ graph.adjacency


def normalized_generator(adjacency: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Generator with rates pi_j on every edge i -> j"""
    Lt = np.asarray(adjacency, dtype=float) * pi[None, :]
    Lt[np.diag_indices_from(Lt)] = -Lt.sum(axis=1)
    return Lt


def generator(graph: WeightedGraph, T, overflow_guard: Optional[float] = None) -> ChainMatrices:
    """
    Build L(T) with L(i, j) = W_j e^{N_j(T)} for i ~ j and pi(T) by log-sum-exp.

    When some N_j exceeds the overflow guard the matrices are still built
    but flagged log_domain_only; Q routines then refuse.
    """
    T = _as_local_times(graph, T)
    guard = SIMULATION_DEFAULTS['overflow_guard'] if overflow_guard is None else overflow_guard
    N = neighbor_sums(graph, T)
    log_rates = graph.log_weights + N
    logZ = float(logsumexp(log_rates))
    pi = np.exp(log_rates - logZ)

    log_domain_only = bool(N.max() > guard)
    if log_domain_only:
        logger.debug(f"N max {N.max():.1f} exceeds guard {guard}; linear-domain matrices flagged")

    with np.errstate(over='ignore', invalid='ignore'):
        rates = np.exp(log_rates)
        L = graph.adjacency * rates[None, :]
        L[np.diag_indices_from(L)] = -L.sum(axis=1)

    return ChainMatrices(
        L=L, pi=pi, logZsum=logZ, log_rates=log_rates, log_domain_only=log_domain_only
    )


def _require_linear(cm: ChainMatrices) -> None:
    if cm.log_domain_only:
        raise OverflowGuardError("local times beyond the overflow guard; Q is log-domain-only")


def hitting_times(graph: WeightedGraph, T, target: int, cm: Optional[ChainMatrices] = None) -> np.ndarray:
    """
    Expected hitting times E_x tau_target of the frozen chain.

    Solves L h = -1 off the target with h(target) = 0, on the normalized
    generator, then rescales by the total rate.
    """
    cm = cm or generator(graph, T)
    _require_linear(cm)
    n = graph.n_vertices
    if not 0 <= target < n:
        raise ValueError(f"target {target} outside 0..{n - 1}")

    Lt = normalized_generator(graph.adjacency, cm.pi)
    others = [x for x in range(n) if x != target]
    h = np.zeros(n)
    if others:
        try:
            h_scaled = linalg.solve(Lt[np.ix_(others, others)], -np.ones(len(others)))
        except linalg.LinAlgError as e:
            raise StructuralError(f"hitting-time system is singular: {e}") from e
        if not np.all(np.isfinite(h_scaled)):
            raise StructuralError("hitting-time system has no finite solution")
        h[others] = h_scaled * np.exp(-cm.logZsum)
    return h


def hitting_time_matrix(graph: WeightedGraph, T, cm: Optional[ChainMatrices] = None) -> np.ndarray:
    """H[x, y] = E_x tau_y"""
    cm = cm or generator(graph, T)
    return np.column_stack([hitting_times(graph, T, y, cm) for y in range(graph.n_vertices)])


def scaled_q_matrix(adjacency: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """
    Fundamental matrix of the normalized generator.

    Q(T) = scaled_q_matrix(A, pi(T)) / sum_x W_x e^{N_x(T)}; every entry is
    of order one, so no overflow guard applies.
    """
    n = len(pi)
    Lt = normalized_generator(adjacency, pi)
    Pi = np.tile(pi, (n, 1))
    try:
        M = linalg.solve(Pi - Lt, np.eye(n))
    except linalg.LinAlgError as e:
        raise StructuralError(f"Pi - L is singular: {e}") from e
    return Pi - M


def poisson_residuals(L: np.ndarray, Q: np.ndarray, pi: np.ndarray) -> Dict[str, float]:
    """
    Infinity-norm residuals of the Poisson-equation identities.

    L Q and Q L are compared against I - Pi; Pi Q, Q Pi and Q 1 against 0.
    The latter three are scaled by the total rate so all residuals are
    relative to order-one quantities.
    """
    n = len(pi)
    Pi = np.tile(pi, (n, 1))
    target = np.eye(n) - Pi
    scale = np.abs(L).max()

    def norm(m):
        return float(np.abs(m).sum(axis=1).max())

    return {
        'LQ': norm(L @ Q - target),
        'QL': norm(Q @ L - target),
        'PiQ': norm(Pi @ Q) * scale,
        'QPi': norm(Q @ Pi) * scale,
        'Q1': norm(Q @ np.ones((n, 1))) * scale,
    }


def _quadrature_scaled(adjacency: np.ndarray, pi: np.ndarray, panel_steps: int = 64) -> np.ndarray:
    """
    -int_0^inf (e^{uL} - Pi) du for the normalized generator.

    Composite Simpson on dyadic panels [0, h0], [h0, 2h0], ... up to u_max,
    where u_max makes the spectral-gap tail bound negligible.
    """
    n = len(pi)
    Lt = normalized_generator(adjacency, pi)
    Pi = np.tile(pi, (n, 1))

    root = np.sqrt(pi)
    S = root[:, None] * Lt / root[None, :]
    eigs = linalg.eigvalsh((S + S.T) / 2.0)
    gap = -eigs[-2]
    if gap <= 0:
        raise StructuralError("normalized generator has no spectral gap")
    spread = np.sqrt(pi.max() / pi.min())
    u_max = (np.log(spread) + 8.0 * np.log(10.0)) / gap

    h0 = 1.0 / np.abs(np.diag(Lt)).max()
    edges = [0.0, h0]
    while edges[-1] < u_max:
        edges.append(min(2.0 * edges[-1], u_max))

    total = np.zeros((n, n))
    simpson = np.ones(panel_steps + 1)
    simpson[1:-1:2] = 4.0
    simpson[2:-1:2] = 2.0
    for a, b in zip(edges[:-1], edges[1:]):
        h = (b - a) / panel_steps
        P = linalg.expm(a * Lt)
        step = linalg.expm(h * Lt)
        panel = np.zeros((n, n))
        for k in range(panel_steps + 1):
            panel += simpson[k] * (P - Pi)
            P = P @ step
        total += panel * h / 3.0
    return -total


def q_matrix(
    graph: WeightedGraph,
    T,
    method: str = 'linear_solve',
    cm: Optional[ChainMatrices] = None,
) -> np.ndarray:
    """
    Fundamental matrix Q(T) = -int_0^inf (e^{uL} - Pi) du.

    Args:
        method: linear_solve (primary), hitting_formula, kd_closed (complete
            graphs only) or quadrature (oracle)

    Returns:
        Dense V x V matrix solving L Q = I - Pi with Pi Q = 0
    """
    if method not in Q_METHODS:
        raise ValueError(f"method must be one of {Q_METHODS}, got '{method}'")
    cm = cm or generator(graph, T)
    _require_linear(cm)
    inv_total = np.exp(-cm.logZsum)

    if method == 'linear_solve':
        Q = scaled_q_matrix(graph.adjacency, cm.pi) * inv_total
        residuals = poisson_residuals(cm.L, Q, cm.pi)
        worst = max(residuals.values())
        if worst > NUMERIC_TOLERANCES['poisson_residual']:
            raise NumericalError(f"Poisson-equation residual {worst:.2e} too large: {residuals}")
    elif method == 'hitting_formula':
        H = hitting_time_matrix(graph, T, cm)
        Q = cm.pi[None, :] * (H - (cm.pi @ H)[None, :])
    elif method == 'kd_closed':
        if graph.family != 'complete':
            raise FamilyMismatchError("kd_closed needs a complete graph")
        Q = np.tile(cm.pi, (graph.n_vertices, 1)) * inv_total
        Q[np.diag_indices_from(Q)] = -(1.0 - cm.pi) * inv_total
    else:
        Q = _quadrature_scaled(graph.adjacency, cm.pi) * inv_total

    cm.Q = Q
    return Q


def q_derivative(
    graph: WeightedGraph,
    T,
    k: int,
    cm: Optional[ChainMatrices] = None,
) -> np.ndarray:
    """
    dQ/dT_k = -Q (dL/dT_k) Q - Pi~_k Q.

    dL/dT_k has entry W_q e^{N_q} at (r, q) when q ~ k and r ~ q, and the
    diagonal keeps rows summing to zero; Pi~_k has every row equal to
    pi_v 1{v ~ k}.
    """
    cm = cm or generator(graph, T)
    Q = cm.Q if cm.Q is not None else q_matrix(graph, T, cm=cm)
    A = graph.adjacency
    rates = np.exp(cm.log_rates)
    mask = A[k]
    dL = A * (rates * mask)[None, :]
    dL[np.diag_indices_from(dL)] = -dL.sum(axis=1)
    pi_tilde = np.tile(cm.pi * mask, (graph.n_vertices, 1))
    return -Q @ dL @ Q - pi_tilde @ Q


def g_f(graph: WeightedGraph, T, x: int, Qgradf) -> float:
    """Quadratic-variation density sum_{p ~ x} W_p e^{N_p} ([Q grad f]_p - [Q grad f]_x)^2"""
    T = _as_local_times(graph, T)
    qg = np.asarray(Qgradf, dtype=float)
    N = neighbor_sums(graph, T)
    nbrs = list(graph.neighbors[x])
    rates = np.exp(graph.log_weights[nbrs] + N[nbrs])
    return float(np.sum(rates * (qg[nbrs] - qg[x]) ** 2))


# Batched evaluation along a trajectory


def batch_chain(graph: WeightedGraph, T_batch: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    pi, rates and Q for a stack of local-time vectors.

    Returns:
        (pi (B, V), rates (B, V), Q (B, V, V))
    """
    T_batch = np.atleast_2d(np.asarray(T_batch, dtype=float))
    N = neighbor_sums(graph, T_batch)
    if N.max() > SIMULATION_DEFAULTS['overflow_guard']:
        raise OverflowGuardError("trajectory leaves the linear-domain guard")
    log_rates = graph.log_weights[None, :] + N
    logZ = logsumexp(log_rates, axis=1)
    pi = np.exp(log_rates - logZ[:, None])

    A = graph.adjacency
    n = graph.n_vertices
    Lt = A[None, :, :] * pi[:, None, :]
    idx = np.arange(n)
    Lt[:, idx, idx] = -Lt.sum(axis=2)
    Pi = np.repeat(pi[:, None, :], n, axis=1)
    M = np.linalg.solve(Pi - Lt, np.broadcast_to(np.eye(n), Pi.shape))
    Q = (Pi - M) * np.exp(-logZ)[:, None, None]
    return pi, np.exp(log_rates), Q


def batch_q_derivative(
    graph: WeightedGraph,
    k_batch: np.ndarray,
    pi: np.ndarray,
    rates: np.ndarray,
    Q: np.ndarray,
) -> np.ndarray:
    """dQ/dT_k for each batch row with its own k"""
    A = graph.adjacency
    n = graph.n_vertices
    mask = A[np.asarray(k_batch, dtype=int)]
    dL = A[None, :, :] * (rates * mask)[:, None, :]
    idx = np.arange(n)
    dL[:, idx, idx] = -dL.sum(axis=2)
    pi_tilde = np.repeat((pi * mask)[:, None, :], n, axis=1)
    return -Q @ dL @ Q - pi_tilde @ Q


# Reference profile and centered coordinates


@dataclass(frozen=True)
class ReferenceProfile:
    """
    Limit occupancy y* and weight offset kappa.

    T(t) = t y* + kappa + E with E -> 0 on complete graphs. Core logits
    equal C(t) + log y*_i + N_i(E) with C(t) = t (1 - 1/d) + offset.
    """

    y_star: np.ndarray
    kappa: np.ndarray
    offset: float
    d: int
    supported: bool

    def center(self, t, T) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.asarray(T, dtype=float) - t[..., None] * self.y_star - self.kappa

    def uncenter(self, t, E) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return t[..., None] * self.y_star + self.kappa + np.asarray(E, dtype=float)


def reference_profile(graph: WeightedGraph) -> ReferenceProfile:
    """
    Limit occupancy and offsets for the supported families.

    Each part p (a singleton for complete and complete-like graphs) gets
    occupancy 1/d split in proportion to weight, and its part time is offset
    by log(W_p) - mean_q log(W_q), W_p being the part's total weight.
    Leaves get zero occupancy and zero offset.
    """
    n = graph.n_vertices
    if graph.family not in PROFILE_FAMILIES:
        return ReferenceProfile(np.zeros(n), np.zeros(n), 0.0, graph.d, False)

    d = graph.d
    parts = graph.partition if graph.partition is not None else tuple((i,) for i in graph.core)
    w = np.asarray(graph.weights, dtype=float)
    part_totals = np.array([w[list(part)].sum() for part in parts])
    log_totals = np.log(part_totals)
    mean_log = log_totals.mean()

    y_star = np.zeros(n)
    kappa = np.zeros(n)
    for p, part in enumerate(parts):
        share = w[list(part)] / part_totals[p]
        y_star[list(part)] = share / d
        kappa[list(part)] = share * (log_totals[p] - mean_log)
    y_star.setflags(write=False)
    kappa.setflags(write=False)
    return ReferenceProfile(y_star, kappa, float(mean_log + np.log(d)), d, True)


def log_norm(values: np.ndarray) -> np.ndarray:
    """log of the L2 norm along the last axis, exact for tiny entries"""
    values = np.asarray(values, dtype=float)
    scale = np.abs(values).max(axis=-1)
    safe = np.where(scale > 0, scale, 1.0)
    ratio = values / safe[..., None]
    with np.errstate(divide='ignore'):
        return np.where(scale > 0, np.log(safe) + 0.5 * np.log(np.sum(ratio**2, axis=-1)), -np.inf)


def stationary_deviation(
    graph: WeightedGraph,
    t,
    E,
    profile: Optional[ReferenceProfile] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    pi(T), pi(T) - y* and log sum_x W_x e^{N_x(T)} from centered coordinates.

    Deviations keep full relative precision long after pi - y* drops below
    machine epsilon. Accepts a single state or batches (t shape (G,),
    E shape (G, V)).

    Returns:
        (pi, pi - y*, logZsum)
    """
    profile = profile or reference_profile(graph)
    t = np.asarray(t, dtype=float)
    E = np.asarray(E, dtype=float)

    if not profile.supported:
        log_rates = graph.log_weights + neighbor_sums(graph, E)
        logZ = logsumexp(log_rates, axis=-1)
        pi = np.exp(log_rates - np.expand_dims(logZ, -1))
        return pi, pi.copy(), logZ

    d = profile.d
    core = list(graph.core)
    y_core = profile.y_star[core]
    delta = neighbor_sums(graph, E)
    C = t * (1.0 - 1.0 / d) + profile.offset

    a = np.expm1(delta[..., core])
    mean_a = np.sum(y_core * a, axis=-1)

    pi = np.zeros(E.shape)
    dev = np.zeros(E.shape)
    leaf_sum = np.zeros(t.shape)
    u_leaves = {}
    for leaf, anchor in graph.leaf_anchor:
        rel = (
            graph.log_weights[leaf] + profile.kappa[anchor] + E[..., anchor]
            - profile.offset - t * (1.0 - 1.0 / d - profile.y_star[anchor])
        )
        u = np.exp(rel)
        u_leaves[leaf] = u
        leaf_sum = leaf_sum + u

    U = 1.0 + mean_a + leaf_sum
    dev[..., core] = y_core * (a - np.expand_dims(mean_a + leaf_sum, -1)) / np.expand_dims(U, -1)
    pi[..., core] = y_core * (1.0 + a) / np.expand_dims(U, -1)
    for leaf, u in u_leaves.items():
        pi[..., leaf] = u / U
        dev[..., leaf] = u / U
    logZ = C + np.log(U)
    return pi, dev, logZ


# Complete-like bound suite


def is_admissible(graph: WeightedGraph, T) -> bool:
    """W_j e^{T_n(j)} <= 2 W_n(j) e^{N_n(j)(T)} for every leaf j"""
    T = _as_local_times(graph, T)
    N = neighbor_sums(graph, T)
    lw = graph.log_weights
    return all(
        lw[leaf] + T[anchor] <= np.log(2.0) + lw[anchor] + N[anchor]
        for leaf, anchor in graph.leaf_anchor
    )


def complete_like_bound_ratios(graph: WeightedGraph, T) -> Dict[str, float]:
    """
    Ratio of each frozen-chain quantity to its bound expression.

    A constant C exists for every bound when these ratios stay bounded as
    T grows. Keys:
        core_hitting     E_i tau_x (i, x core) times W_x e^{N_x}
        leaf_hitting     E_i tau_y (i core, y leaf) over its bound
        leaf_to_leaf     E_j tau_y (j, y leaves) over its bound
        core_q           |Q_xy| (x, y core) times the total rate
        leaf_column_q    |Q_xy| (x core, y leaf) times W_n(y) e^{N_n(y)}
        any_q            |Q_xy| times min_core W_i e^{N_i}
        core_q_diff      |Q_xj - Q_yj| (x, y core) times the total rate
        leaf_q_diff      |Q_xj - Q_n(x)j| (x leaf) times W_n(x) e^{N_n(x)}
    """
    if graph.family not in ('complete', 'complete_like'):
        raise FamilyMismatchError("bound suite needs a complete-like graph")
    cm = generator(graph, T)
    Q = q_matrix(graph, T, cm=cm)
    H = hitting_time_matrix(graph, T, cm)
    rates = np.exp(cm.log_rates)
    total = np.exp(cm.logZsum)
    core = list(graph.core)
    leaves = list(graph.leaves)

    ratios = {
        'core_hitting': max(H[i, x] * rates[x] for i in core for x in core if i != x),
        'core_q': float(np.abs(Q[np.ix_(core, core)]).max() * total),
        'any_q': float(np.abs(Q).max() * rates[core].min()),
        'core_q_diff': max(
            float(np.abs(Q[x] - Q[y]).max()) * total for x in core for y in core if x != y
        ),
    }
    if leaves:
        leaf_hit, leaf_leaf, leaf_col, leaf_diff = [], [], [], []
        for y in leaves:
            ny = graph.anchor_of[y]
            bound_ii = total / (rates[y] * rates[ny])
            leaf_hit += [H[i, y] / bound_ii for i in core]
            leaf_col.append(float(np.abs(Q[core, y]).max() * rates[ny]))
            leaf_diff.append(float(np.abs(Q[y] - Q[ny]).max() * rates[ny]))
            for j in leaves:
                if j != y:
                    nj = graph.anchor_of[j]
                    leaf_leaf.append(H[j, y] / (1.0 / rates[nj] + bound_ii))
        ratios['leaf_hitting'] = max(leaf_hit)
        ratios['leaf_column_q'] = max(leaf_col)
        ratios['leaf_q_diff'] = max(leaf_diff)
        if leaf_leaf:
            ratios['leaf_to_leaf'] = max(leaf_leaf)
    return {key: float(value) for key, value in ratios.items()}


def centered_log_rates(
    graph: WeightedGraph,
    t: float,
    E: np.ndarray,
    profile: ReferenceProfile,
) -> np.ndarray:
    """log(W_x e^{N_x(T)}) for every vertex, evaluated from centered coordinates"""
    d = profile.d
    C = t * (1.0 - 1.0 / d) + profile.offset
    core = list(graph.core)
    out = np.empty(graph.n_vertices)
    delta = neighbor_sums(graph, E)
    with np.errstate(divide='ignore'):
        out[core] = C + np.log(profile.y_star[core]) + delta[core]
    for leaf, anchor in graph.leaf_anchor:
        out[leaf] = C + (
            graph.log_weights[leaf] + profile.kappa[anchor] + E[anchor]
            - profile.offset - t * (1.0 - 1.0 / d - profile.y_star[anchor])
        )
    return out
