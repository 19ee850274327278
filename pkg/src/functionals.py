"""
Functionals Module
Closed catalogue of smooth functions f(T) for the pathwise decomposition.
Each entry supplies its value, gradient and the derivative of the gradient
along one coordinate, vectorized over batches of local-time rows.
"""

import logging
import re
from typing import Dict, Optional, Type

import numpy as np
from scipy.special import logsumexp

from src.exceptions import FamilyMismatchError, UnknownFunctionalError
from src.graph_model import WeightedGraph

logger = logging.getLogger(__name__)


def _pi_batch(graph: WeightedGraph, T: np.ndarray) -> np.ndarray:
    log_rates = graph.log_weights + T @ graph.adjacency
    return np.exp(log_rates - logsumexp(log_rates, axis=1, keepdims=True))


def _pi_derivative(graph: WeightedGraph, pi: np.ndarray, k: np.ndarray) -> np.ndarray:
    """d pi / d T_k for each row: pi * (A[:, k] - (A pi)_k)"""
    A = graph.adjacency
    rows = np.arange(len(k))
    s_k = (pi @ A)[rows, k]
    return pi * (A[:, k].T - s_k[:, None])


class Functional:
    """Base class: f, grad f and d/dT_k grad f on (B, V) batches"""

    name = 'base'

    def __init__(self, graph: WeightedGraph):
        self.graph = graph

    def value(self, T: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, T: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_derivative(self, T: np.ndarray, k: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def label(self) -> str:
        return self.name


class Constant(Functional):
    name = 'constant'

    def __init__(self, graph: WeightedGraph, level: float = 1.0):
        super().__init__(graph)
        self.level = float(level)

    def value(self, T):
        return np.full(len(T), self.level)

    def grad(self, T):
        return np.zeros_like(T)

    def grad_derivative(self, T, k):
        return np.zeros_like(T)


class Coordinate(Functional):
    """f(T) = T_i"""

    name = 'coordinate'

    def __init__(self, graph: WeightedGraph, vertex: int = 0):
        super().__init__(graph)
        if not 0 <= vertex < graph.n_vertices:
            raise ValueError(f"vertex {vertex} outside 0..{graph.n_vertices - 1}")
        self.vertex = int(vertex)

    @property
    def label(self) -> str:
        return f"T_{self.vertex}"

    def value(self, T):
        return T[:, self.vertex].copy()

    def grad(self, T):
        g = np.zeros_like(T)
        g[:, self.vertex] = 1.0
        return g

    def grad_derivative(self, T, k):
        return np.zeros_like(T)


class Entropy(Functional):
    """f(T) = H(pi(T)) = pi^T A pi"""

    name = 'entropy'

    def value(self, T):
        pi = _pi_batch(self.graph, T)
        return np.einsum('bi,bi->b', pi, pi @ self.graph.adjacency)

    def grad(self, T):
        A = self.graph.adjacency
        pi = _pi_batch(self.graph, T)
        s = pi @ A
        u = pi * s
        H = u.sum(axis=1)
        return 2.0 * (u @ A - H[:, None] * s)

    def grad_derivative(self, T, k):
        A = self.graph.adjacency
        pi = _pi_batch(self.graph, T)
        s = pi @ A
        u = pi * s
        H = u.sum(axis=1)
        dpi = _pi_derivative(self.graph, pi, np.asarray(k, dtype=int))
        ds = dpi @ A
        du = dpi * s + pi * ds
        dH = 2.0 * np.einsum('bi,bi->b', dpi, s)
        return 2.0 * (du @ A - dH[:, None] * s - H[:, None] * ds)


class Lyapunov(Functional):
    """
    f(T) = c . T - log sum_x W_x e^{N_x(T)} + const.

    On complete and complete-like graphs this is (1/d) sum_{i in core} log pi_i;
    on multipartite graphs the part-based form with c_k = (d-1)/d on the core.
    """

    name = 'lyapunov'

    def __init__(self, graph: WeightedGraph):
        super().__init__(graph)
        d = graph.d
        core = list(graph.core)
        if graph.family in ('complete', 'complete_like'):
            self.c = graph.adjacency[core].sum(axis=0) / d
            self.const = float(graph.log_weights[core].sum() / d)
        elif graph.family == 'd_partite':
            self.c = np.zeros(graph.n_vertices)
            self.c[core] = (d - 1) / d
            totals = [sum(graph.weights[v] for v in part) for part in graph.partition]
            self.const = float(np.log(totals).sum() / d)
        else:
            raise FamilyMismatchError(f"V is undefined on {graph.family} graphs")

    def value(self, T):
        log_rates = self.graph.log_weights + T @ self.graph.adjacency
        return T @ self.c + self.const - logsumexp(log_rates, axis=1)

    def grad(self, T):
        pi = _pi_batch(self.graph, T)
        return self.c[None, :] - pi @ self.graph.adjacency

    def grad_derivative(self, T, k):
        pi = _pi_batch(self.graph, T)
        dpi = _pi_derivative(self.graph, pi, np.asarray(k, dtype=int))
        return -(dpi @ self.graph.adjacency)


class Contrast(Functional):
    """f(T) = W_i e^{T_j + T_l(i)} - W_j e^{T_i + T_l(j)}; a missing leaf contributes 0"""

    name = 'contrast'

    def __init__(self, graph: WeightedGraph, i: int = 0, j: int = 1):
        super().__init__(graph)
        if graph.family not in ('complete', 'complete_like'):
            raise FamilyMismatchError("contrast needs a complete or complete-like graph")
        if i == j or not (0 <= i < graph.n_core and 0 <= j < graph.n_core):
            raise ValueError(f"contrast needs two distinct core vertices, got ({i}, {j})")
        self.i, self.j = int(i), int(j)
        self.plus = [self.j] + ([graph.leaf_of(i)] if graph.leaf_of(i) is not None else [])
        self.minus = [self.i] + ([graph.leaf_of(j)] if graph.leaf_of(j) is not None else [])
        self.w_i = graph.weights[i]
        self.w_j = graph.weights[j]

    @property
    def label(self) -> str:
        return f"contrast_{self.i}_{self.j}"

    def _terms(self, T):
        first = self.w_i * np.exp(T[:, self.plus].sum(axis=1))
        second = self.w_j * np.exp(T[:, self.minus].sum(axis=1))
        return first, second

    def value(self, T):
        first, second = self._terms(T)
        return first - second

    def grad(self, T):
        first, second = self._terms(T)
        g = np.zeros_like(T)
        g[:, self.plus] += first[:, None]
        g[:, self.minus] -= second[:, None]
        return g

    def grad_derivative(self, T, k):
        k = np.asarray(k, dtype=int)
        first, second = self._terms(T)
        in_plus = np.isin(k, self.plus).astype(float)
        in_minus = np.isin(k, self.minus).astype(float)
        g = np.zeros_like(T)
        g[:, self.plus] += (first * in_plus)[:, None]
        g[:, self.minus] -= (second * in_minus)[:, None]
        return g


FUNCTIONALS: Dict[str, Type[Functional]] = {
    'constant': Constant,
    'coordinate': Coordinate,
    'entropy': Entropy,
    'lyapunov': Lyapunov,
    'contrast': Contrast,
}

_ALIASES = {'H': 'entropy', 'V': 'lyapunov', 'const': 'constant'}


def get_functional(name: str, graph: WeightedGraph, **params) -> Functional:
    """
    Instantiate a catalogue entry.

    Raises:
        UnknownFunctionalError: name not in the catalogue
    """
    key = _ALIASES.get(name, name)
    if key not in FUNCTIONALS:
        raise UnknownFunctionalError(
            f"unknown functional '{name}'; choose from {sorted(FUNCTIONALS)}"
        )
    return FUNCTIONALS[key](graph, **params)


def parse_functional(text: str, graph: WeightedGraph) -> Functional:
    """
    Parse the compact form used by configs and the CLI.

    Accepted: 'constant', 'T_3' / 'T3', 'H', 'V', 'contrast:0,1'.
    """
    text = text.strip()
    match = re.fullmatch(r'T_?(\d+)', text)
    if match:
        return get_functional('coordinate', graph, vertex=int(match.group(1)))
    name, _, args = text.partition(':')
    params: Dict[str, Optional[int]] = {}
    if args:
        try:
            values = [int(v) for v in args.split(',')]
        except ValueError as e:
            raise UnknownFunctionalError(f"bad functional arguments in '{text}'") from e
        if name == 'coordinate' and len(values) == 1:
            params = {'vertex': values[0]}
        elif name == 'contrast' and len(values) == 2:
            params = {'i': values[0], 'j': values[1]}
        else:
            raise UnknownFunctionalError(f"bad functional arguments in '{text}'")
    return get_functional(name, graph, **params)
