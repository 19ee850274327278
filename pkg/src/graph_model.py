"""
Graph Model Module
Builds and validates the weighted graph families the walks run on:
complete graphs, complete-like graphs (a complete core plus leaves) and
complete multipartite graphs with leaves
"""

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from src.exceptions import (
    EmptyPartError,
    FamilyMismatchError,
    InvalidAnchorError,
    InvalidOrderError,
    InvalidWeightError,
)

logger = logging.getLogger(__name__)

FAMILIES = ('complete', 'complete_like', 'd_partite', 'general')


@dataclass(frozen=True)
class WeightedGraph:
    """
    Immutable vertex-weighted graph.

    Core vertices are 0..n_core-1, leaves are indexed after them. For
    multipartite graphs `partition` lists the parts of the core.
    """

    neighbors: Tuple[Tuple[int, ...], ...]
    weights: Tuple[float, ...]
    n_core: int
    leaf_anchor: Tuple[Tuple[int, int], ...] = ()
    partition: Optional[Tuple[Tuple[int, ...], ...]] = None
    family: str = 'general'
    flags: Tuple[str, ...] = field(default=(), compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.weights)

    @property
    def core(self) -> Tuple[int, ...]:
        return tuple(range(self.n_core))

    @property
    def leaves(self) -> Tuple[int, ...]:
        return tuple(leaf for leaf, _ in self.leaf_anchor)

    @property
    def d(self) -> int:
        """Number of parts (core size for complete and complete-like graphs)"""
        if self.partition is not None:
            return len(self.partition)
        return self.n_core

    @cached_property
    def anchor_of(self) -> Dict[int, int]:
        """Leaf -> anchor map n(j)"""
        return dict(self.leaf_anchor)

    @cached_property
    def leaves_of(self) -> Dict[int, Tuple[int, ...]]:
        """Anchor -> leaves attached to it"""
        table: Dict[int, List[int]] = {}
        for leaf, anchor in self.leaf_anchor:
            table.setdefault(anchor, []).append(leaf)
        return {anchor: tuple(leaves) for anchor, leaves in table.items()}

    def leaf_of(self, vertex: int) -> Optional[int]:
        """The unique leaf l(i) of a core vertex on a canonical graph, or None"""
        leaves = self.leaves_of.get(vertex, ())
        return leaves[0] if leaves else None

    def is_leaf(self, vertex: int) -> bool:
        return vertex in self.anchor_of

    def degree(self, vertex: int) -> int:
        return len(self.neighbors[vertex])

    @cached_property
    def part_of(self) -> Dict[int, int]:
        """Core vertex -> index of its part"""
        if self.partition is None:
            return {i: i for i in range(self.n_core)}
        return {v: p for p, part in enumerate(self.partition) for v in part}

    @cached_property
    def adjacency(self) -> np.ndarray:
        """Dense 0/1 adjacency matrix"""
        a = np.zeros((self.n_vertices, self.n_vertices))
        for i, nbrs in enumerate(self.neighbors):
            a[i, list(nbrs)] = 1.0
        a.setflags(write=False)
        return a

    @cached_property
    def log_weights(self) -> np.ndarray:
        lw = np.log(np.asarray(self.weights, dtype=float))
        lw.setflags(write=False)
        return lw

    @cached_property
    def log_weight_list(self) -> List[float]:
        return self.log_weights.tolist()

    @property
    def edges(self) -> List[Tuple[int, int]]:
        return [(i, j) for i, nbrs in enumerate(self.neighbors) for j in nbrs if i < j]

    @property
    def is_canonical(self) -> bool:
        """True when every core vertex carries at most one leaf"""
        return all(len(leaves) <= 1 for leaves in self.leaves_of.values())

    def with_weights(self, weights: Sequence[float]) -> 'WeightedGraph':
        """Same structure with a new weight vector"""
        new_weights = _check_weights(weights, self.n_vertices, 'weights')
        return replace(self, weights=new_weights)

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        for i, w in enumerate(self.weights):
            g.add_node(i, weight=w, leaf=self.is_leaf(i))
        g.add_edges_from(self.edges)
        return g

    def validate(self) -> List[str]:
        """
        Check every structural invariant.

        Returns:
            List of human-readable issues; empty when the graph is valid
        """
        issues = []
        n = self.n_vertices

        for i, nbrs in enumerate(self.neighbors):
            if i in nbrs:
                issues.append(f"vertex {i} is adjacent to itself")
            for j in nbrs:
                if not 0 <= j < n:
                    issues.append(f"vertex {i} lists unknown neighbor {j}")
                elif i not in self.neighbors[j]:
                    issues.append(f"edge {i}-{j} is not symmetric")

        for i, w in enumerate(self.weights):
            if not (np.isfinite(w) and w > 0):
                issues.append(f"vertex {i} has invalid weight {w}")

        if n > 0 and not nx.is_connected(self.to_networkx()):
            issues.append("graph is not connected")

        for leaf, anchor in self.leaf_anchor:
            if anchor >= self.n_core:
                issues.append(f"leaf {leaf} anchored outside the core at {anchor}")
            if self.neighbors[leaf] != (anchor,):
                issues.append(f"leaf {leaf} must have exactly one neighbor {anchor}")

        if not self.is_canonical:
            shared = sorted(a for a, leaves in self.leaves_of.items() if len(leaves) > 1)
            issues.append(f"core vertices {shared} carry several leaves (run glue_leaves)")

        if self.partition is not None:
            seen = sorted(v for part in self.partition for v in part)
            if seen != list(range(self.n_core)):
                issues.append("partition does not cover the core exactly once")
            for i in range(self.n_core):
                core_nbrs = {j for j in self.neighbors[i] if j < self.n_core}
                expected = {j for j in range(self.n_core) if self.part_of[j] != self.part_of[i]}
                if core_nbrs != expected:
                    issues.append(f"vertex {i} is not joined to exactly the other parts")

        return issues

    def invariant_report(self) -> Dict:
        """Summary used by the `graph validate` command"""
        issues = self.validate()
        return {
            'family': self.family,
            'vertices': self.n_vertices,
            'core_size': self.n_core,
            'parts': [list(p) for p in self.partition] if self.partition else None,
            'leaves': {str(leaf): anchor for leaf, anchor in self.leaf_anchor},
            'edges': len(self.edges),
            'degrees': [self.degree(i) for i in range(self.n_vertices)],
            'weights': list(self.weights),
            'canonical': self.is_canonical,
            'flags': list(self.flags),
            'issues': issues,
            'valid': not issues,
        }


def _check_weights(weights: Iterable[float], expected: int, label: str) -> Tuple[float, ...]:
    values = tuple(float(w) for w in weights)
    if len(values) != expected:
        raise InvalidWeightError(f"{label} has length {len(values)}, expected {expected}")
    for i, w in enumerate(values):
        if not (np.isfinite(w) and w > 0):
            raise InvalidWeightError(f"{label}[{i}] = {w} is not a positive finite weight")
    return values


def _attach_leaves(
    core_neighbors: List[List[int]],
    n_core: int,
    leaves: Sequence[Tuple[int, float]],
) -> Tuple[List[List[int]], Tuple[Tuple[int, int], ...], List[float]]:
    neighbors = [list(nbrs) for nbrs in core_neighbors]
    leaf_anchor = []
    leaf_weights = []
    for k, (anchor, weight) in enumerate(leaves):
        anchor = int(anchor)
        if not 0 <= anchor < n_core:
            raise InvalidAnchorError(f"leaf {k} anchored at {anchor}, core is 0..{n_core - 1}")
        leaf = n_core + k
        neighbors[anchor].append(leaf)
        neighbors.append([anchor])
        leaf_anchor.append((leaf, anchor))
        leaf_weights.append(weight)
    return neighbors, tuple(leaf_anchor), leaf_weights


def _freeze(neighbors: List[List[int]]) -> Tuple[Tuple[int, ...], ...]:
    return tuple(tuple(sorted(nbrs)) for nbrs in neighbors)


def build_complete(d: int, weights: Sequence[float]) -> WeightedGraph:
    """
    Complete graph K_d with vertex weights.

    Args:
        d: Number of vertices, at least 2
        weights: Positive weight per vertex
    """
    if int(d) != d or d < 2:
        raise InvalidOrderError(f"complete graph needs d >= 2, got {d}")
    d = int(d)
    w = _check_weights(weights, d, 'weights')
    neighbors = [[j for j in range(d) if j != i] for i in range(d)]
    return WeightedGraph(neighbors=_freeze(neighbors), weights=w, n_core=d, family='complete')


def build_complete_like(
    d: int,
    core_weights: Sequence[float],
    leaves: Sequence[Tuple[int, float]] = (),
) -> WeightedGraph:
    """
    Complete core K_d plus leaves attached by single edges.

    Several leaves may share an anchor; glue_leaves merges them. Without
    leaves the result equals build_complete(d, core_weights).

    Args:
        d: Core order (d >= 3 for the convergence results, d = 2 is flagged)
        core_weights: Positive weight per core vertex
        leaves: (anchor, weight) pairs, anchors in 0..d-1
    """
    if not leaves:
        return build_complete(d, core_weights)
    if int(d) != d or d < 2:
        raise InvalidOrderError(f"complete-like graph needs d >= 2, got {d}")
    d = int(d)
    core_w = _check_weights(core_weights, d, 'core_weights')
    _check_weights([w for _, w in leaves], len(leaves), 'leaf weights')

    core_neighbors = [[j for j in range(d) if j != i] for i in range(d)]
    neighbors, leaf_anchor, leaf_w = _attach_leaves(core_neighbors, d, leaves)
    flags = ('d<3',) if d < 3 else ()
    if flags:
        logger.warning(f"complete-like graph with d={d}: convergence results need d >= 3")
    return WeightedGraph(
        neighbors=_freeze(neighbors),
        weights=core_w + tuple(float(w) for w in leaf_w),
        n_core=d,
        leaf_anchor=leaf_anchor,
        family='complete_like',
        flags=flags,
    )


def build_d_partite(
    part_sizes: Sequence[int],
    core_weights: Sequence[float],
    leaves: Sequence[Tuple[int, float]] = (),
) -> WeightedGraph:
    """
    Complete multipartite graph with optional leaves.

    Core vertices are numbered part by part: part 0 holds 0..part_sizes[0]-1.

    Args:
        part_sizes: Size of each part, at least two parts
        core_weights: Positive weight per core vertex
        leaves: (anchor, weight) pairs, anchors are core indices
    """
    sizes = [int(s) for s in part_sizes]
    if len(sizes) < 2:
        raise InvalidOrderError(f"need at least 2 parts, got {len(sizes)}")
    if any(s < 1 for s in sizes):
        raise EmptyPartError(f"every part needs a vertex, got sizes {sizes}")

    n_core = sum(sizes)
    core_w = _check_weights(core_weights, n_core, 'core_weights')
    if leaves:
        _check_weights([w for _, w in leaves], len(leaves), 'leaf weights')

    partition = []
    start = 0
    for size in sizes:
        partition.append(tuple(range(start, start + size)))
        start += size
    part_of = {v: p for p, part in enumerate(partition) for v in part}

    core_neighbors = [
        [j for j in range(n_core) if part_of[j] != part_of[i]] for i in range(n_core)
    ]
    neighbors, leaf_anchor, leaf_w = _attach_leaves(core_neighbors, n_core, leaves)
    return WeightedGraph(
        neighbors=_freeze(neighbors),
        weights=core_w + tuple(float(w) for w in leaf_w),
        n_core=n_core,
        leaf_anchor=leaf_anchor,
        partition=tuple(partition),
        family='d_partite',
    )


def build_general(
    n_vertices: int,
    edges: Sequence[Tuple[int, int]],
    weights: Sequence[float],
) -> WeightedGraph:
    """
    Arbitrary connected graph for the simulation engines only.

    Analysis routines refuse this family.
    """
    w = _check_weights(weights, n_vertices, 'weights')
    neighbors: List[List[int]] = [[] for _ in range(n_vertices)]
    for i, j in edges:
        if i == j or not (0 <= i < n_vertices and 0 <= j < n_vertices):
            raise InvalidOrderError(f"invalid edge ({i}, {j})")
        if j not in neighbors[i]:
            neighbors[i].append(j)
            neighbors[j].append(i)
    graph = WeightedGraph(neighbors=_freeze(neighbors), weights=w, n_core=n_vertices)
    if not nx.is_connected(graph.to_networkx()):
        raise InvalidOrderError("graph is not connected")
    return graph


def glue_leaves_with_map(g: WeightedGraph) -> Tuple[WeightedGraph, Tuple[int, ...]]:
    """
    Merge leaves sharing an anchor into one leaf carrying the summed weight.

    Merged leaves keep the position of their first member; distinct anchors
    keep their order, so canonical graphs come back unchanged.

    Returns:
        (glued graph, remap) where remap[old_vertex] is the new index
    """
    if g.is_canonical:
        return g, tuple(range(g.n_vertices))

    merged_weight: Dict[int, float] = {}
    order: List[int] = []
    for leaf, anchor in g.leaf_anchor:
        if anchor not in merged_weight:
            order.append(anchor)
            merged_weight[anchor] = 0.0
        merged_weight[anchor] += g.weights[leaf]

    new_index = {anchor: g.n_core + k for k, anchor in enumerate(order)}
    remap = list(range(g.n_core)) + [new_index[anchor] for _, anchor in g.leaf_anchor]

    neighbors = [[j for j in g.neighbors[i] if j < g.n_core] for i in range(g.n_core)]
    for anchor in order:
        neighbors[anchor].append(new_index[anchor])
    neighbors += [[anchor] for anchor in order]

    glued = WeightedGraph(
        neighbors=_freeze(neighbors),
        weights=g.weights[:g.n_core] + tuple(merged_weight[a] for a in order),
        n_core=g.n_core,
        leaf_anchor=tuple((new_index[a], a) for a in order),
        partition=g.partition,
        family=g.family,
        flags=g.flags,
    )
    logger.debug(f"Glued {len(g.leaf_anchor)} leaves into {len(order)}")
    return glued, tuple(remap)


def glue_leaves(g: WeightedGraph) -> WeightedGraph:
    """Canonical form of g: at most one leaf per core vertex"""
    return glue_leaves_with_map(g)[0]


def collapse_parts(g: WeightedGraph) -> WeightedGraph:
    """
    Complete graph on the parts of a leafless multipartite graph.

    Each part becomes one vertex whose weight is the part's total weight;
    part sums of local times evolve as a walk on this graph.
    """
    if g.family != 'd_partite' or g.leaf_anchor:
        raise FamilyMismatchError("collapse_parts needs a leafless d-partite graph")
    part_weights = [sum(g.weights[v] for v in part) for part in g.partition]
    return build_complete(len(part_weights), part_weights)


def require_family(g: WeightedGraph, *families: str, min_d: int = 0) -> None:
    """Raise FamilyMismatchError unless g belongs to one of `families`"""
    if g.family not in families:
        raise FamilyMismatchError(f"operation supports {families}, got {g.family}")
    if g.d < min_d:
        raise FamilyMismatchError(f"operation needs d >= {min_d}, got d={g.d}")
    if not g.is_canonical:
        raise FamilyMismatchError("graph has shared leaves; run glue_leaves first")
