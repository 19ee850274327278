"""
Diffusion Module
Long-horizon continuation of a walk once its jump rate makes exact
simulation impractical. Local times follow dT = pi(T) dt + dM with the
martingale covariance of the frozen chain; leaves and visit counts get
exact Poisson-driven increments. All state is held in centered
coordinates so deviations from the limit keep full precision.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from src.chain_numerics import (
    ReferenceProfile,
    centered_log_rates,
    reference_profile,
    scaled_q_matrix,
    stationary_deviation,
)
from src.config import SIMULATION_DEFAULTS
from src.exceptions import FamilyMismatchError
from src.graph_model import WeightedGraph
from src.sampling import PURPOSE_DIFFUSION, RngStream

logger = logging.getLogger(__name__)

# Above this mean the Poisson and Gamma draws use their normal limits
NORMAL_LIMIT = 1e7


@dataclass
class DiffusionResult:
    """Grid rows produced by the diffusion regime"""

    grid: np.ndarray
    E: np.ndarray
    Y: np.ndarray
    steps: int


class DiffusionIntegrator:
    """
    Euler-Maruyama integrator for the occupation dynamics of a walk.

    One step of length h from (t, E):
        core   dE = (pi - y*) h + sqrt(h) Sigma^{1/2} z + r y*
        leaf j dT_j = Gamma(K) / (W_n e^{N_n}),  K ~ Poisson(h pi_n W_j e^{N_j})
        visits dY_x ~ Poisson(W_x e^{N_x} (e^{dN_x} - 1))
    Sigma = -(diag(pi) Q + Q^T diag(pi)) on the core and r restores
    sum_i dT_i = h.
    """

    def __init__(
        self,
        graph: WeightedGraph,
        rng: RngStream,
        dt: Optional[float] = None,
        stochastic: bool = True,
        profile: Optional[ReferenceProfile] = None,
    ):
        self.graph = graph
        self.profile = profile or reference_profile(graph)
        if not self.profile.supported:
            raise FamilyMismatchError(
                f"diffusion regime needs a complete, complete-like or d-partite graph, got {graph.family}"
            )
        self.dt = dt or SIMULATION_DEFAULTS['diffusion_dt']
        self.stochastic = stochastic
        self.gen = rng.child(purpose=PURPOSE_DIFFUSION).generator
        self.core = np.array(graph.core)
        self.leaves = [(leaf, anchor) for leaf, anchor in graph.leaf_anchor]
        self.y_core = self.profile.y_star[self.core]

    def _poisson(self, mean: np.ndarray) -> np.ndarray:
        mean = np.maximum(mean, 0.0)
        small = mean < NORMAL_LIMIT
        out = np.empty_like(mean)
        out[small] = self.gen.poisson(mean[small])
        big = ~small
        if big.any():
            out[big] = np.maximum(mean[big] + np.sqrt(mean[big]) * self.gen.standard_normal(big.sum()), 0.0)
        return out

    def _gamma_total(self, count: float) -> float:
        if count <= 0:
            return 0.0
        if count > NORMAL_LIMIT:
            return max(count + np.sqrt(count) * self.gen.standard_normal(), 0.0)
        return float(self.gen.standard_gamma(count))

    def step(self, t: float, E: np.ndarray, Y: np.ndarray, h: float):
        """Advance (E, Y) from t to t + h in place"""
        graph = self.graph
        pi, dev, logZ = stationary_deviation(graph, t, E, self.profile)
        logZ = float(logZ)
        log_rates = centered_log_rates(graph, t, E, self.profile)

        dT_leaf = np.zeros(graph.n_vertices)
        leaf_visits = {}
        for leaf, anchor in self.leaves:
            mean = h * pi[anchor] * np.exp(log_rates[leaf])
            count = float(self._poisson(np.array([mean]))[0]) if self.stochastic else mean
            leaf_visits[leaf] = count
            dT_leaf[leaf] = (
                self._gamma_total(count) if self.stochastic else count
            ) * np.exp(-log_rates[anchor])

        core = self.core
        noise = np.zeros(len(core))
        if self.stochastic:
            Qs = scaled_q_matrix(graph.adjacency, pi)
            cov = -(pi[:, None] * Qs + Qs.T * pi[None, :])
            cov_core = cov[np.ix_(core, core)]
            vals, vecs = linalg.eigh((cov_core + cov_core.T) / 2.0)
            root = vecs * np.sqrt(np.clip(vals, 0.0, None))[None, :]
            noise = root @ self.gen.standard_normal(len(core)) * np.sqrt(h * np.exp(-logZ))

        leaf_pi = sum(pi[leaf] for leaf, _ in self.leaves)
        residual = h * leaf_pi - dT_leaf.sum() - noise.sum()
        dE_core = dev[core] * h + noise + residual * self.y_core

        dT = dT_leaf.copy()
        dT[core] = self.y_core * h + dE_core
        dN = dT @ graph.adjacency

        core_mean = np.exp(log_rates[core]) * np.expm1(dN[core])
        Y[core] += self._poisson(core_mean) if self.stochastic else core_mean
        for leaf, count in leaf_visits.items():
            Y[leaf] += count

        E[core] += dE_core
        for leaf, _ in self.leaves:
            E[leaf] += dT_leaf[leaf]

    def run(
        self,
        t0: float,
        T0: np.ndarray,
        Y0: np.ndarray,
        horizon: float,
        grid: np.ndarray,
    ) -> DiffusionResult:
        """
        Integrate from an exact state at t0 to the horizon.

        Args:
            t0: Hand-over time
            T0: Local times at t0
            Y0: Visit counts at t0
            grid: Record times in (t0, horizon]
        """
        E = self.profile.center(t0, np.asarray(T0, dtype=float)).copy()
        Y = np.asarray(Y0, dtype=float).copy()
        grid = np.asarray(grid, dtype=float)
        rows_E = np.zeros((len(grid), self.graph.n_vertices))
        rows_Y = np.zeros_like(rows_E)

        t = float(t0)
        steps = 0
        k = 0
        while k < len(grid) and grid[k] <= t:
            rows_E[k], rows_Y[k] = E, Y
            k += 1
        while t < horizon and k < len(grid):
            h = min(self.dt, grid[k] - t)
            if h <= 0:
                rows_E[k], rows_Y[k] = E, Y
                k += 1
                continue
            self.step(t, E, Y, h)
            t = grid[k] if h == grid[k] - t else t + h
            steps += 1
            while k < len(grid) and grid[k] <= t:
                rows_E[k], rows_Y[k] = E, Y
                k += 1

        logger.debug(f"Diffusion regime: {steps} steps from t={t0:.3f} to t={t:.3f}")
        return DiffusionResult(grid=grid, E=rows_E, Y=rows_Y, steps=steps)
