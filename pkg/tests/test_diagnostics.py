"""
Unit tests for diagnostics
Tests the entropy and Lyapunov functionals, the pathwise decomposition and
the rate and limit estimators
"""

import math

import numpy as np
import pytest
from src.diagnostics import (
    ProbVector,
    decompose_trajectory,
    dissipation_J,
    entropy_H,
    exact_phase_row,
    fit_exponential_rate,
    k3_scaled_growth,
    leaf_exponent,
    leaf_visit_ratio,
    limit_occupancy,
    lyapunov_V,
    optimality_exceedance,
    part_mass_bound,
    sandwich_constants,
    summarize_ensemble,
    t_over_d_limit,
    visit_ratio,
    vrrw_distance_series,
    within_part_ratios,
    z_star,
)
from src.exceptions import FamilyMismatchError, InsufficientSamplesError
from src.functionals import Constant, Lyapunov, parse_functional
from src.graph_model import build_complete, build_complete_like, build_d_partite
from src.sampling import RngStream
from src.walkers import make_grid, run_cvrrw, run_vrrw


@pytest.fixture
def k3():
    return build_complete(3, [1.0, 2.0, 3.0])


@pytest.fixture
def k3_traj(k3):
    """Exact K_3 trajectory with its event log"""
    return run_cvrrw(k3, 0, 3.0, make_grid(3.0, 31), 'direct', RngStream(17))


class TestLyapunovFunctionals:
    """Test suite for H, J and V"""

    def test_prob_vector_validation(self):
        assert len(ProbVector([0.5, 0.5])) == 2
        with pytest.raises(ValueError):
            ProbVector([0.5, 0.6])
        with pytest.raises(ValueError):
            ProbVector([1.5, -0.5])

    def test_entropy_maximized_at_z_star(self):
        """Test H(z*) = 1 - 1/d and J(z*) = 0 on K_4"""
        g = build_complete(4, [1.0] * 4)
        z = z_star(g)
        assert entropy_H(z, g) == pytest.approx(0.75)
        assert dissipation_J(z, g) == pytest.approx(0.0, abs=1e-15)
        assert entropy_H([0.4, 0.2, 0.2, 0.2], g) < 0.75

    def test_sandwich_brackets_two_over_d(self):
        """Test that J / (H(z*) - H) stays near 2/d close to z*"""
        g = build_complete(4, [1.0] * 4)
        C1, C2 = sandwich_constants(g, delta=0.05, samples=300)
        assert 0.4 < C1 <= 0.5 <= C2 < 0.6

    def test_z_star_and_limit_occupancy(self):
        g = build_complete_like(3, [1.0] * 3, [(0, 1.0)])
        np.testing.assert_allclose(z_star(g).values, [1 / 3, 1 / 3, 1 / 3, 0.0])

        multi = build_d_partite([2, 1], [1.0, 3.0, 2.0])
        np.testing.assert_allclose(limit_occupancy(multi).values, [0.125, 0.375, 0.5])
        with pytest.raises(FamilyMismatchError):
            z_star(multi)

    @pytest.mark.parametrize('graph', [
        build_complete_like(3, [1.0, 2.0, 1.5], [(1, 0.5)]),
        build_d_partite([2, 1, 1], [1.0, 3.0, 2.0, 1.0]),
    ])
    def test_v_matches_functional(self, graph):
        """Test the scalar V against the vectorized catalogue entry"""
        T = np.linspace(0.2, 1.0, graph.n_vertices)
        assert lyapunov_V(graph, T) == pytest.approx(Lyapunov(graph).value(T[None, :])[0], rel=1e-12)

    def test_part_mass_bound_tight_without_leaves(self):
        """Test that V equals its part-mass bound when no leaves hang on the graph"""
        g = build_d_partite([2, 1, 1], [1.0, 3.0, 2.0, 1.0])
        T = np.array([0.3, 0.1, 0.9, 0.4])
        assert part_mass_bound(g, T) == pytest.approx(lyapunov_V(g, T), rel=1e-12)

    def test_part_mass_bound_with_leaf(self):
        g = build_d_partite([2, 1, 1], [1.0, 3.0, 2.0, 1.0], [(2, 1.0)])
        T = np.array([0.3, 0.1, 0.9, 0.4, 0.2])
        assert lyapunov_V(g, T) <= part_mass_bound(g, T) + 1e-12

    def test_multipartite_v_uses_part_total_weight(self):
        """Test V on a multipartite graph against the hand-computed part-total form"""
        W = [1.0, 3.0, 2.0, 1.0]
        g = build_d_partite([2, 1, 1], W)
        T = np.array([0.3, 0.1, 0.9, 0.4])
        log_rates = np.log(W) + T @ g.adjacency
        expected = -np.log(np.exp(log_rates).sum()) + (
            (1.3 + math.log(4.0)) + (0.8 + math.log(2.0)) + (1.3 + math.log(1.0))
        ) / 3
        assert lyapunov_V(g, T) == pytest.approx(expected, rel=1e-12)

    def test_singleton_parts_match_sum_of_log_weights(self):
        """Test that with one vertex per part V reduces to the sum-of-log-weights form"""
        W = [1.5, 0.5, 2.0]
        g = build_d_partite([1, 1, 1], W)
        T = np.array([0.2, 0.7, 0.4])
        log_rates = np.log(W) + T @ g.adjacency
        expected = -np.log(np.exp(log_rates).sum()) + sum(
            T.sum() - T[q] + math.log(W[q]) for q in range(3)
        ) / 3
        assert lyapunov_V(g, T) == pytest.approx(expected, rel=1e-12)


class TestDecomposition:
    """Test suite for the pathwise decomposition"""

    @pytest.mark.parametrize('text', ['T_1', 'H', 'V'])
    def test_identity_holds(self, k3, k3_traj, text):
        """Test that the rearranged identity closes and quadrature is converged"""
        report = decompose_trajectory(k3_traj, k3, parse_functional(text, k3))

        assert np.abs(report.identity_gap()).max() < 1e-9
        assert report.richardson_error < 1e-6
        assert np.all(np.diff(report.qv) >= -1e-12)
        assert report.n_segments >= k3_traj.n_events

    def test_constant_has_no_terms(self, k3, k3_traj):
        report = decompose_trajectory(k3_traj, k3, Constant(k3))
        assert np.abs(report.residual).max() < 1e-12
        assert np.abs(report.qv).max() == 0.0

    def test_frame_columns(self, k3, k3_traj):
        frame = decompose_trajectory(k3_traj, k3, parse_functional('T_0', k3)).to_frame()
        assert 'M_f' in frame.columns
        assert len(frame) == len(k3_traj.grid)

    def test_needs_event_log(self, k3):
        traj = run_cvrrw(k3, 0, 1.0, make_grid(1.0, 5), 'direct', RngStream(1), keep_events=False)
        with pytest.raises(ValueError):
            decompose_trajectory(traj, k3, Constant(k3))


class TestEstimators:
    """Test suite for rate and limit estimators"""

    def test_fit_recovers_slope(self):
        t = np.linspace(0.0, 20.0, 101)
        fit = fit_exponential_rate(t, 3.0 * np.exp(-0.5 * t))
        assert fit.slope == pytest.approx(-0.5, rel=1e-9)
        assert fit.window == (10.0, 20.0)

    def test_fit_log_values_and_range(self):
        t = np.arange(101.0)
        fit = fit_exponential_rate(t, log_values=-0.25 * t, t_range=(20.0, 50.0))
        assert fit.slope == pytest.approx(-0.25)
        assert fit.n_points == 31

    def test_fit_errors(self):
        t = np.linspace(0.0, 1.0, 5)
        with pytest.raises(InsufficientSamplesError):
            fit_exponential_rate(t, np.ones(5))
        with pytest.raises(ValueError):
            fit_exponential_rate(np.arange(20.0), np.zeros(20))

    def test_leaf_exponent(self):
        """Test that the leaf count grows sublinearly on K_4 plus a leaf"""
        g = build_complete_like(4, [1.0] * 4, [(0, 1.0)])
        run = run_vrrw(g, 0, [1.0] * 5, 20000, RngStream(12), keep_path=False)
        result = leaf_exponent(run, g, 4)

        assert 0.0 < result.slope < 1.0
        assert 0.0 < result.core_frequency < 1.0
        assert result.predicted == pytest.approx(4.0 / 3.0 * result.core_frequency)
        with pytest.raises(ValueError):
            leaf_exponent(run, g, 0)

    def test_vrrw_distance_series(self):
        g = build_complete(3, [1.0] * 3)
        run = run_vrrw(g, 0, [1.0] * 3, 1000, RngStream(2), keep_path=False)
        log_n, log_dist = vrrw_distance_series(run, g)
        assert len(log_n) == len(log_dist)
        assert np.all(np.isfinite(log_dist))

    def test_t_over_d_needs_d4(self, k3_traj, k3):
        with pytest.raises(FamilyMismatchError):
            t_over_d_limit(k3_traj, k3)

    def test_t_over_d_frame(self):
        g = build_complete(4, [1.0, 2.0, 3.0, 4.0])
        traj = run_cvrrw(g, 0, 2.0, make_grid(2.0, 5), 'direct', RngStream(3))
        frame = t_over_d_limit(traj, g)
        assert list(frame['vertex_id']) == [0, 1, 2, 3]
        assert frame['predicted'].sum() == pytest.approx(0.0, abs=1e-12)

    def test_k3_scaled_growth(self, k3_traj):
        growth = k3_scaled_growth(k3_traj, kappa=0.75)
        assert np.all(np.diff(growth.log_running_max) >= 0)
        assert growth.running_max_at(3.0) > 0
        with pytest.raises(ValueError):
            k3_scaled_growth(k3_traj, kappa=0.5)

    def test_optimality_exceedance(self, k3_traj):
        assert 0.0 <= optimality_exceedance([k3_traj]) <= 1.0
        with pytest.raises(InsufficientSamplesError):
            optimality_exceedance([])

    def test_within_part_ratios(self):
        g = build_d_partite([2, 1], [1.0, 3.0, 2.0])
        traj = run_cvrrw(g, 0, 2.0, make_grid(2.0, 5), 'direct', RngStream(4))
        frame = within_part_ratios(traj, g)
        assert frame.groupby('part')['ratio'].sum().to_numpy() == pytest.approx([1.0, 1.0])
        assert frame['predicted_pi'].sum() == pytest.approx(1.0)

    def test_visit_ratios(self):
        g = build_complete_like(3, [1.0] * 3, [(0, 1.0)])
        traj = run_cvrrw(g, 0, 3.0, make_grid(3.0, 4), 'direct', RngStream(8))
        ratios = visit_ratio(traj)
        assert ratios.shape == (4,)
        assert leaf_visit_ratio(traj, 3) >= 0.0
        with pytest.raises(ValueError):
            leaf_visit_ratio(traj, 0)

    def test_visit_ratio_tends_to_one_on_exact_engine(self):
        """Test the visit-count law of large numbers on an event-by-event K_3 run"""
        g = build_complete(3, [1.0, 1.0, 1.0])
        traj = run_cvrrw(g, 0, 14.0, make_grid(14.0, 15), 'direct', RngStream(23))
        assert traj.Y[-1].min() > 1000
        assert np.abs(visit_ratio(traj) - 1.0).max() < 0.05

    def test_exact_phase_row_stops_at_switch(self):
        """Test that the exact-phase row lies at or before the hybrid hand-over"""
        g = build_complete(3, [1.0, 1.0, 1.0])
        traj = run_cvrrw(g, 0, 8.0, make_grid(8.0, 17), 'hybrid', RngStream(4), switch_rate=50.0)
        assert traj.switch_time is not None
        row = exact_phase_row(traj)
        assert 0 <= row < len(traj.grid) - 1
        assert traj.grid[row] <= traj.switch_time < traj.grid[row + 1]

    def test_exact_phase_row_without_hand_over(self, k3_traj):
        assert k3_traj.switch_time is None
        assert exact_phase_row(k3_traj) == len(k3_traj.grid) - 1

    def test_summarize_ensemble(self):
        summary = summarize_ensemble([4.0, 1.0, 3.0, 2.0])
        assert summary['n'] == 4
        assert summary['mean'] == 2.5
        assert summary['median'] == 2.5
        with pytest.raises(InsufficientSamplesError):
            summarize_ensemble([])


if __name__ == "__main__":
    pytest.main([__file__, '-v'])
