"""
Unit tests for the diffusion regime
"""

import numpy as np
import pytest
from src.chain_numerics import reference_profile
from src.diffusion import DiffusionIntegrator
from src.exceptions import FamilyMismatchError
from src.graph_model import build_complete, build_complete_like, build_general
from src.sampling import RngStream


@pytest.fixture
def k5():
    return build_complete(5, [1.0] * 5)


class TestDiffusionIntegrator:
    """Test suite for the Euler-Maruyama integrator"""

    def test_drift_contracts_spread(self, k5):
        """Test that the deterministic drift pulls E towards zero"""
        integrator = DiffusionIntegrator(k5, RngStream(1), stochastic=False)
        T0 = np.array([3.0, 1.0, 1.0, 1.0, 1.0])
        grid = np.array([8.0, 9.0, 10.0])

        result = integrator.run(7.0, T0, np.zeros(5), 10.0, grid)
        E0 = reference_profile(k5).center(7.0, T0)

        assert result.steps > 0
        spreads = np.ptp(result.E, axis=1)
        assert spreads[0] < np.ptp(E0)
        assert np.all(np.diff(spreads) < 0)
        np.testing.assert_allclose(result.E.sum(axis=1), E0.sum(), atol=1e-9)

    def test_visits_grow(self, k5):
        """Test that visit counts never decrease"""
        integrator = DiffusionIntegrator(k5, RngStream(2))
        result = integrator.run(5.0, np.full(5, 1.0), np.zeros(5), 6.0, np.array([5.5, 6.0]))

        assert np.all(result.Y[1] >= result.Y[0])
        assert result.Y[-1].sum() > 0

    def test_total_time_with_leaf(self):
        """Test sum T = t for a stochastic run with a leaf"""
        g = build_complete_like(4, [1.0, 2.0, 1.0, 1.0], [(0, 1.0)])
        profile = reference_profile(g)
        T0 = np.array([2.0, 2.5, 1.5, 1.5, 0.5])
        integrator = DiffusionIntegrator(g, RngStream(3), profile=profile)

        result = integrator.run(8.0, T0, np.zeros(5), 12.0, np.array([10.0, 12.0]))
        T_end = profile.uncenter(12.0, result.E[-1])

        assert T_end.sum() == pytest.approx(12.0, abs=1e-9)
        assert T_end[4] >= T0[4]

    def test_grid_at_start_recorded(self, k5):
        """Test that grid times not after t0 copy the initial state"""
        integrator = DiffusionIntegrator(k5, RngStream(1), stochastic=False)
        T0 = np.full(5, 1.0)
        result = integrator.run(5.0, T0, np.zeros(5), 6.0, np.array([5.0, 6.0]))
        np.testing.assert_allclose(result.E[0], reference_profile(k5).center(5.0, T0))

    def test_general_graph_refused(self):
        """Test that graphs without a limit profile are refused"""
        cycle = build_general(4, [(0, 1), (1, 2), (2, 3), (3, 0)], [1.0] * 4)
        with pytest.raises(FamilyMismatchError):
            DiffusionIntegrator(cycle, RngStream(1))


if __name__ == "__main__":
    pytest.main([__file__, '-v'])
