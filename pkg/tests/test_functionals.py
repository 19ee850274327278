"""
Unit tests for the functional catalogue
Tests values, gradients and gradient derivatives against finite differences
"""

import numpy as np
import pytest
from src.chain_numerics import generator
from src.exceptions import FamilyMismatchError, UnknownFunctionalError
from src.functionals import Coordinate, Entropy, Lyapunov, get_functional, parse_functional
from src.graph_model import build_complete, build_complete_like, build_d_partite, build_general


@pytest.fixture
def graph():
    """K_3 with a leaf on vertex 1"""
    return build_complete_like(3, [1.0, 2.0, 1.5], [(1, 0.5)])


@pytest.fixture
def T_rows():
    return np.array([[0.4, 0.2, 0.7, 0.1], [1.0, 0.3, 0.2, 0.05]])


def _fd_grad(functional, T, h=1e-6):
    grads = np.zeros_like(T)
    for k in range(T.shape[1]):
        step = np.zeros(T.shape[1])
        step[k] = h
        grads[:, k] = (functional.value(T + step) - functional.value(T - step)) / (2 * h)
    return grads


@pytest.mark.parametrize('text', ['H', 'V', 'contrast:0,1', 'contrast:1,2', 'T_2'])
class TestGradients:
    """Test suite for analytic derivatives"""

    def test_grad_matches_finite_differences(self, graph, T_rows, text):
        f = parse_functional(text, graph)
        np.testing.assert_allclose(f.grad(T_rows), _fd_grad(f, T_rows), rtol=1e-6, atol=1e-8)

    def test_grad_derivative_matches_finite_differences(self, graph, T_rows, text):
        """Test d/dT_k grad f row by row with a different k per row"""
        f = parse_functional(text, graph)
        k = np.array([0, 3])
        h = 1e-6
        step = np.zeros_like(T_rows)
        step[np.arange(2), k] = h
        fd = (f.grad(T_rows + step) - f.grad(T_rows - step)) / (2 * h)
        np.testing.assert_allclose(f.grad_derivative(T_rows, k), fd, rtol=1e-5, atol=1e-7)


class TestCatalogue:
    """Test suite for the catalogue entries and the parser"""

    def test_entropy_bounds(self, graph, T_rows):
        """Test that H = pi^T A pi lies in [0, 1]"""
        H = Entropy(graph).value(T_rows)
        assert np.all((H >= 0) & (H <= 1))

    def test_lyapunov_is_mean_log_pi(self, T_rows):
        """Test V = (1/d) sum over the core of log pi on a complete-like graph"""
        g = build_complete_like(3, [1.0, 2.0, 1.5], [(1, 0.5)])
        V = Lyapunov(g).value(T_rows)
        for row, value in zip(T_rows, V):
            pi = generator(g, row).pi
            assert value == pytest.approx(np.log(pi[:3]).mean(), rel=1e-10)

    def test_lyapunov_multipartite(self):
        """Test the part-based form on K_{2,1,1}"""
        g = build_d_partite([2, 1, 1], [1.0, 3.0, 2.0, 1.0])
        f = Lyapunov(g)
        assert np.all(f.c == pytest.approx(2.0 / 3.0))
        T = np.array([[0.1, 0.4, 0.3, 0.2]])
        np.testing.assert_allclose(f.grad(T), _fd_grad(f, T), rtol=1e-6)

    def test_lyapunov_refuses_general(self):
        cycle = build_general(4, [(0, 1), (1, 2), (2, 3), (3, 0)], [1.0] * 4)
        with pytest.raises(FamilyMismatchError):
            Lyapunov(cycle)

    def test_parse_forms(self, graph):
        """Test the accepted spellings"""
        assert parse_functional('T3', graph).vertex == 3
        assert parse_functional('T_0', graph).label == 'T_0'
        assert parse_functional('const', graph).name == 'constant'
        assert parse_functional('contrast:0,2', graph).label == 'contrast_0_2'

    def test_unknown_functional(self, graph):
        with pytest.raises(UnknownFunctionalError):
            get_functional('kurtosis', graph)
        with pytest.raises(UnknownFunctionalError):
            parse_functional('contrast:0', graph)

    def test_contrast_validation(self, graph):
        with pytest.raises(ValueError):
            parse_functional('contrast:1,1', graph)
        with pytest.raises(FamilyMismatchError):
            parse_functional('contrast:0,1', build_d_partite([1, 1, 1], [1.0] * 3))

    def test_coordinate_validation(self):
        with pytest.raises(ValueError):
            Coordinate(build_complete(3, [1.0] * 3), vertex=5)


if __name__ == "__main__":
    pytest.main([__file__, '-v'])
