"""
Unit tests for statistical tests and the claim checker
"""

from fractions import Fraction

import numpy as np
import pytest
from scipy import stats
from src.exceptions import InsufficientSamplesError, PathSpaceTooLargeError
from src.graph_model import build_complete
from src.stat_tests import (
    StatisticalChecker,
    StatReport,
    beta_marginal,
    chi_square_goodness,
    chi_square_two_sample,
    compare_path_laws,
    exact_vrrw_path_law,
    ks_against_cdf,
    normal_ci,
    path_histogram,
    stat_tests,
    variance_ci,
)


def _quantiles(dist, n=400):
    """Evenly spaced quantiles: a sample that fits its law as well as possible"""
    return dist.ppf((np.arange(n) + 0.5) / n)


class TestReferenceTests:
    """Test suite for the one-sample tests"""

    def test_ks_accepts_matching_law(self):
        report = ks_against_cdf(_quantiles(stats.expon()), 'expon')
        assert report.passed
        assert report.n == 400
        assert report.details['cdf'] == 'expon'

    def test_ks_rejects_wrong_law(self):
        report = ks_against_cdf(_quantiles(stats.uniform()), 'expon', args=(0, 0.2))
        assert not report.passed
        assert report.p_value < 1e-6

    def test_too_few_samples(self):
        with pytest.raises(InsufficientSamplesError):
            ks_against_cdf(np.ones(10), 'norm')

    def test_beta_marginal(self):
        report = beta_marginal(_quantiles(stats.beta(2.0, 3.0)), 2.0, 3.0)
        assert report.test == 'beta_marginal'
        assert report.passed
        assert report.details['args'] == [2.0, 3.0]

    def test_normal_ci(self):
        samples = _quantiles(stats.norm(loc=1.0))
        assert normal_ci(samples, 1.0).passed
        assert not normal_ci(samples, 2.0).passed

    def test_dispatch(self):
        samples = _quantiles(stats.norm())
        assert stat_tests(samples, 'normal_ci', target=0.0).test == 'normal_ci'
        assert stat_tests(samples, 'ks_against_cdf', cdf='norm').passed
        with pytest.raises(ValueError):
            stat_tests(samples, 'anderson')

    def test_variance_ci_contains_sample_variance(self):
        samples = _quantiles(stats.norm(scale=2.0))
        lo, hi = variance_ci(samples)
        assert lo < samples.var(ddof=1) < hi


class TestPathLaws:
    """Test suite for path histograms and chi-square comparisons"""

    @pytest.fixture
    def k3(self):
        return build_complete(3, [1.0] * 3)

    def test_histogram(self):
        paths = np.array([[1, 2], [1, 2], [2, 0]])
        assert path_histogram(paths) == {(1, 2): 2, (2, 0): 1}

    def test_exact_law(self, k3):
        """Test an exact transition product and total mass one"""
        law = exact_vrrw_path_law(k3, 0, [1, 1, 1], 2)
        assert sum(law.values()) == Fraction(1)
        assert law[(1, 0)] == Fraction(1, 3)
        assert len(law) == 4

    def test_exact_law_limit(self, k3):
        with pytest.raises(PathSpaceTooLargeError):
            exact_vrrw_path_law(k3, 0, [1, 1, 1], 10, max_paths=100)

    def test_goodness_accepts_proportional_counts(self, k3):
        law = exact_vrrw_path_law(k3, 0, [1, 1, 1], 2)
        counts = {path: int(prob * 6000) for path, prob in law.items()}
        report = chi_square_goodness(counts, {k: float(v) for k, v in law.items()})
        assert report.passed
        assert report.statistic == pytest.approx(0.0, abs=1e-9)

    def test_goodness_rejects_impossible_path(self):
        report = chi_square_goodness({(0, 0): 3, (1, 0): 100}, {(1, 0): 1.0})
        assert not report.passed
        assert report.details['reason'] == 'observed a path of probability zero'

    def test_goodness_rejects_skewed_counts(self):
        report = chi_square_goodness({(1,): 900, (2,): 100}, {(1,): 0.5, (2,): 0.5})
        assert not report.passed

    def test_two_sample(self):
        a = {(1, 0): 500, (2, 0): 500}
        assert chi_square_two_sample(a, dict(a)).passed
        assert not chi_square_two_sample(a, {(1, 0): 900, (2, 0): 100}).passed

    def test_pooling_small_cells(self):
        """Test that rare cells are merged before the test"""
        counts = {(0,): 500, (1,): 497, (2,): 3}
        law = {(0,): 0.5, (1,): 0.497, (2,): 0.003}
        report = chi_square_goodness(counts, law)
        assert report.details['pooled_cells'] == 2

    def test_compare_path_laws(self):
        paths = np.array([[1, 0]] * 60 + [[2, 0]] * 60)
        exact = {(1, 0): Fraction(1, 2), (2, 0): Fraction(1, 2)}
        assert compare_path_laws(paths, exact=exact, n_vertices=3).passed
        with pytest.raises(ValueError):
            compare_path_laws(paths)
        with pytest.raises(PathSpaceTooLargeError):
            compare_path_laws(np.zeros((10, 6), dtype=int), np.zeros((10, 6), dtype=int), n_vertices=5)


class TestStatisticalChecker:
    """Test suite for claim verdicts and the repeated-run rule"""

    def test_claim_kinds(self):
        checker = StatisticalChecker()
        assert checker.check_close('close', 'limit', 1.05, 1.0, 0.1, stderr=0.01)
        assert checker.check_below('below', 'bound', 0.5, 1.0)
        assert not checker.check_fraction('fraction', 'rate', [True, False, False], 0.9)

        assert not checker.all_passed
        assert len(checker.issues) == 1
        assert checker.issues[0].startswith('fraction:')
        assert checker.claims[0].ci is not None

    def test_report(self):
        checker = StatisticalChecker()
        checker.check_condition('trend', 'growth', 2.0, True)
        report = checker.get_claim_report()
        assert report['all_passed'] is True
        assert report['issue_count'] == 0
        assert report['claims'][0]['claim_id'] == 'trend'

    def test_retry_rescues_single_rejection(self):
        """Test that a claim fails only if both attempts reject"""
        failing = StatReport('ks_against_cdf', 0.3, 1e-5, 100, False)
        passing = StatReport('ks_against_cdf', 0.05, 0.4, 100, True)

        first = StatisticalChecker()
        first.check_test('law_a', 'mixture', failing)
        first.check_test('law_b', 'mixture', failing)
        first.check_close('limit', 'limit', 3.0, 1.0, 0.1)
        assert first.failed_statistical == ['law_a', 'law_b']

        retry = StatisticalChecker()
        retry.check_test('law_a', 'mixture', passing)
        retry.check_test('law_b', 'mixture', failing)

        assert first.merge_retry(retry) == ['law_a', 'law_b']
        verdicts = {c.claim_id: c.passed for c in first.claims}
        assert verdicts == {'law_a': True, 'law_b': False, 'limit': False}
        assert 'retried once' in first.claims[0].note
        assert 'retry' in first.claims[0].details
        assert not any(i.startswith('law_a:') for i in first.issues)


if __name__ == "__main__":
    pytest.main([__file__, '-v'])
