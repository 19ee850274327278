"""
Integration tests for the experiment pipeline
Tests end-to-end runs, the repeated-run rule, exit codes and the audit log
"""

from dataclasses import replace

import pandas as pd
import pytest
from src.config import CONFIG_DIR
from src.exceptions import ConfigError
from src.experiment_config import parse_config
from src.experiments import EXPERIMENTS, Experiment
from src.pipeline import (
    EXIT_CLAIM_FAILED,
    EXIT_PASSED,
    EXIT_TRUNCATED,
    ExperimentOutcome,
    ExperimentPipeline,
    load_suite,
    suite_exit_code,
)
from src.report import ReportWriter, report_body
from src.stat_tests import StatReport


class FlakyExperiment(Experiment):
    """Rejects its statistical claim on the first attempt only"""

    experiment_id = 'flaky'
    reject_always = False
    truncate = False

    def simulate(self, attempt=0):
        if self.truncate:
            self.truncated = 1
        return {'attempt': attempt}

    def evaluate(self, raw, checker):
        passed = raw['attempt'] == 1 and not self.reject_always
        report = StatReport('ks_against_cdf', 0.1, 0.5 if passed else 1e-4, 100, passed)
        checker.check_test('law', 'sojourn law', report)
        return {}, {'attempt': raw['attempt']}


def _config(tmp_path, experiment, **estimators):
    return parse_config({
        'experiment': experiment,
        'graph': {'family': 'complete', 'd': 4, 'weights': [1.0] * 4},
        'run': {'engine': 'direct', 'horizon': 1.0, 'seed': 11},
        'estimators': estimators,
        'output': {'dir': str(tmp_path / 'reports' / experiment)},
    })


@pytest.fixture
def writer(tmp_path):
    return ReportWriter({'url': f"sqlite:///{tmp_path / 'audit.db'}"})


@pytest.fixture
def pipeline(writer):
    return ExperimentPipeline(threads=1, writer=writer)


class TestExperimentPipeline:
    """Integration tests for single experiments"""

    def test_experiment_passes(self, pipeline, writer, tmp_path):
        """Test a full Simulate, Analyze, Report run"""
        outcome = pipeline.run_experiment(_config(tmp_path, 'hj_algebra', instances=20))

        assert outcome.exit_code == EXIT_PASSED
        assert outcome.status == 'passed'
        assert outcome.report_path.exists()
        assert (tmp_path / 'reports' / 'hj_algebra' / 'hj_points.csv').exists()
        assert outcome.report['artifacts'] == ['hj_points.csv']

        log = writer.get_audit_log()
        writer.close()
        assert log.iloc[0]['status'] == 'passed'
        assert log.iloc[0]['claims_failed'] == 0

    def test_reports_reproducible(self, pipeline, tmp_path):
        """Test that equal configs give equal report bodies"""
        config = _config(tmp_path, 'chain_identities', instances=4)
        first = pipeline.run_experiment(config).report
        second = pipeline.run_experiment(config).report
        assert report_body(first) == report_body(second)

    def test_error_marks_audit_row(self, pipeline, writer, tmp_path):
        """Test that a failing experiment is logged as an error and re-raised"""
        config = _config(tmp_path, 'decomposition')
        hybrid = replace(config, run=replace(config.run, engine='hybrid'))

        with pytest.raises(ConfigError):
            pipeline.run_experiment(hybrid)

        log = writer.get_audit_log()
        writer.close()
        assert log.iloc[0]['status'] == 'error'
        assert 'exact engine' in log.iloc[0]['error_message']

    def test_unknown_experiment(self, pipeline, tmp_path):
        with pytest.raises(ConfigError):
            pipeline.run_experiment(_config(tmp_path, 'no_such_experiment'))


class TestRepeatedRun:
    """Test suite for the double-rejection rule"""

    @pytest.fixture(autouse=True)
    def register(self, monkeypatch):
        monkeypatch.setitem(EXPERIMENTS, 'flaky', FlakyExperiment)

    def test_single_rejection_passes(self, pipeline, tmp_path):
        outcome = pipeline.run_experiment(_config(tmp_path, 'flaky'))

        assert outcome.exit_code == EXIT_PASSED
        assert outcome.retried == ['law']
        assert outcome.report['retried_claims'] == ['law']
        assert 'retried once' in outcome.report['claims'][0]['note']

    def test_rerun_draws_fresh_points(self, tmp_path):
        """Test that a rerun attempt reseeds the H/J point cloud"""
        experiment = EXPERIMENTS['hj_algebra'](_config(tmp_path, 'hj_algebra', instances=20))
        first = experiment.simulate(0)['points']

        assert (experiment.simulate(0)['points'] == first).all()
        assert not (experiment.simulate(1)['points'] == first).all()

    def test_double_rejection_fails(self, pipeline, tmp_path, monkeypatch):
        monkeypatch.setattr(FlakyExperiment, 'reject_always', True)
        outcome = pipeline.run_experiment(_config(tmp_path, 'flaky'))

        assert outcome.exit_code == EXIT_CLAIM_FAILED
        assert outcome.status == 'failed'

    def test_truncation_skips_retry(self, pipeline, tmp_path, monkeypatch):
        """Test exit code 3 and a partial report when replicas hit the cap"""
        monkeypatch.setattr(FlakyExperiment, 'truncate', True)
        outcome = pipeline.run_experiment(_config(tmp_path, 'flaky'))

        assert outcome.exit_code == EXIT_TRUNCATED
        assert outcome.retried == []
        assert outcome.report['truncated_replicas'] == 1
        assert outcome.report['all_passed'] is False


class TestSuite:
    """Test suite for acceptance-suite runs"""

    def test_run_suite_summary(self, pipeline, tmp_path):
        configs = [
            _config(tmp_path, 'hj_algebra', instances=10),
            _config(tmp_path, 'chain_identities', instances=3),
        ]
        outcomes = pipeline.run_suite(configs, out=tmp_path / 'reports')

        summary = pd.read_csv(tmp_path / 'reports' / 'acceptance_summary.csv')
        assert list(summary['experiment']) == ['hj_algebra', 'chain_identities']
        assert suite_exit_code(outcomes) == EXIT_PASSED

    def test_suite_exit_code_priority(self):
        def outcome(code):
            return ExperimentOutcome('x', 'status', code, {})

        assert suite_exit_code([outcome(0), outcome(1)]) == EXIT_CLAIM_FAILED
        assert suite_exit_code([outcome(1), outcome(3)]) == EXIT_TRUNCATED
        assert suite_exit_code([]) == EXIT_PASSED

    def test_load_suite_overrides(self, tmp_path):
        configs = load_suite(CONFIG_DIR, seed=99, out=tmp_path)
        assert len(configs) == 14
        assert all(c.run.seed == 99 for c in configs)
        assert all(c.output_dir == tmp_path / c.experiment for c in configs)


if __name__ == "__main__":
    pytest.main([__file__, '-v'])
