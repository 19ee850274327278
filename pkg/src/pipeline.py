"""
Experiment Pipeline Orchestrator
Coordinates Simulate, Analyze, Report phases for one experiment or the
whole acceptance suite
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

from src.ensemble import EnsembleRunner
from src.exceptions import ConfigError, VrrwError
from src.experiment_config import ExperimentConfig, bundled_configs, load_config
from src.experiments import get_experiment
from src.report import ReportWriter, write_csv
from src.stat_tests import StatisticalChecker

logger = logging.getLogger(__name__)

EXIT_PASSED = 0
EXIT_CLAIM_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_TRUNCATED = 3

HYBRID_NOTE = (
    "Long-horizon rows come from the diffusion regime: exact simulation until the "
    "total jump rate reaches run.switch_rate, then the stochastic-approximation dynamics."
)


@dataclass
class ExperimentOutcome:
    """What run_experiment hands back to the caller"""

    experiment: str
    status: str
    exit_code: int
    report: Dict
    report_path: Optional[Path] = None
    retried: List[str] = field(default_factory=list)


class ExperimentPipeline:
    """
    Experiment orchestrator: simulate replicas, evaluate claims, write the report.
    Failed statistical claims are repeated once with a derived seed.
    """

    def __init__(self, threads: Optional[int] = None, writer: Optional[ReportWriter] = None):
        self.threads = threads
        self.writer = writer or ReportWriter()
        self.run_id = None

    def run_experiment(self, config: ExperimentConfig) -> ExperimentOutcome:
        """
        Execute one experiment end to end.

        Returns:
            ExperimentOutcome with exit code 0 (all claims pass), 1 (a claim
            failed) or 3 (event cap reached, partial report)
        """
        logger.info("=" * 80)
        logger.info(f"STARTING EXPERIMENT {config.experiment}")
        logger.info("=" * 80)

        start_time = time.perf_counter()
        runner = EnsembleRunner(self.threads or config.run.threads)
        output_dir = Path(config.output_dir)

        try:
            self.run_id = self.writer.start_audit_log(config.experiment, config.run.seed, config.run.replicas)

            # SIMULATE
            logger.info("\n" + "=" * 80)
            logger.info("PHASE 1: SIMULATE")
            logger.info("=" * 80)
            experiment = get_experiment(config, runner)
            raw = experiment.simulate(attempt=0)
            logger.info(f"✓ Simulated {config.run.replicas} replica(s) with engine '{config.run.engine}'")

            # ANALYZE
            logger.info("\n" + "=" * 80)
            logger.info("PHASE 2: ANALYZE")
            logger.info("=" * 80)
            checker = StatisticalChecker(config.estimators.get('alpha'))
            retried: List[str] = []
            note = ''
            series: Dict[str, pd.DataFrame] = {}
            evidence: Dict = {}
            try:
                series, evidence = experiment.evaluate(raw, checker)
            except Exception as e:
                if not experiment.truncated:
                    raise
                note = f"evaluation of the truncated ensemble stopped early: {e}"
                logger.warning(note)

            if checker.failed_statistical and not experiment.truncated:
                logger.warning(f"⚠ Statistical claims rejected: {checker.failed_statistical}; repeating once")
                retry = get_experiment(config, runner)
                retry_checker = StatisticalChecker(config.estimators.get('alpha'))
                retry.evaluate(retry.simulate(attempt=1), retry_checker)
                retried = checker.merge_retry(retry_checker)

            if experiment.truncated:
                status, exit_code = 'truncated', EXIT_TRUNCATED
            elif checker.all_passed:
                status, exit_code = 'passed', EXIT_PASSED
            else:
                status, exit_code = 'failed', EXIT_CLAIM_FAILED
            if config.run.engine == 'hybrid':
                note = (note + ' ' + HYBRID_NOTE).strip()

            # REPORT
            logger.info("\n" + "=" * 80)
            logger.info("PHASE 3: REPORT")
            logger.info("=" * 80)
            artifacts = self.writer.write_series(output_dir, series) if config.write_series else []
            report = self.writer.build_report(
                config, checker, evidence, status,
                wall_clock=time.perf_counter() - start_time,
                truncated=experiment.truncated,
                retried=retried,
                artifacts=artifacts,
                note=note,
            )
            report_path = self.writer.write_report(output_dir, report)

            passed = sum(c.passed for c in checker.claims)
            self.writer.update_audit_log(
                status=status,
                claims_passed=passed,
                claims_failed=len(checker.claims) - passed,
                truncated_replicas=experiment.truncated,
                report_path=report_path,
            )

            duration = time.perf_counter() - start_time
            logger.info("\n" + "=" * 80)
            logger.info(f"EXPERIMENT {status.upper()}")
            logger.info("=" * 80)
            logger.info(f"Duration: {duration:.2f} seconds")
            logger.info(f"Claims passed: {passed}/{len(checker.claims)}")
            if experiment.truncated:
                logger.warning(f"Truncated replicas: {experiment.truncated}")
            for issue in checker.issues:
                logger.warning(f"  {issue}")

            return ExperimentOutcome(config.experiment, status, exit_code, report, report_path, retried)

        except Exception as e:
            logger.error(f"\n{'=' * 80}")
            logger.error("EXPERIMENT FAILED")
            logger.error(f"{'=' * 80}")
            logger.error(f"Error: {str(e)}")

            if self.run_id:
                self.writer.update_audit_log(status='error', error_message=str(e))

            raise

        finally:
            self.writer.close()

    def run_suite(self, configs: Sequence[ExperimentConfig], out: Optional[Path] = None) -> List[ExperimentOutcome]:
        """Run several experiments in order and write a summary table"""
        outcomes = []
        for config in configs:
            try:
                outcomes.append(self.run_experiment(config))
            except ConfigError:
                raise
            except VrrwError as e:
                logger.error(f"{config.experiment}: {e}")
                outcomes.append(ExperimentOutcome(config.experiment, 'error', EXIT_CLAIM_FAILED, {}))

        summary = pd.DataFrame([
            {
                'experiment': o.experiment,
                'status': o.status,
                'exit_code': o.exit_code,
                'claims': len(o.report.get('claims', [])),
                'retried': ';'.join(o.retried),
                'report': str(o.report_path) if o.report_path else '',
            }
            for o in outcomes
        ])
        if out is not None and not summary.empty:
            path = write_csv(summary, Path(out) / 'acceptance_summary.csv')
            logger.info(f"Suite summary written to {path}")
        logger.info(f"\nSuite finished: {sum(o.exit_code == EXIT_PASSED for o in outcomes)}/{len(outcomes)} passed")
        return outcomes


def suite_exit_code(outcomes: Sequence[ExperimentOutcome]) -> int:
    """3 if any experiment truncated, else 1 if any claim failed, else 0"""
    codes = {o.exit_code for o in outcomes}
    if EXIT_TRUNCATED in codes:
        return EXIT_TRUNCATED
    if EXIT_CLAIM_FAILED in codes:
        return EXIT_CLAIM_FAILED
    return EXIT_PASSED


def load_suite(directory: Optional[Path] = None, **overrides) -> List[ExperimentConfig]:
    """Bundled configs with the global CLI flags applied"""
    return [load_config(path).with_overrides(**overrides) for path in bundled_configs(directory)]
