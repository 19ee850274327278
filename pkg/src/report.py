"""
Report Module
Writes experiment reports (JSON plus CSV artifacts) and keeps the
experiment audit log in a SQL database
"""

import json
import logging
import math
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from sqlalchemy import (
    Column,
    DateTime,
    Integer,
    MetaData,
    String,
    Table,
    Text,
    create_engine,
    update,
)
from sqlalchemy.engine import make_url

from src import __version__
from src.config import DB_CONFIG, SCHEMA_VERSION
from src.experiment_config import ExperimentConfig
from src.stat_tests import StatisticalChecker

logger = logging.getLogger(__name__)

VOLATILE_KEYS = ('generated_at', 'wall_clock_seconds')

metadata = MetaData()

experiment_audit_log = Table(
    'experiment_audit_log',
    metadata,
    Column('run_id', Integer, primary_key=True, autoincrement=True),
    Column('experiment', String(64), nullable=False),
    Column('seed', Integer),
    Column('start_time', DateTime),
    Column('end_time', DateTime),
    Column('status', String(16)),
    Column('replicas', Integer),
    Column('truncated_replicas', Integer),
    Column('claims_passed', Integer),
    Column('claims_failed', Integer),
    Column('report_path', Text),
    Column('error_message', Text),
)


def _jsonable(value: Any) -> Any:
    """numpy scalars and arrays to plain Python; non-finite floats to strings"""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def write_csv(df: pd.DataFrame, path: Path) -> Path:
    """Header row, '.' decimal separator, 17 significant digits"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format='%.17g')
    return path


def report_body(report: Dict) -> Dict:
    """Report without its timestamps; equal configs give equal bodies"""
    return {k: v for k, v in report.items() if k not in VOLATILE_KEYS}


class ReportWriter:
    """
    Write experiment artifacts and record each run in the audit log.
    The audit log is optional: when the database is unreachable the run
    still produces its files.
    """

    def __init__(self, db_config: Optional[Dict] = None, audit: bool = True):
        """
        Args:
            db_config: {'url': SQLAlchemy URL}; defaults to DB_CONFIG
            audit: False disables the audit log entirely
        """
        self.db_config = db_config or DB_CONFIG
        self.audit = audit
        self.engine = None
        self.run_id = None

    def _connect(self):
        """Create the engine and the audit table if missing"""
        if self.engine is not None or not self.audit:
            return
        try:
            url = make_url(self.db_config['url'])
            if url.get_backend_name() == 'sqlite' and url.database not in (None, '', ':memory:'):
                Path(url.database).parent.mkdir(parents=True, exist_ok=True)
            self.engine = create_engine(url)
            metadata.create_all(self.engine)
            logger.info("Audit database connection established")
        except Exception as e:
            logger.error(f"Failed to connect to audit database: {str(e)}")
            self.engine = None

    def start_audit_log(self, experiment: str, seed: int, replicas: int) -> Optional[int]:
        """
        Create the audit row of one experiment run.

        Returns:
            run_id, or None when auditing is unavailable
        """
        self.run_id = None
        self._connect()
        if self.engine is None:
            return None

        try:
            with self.engine.begin() as conn:
                result = conn.execute(
                    experiment_audit_log.insert().values(
                        experiment=experiment,
                        seed=seed,
                        replicas=replicas,
                        start_time=datetime.now(),
                        status='running',
                    )
                )
                self.run_id = result.inserted_primary_key[0]
            logger.info(f"Created audit log entry with run_id: {self.run_id}")
        except Exception as e:
            logger.error(f"Failed to create audit log: {str(e)}")
        return self.run_id

    def update_audit_log(
        self,
        status: str,
        claims_passed: int = 0,
        claims_failed: int = 0,
        truncated_replicas: int = 0,
        report_path: Optional[Path] = None,
        error_message: Optional[str] = None,
    ):
        """
        Close the audit row of the current run.

        Args:
            status: 'passed', 'failed', 'truncated' or 'error'
        """
        if self.run_id is None or self.engine is None:
            logger.debug("No audit run_id, skipping audit log update")
            return

        try:
            with self.engine.begin() as conn:
                conn.execute(
                    update(experiment_audit_log)
                    .where(experiment_audit_log.c.run_id == self.run_id)
                    .values(
                        end_time=datetime.now(),
                        status=status,
                        claims_passed=claims_passed,
                        claims_failed=claims_failed,
                        truncated_replicas=truncated_replicas,
                        report_path=str(report_path) if report_path else None,
                        error_message=error_message,
                    )
                )
            logger.info(f"Audit log updated (run_id: {self.run_id}, status: {status})")
        except Exception as e:
            logger.error(f"Failed to update audit log: {str(e)}")
            # Audit failure never stops a run

    def get_audit_log(self, limit: int = 20) -> pd.DataFrame:
        """Most recent audit rows, newest first"""
        self._connect()
        if self.engine is None:
            return pd.DataFrame()
        query = experiment_audit_log.select().order_by(experiment_audit_log.c.run_id.desc()).limit(limit)
        return pd.read_sql(query, self.engine)

    def build_report(
        self,
        config: ExperimentConfig,
        checker: StatisticalChecker,
        evidence: Dict,
        status: str,
        wall_clock: float,
        truncated: int = 0,
        retried: Optional[List[str]] = None,
        artifacts: Optional[List[str]] = None,
        note: str = '',
    ) -> Dict:
        """Assemble the report dictionary"""
        claims = checker.get_claim_report()
        report = {
            'schema_version': SCHEMA_VERSION,
            'experiment': config.experiment,
            'status': status,
            'software_version': __version__,
            'seed': config.run.seed,
            'config': config.to_dict(),
            'claims': claims['claims'],
            'issues': claims['issues'],
            'all_passed': claims['all_passed'] and status != 'truncated',
            'truncated_replicas': truncated,
            'retried_claims': sorted(retried or []),
            'evidence': evidence,
            'artifacts': sorted(artifacts or []),
            'note': note,
            'generated_at': datetime.now().isoformat(timespec='seconds'),
            'wall_clock_seconds': round(wall_clock, 3),
        }
        return _jsonable(report)

    def write_series(self, output_dir: Path, series: Dict[str, pd.DataFrame]) -> List[str]:
        """One CSV per series table; returns the file names"""
        names = []
        for name, frame in sorted(series.items()):
            if frame is None or frame.empty:
                continue
            path = write_csv(frame, Path(output_dir) / f"{name}.csv")
            logger.info(f"Saved {len(frame)} rows to {path}")
            names.append(path.name)
        return names

    def write_report(self, output_dir: Path, report: Dict) -> Path:
        """report.json plus claims.csv"""
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)

        claims = pd.DataFrame([
            {
                'claim_id': c['claim_id'],
                'kind': c['kind'],
                'estimate': c['estimate'],
                'tolerance': c['tolerance'],
                'ci_low': c['ci'][0] if c['ci'] else None,
                'ci_high': c['ci'][1] if c['ci'] else None,
                'passed': c['passed'],
                'anchor': c['anchor'],
            }
            for c in report['claims']
        ])
        if not claims.empty:
            write_csv(claims, output_dir / 'claims.csv')

        path = output_dir / 'report.json'
        with open(path, 'w') as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write('\n')
        logger.info(f"Report written to {path}")
        return path

    def close(self):
        """Close database connection"""
        if self.engine:
            self.engine.dispose()
            self.engine = None
            logger.info("Audit database connection closed")


def load_report(path: Path) -> Dict:
    with open(path) as f:
        return json.load(f)
