"""
Unit tests for replica execution
"""

from dataclasses import replace

import numpy as np
import pytest
from src.ensemble import EnsembleRunner, sample_skeletons, simulate_replica
from src.exceptions import TruncationError
from src.experiment_config import parse_config
from src.walkers import Trajectory, VrrwRun


def _square(replica):
    return replica * replica


def _truncate_odd(replica):
    if replica % 2:
        raise TruncationError("event cap", trajectory=f"partial-{replica}")
    return replica


@pytest.fixture
def config():
    return parse_config({
        'experiment': 'demo',
        'graph': {'family': 'complete', 'd': 3, 'weights': [1.0, 2.0, 3.0]},
        'run': {'engine': 'direct', 'horizon': 1.0, 'replicas': 3, 'seed': 5,
                'grid': {'points': 11}, 'steps': 200},
    })


class TestEnsembleRunner:
    """Test suite for serial and process-pool execution"""

    def test_serial_order(self):
        results = EnsembleRunner(1).map(_square, [2, 0, 1])
        assert [r.replica for r in results] == [0, 1, 2]
        assert [r.value for r in results] == [0, 1, 4]

    def test_process_pool_order(self):
        """Test that worker results come back sorted by replica"""
        results = EnsembleRunner(2).map(_square, range(6))
        assert [r.value for r in results] == [0, 1, 4, 9, 16, 25]

    def test_truncation_is_recorded(self):
        """Test that a capped replica keeps its partial output"""
        results = EnsembleRunner(1).map(_truncate_odd, range(4))
        assert [r.truncated for r in results] == [False, True, False, True]
        assert results[1].value == 'partial-1'
        assert results[1].message == 'event cap'

    def test_run_config(self, config):
        results = EnsembleRunner(1).run(config)
        assert len(results) == 3
        assert all(isinstance(r.value, Trajectory) for r in results)

    def test_threads_floor(self):
        assert EnsembleRunner(0).threads >= 1


class TestReplicaStreams:
    """Test suite for per-replica reproducibility"""

    def test_same_replica_same_path(self, config):
        a = simulate_replica(config, 1)
        b = simulate_replica(config, 1)
        np.testing.assert_array_equal(a.T, b.T)

    def test_replicas_and_attempts_differ(self, config):
        base = simulate_replica(config, 0)
        other_replica = simulate_replica(config, 1)
        retry = simulate_replica(config, 0, attempt=1)
        assert not np.array_equal(base.T[-1], other_replica.T[-1])
        assert not np.array_equal(base.T[-1], retry.T[-1])

    def test_horizon_override(self, config):
        traj = simulate_replica(config, 0, horizon=0.5)
        assert traj.grid[-1] == pytest.approx(0.5)

    def test_discrete_engine(self, config):
        discrete = replace(config, run=replace(config.run, engine='vrrw'))
        run = simulate_replica(discrete, 0)
        assert isinstance(run, VrrwRun)
        assert run.final.Z.sum() == pytest.approx(3.0 + 200 + 1)

    @pytest.mark.parametrize('engine', ['direct', 'timelines', 'vrrw', 'gamma_mixture', 'vrrw_embedded'])
    def test_skeleton_shapes(self, config, engine):
        cfg = replace(config, run=replace(config.run, engine=engine))
        paths = sample_skeletons(cfg, 4, replicas=5)
        assert paths.shape == (5, 4)
        assert np.all(paths[:, 0] != cfg.run.start)


if __name__ == "__main__":
    pytest.main([__file__, '-v'])
