"""
Unit tests for experiment configuration loading and validation
"""

from pathlib import Path

import pytest
from src.config import REPORTS_DIR
from src.exceptions import ConfigError
from src.experiment_config import bundled_configs, load_config, parse_config


@pytest.fixture
def minimal():
    """Smallest valid experiment mapping"""
    return {
        'experiment': 'demo',
        'graph': {'family': 'complete', 'd': 3, 'weights': [1.0, 2.0, 3.0]},
        'run': {'engine': 'direct', 'horizon': 5.0, 'seed': 7},
    }


class TestParseConfig:
    """Test suite for mapping validation"""

    def test_defaults(self, minimal):
        config = parse_config(minimal)

        assert config.run.grid_points == 101
        assert config.run.grid_kind == 'linear'
        assert config.run.replicas == 1
        assert config.output_dir == REPORTS_DIR / 'demo'
        assert config.write_series is True
        assert config.build_graph().n_vertices == 3

    def test_unknown_key_rejected(self, minimal):
        minimal['run']['horizn'] = 3.0
        with pytest.raises(ConfigError, match='horizn'):
            parse_config(minimal)

    def test_unknown_top_level_key(self, minimal):
        minimal['outputs'] = {}
        with pytest.raises(ConfigError):
            parse_config(minimal)

    def test_string_exponent_cast(self, minimal):
        """Test that 1e8 read as a string still becomes an integer"""
        minimal['run'].update({'engine': 'vrrw', 'steps': '1e8', 'horizon': None})
        assert parse_config(minimal).run.steps == 100_000_000

    @pytest.mark.parametrize('section,key,value', [
        ('run', 'engine', 'euler'),
        ('run', 'start', 5),
        ('run', 'replicas', 0),
        ('run', 'seed', -1),
        ('run', 'a', [1.0, 0.0, 1.0]),
        ('graph', 'family', 'torus'),
        ('graph', 'weights', [1.0, -1.0, 1.0]),
        ('estimators', 'leaf', 1),
    ])
    def test_invalid_values(self, minimal, section, key, value):
        minimal.setdefault(section, {})[key] = value
        with pytest.raises(ConfigError):
            parse_config(minimal)

    def test_missing_sections(self, minimal):
        del minimal['run']
        with pytest.raises(ConfigError):
            parse_config(minimal)

    def test_needs_horizon_or_steps(self, minimal):
        minimal['run'].pop('horizon')
        with pytest.raises(ConfigError):
            parse_config(minimal)

    def test_t_range_within_horizon(self, minimal):
        minimal['estimators'] = {'t_range': [1.0, 9.0]}
        with pytest.raises(ConfigError):
            parse_config(minimal)

    def test_random_weights_follow_seed(self, minimal):
        """Test that random weights are a function of the seed"""
        minimal['graph'] = {'family': 'd_partite', 'parts': [2, 1], 'random_weights': {'low': 0.5, 'high': 2.0}}
        first = parse_config(minimal).build_graph().weights
        again = parse_config(minimal).build_graph().weights

        minimal['run']['seed'] = 8
        other = parse_config(minimal).build_graph().weights

        assert first == again
        assert first != other
        assert all(0.5 <= w <= 2.0 for w in first)

    def test_leaves_are_glued(self, minimal):
        minimal['graph'] = {
            'family': 'complete_like', 'd': 3, 'weights': [1.0] * 3,
            'leaves': [[0, 1.0], [0, 2.0]],
        }
        graph = parse_config(minimal).build_graph()
        assert graph.n_vertices == 4
        assert graph.weights[3] == pytest.approx(3.0)

    def test_overrides(self, minimal, tmp_path):
        config = parse_config(minimal).with_overrides(seed=11, replicas=4, out=tmp_path, threads=2)

        assert config.run.seed == 11
        assert config.run.replicas == 4
        assert config.run.threads == 2
        assert config.output_dir == tmp_path / 'demo'

    def test_echo(self, minimal):
        echo = parse_config(minimal).to_dict()
        assert echo['run']['grid'] == {'kind': 'linear', 'points': 101}
        assert 'threads' not in echo['run']


class TestLoadConfig:
    """Test suite for YAML files"""

    def test_load_file(self, tmp_path):
        path = tmp_path / 'demo.yaml'
        path.write_text(
            "experiment: demo\n"
            "graph: {family: complete, d: 4, weights: [1, 2, 3, 4]}\n"
            "run:\n"
            "  engine: hybrid\n"
            "  horizon: 10.0\n"
            "  switch_rate: 1.0e+4\n"
            "  grid: {kind: geometric, points: 11}\n"
        )
        config = load_config(path)

        assert config.source == str(path)
        assert config.run.switch_rate == 1.0e4
        assert config.run.grid_kind == 'geometric'

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / 'absent.yaml')

    def test_unparsable_file(self, tmp_path):
        path = tmp_path / 'broken.yaml'
        path.write_text("experiment: [unclosed\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_bundled_configs_load(self):
        """Test that every shipped acceptance config validates"""
        paths = bundled_configs()
        assert len(paths) == 14
        names = {load_config(p).experiment for p in paths}
        assert names == {Path(p).stem for p in paths}


if __name__ == "__main__":
    pytest.main([__file__, '-v'])
