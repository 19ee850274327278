"""
Experiment Configuration Module
Loads and validates YAML experiment files into ExperimentConfig objects
"""

import copy
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import yaml

from src.config import CONFIG_DIR, REPORTS_DIR
from src.exceptions import ConfigError, GraphError
from src.graph_model import (
    WeightedGraph,
    build_complete,
    build_complete_like,
    build_d_partite,
    build_general,
    glue_leaves,
)

logger = logging.getLogger(__name__)

GRAPH_KEYS = {'family', 'd', 'parts', 'weights', 'random_weights', 'leaves', 'n_vertices', 'edges'}
RUN_KEYS = {
    'engine', 'start', 'horizon', 'steps', 'a', 'grid', 'replicas', 'seed',
    'max_events', 'switch_rate', 'dt', 'threads',
}
GRID_KEYS = {'kind', 'points'}
RANDOM_WEIGHT_KEYS = {'low', 'high'}
ESTIMATOR_KEYS = {
    'tolerance', 'window', 't_range', 'kappa', 'epsilon', 'alpha', 'leaf',
    'functional', 'horizons', 'decades', 'min_fraction', 'checkpoints',
    'path_steps', 'compare', 'instances', 'delta', 'vrrw_steps', 'vrrw_replicas',
    'ratio_tolerance', 'visit_tolerance',
}
OUTPUT_KEYS = {'dir', 'write_series'}
TOP_KEYS = {'experiment', 'description', 'graph', 'run', 'estimators', 'output'}

ENGINES = ('direct', 'timelines', 'poisson_embed', 'hybrid', 'vrrw', 'vrrw_embedded', 'gamma_mixture')

# YAML 1.1 reads 1e8 as a string
_RUN_CASTS = {
    'start': int,
    'horizon': float,
    'steps': lambda v: int(float(v)),
    'replicas': int,
    'seed': int,
    'max_events': lambda v: int(float(v)),
    'switch_rate': float,
    'dt': float,
    'threads': int,
}


@dataclass
class GraphSpec:
    family: str
    d: Optional[int] = None
    parts: Optional[List[int]] = None
    weights: Optional[List[float]] = None
    random_weights: Optional[Dict[str, float]] = None
    leaves: List[List[float]] = field(default_factory=list)
    n_vertices: Optional[int] = None
    edges: List[List[int]] = field(default_factory=list)


@dataclass
class RunSpec:
    engine: str = 'direct'
    start: int = 0
    horizon: Optional[float] = None
    steps: Optional[int] = None
    a: Optional[List[float]] = None
    grid_kind: str = 'linear'
    grid_points: int = 101
    replicas: int = 1
    seed: int = 0
    max_events: Optional[int] = None
    switch_rate: Optional[float] = None
    dt: Optional[float] = None
    threads: int = 1


@dataclass
class ExperimentConfig:
    """
    One experiment: graph, run parameters, estimator settings and outputs.
    Built by load_config / parse_config, never mutated afterwards.
    """

    experiment: str
    graph: GraphSpec
    run: RunSpec
    estimators: Dict[str, Any] = field(default_factory=dict)
    output_dir: Optional[Path] = None
    write_series: bool = True
    description: str = ''
    source: Optional[str] = None

    def build_graph(self) -> WeightedGraph:
        """Construct the (glued) graph; random weights come from the config seed"""
        spec = self.graph
        weights = spec.weights
        if spec.random_weights is not None:
            count = sum(spec.parts) if spec.family == 'd_partite' else (spec.d or spec.n_vertices)
            rng = np.random.default_rng(np.random.SeedSequence([int(self.run.seed), 7]))
            weights = rng.uniform(spec.random_weights['low'], spec.random_weights['high'], count).tolist()
        leaves = [(int(anchor), float(w)) for anchor, w in spec.leaves]
        try:
            if spec.family == 'complete':
                graph = build_complete(spec.d, weights)
            elif spec.family == 'complete_like':
                graph = build_complete_like(spec.d, weights, leaves)
            elif spec.family == 'd_partite':
                graph = build_d_partite(spec.parts, weights, leaves)
            else:
                graph = build_general(spec.n_vertices, [tuple(e) for e in spec.edges], weights)
        except GraphError as e:
            raise ConfigError(f"{self.experiment}: invalid graph: {e}") from e
        return glue_leaves(graph)

    def with_overrides(
        self,
        seed: Optional[int] = None,
        replicas: Optional[int] = None,
        out: Optional[Union[str, Path]] = None,
        threads: Optional[int] = None,
    ) -> 'ExperimentConfig':
        """Copy with the global CLI flags applied"""
        run = self.run
        if seed is not None:
            run = replace(run, seed=int(seed))
        if replicas is not None:
            run = replace(run, replicas=int(replicas))
        if threads is not None:
            run = replace(run, threads=int(threads))
        updated = replace(self, run=run, output_dir=Path(out) / self.experiment if out else self.output_dir)
        _validate(updated)
        return updated

    def to_dict(self) -> Dict:
        """Config echo with every default resolved"""
        spec = self.graph
        run = self.run
        return {
            'experiment': self.experiment,
            'description': self.description,
            'graph': {
                'family': spec.family, 'd': spec.d, 'parts': spec.parts,
                'weights': spec.weights, 'random_weights': spec.random_weights,
                'leaves': spec.leaves, 'n_vertices': spec.n_vertices, 'edges': spec.edges,
            },
            'run': {
                'engine': run.engine, 'start': run.start, 'horizon': run.horizon,
                'steps': run.steps, 'a': run.a,
                'grid': {'kind': run.grid_kind, 'points': run.grid_points},
                'replicas': run.replicas, 'seed': run.seed, 'max_events': run.max_events,
                'switch_rate': run.switch_rate, 'dt': run.dt,
            },
            'estimators': copy.deepcopy(self.estimators),
            'output': {'write_series': self.write_series},
        }


def _check_keys(section: str, data: Any, allowed: set) -> Dict:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"section '{section}' must be a mapping")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(unknown)}")
    return data


def _validate(config: ExperimentConfig) -> None:
    run = config.run
    name = config.experiment
    if run.engine not in ENGINES:
        raise ConfigError(f"{name}: engine must be one of {ENGINES}, got '{run.engine}'")
    if run.replicas < 1:
        raise ConfigError(f"{name}: replicas must be >= 1, got {run.replicas}")
    if run.seed < 0:
        raise ConfigError(f"{name}: seed must be non-negative")
    if run.threads < 1:
        raise ConfigError(f"{name}: threads must be >= 1")
    if run.grid_kind not in ('linear', 'geometric'):
        raise ConfigError(f"{name}: grid kind must be linear or geometric")
    if run.grid_points < 2:
        raise ConfigError(f"{name}: grid needs at least 2 points")
    if run.horizon is not None and run.horizon < 0:
        raise ConfigError(f"{name}: horizon must be >= 0")
    if run.steps is not None and run.steps < 0:
        raise ConfigError(f"{name}: steps must be >= 0")
    if run.horizon is None and run.steps is None:
        raise ConfigError(f"{name}: give run.horizon or run.steps")
    if run.a is not None and any(v <= 0 for v in run.a):
        raise ConfigError(f"{name}: initial local times a must be positive")

    for key in ('tolerance', 'alpha', 'window', 'delta', 'ratio_tolerance', 'visit_tolerance'):
        value = config.estimators.get(key)
        if value is not None and not value > 0:
            raise ConfigError(f"{name}: estimator '{key}' must be positive")
    t_range = config.estimators.get('t_range')
    if t_range is not None and run.horizon is not None and (t_range[1] > run.horizon or t_range[0] >= t_range[1]):
        raise ConfigError(f"{name}: t_range {t_range} must lie within the horizon")

    graph = config.build_graph()
    if not 0 <= run.start < graph.n_vertices:
        raise ConfigError(f"{name}: start vertex {run.start} outside 0..{graph.n_vertices - 1}")
    if run.a is not None and len(run.a) != graph.n_vertices:
        raise ConfigError(f"{name}: a needs {graph.n_vertices} entries, got {len(run.a)}")
    leaf = config.estimators.get('leaf')
    if leaf is not None and not graph.is_leaf(int(leaf)):
        raise ConfigError(f"{name}: estimator leaf {leaf} is not a leaf vertex")


def parse_config(data: Dict, source: Optional[str] = None) -> ExperimentConfig:
    """
    Validate a parsed YAML mapping.

    Raises:
        ConfigError: unknown keys, missing sections or invalid values
    """
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    _check_keys('top level', data, TOP_KEYS)
    if 'experiment' not in data or 'graph' not in data or 'run' not in data:
        raise ConfigError("config needs 'experiment', 'graph' and 'run'")

    graph_data = _check_keys('graph', data['graph'], GRAPH_KEYS)
    if 'random_weights' in graph_data:
        _check_keys('graph.random_weights', graph_data['random_weights'], RANDOM_WEIGHT_KEYS)
    run_data = dict(_check_keys('run', data['run'], RUN_KEYS))
    grid_data = _check_keys('run.grid', run_data.pop('grid', None), GRID_KEYS)
    estimators = dict(_check_keys('estimators', data.get('estimators'), ESTIMATOR_KEYS))
    output = _check_keys('output', data.get('output'), OUTPUT_KEYS)

    family = graph_data.get('family')
    if family not in ('complete', 'complete_like', 'd_partite', 'general'):
        raise ConfigError(f"graph.family must be complete, complete_like, d_partite or general, got {family}")
    if graph_data.get('weights') is None and graph_data.get('random_weights') is None:
        raise ConfigError("graph needs weights or random_weights")

    try:
        for key, cast in _RUN_CASTS.items():
            if run_data.get(key) is not None:
                run_data[key] = cast(run_data[key])
        graph = GraphSpec(**graph_data)
        run = RunSpec(
            **run_data,
            grid_kind=grid_data.get('kind', 'linear'),
            grid_points=int(grid_data.get('points', 101)),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"malformed config: {e}") from e

    experiment = str(data['experiment'])
    out_dir = output.get('dir')
    config = ExperimentConfig(
        experiment=experiment,
        graph=graph,
        run=run,
        estimators=estimators,
        output_dir=Path(out_dir) if out_dir else REPORTS_DIR / experiment,
        write_series=bool(output.get('write_series', True)),
        description=str(data.get('description', '')),
        source=source,
    )
    _validate(config)
    return config


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read and validate one YAML experiment file"""
    path = Path(path)
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    config = parse_config(data, source=str(path))
    logger.info(f"Loaded config '{config.experiment}' from {path}")
    return config


def bundled_configs(directory: Optional[Path] = None) -> List[Path]:
    """Sorted list of the bundled acceptance configs"""
    directory = Path(directory or CONFIG_DIR)
    return sorted(directory.glob('*.yaml'))
