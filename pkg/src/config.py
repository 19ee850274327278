"""
Configuration for the walk laboratory
Stores project paths, numerical defaults and the audit database URL
"""

import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# Project paths
BASE_DIR = Path(__file__).parent.parent
DATA_DIR = Path(os.getenv('VRRW_DATA_DIR', BASE_DIR / "data"))
RAW_DATA_DIR = DATA_DIR / "raw"
REPORTS_DIR = DATA_DIR / "reports"
CONFIG_DIR = BASE_DIR / "configs"

# Report and trajectory file versions
SCHEMA_VERSION = "1.0"

# Simulation defaults
SIMULATION_DEFAULTS = {
    'event_cap': int(os.getenv('VRRW_EVENT_CAP', 10**8)),
    'overflow_guard': float(os.getenv('VRRW_OVERFLOW_GUARD', 600.0)),  # max N before Q refuses
    'dense_max_vertices': 64,
    'switch_rate': float(os.getenv('VRRW_SWITCH_RATE', 2.0e4)),  # total jump rate at hand-over
    'diffusion_dt': float(os.getenv('VRRW_DIFFUSION_DT', 0.01)),
    'rng_block': 4096,
    'threads': int(os.getenv('VRRW_THREADS', 1)),
}

# Statistical defaults
STAT_DEFAULTS = {
    'alpha': float(os.getenv('VRRW_ALPHA', 0.01)),
    'min_expected_count': 5.0,
    'max_enumerated_paths': 10**6,
    'rate_window': 0.5,
    'kappa': 0.75,
}

# Tolerances for self-checks on computed matrices
NUMERIC_TOLERANCES = {
    'poisson_residual': 1e-8,
    'local_time_sum': 1e-9,
    'quadrature_relative': 1e-4,
}

# Audit log database
DB_CONFIG = {
    'url': os.getenv('VRRW_DB_URL', f"sqlite:///{DATA_DIR / 'experiments.db'}"),
}
