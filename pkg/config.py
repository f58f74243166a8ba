# config.py
"""
Numerical settings for the RL-OFBM simulator.

Every value can be overridden from the environment (OFBM_* variables); the CLI
loads a .env file first when python-dotenv is installed.
"""

import os


def _env_int(name: str, default: int) -> int:
    value = os.environ.get(name, "")
    try:
        return int(float(value)) if value else default
    except ValueError:
        return default


def _env_float(name: str, default: float) -> float:
    value = os.environ.get(name, "")
    try:
        return float(value) if value else default
    except ValueError:
        return default


QUADRATURE_CONFIG = {
    'order':            _env_int('OFBM_QUAD_ORDER', 20),
    'tolerance':        _env_float('OFBM_QUAD_TOLERANCE', 1e-10),
    'max_subdivisions': _env_int('OFBM_QUAD_MAX_SUBDIVISIONS', 4000),
    'grading_levels':   _env_int('OFBM_QUAD_GRADING_LEVELS', 48),
}

SIMULATION_CONFIG = {
    'fft_threshold':    _env_int('OFBM_FFT_THRESHOLD', 256),
    'stream_threshold': _env_int('OFBM_STREAM_THRESHOLD', 10 ** 8),
    'max_values':       _env_int('OFBM_MAX_VALUES', 2 * 10 ** 8),
    'chunk_size':       _env_int('OFBM_CHUNK_SIZE', 256),
    'threads':          _env_int('OFBM_THREADS', 1),
}

VERIFY_CONFIG = {
    'n_ladder':     [2 ** k for k in range(6, 13)],
    'replications': _env_int('OFBM_REPLICATIONS', 20000),
    'epsilon':      _env_float('OFBM_LINDEBERG_EPSILON', 0.1),
    'ks_factor':    3.0,
    't_grid':       [0.25, 0.5, 0.75, 1.0],
    'tolerances': {
        'power_bound_stability': 0.05,
        'lemma6_relative':       0.02,
        'corollary_relative':    0.02,
        'fdd_variance':          0.05,
        'covariance_relative':   0.05,
        'self_similarity':       1e-7,
        'slope_below':           0.15,
        'slope_above':           0.35,
        'band_sigmas':           4.0,
        'properness':            1e-12,
    },
}

OUTPUT_CONFIG = {
    'float_format': '.17g',
}
