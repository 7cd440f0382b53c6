"""
Django settings for the thermoweaver project.

Only the pieces a command-line numerical tool needs are configured: no
database models, no middleware, no URL routing.
"""
import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

BASE_DIR = Path(__file__).resolve().parent.parent

# Nothing is signed or stored, so a fixed key is acceptable here.
SECRET_KEY = os.getenv('THERMOWEAVER_SECRET_KEY', 'thermoweaver-offline-cli')

DEBUG = os.getenv('THERMOWEAVER_DEBUG', 'False').lower() == 'true'

ALLOWED_HOSTS = []

INSTALLED_APPS = [
    'rest_framework',
    'formalism',
]

DATABASES = {}

LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


def _env_int(name, default):
    return int(os.getenv(f'THERMOWEAVER_{name}', default))


def _env_float(name, default):
    return float(os.getenv(f'THERMOWEAVER_{name}', default))


# Numerical defaults shared by the services and the CLI
THERMOWEAVER = {
    'DEFAULT_SEED': _env_int('DEFAULT_SEED', 20240601),
    'ORBIT_BUDGET': _env_int('ORBIT_BUDGET', 10**6),
    'CYLINDER_CAP': _env_int('CYLINDER_CAP', 10**6),
    'ENUMERATION_CHECK_CAP': _env_int('ENUMERATION_CHECK_CAP', 20000),
    'TOLERANCE': _env_float('TOLERANCE', 1e-10),
    'POWER_TOL': _env_float('POWER_TOL', 1e-12),
    'POWER_MAX_ITER': _env_int('POWER_MAX_ITER', 100000),
    'STATIONARY_TOL': _env_float('STATIONARY_TOL', 1e-12),
    'STATIONARY_CHECK_TOL': _env_float('STATIONARY_CHECK_TOL', 1e-8),
    'DIRECT_SOLVE_MAX_D': _env_int('DIRECT_SOLVE_MAX_D', 64),
    'ZERO_THRESHOLD': _env_float('ZERO_THRESHOLD', 1e-12),
    'OPTIMIZER_MAX_ITER': _env_int('OPTIMIZER_MAX_ITER', 5000),
    'OPTIMIZER_STEP': _env_float('OPTIMIZER_STEP', 1e-5),
    'SAMPLE_CHUNK': _env_int('SAMPLE_CHUNK', 8192),
    'ROOT_RESIDUAL_TOL': _env_float('ROOT_RESIDUAL_TOL', 1e-10),
    'POTENTIAL_GUARD': _env_float('POTENTIAL_GUARD', 1e-8),
    'POTENTIAL_MAX_T': _env_float('POTENTIAL_MAX_T', 4.0),
}

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {'format': '%(levelname)s %(name)s: %(message)s'},
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'formalism': {
            'handlers': ['console'],
            'level': os.getenv('THERMOWEAVER_LOG_LEVEL', 'WARNING'),
        },
    },
}
