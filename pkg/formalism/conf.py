"""Access to the THERMOWEAVER settings dict with built-in fallbacks."""
import os

from django.conf import ENVIRONMENT_VARIABLE, settings
from django.core.exceptions import ImproperlyConfigured

DEFAULTS = {
    'DEFAULT_SEED': 20240601,
    'ORBIT_BUDGET': 10**6,
    'CYLINDER_CAP': 10**6,
    'ENUMERATION_CHECK_CAP': 20000,
    'TOLERANCE': 1e-10,
    'POWER_TOL': 1e-12,
    'POWER_MAX_ITER': 100000,
    'STATIONARY_TOL': 1e-12,
    'STATIONARY_CHECK_TOL': 1e-8,
    'DIRECT_SOLVE_MAX_D': 64,
    'ZERO_THRESHOLD': 1e-12,
    'OPTIMIZER_MAX_ITER': 5000,
    'OPTIMIZER_STEP': 1e-5,
    'SAMPLE_CHUNK': 8192,
    'ROOT_RESIDUAL_TOL': 1e-10,
    'POTENTIAL_GUARD': 1e-8,
    'POTENTIAL_MAX_T': 4.0,
}


def get_setting(name):
    """
    Return a numerical default.

    Values come from ``settings.THERMOWEAVER`` when Django is configured,
    otherwise from DEFAULTS, so the services also work as a plain library.
    """
    overrides = {}
    if settings.configured or os.environ.get(ENVIRONMENT_VARIABLE):
        try:
            overrides = getattr(settings, 'THERMOWEAVER', {})
        except ImproperlyConfigured:
            overrides = {}
    return overrides.get(name, DEFAULTS[name])


def resolve(value, name):
    """Return ``value`` unless it is None, in which case the named default."""
    return get_setting(name) if value is None else value
