"""Ruelle transfer operator of a finite correspondence.

On functions of the last coordinate the operator is
(Lv)(x_1) = sum over x_0 in T^-1(x_1) of v(x_0) e^phi(x_0, x_1), i.e. A_phi^T v.
Its leading eigendata give the eigenmeasure m (cylinder formula from the
right eigenvector q) and the equilibrium measure mu = u m.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from ..conf import resolve
from ..exceptions import (
    DegenerateEigenvector, DimensionMismatch, InputError, NoConvergence, NotPrimitive,
)
from . import finite_correspondence as fc
from .pressure import perron_eigenpair, shifted_perron, weighted_matrix

logger = logging.getLogger(__name__)

SPECTRUM_RESIDUAL = 1e-10
RATE_FLOOR = 1e-9
LOG_FLOAT_MAX = math.log(np.finfo(float).max)


@dataclass(frozen=True)
class TransferSpectrum:
    """
    Leading eigendata of A_phi: A_phi q = lambda q and u A_phi = lambda u,
    both vectors nonnegative with unit sum. lambda is kept as its logarithm
    since it overflows for large potentials.
    """
    log_eigenvalue: float
    right: np.ndarray
    left: np.ndarray
    right_residual: float
    left_residual: float
    iterations: tuple
    primitive: bool

    @property
    def eigenvalue(self):
        """lambda, or inf when it exceeds the float range."""
        if self.log_eigenvalue > LOG_FLOAT_MAX:
            return math.inf
        return math.exp(self.log_eigenvalue)

    @property
    def pressure(self):
        return self.log_eigenvalue

    @property
    def pairing(self):
        """sum_k u_k q_k."""
        return float(self.left @ self.right)


@dataclass(frozen=True)
class PowerConvergence:
    iterates: np.ndarray
    distances: np.ndarray
    limit: np.ndarray
    rate: float
    converged: bool


@dataclass(frozen=True)
class GibbsBound:
    constant: float
    witness: tuple
    n_max: int


@dataclass(frozen=True)
class CylinderRow:
    orbit: tuple
    m_mass: float
    mu_mass: float
    gibbs_dev: float


def transfer_apply(correspondence, potential, vector, log_scale=0.0):
    """
    Apply the transfer operator scaled by e^-log_scale: e^-log_scale A_phi^T v.

    ``log_scale=spectrum.pressure`` gives the normalized operator lambda^-1 L,
    which stays finite when A_phi itself overflows.
    """
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (correspondence.d,):
        raise DimensionMismatch(correspondence.d, vector.shape)
    return weighted_matrix(correspondence, potential, log_scale).T @ vector


def pf_spectrum(correspondence, potential, tol=None, max_iter=None):
    """
    Eigenvalue and both Perron eigenvectors of A_phi.

    Uniqueness of the eigendata only holds for primitive adjacency; other
    instances are computed anyway and logged as possibly non-unique.

    Raises:
        NoConvergence: an eigenvector misses the 1e-10 residual
    """
    weights, right, shift = shifted_perron(correspondence, potential, tol, max_iter)
    left = perron_eigenpair(weights.T, tol, max_iter)
    for side, result in (('right', right), ('left', left)):
        if result.residual > SPECTRUM_RESIDUAL:
            raise NoConvergence(result.iterations, detail=f'{side} residual {result.residual:.3e}')
    if abs(right.value - left.value) > SPECTRUM_RESIDUAL * right.value:
        raise NoConvergence(
            max(right.iterations, left.iterations),
            detail=f'left/right eigenvalues differ: {left.value!r} vs {right.value!r}',
        )
    primitive = fc.is_primitive(correspondence)
    if not primitive:
        logger.warning("Adjacency is not primitive: eigendata may not be unique")
    return TransferSpectrum(
        log_eigenvalue=math.log(right.value) + shift,
        right=right.vector,
        left=left.vector,
        right_residual=right.residual,
        left_residual=left.residual,
        iterations=(right.iterations, left.iterations),
        primitive=primitive,
    )


def power_convergence(correspondence, potential, n, spectrum=None):
    """
    The normalized iterates lambda^-k L^k(1), k = 1..n, and their sup
    distance to the limit u <q, 1> / <u, q>.

    The decay ``rate`` is the mean per-step ratio of the distances while
    they stay above RATE_FLOOR times the limit's size, where eigenvector
    error cannot mask the decay; ``converged`` requires the last distance
    to be below 1e-8 of the limit's size.
    """
    if n < 1:
        raise InputError(n, detail='n must be at least 1')
    spectrum = spectrum or pf_spectrum(correspondence, potential)
    normalized_t = weighted_matrix(correspondence, potential, spectrum.pressure).T
    limit = spectrum.left * spectrum.right.sum() / spectrum.pairing

    iterate = np.ones(correspondence.d)
    iterates = np.empty((n, correspondence.d))
    for k in range(n):
        iterate = normalized_t @ iterate
        iterates[k] = iterate
    distances = np.abs(iterates - limit).max(axis=1)

    scale = np.abs(limit).max()
    above = distances[distances > RATE_FLOOR * scale]
    if len(above) >= 2:
        rate = float(np.exp(np.diff(np.log(above)).mean()))
    else:
        rate = 0.0
    converged = bool(distances[-1] <= 1e-8 * scale)
    if not converged:
        logger.info("Transfer iterates not converged after %d steps (distance %.3e)",
                    n, distances[-1])
    return PowerConvergence(iterates, distances, limit, rate, converged)


def _log_parts(spectrum, potential, orbits):
    orbits = np.asarray(orbits)
    sums = fc.birkhoff_sums(potential, orbits)
    steps = orbits.shape[1] - 1
    scaled = sums - steps * spectrum.pressure
    return sums, scaled, steps


def eigenmeasure_masses(spectrum, potential, orbits):
    """m[x_1 .. x_{n+1}] = lambda^-n e^{S_n phi} q_{x_{n+1}} / sum q, vectorized."""
    _, scaled, _ = _log_parts(spectrum, potential, orbits)
    last = spectrum.right[np.asarray(orbits)[:, -1]]
    return np.exp(scaled) * last / spectrum.right.sum()


def equilibrium_masses(spectrum, potential, orbits):
    """mu[x_1 .. x_{n+1}] = u_{x_1} e^{S_n phi} lambda^-n q_{x_{n+1}} / sum u q, vectorized."""
    pairing = spectrum.pairing
    if pairing <= resolve(None, 'ZERO_THRESHOLD'):
        raise DegenerateEigenvector(detail='left and right eigenvectors are orthogonal')
    orbits = np.asarray(orbits)
    _, scaled, _ = _log_parts(spectrum, potential, orbits)
    first = spectrum.left[orbits[:, 0]]
    last = spectrum.right[orbits[:, -1]]
    return first * np.exp(scaled) * last / pairing


def eigenmeasure_cylinder(spectrum, correspondence, potential, orbit):
    """
    Mass of the cylinder [x_1 .. x_{n+1}] under the eigenmeasure of the dual
    transfer operator.

    Raises:
        DisallowedEdge: the orbit uses an edge outside T
    """
    fc.birkhoff_sum(potential, orbit)
    return float(eigenmeasure_masses(spectrum, potential, [list(orbit)])[0])


def equilibrium_cylinder(spectrum, correspondence, potential, orbit):
    """
    Mass of the cylinder under the equilibrium measure mu = u m.

    Raises:
        DisallowedEdge: the orbit uses an edge outside T
        DegenerateEigenvector: sum u_k q_k vanishes
    """
    fc.birkhoff_sum(potential, orbit)
    return float(equilibrium_masses(spectrum, potential, [list(orbit)])[0])


def _gibbs_deviations(spectrum, potential, orbits):
    sums, scaled, steps = _log_parts(spectrum, potential, orbits)
    masses = eigenmeasure_masses(spectrum, potential, orbits)
    with np.errstate(divide='ignore'):
        log_masses = np.log(masses)
    return np.abs(log_masses - (sums - steps * spectrum.pressure)), masses


def gibbs_constant(correspondence, potential, n_max, spectrum=None, cap=None):
    """
    Smallest c with |log m[C] - (S_n phi - n P)| <= c over every cylinder
    C of length up to n_max + 1.

    Args:
        n_max: largest number of steps n scanned
        cap: largest number of cylinders per length (default CYLINDER_CAP)

    Returns:
        GibbsBound with the witnessing cylinder

    Raises:
        NotPrimitive: the adjacency is not primitive
        BudgetExceeded: a length has more cylinders than ``cap``
    """
    if n_max < 1:
        raise InputError(n_max, detail='n_max must be at least 1')
    if not fc.is_primitive(correspondence):
        raise NotPrimitive(detail='Gibbs bounds need a primitive adjacency')
    cap = resolve(cap, 'CYLINDER_CAP')
    spectrum = spectrum or pf_spectrum(correspondence, potential)

    constant, witness = -math.inf, None
    for length in range(1, n_max + 2):
        orbits = fc.orbit_array(correspondence, length, budget=cap)
        deviations, _ = _gibbs_deviations(spectrum, potential, orbits)
        index = int(np.argmax(deviations))
        if deviations[index] > constant:
            constant, witness = float(deviations[index]), tuple(orbits[index].tolist())
    logger.info("Gibbs constant %.6f over lengths up to %d", constant, n_max + 1)
    return GibbsBound(constant, witness, n_max)


def cylinder_table(spectrum, correspondence, potential, length, cap=None):
    """
    Eigenmeasure mass, equilibrium mass and Gibbs deviation of every
    cylinder with ``length`` states, lexicographically.
    """
    orbits = fc.orbit_array(correspondence, length, budget=resolve(cap, 'CYLINDER_CAP'))
    deviations, m_masses = _gibbs_deviations(spectrum, potential, orbits)
    mu_masses = equilibrium_masses(spectrum, potential, orbits)
    return [
        CylinderRow(tuple(orbit), float(m), float(mu), float(dev))
        for orbit, m, mu, dev in zip(orbits.tolist(), m_masses, mu_masses, deviations)
    ]
