"""Transition-probability-kernel algebra on a finite state space.

A kernel is a row-stochastic d x d matrix P; a measure is a probability
vector p. Measures act on the left (pP), functions on the right (Pf).
Entropies use the natural logarithm with 0 log 0 = 0.
"""
import bisect
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from django.core.exceptions import ValidationError
from scipy.special import entr

from ..conf import resolve
from ..exceptions import (
    DimensionMismatch, InputError, InsufficientData, InvalidKernel, NoConvergence,
    NotStationary, SupportViolation, ZeroStateWarning,
)
from ..validators import validate_distribution, validate_joint, validate_stochastic
from .random_source import GENERATOR_ID, make_generator

logger = logging.getLogger(__name__)

MASS_DRIFT_TOL = 1e-9


def _read_only(array):
    array = np.array(array, dtype=float, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    """
    A row-stochastic matrix, optionally tied to a support adjacency.

    When ``support`` is given the kernel must vanish off the support
    (the kernel is supported by the correspondence).
    """
    matrix: np.ndarray
    support: Optional[np.ndarray] = None

    def __post_init__(self):
        try:
            validate_stochastic(self.matrix)
        except ValidationError as exc:
            raise InvalidKernel(detail='; '.join(exc.messages)) from exc
        matrix = _read_only(self.matrix)
        object.__setattr__(self, 'matrix', matrix)
        if self.support is not None:
            support = np.array(self.support, dtype=bool, copy=True)
            if support.shape != matrix.shape:
                raise DimensionMismatch(matrix.shape, support.shape)
            outside = np.argwhere((matrix > 0) & ~support)
            if outside.size:
                raise SupportViolation(int(outside[0][0]), int(outside[0][1]))
            support.setflags(write=False)
            object.__setattr__(self, 'support', support)

    @property
    def d(self):
        return self.matrix.shape[0]

    @classmethod
    def normalized(cls, weights, support=None):
        """Build a kernel by dividing each row of nonnegative weights by its sum."""
        weights = np.asarray(weights, dtype=float)
        return cls(weights / weights.sum(axis=1, keepdims=True), support=support)


@dataclass(frozen=True, eq=False)
class ProbabilityVector:
    entries: np.ndarray

    def __post_init__(self):
        try:
            validate_distribution(self.entries)
        except ValidationError as exc:
            raise InputError(detail='; '.join(exc.messages)) from exc
        object.__setattr__(self, 'entries', _read_only(self.entries))

    @property
    def d(self):
        return self.entries.shape[0]

    @classmethod
    def uniform(cls, d):
        return cls(np.full(d, 1.0 / d))

    @classmethod
    def dirac(cls, d, state):
        entries = np.zeros(d)
        entries[state] = 1.0
        return cls(entries)


@dataclass(frozen=True, eq=False)
class JointDistribution:
    """A probability measure on pairs of states."""
    matrix: np.ndarray

    def __post_init__(self):
        try:
            validate_joint(self.matrix)
        except ValidationError as exc:
            raise InputError(detail='; '.join(exc.messages)) from exc
        object.__setattr__(self, 'matrix', _read_only(self.matrix))


@dataclass(frozen=True, eq=False)
class SampledPath:
    """A realization of the Markov chain, with its seed for reproducibility."""
    states: np.ndarray
    seed: int
    d: int
    generator: str = GENERATOR_ID
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.states)


def _check_dimensions(expected, actual):
    if expected != actual:
        raise DimensionMismatch(expected, actual)


def identity_kernel(d):
    return TransitionKernel(np.eye(d))


def dirac_kernel(images):
    """The kernel of a single-valued map: row i is the point mass at f(i)."""
    d = len(images)
    matrix = np.zeros((d, d))
    matrix[np.arange(d), np.asarray(images, dtype=int)] = 1.0
    return TransitionKernel(matrix)


def _check_mass(totals, operation):
    """Total mass must stay 1 up to roundoff before it is renormalized."""
    drift = float(np.abs(np.asarray(totals) - 1.0).max())
    if drift > MASS_DRIFT_TOL:
        raise InvalidKernel(detail=f'{operation} lost mass {drift:.3e}, operand not stochastic')


def pushforward(distribution, kernel):
    """
    The measure muQ: (muQ)_j = sum_i mu_i p_ij.

    Raises:
        InvalidKernel: the total mass drifts from 1 by more than MASS_DRIFT_TOL
    """
    _check_dimensions(kernel.d, distribution.d)
    image = distribution.entries @ kernel.matrix
    total = image.sum()
    _check_mass(total, 'pushforward')
    return ProbabilityVector(image / total)


def pullback(kernel, function):
    """The function Qf: (Qf)_i = sum_j p_ij f_j."""
    function = np.asarray(function, dtype=float)
    _check_dimensions(kernel.d, function.shape[0])
    return kernel.matrix @ function


def compose(second, first):
    """
    The composite kernel Q2 Q1 (apply Q2, then Q1), i.e. the matrix product.
    """
    _check_dimensions(second.d, first.d)
    product = second.matrix @ first.matrix
    totals = product.sum(axis=1, keepdims=True)
    _check_mass(totals, 'compose')
    return TransitionKernel(product / totals)


def kernel_power(kernel, n):
    """The n-fold composite Q^n (identity for n = 0)."""
    if n < 0:
        raise InputError(n, detail='n must be nonnegative')
    result = identity_kernel(kernel.d)
    for _ in range(n):
        result = compose(result, kernel)
    return result


def cylinder_measure(distribution, kernel, orbit):
    """
    Mass of the cylinder [x_1 ... x_n] under the Markov measure:
    mu(x_1) p_{x_1 x_2} ... p_{x_{n-1} x_n}. Zero-probability edges give 0.
    """
    if len(orbit) < 1:
        raise InputError(detail='orbit must contain at least one state')
    _check_dimensions(kernel.d, distribution.d)
    mass = float(distribution.entries[orbit[0]])
    for i, j in zip(orbit[:-1], orbit[1:]):
        mass *= float(kernel.matrix[i, j])
    return mass


def cylinder_measures(distribution, kernel, orbits):
    """Vectorized cylinder masses for an (N, L) orbit array."""
    orbits = np.asarray(orbits)
    masses = distribution.entries[orbits[:, 0]].copy()
    if orbits.shape[1] > 1:
        masses *= kernel.matrix[orbits[:, :-1], orbits[:, 1:]].prod(axis=1)
    return masses


def _stationary_direct(matrix):
    d = matrix.shape[0]
    system = np.vstack([matrix.T - np.eye(d), np.ones((1, d))])
    rhs = np.zeros(d + 1)
    rhs[-1] = 1.0
    solution, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    solution = np.clip(solution, 0.0, None)
    return solution / solution.sum()


def stationary(kernel, tol=None, max_iter=None, method='power'):
    """
    A probability vector p with pP = p.

    The default method is power iteration on p -> p(P + I)/2 from the
    uniform vector; the shift keeps periodic chains from stalling. If it
    does not reach ``tol`` within ``max_iter`` steps a direct solve of
    (P^T - I)p = 0, sum p = 1 is tried for small d.

    Raises:
        NoConvergence: no method reached a residual of 1e-10
    """
    tol = resolve(tol, 'STATIONARY_TOL')
    max_iter = resolve(max_iter, 'POWER_MAX_ITER')
    matrix = kernel.matrix
    d = kernel.d

    if method == 'power':
        vector = np.full(d, 1.0 / d)
        for iteration in range(max_iter):
            image = vector @ matrix
            if np.abs(image - vector).max() <= tol:
                logger.debug("Stationary vector after %d iterations", iteration)
                return ProbabilityVector(vector / vector.sum())
            vector = 0.5 * (vector + image)
        logger.warning("Power iteration for the stationary vector stalled after %d steps", max_iter)
        if d > resolve(None, 'DIRECT_SOLVE_MAX_D'):
            raise NoConvergence(max_iter, detail='stationary vector')
    elif method != 'direct':
        raise InputError(method, detail="method must be 'power' or 'direct'")

    vector = _stationary_direct(matrix)
    residual = np.abs(vector @ matrix - vector).max()
    if not np.isfinite(residual) or residual > 1e-10:
        raise NoConvergence(max_iter, detail=f'stationary residual {residual:.3e}')
    return ProbabilityVector(vector)


def stationarity_residual(distribution, kernel):
    return float(np.abs(distribution.entries @ kernel.matrix - distribution.entries).max())


def _require_stationary(distribution, kernel):
    _check_dimensions(kernel.d, distribution.d)
    residual = stationarity_residual(distribution, kernel)
    if residual > resolve(None, 'STATIONARY_CHECK_TOL'):
        raise NotStationary(residual)


def shannon_entropy(masses):
    """Shannon entropy of a finite distribution, 0 log 0 = 0."""
    return float(entr(np.asarray(masses, dtype=float)).sum())


def entropy_rate(distribution, kernel):
    """The entropy -sum p_i p_ij log p_ij of a stationary Markov pair."""
    _require_stationary(distribution, kernel)
    return float(distribution.entries @ entr(kernel.matrix).sum(axis=1))


def potential_energy(distribution, kernel, values):
    """sum p_i p_ij phi(i, j) for a d x d array of edge values."""
    _check_dimensions(kernel.d, distribution.d)
    values = np.asarray(values, dtype=float)
    weights = distribution.entries[:, None] * kernel.matrix
    # off-support values may be undefined; only charged edges count
    return float(np.sum(np.where(weights > 0, weights * values, 0.0)))


def backward_kernel(distribution, kernel):
    """
    The time-reversed kernel R with p_j R_ji = p_i P_ij.

    A state with zero mass gets a row that is uniform over its support
    predecessors of positive mass, or uniform over all states when there
    are none; a ZeroStateWarning is emitted for each such row.
    """
    _require_stationary(distribution, kernel)
    p = distribution.entries
    matrix = kernel.matrix
    d = kernel.d
    flows = p[:, None] * matrix
    incoming = flows.sum(axis=0)
    reverse = np.zeros((d, d))
    support = kernel.support if kernel.support is not None else matrix > 0
    for j in range(d):
        if incoming[j] > 0 and p[j] > 0:
            reverse[j] = flows[:, j] / incoming[j]
            continue
        predecessors = np.flatnonzero(support[:, j] & (p > 0))
        if predecessors.size:
            reverse[j, predecessors] = 1.0 / predecessors.size
        else:
            reverse[j] = 1.0 / d
        message = f"ZeroState({j}): backward row defaulted to uniform"
        logger.warning(message)
        warnings.warn(message, ZeroStateWarning, stacklevel=2)
    return TransitionKernel.normalized(reverse)


def rokhlin_entropy(distribution, reverse):
    """Average Shannon entropy of the backward kernel rows: sum_j p_j H(R_j)."""
    _check_dimensions(reverse.d, distribution.d)
    return float(distribution.entries @ entr(reverse.matrix).sum(axis=1))


def joint_from_markov(distribution, kernel):
    """The two-step joint law nu_ij = p_i P_ij."""
    _check_dimensions(kernel.d, distribution.d)
    joint = distribution.entries[:, None] * kernel.matrix
    return JointDistribution(joint / joint.sum())


def factor_joint(joint, support=None):
    """
    Split a joint law into its first marginal and a conditional kernel.

    Rows with zero marginal mass are uniform over the support row (or over
    all states without a support).

    Returns:
        (ProbabilityVector, TransitionKernel) with mu_i Q_ij = nu_ij
    """
    nu = joint.matrix
    d = nu.shape[0]
    if support is not None:
        support = np.asarray(support, dtype=bool)
        _check_dimensions(nu.shape, support.shape)
        outside = np.argwhere((nu > 0) & ~support)
        if outside.size:
            raise SupportViolation(int(outside[0][0]), int(outside[0][1]))
    marginal = nu.sum(axis=1)
    rows = np.zeros((d, d))
    for i in range(d):
        if marginal[i] > 0:
            rows[i] = nu[i] / marginal[i]
        elif support is not None:
            rows[i] = support[i] / support[i].sum()
        else:
            rows[i] = 1.0 / d
    kernel = TransitionKernel.normalized(rows, support=support)
    return ProbabilityVector(marginal / marginal.sum()), kernel


def _cumulative_rows(masses):
    cumulative = np.cumsum(masses, axis=-1)
    last_positive = [int(np.flatnonzero(row > 0)[-1]) for row in np.atleast_2d(masses)]
    return cumulative.tolist(), last_positive


def sample_path(distribution, kernel, n, seed):
    """
    Sample x_1 ~ mu, x_{k+1} ~ Q(x_k, .) for a path of n states.

    Uniforms are drawn in one batch from PCG64 and inverted through the
    row CDFs, so a seed fixes the path bit for bit.
    """
    if n < 1:
        raise InputError(n, detail='path length must be at least 1')
    _check_dimensions(kernel.d, distribution.d)
    rng = make_generator(seed)
    uniforms = rng.random(n).tolist()

    (start_cdf,), (start_last,) = _cumulative_rows(distribution.entries.reshape(1, -1))
    row_cdfs, row_last = _cumulative_rows(kernel.matrix)

    states = [0] * n
    state = bisect.bisect_right(start_cdf, uniforms[0])
    state = min(state, start_last)
    states[0] = state
    for k in range(1, n):
        nxt = bisect.bisect_right(row_cdfs[state], uniforms[k])
        state = min(nxt, row_last[state])
        states[k] = state

    path = np.asarray(states, dtype=np.int64)
    path.setflags(write=False)
    logger.info("Sampled path of %d states with seed %d (%s)", n, seed, GENERATOR_ID)
    return SampledPath(states=path, seed=int(seed), d=kernel.d)


def _block_entropy(states, d, k):
    if k == 0:
        return 0.0
    count = len(states) - k + 1
    codes = np.zeros(count, dtype=np.int64)
    for offset in range(k):
        codes = codes * d + states[offset:offset + count]
    _, frequencies = np.unique(codes, return_counts=True)
    return shannon_entropy(frequencies / count)


def block_entropy_estimate(path, k):
    """
    Plug-in estimate H_k - H_{k-1} of the shift entropy from empirical
    k-block frequencies.

    Raises:
        InsufficientData: fewer than 50 * d^k blocks
    """
    if k < 1:
        raise InputError(k, detail='block length must be at least 1')
    blocks = len(path) - k + 1
    required = 50 * path.d ** k
    if blocks < required:
        raise InsufficientData(blocks, required)
    states = np.asarray(path.states, dtype=np.int64)
    estimate = _block_entropy(states, path.d, k) - _block_entropy(states, path.d, k - 1)
    logger.info("Block entropy estimate k=%d over %d blocks: %.6f", k, blocks, estimate)
    return estimate


def entropy_bound(kernel):
    """log of the largest row support: an upper bound for the entropy rate."""
    support = kernel.support if kernel.support is not None else kernel.matrix > 0
    return math.log(int(support.sum(axis=1).max()))
