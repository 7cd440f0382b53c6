"""Topological pressure and equilibrium states of finite correspondences.

The pressure of (T, phi) is log rho(A_phi), where A_phi carries a_ij e^phi(i,j).
It is computed from the Perron eigenpair, from orbit sums, and from the
variational side (entropy plus potential energy of supported Markov kernels).
"""
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import entr, logsumexp

from ..conf import resolve
from ..exceptions import (
    BudgetExceeded, CountOverflow, DegenerateEigenvector, DimensionMismatch, DisallowedEdge,
    IndexOutOfRange, InputError, InvariantViolation, NoConvergence, SupportViolation,
    UndefinedPotential,
)
from . import finite_correspondence as fc
from . import kernels

logger = logging.getLogger(__name__)

ENUMERATION_AGREEMENT = 1e-9
OPTIMIZER_SLACK = 1e-9
CONSTRUCTION_GAP = 1e-8
STALL_GRADIENT = 1e-6


@dataclass(frozen=True)
class PerronResult:
    """Leading eigenvalue of a nonnegative matrix with a nonnegative eigenvector summing to 1."""
    value: float
    vector: np.ndarray
    iterations: int
    residual: float


@dataclass(frozen=True)
class EquilibriumState:
    distribution: kernels.ProbabilityVector
    kernel: kernels.TransitionKernel
    value: float
    pressure: float
    gap: float
    unique: bool = True

    def as_dict(self):
        return {
            'p': self.distribution.entries.tolist(),
            'P': self.kernel.matrix.tolist(),
            'value': self.value,
            'pressure': self.pressure,
            'gap': self.gap,
            'unique': self.unique,
        }


@dataclass
class OptimizerOptions:
    max_iter: Optional[int] = None
    step: Optional[float] = None
    gradient_tol: float = 1e-9
    initial: Optional[kernels.TransitionKernel] = None


@dataclass(frozen=True)
class OptimizerResult:
    kernel: kernels.TransitionKernel
    value: float
    iterations: int
    converged: bool


@dataclass
class PressureReport:
    spectral: float
    combinatorial: list
    constructed: EquilibriumState
    optimizer: OptimizerResult
    checks: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def variational(self):
        return self.constructed.value

    @property
    def passed(self):
        return all(self.checks.values())

    def failed_checks(self):
        return [name for name, ok in self.checks.items() if not ok]

    def as_dict(self):
        return {
            'spectral': self.spectral,
            'combinatorial': [[n, value] for n, value in self.combinatorial],
            'variational': self.variational,
            'constructed': self.constructed.as_dict(),
            'optimizer': {
                'value': self.optimizer.value,
                'iterations': self.optimizer.iterations,
                'converged': self.optimizer.converged,
            },
            'checks': {name: 'pass' if ok else 'fail' for name, ok in self.checks.items()},
            'diagnostics': self.diagnostics,
        }


# ---------------------------------------------------------------------------
# Perron eigenpair
# ---------------------------------------------------------------------------

def _perron_direct(matrix):
    eigenvalues, eigenvectors = np.linalg.eig(matrix)
    index = int(np.argmax(eigenvalues.real))
    vector = eigenvectors[:, index].real
    if vector.sum() < 0:
        vector = -vector
    if vector.min() < -1e-9 * np.abs(vector).max():
        return None
    vector = np.clip(vector, 0.0, None)
    return float(eigenvalues[index].real), vector / vector.sum()


def perron_eigenpair(matrix, tol=None, max_iter=None):
    """
    Spectral radius and a nonnegative right eigenvector of a nonnegative matrix.

    Power iteration on M/s + I from the uniform vector, with s the largest
    entry; the shift removes periodicity and the scaling keeps it effective.
    For reducible matrices the limit lies in the dominant block. When the
    iteration stalls (Jordan blocks converge only polynomially), small
    matrices fall back to a dense eigendecomposition.

    Convergence is judged entry by entry on the support {v_i > threshold *
    max v}, so transient entries must die out before the iteration stops;
    they are zeroed in the returned vector.

    Args:
        matrix: d x d nonnegative array
        tol: per-entry relative residual target |Mv - lambda v|_i <= tol lambda v_i
        max_iter: iteration cap

    Returns:
        PerronResult, ``residual`` being ||Mv - lambda v|| / (lambda ||v||)

    Raises:
        NoConvergence: neither method produced a nonnegative eigenvector
    """
    tol = resolve(tol, 'POWER_TOL')
    max_iter = resolve(max_iter, 'POWER_MAX_ITER')
    threshold = resolve(None, 'ZERO_THRESHOLD')
    matrix = np.asarray(matrix, dtype=float)
    d = matrix.shape[0]
    scale = float(matrix.max())
    if scale <= 0:
        raise DegenerateEigenvector(detail='matrix has no positive entry')
    scaled = matrix / scale

    vector = np.full(d, 1.0 / d)
    residual = math.inf
    for iteration in range(1, max_iter + 1):
        image = scaled @ vector
        support = vector > threshold * vector.max()
        value = image[support].sum() / vector[support].sum()
        residual = (np.abs(image - value * vector)[support] / (value * vector[support])).max()
        if residual <= tol:
            vector = np.where(support, vector, 0.0)
            vector /= vector.sum()
            image = scaled @ vector
            value = image[support].sum() / vector[support].sum()
            norm_residual = np.abs(image - value * vector).max() / (value * vector.max())
            logger.debug("Perron eigenpair after %d iterations, residual %.3e", iteration, residual)
            return PerronResult(value * scale, vector, iteration, float(norm_residual))
        vector = image + vector
        vector /= vector.sum()

    logger.warning("Power iteration stalled at residual %.3e after %d steps", residual, max_iter)
    if d <= resolve(None, 'DIRECT_SOLVE_MAX_D'):
        direct = _perron_direct(scaled)
        if direct is not None:
            value, vector = direct
            residual = np.abs(scaled @ vector - value * vector).max() / (value * vector.max())
            if residual <= max(tol, 1e-10):
                return PerronResult(value * scale, vector, max_iter, float(residual))
    raise NoConvergence(max_iter, detail=f'Perron residual {residual:.3e}')


# ---------------------------------------------------------------------------
# Weighted matrix and pressure
# ---------------------------------------------------------------------------

def check_potential(correspondence, potential):
    """
    Raises:
        DisallowedEdge: the potential lives on an edge T does not have
        UndefinedPotential: an edge of T carries no potential value
    """
    if potential.adjacency.shape != correspondence.adjacency.shape:
        raise DimensionMismatch(correspondence.adjacency.shape, potential.adjacency.shape)
    extra = np.argwhere(potential.adjacency & ~correspondence.adjacency)
    if extra.size:
        raise DisallowedEdge(int(extra[0][0]), int(extra[0][1]))
    missing = np.argwhere(correspondence.adjacency & ~potential.adjacency)
    if missing.size:
        raise UndefinedPotential(int(missing[0][0]), int(missing[0][1]))


def potential_shift(correspondence, potential):
    """Largest value of phi over the edges of T."""
    check_potential(correspondence, potential)
    return float(potential.values[correspondence.adjacency].max())


def weighted_matrix(correspondence, potential, shift=0.0):
    """
    A_phi with entries a_ij e^(phi(i,j) - shift), zero off the edge set.

    Entries overflow once phi exceeds shift by about 709; spectral
    computations pass ``shift=potential_shift(...)`` and add it back to
    log lambda.

    Raises:
        DisallowedEdge: the potential lives on an edge T does not have
        UndefinedPotential: an edge of T carries no potential value
    """
    check_potential(correspondence, potential)
    exponents = np.where(correspondence.adjacency, potential.values - shift, -np.inf)
    weights = np.exp(exponents)
    weights.setflags(write=False)
    return weights


def shifted_perron(correspondence, potential, tol=None, max_iter=None):
    """
    Perron eigenpair of e^-m A_phi with m = max phi.

    Returns:
        (weights, PerronResult, m); log rho(A_phi) = log(result.value) + m
    """
    shift = potential_shift(correspondence, potential)
    weights = weighted_matrix(correspondence, potential, shift)
    return weights, perron_eigenpair(weights, tol, max_iter), shift


def pressure_spectral(correspondence, potential, tol=None, max_iter=None):
    """log rho(A_phi), computed as log rho(e^-m A_phi) + m."""
    _, result, shift = shifted_perron(correspondence, potential, tol, max_iter)
    return math.log(result.value) + shift


def topological_entropy(correspondence):
    """Pressure of the zero potential: log of the spectral radius of A."""
    return pressure_spectral(correspondence, fc.EdgePotential.zero(correspondence))


def _log_orbit_totals(correspondence, potential, n_max):
    """log 1^T A_phi^n 1 for n = 1..n_max, accumulated in the log domain."""
    adjacency = correspondence.adjacency
    exponents = np.where(adjacency, potential.values, -np.inf)
    levels = np.zeros(correspondence.d)
    totals = []
    for _ in range(n_max):
        levels = logsumexp(exponents + levels[None, :], axis=1)
        totals.append(float(logsumexp(levels)))
    return totals


def _enumerated_estimate(correspondence, potential, n, budget):
    orbits = fc.orbit_array(correspondence, n + 1, budget=budget)
    sums = fc.birkhoff_sums(potential, orbits)
    return float(logsumexp(sums)) / n


def pressure_combinatorial(correspondence, potential, n, method='both', budget=None):
    """
    (1/n) log of the sum of e^{S_n phi} over all orbits of length n + 1.

    ``method`` selects the log-domain matrix powers ('matrix'), explicit
    orbit enumeration ('enumerate'), or both ('both', the default), in
    which case enumeration runs only when the orbit count is small and the
    two values must agree to 1e-9.

    Raises:
        BudgetExceeded: enumeration requested beyond ``budget``
        InvariantViolation: the two evaluations disagree
    """
    if n < 1:
        raise InputError(n, detail='n must be at least 1')
    check_potential(correspondence, potential)
    if method == 'enumerate':
        return _enumerated_estimate(correspondence, potential, n, budget)
    if method not in ('both', 'matrix'):
        raise InputError(method, detail="method must be 'both', 'matrix' or 'enumerate'")

    estimate = _log_orbit_totals(correspondence, potential, n)[-1] / n
    if method == 'matrix':
        return estimate

    cap = min(resolve(budget, 'ORBIT_BUDGET'), resolve(None, 'ENUMERATION_CHECK_CAP'))
    try:
        count = fc.count_orbits(correspondence, n)
    except CountOverflow:
        return estimate
    if count <= cap:
        enumerated = _enumerated_estimate(correspondence, potential, n, cap)
        if abs(enumerated - estimate) > ENUMERATION_AGREEMENT:
            raise InvariantViolation(
                n, detail=f'enumeration {enumerated!r} != matrix powers {estimate!r}'
            )
    return estimate


def pressure_sequence(correspondence, potential, n_max):
    """[(n, combinatorial estimate)] for n = 1..n_max via matrix powers."""
    check_potential(correspondence, potential)
    totals = _log_orbit_totals(correspondence, potential, n_max)
    return [(n, total / n) for n, total in enumerate(totals, start=1)]


def map_pressure(images, values):
    """
    Pressure of a single-valued map on a finite set with a state potential:
    the largest mean of ``values`` over a periodic cycle of the map.
    """
    d = len(images)
    if len(values) != d:
        raise DimensionMismatch(d, len(values))
    for image in images:
        if not 0 <= image < d:
            raise IndexOutOfRange(image, d)
    best = -math.inf
    seen = set()
    for start in range(d):
        path = []
        position = {}
        state = start
        while state not in seen and state not in position:
            position[state] = len(path)
            path.append(state)
            state = images[state]
        if state in position:
            cycle = path[position[state]:]
            best = max(best, math.fsum(values[i] for i in cycle) / len(cycle))
        seen.update(path)
    return best


# ---------------------------------------------------------------------------
# Variational side
# ---------------------------------------------------------------------------

def _check_supported(correspondence, kernel):
    outside = np.argwhere((kernel.matrix > 0) & ~correspondence.adjacency)
    if outside.size:
        raise SupportViolation(int(outside[0][0]), int(outside[0][1]))


def variational_objective(correspondence, potential, kernel, distribution=None):
    """
    Entropy rate plus potential energy of (p, P), p the stationary vector of P.

    Raises:
        SupportViolation: P charges an edge outside T
    """
    _check_supported(correspondence, kernel)
    if distribution is None:
        distribution = kernels.stationary(kernel)
    entropy = kernels.entropy_rate(distribution, kernel)
    return entropy + kernels.potential_energy(distribution, kernel, potential.values)


def equilibrium_construct(correspondence, potential, tol=None, max_iter=None):
    """
    The explicit equilibrium state built from the Perron eigenvector.

    The eigenpair comes from e^-m A_phi (m = max phi); q and the kernel
    do not depend on m. With A_phi q = lambda q and L the states where q is not negligible,
    rows in L get p_ij = q_j a_ij e^phi(i,j) / (lambda q_i) and rows outside
    L are uniform over their images. The stationary vector is taken on
    the L-block and padded with zeros.

    Returns:
        EquilibriumState whose value equals log lambda up to roundoff

    Raises:
        NoConvergence: eigenvector or stationary vector failed
        DegenerateEigenvector: no state survives the zero threshold
    """
    weights, perron, shift = shifted_perron(correspondence, potential, tol, max_iter)
    lam = perron.value
    q = perron.vector
    live = q > resolve(None, 'ZERO_THRESHOLD') * q.max()
    if not live.any():
        raise DegenerateEigenvector(detail='eigenvector vanishes below the zero threshold')
    q_live = np.where(live, q, 0.0)

    adjacency = correspondence.adjacency
    rows = np.zeros(weights.shape)
    for i in range(correspondence.d):
        if live[i]:
            rows[i] = weights[i] * q_live / (lam * q[i])
        if not live[i] or rows[i].sum() <= 0:
            rows[i] = adjacency[i] / adjacency[i].sum()
    kernel = kernels.TransitionKernel.normalized(rows, support=adjacency)

    block = kernels.TransitionKernel.normalized(kernel.matrix[np.ix_(live, live)])
    block_distribution = kernels.stationary(block)
    entries = np.zeros(correspondence.d)
    entries[live] = block_distribution.entries
    distribution = kernels.ProbabilityVector(entries)

    value = variational_objective(correspondence, potential, kernel, distribution)
    pressure = math.log(lam) + shift
    unique = fc.is_irreducible(correspondence)
    if not unique:
        logger.warning("Adjacency is reducible: the equilibrium state may not be unique")
    logger.info("Constructed equilibrium state: value %.12f, pressure %.12f", value, pressure)
    return EquilibriumState(distribution, kernel, value, pressure, pressure - value, unique)


class _LogitModel:
    """Kernels supported by T parametrized by one logit per allowed edge."""

    def __init__(self, correspondence, potential):
        self.correspondence = correspondence
        self.adjacency = correspondence.adjacency
        self.rows, self.cols = np.nonzero(self.adjacency)
        self.values = np.asarray(potential.values)
        self.d = correspondence.d
        self.batched_solve = fc.is_irreducible(correspondence)

    @property
    def size(self):
        return len(self.rows)

    def kernel_batch(self, thetas):
        thetas = np.atleast_2d(thetas)
        logits = np.full((len(thetas), self.d, self.d), -np.inf)
        logits[:, self.rows, self.cols] = thetas
        logits -= logits.max(axis=2, keepdims=True)
        weights = np.exp(logits)
        return weights / weights.sum(axis=2, keepdims=True)

    def _stationary(self, matrices):
        if self.batched_solve:
            count, d = len(matrices), self.d
            system = np.transpose(matrices, (0, 2, 1)) - np.eye(d)
            system[:, -1, :] = 1.0
            rhs = np.zeros((count, d))
            rhs[:, -1] = 1.0
            try:
                solution = np.linalg.solve(system, rhs[..., None])[..., 0]
                return np.clip(solution, 0.0, None)
            except np.linalg.LinAlgError:
                logger.debug("Batched stationary solve failed, falling back to iteration")
        return np.array([
            kernels.stationary(kernels.TransitionKernel(matrix)).entries for matrix in matrices
        ])

    def objective(self, thetas):
        matrices = self.kernel_batch(thetas)
        stationary = self._stationary(matrices)
        entropy = (stationary * entr(matrices).sum(axis=2)).sum(axis=1)
        energy = (stationary * (matrices * self.values).sum(axis=2)).sum(axis=1)
        return entropy + energy

    def gradient(self, theta, step):
        shifts = np.eye(self.size) * step
        batch = np.vstack([theta + shifts, theta - shifts])
        values = self.objective(batch)
        return (values[:self.size] - values[self.size:]) / (2 * step)


def variational_optimize(correspondence, potential, options=None):
    """
    Maximize the variational objective over kernels supported by T.

    Gradient ascent on edge logits with central finite differences and a
    backtracking (Armijo) step. This verifies the variational principle
    independently of the eigenvector construction.

    Returns:
        OptimizerResult; ``converged`` is False when the iteration cap was
        reached or the line search failed with the gradient above
        STALL_GRADIENT, in which case the best iterate is returned
    """
    options = options or OptimizerOptions()
    max_iter = resolve(options.max_iter, 'OPTIMIZER_MAX_ITER')
    step = resolve(options.step, 'OPTIMIZER_STEP')
    check_potential(correspondence, potential)
    model = _LogitModel(correspondence, potential)

    if options.initial is not None:
        _check_supported(correspondence, options.initial)
        theta = np.log(np.clip(options.initial.matrix[model.rows, model.cols], 1e-22, None))
    else:
        theta = np.zeros(model.size)
    value = float(model.objective(theta)[0])

    rate = 1.0
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        gradient = model.gradient(theta, step)
        slope = float(gradient @ gradient)
        if np.abs(gradient).max() <= options.gradient_tol:
            converged = True
            break
        while rate >= 1e-12:
            candidate = theta + rate * gradient
            candidate_value = float(model.objective(candidate)[0])
            if candidate_value >= value + 1e-4 * rate * slope:
                theta, value = candidate, candidate_value
                rate = min(rate * 2.0, 1e6)
                break
            rate *= 0.5
        else:
            # gains below roundoff only count as convergence near a critical point
            residual = float(np.abs(gradient).max())
            converged = residual <= STALL_GRADIENT
            if not converged:
                message = f"Variational line search stalled with gradient {residual:.3e}"
                logger.warning(message)
                warnings.warn(message, RuntimeWarning, stacklevel=2)
            break
    else:
        message = f"Variational optimizer hit {max_iter} iterations; returning best iterate"
        logger.warning(message)
        warnings.warn(message, RuntimeWarning, stacklevel=2)

    kernel = kernels.TransitionKernel(
        model.kernel_batch(theta)[0], support=correspondence.adjacency
    )
    logger.info("Variational optimizer: value %.12f after %d iterations", value, iteration)
    return OptimizerResult(kernel, value, iteration, converged)


def verify_vp(correspondence, potential, n_max, options=None, budget=None):
    """
    Compare the pressure computed every way and check the variational principle.

    Returns:
        PressureReport with named pass/fail checks
    """
    if n_max < 1:
        raise InputError(n_max, detail='n_max must be at least 1')
    _, perron, shift = shifted_perron(correspondence, potential)
    spectral = math.log(perron.value) + shift
    sequence = pressure_sequence(correspondence, potential, n_max)
    constructed = equilibrium_construct(correspondence, potential)
    optimized = variational_optimize(correspondence, potential, options)

    checks = {
        'optimizer_below_spectral': optimized.value <= spectral + OPTIMIZER_SLACK,
        'construction_attains_spectral': abs(constructed.value - spectral) <= CONSTRUCTION_GAP,
        'spectral_lower_bound': spectral >= -fc.sup_norm(potential) - 1e-12,
    }
    cap = min(resolve(budget, 'ORBIT_BUDGET'), resolve(None, 'ENUMERATION_CHECK_CAP'))
    try:
        if fc.count_orbits(correspondence, n_max) <= cap:
            enumerated = _enumerated_estimate(correspondence, potential, n_max, cap)
            checks['enumeration_matches_matrix'] = (
                abs(enumerated - sequence[-1][1]) <= ENUMERATION_AGREEMENT
            )
    except (CountOverflow, BudgetExceeded):
        pass

    report = PressureReport(
        spectral=spectral,
        combinatorial=sequence,
        constructed=constructed,
        optimizer=optimized,
        checks=checks,
        diagnostics={
            'perron_iterations': perron.iterations,
            'perron_residual': perron.residual,
            'stationary_residual': kernels.stationarity_residual(
                constructed.distribution, constructed.kernel
            ),
            'unique': constructed.unique,
        },
    )
    if not report.passed:
        logger.warning("Variational checks failed: %s", ', '.join(report.failed_checks()))
    return report
