"""Backward-orbit numerics for the holomorphic correspondences f_c.

f_c relates z to w when (w - c)^p = z^q, p < q: every z has p forward images
and every w has q backward images. Roots use the principal branch
r^(1/k) e^(i theta/k) with theta in (-pi, pi], siblings are multiplied by
unit roots, and every root set is ordered by (argument, modulus).

Backward orbits are stored as complex arrays whose row is (y_0, ..., y_n)
with y_n = x; all weights live in the log domain.
"""
import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import partial
from multiprocessing.pool import ThreadPool
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from ..conf import resolve
from ..exceptions import (
    BudgetExceeded, GridMismatch, InputError, RootResidual, SingularPotential,
)
from .random_source import make_generator, split_seeds

logger = logging.getLogger(__name__)

POTENTIAL_KINDS = ('zero', 'constant', 'geometric')


@dataclass(frozen=True)
class HolomorphicCorrespondence:
    p: int
    q: int
    c: complex = 0j

    def __post_init__(self):
        for name in ('p', 'q'):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise InputError(name, value, detail='must be a positive integer')
        if self.p >= self.q:
            raise InputError(self.p, self.q, detail='the correspondence needs p < q')
        c = complex(self.c)
        if not (math.isfinite(c.real) and math.isfinite(c.imag)):
            raise InputError(c, detail='c must be finite')
        object.__setattr__(self, 'c', c)

    def __str__(self):
        return f"z^({self.q}/{self.p}) + ({self.c.real:g}{self.c.imag:+g}i)"


@dataclass(frozen=True)
class PotentialSpec:
    """
    A potential on pairs (z, w) with w in f_c(z).

    ``geometric`` is -t log|q z^(q-1) / (p (w - c)^(p-1))|; its exponent is
    clamped to |t| <= POTENTIAL_MAX_T.
    """
    kind: str = 'zero'
    t: float = 0.0

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise InputError(self.kind, detail=f'potential kind must be one of {POTENTIAL_KINDS}')
        t = float(self.t)
        if not math.isfinite(t):
            raise InputError(t, detail='potential parameter must be finite')
        limit = resolve(None, 'POTENTIAL_MAX_T')
        if self.kind == 'geometric' and abs(t) > limit:
            clamped = math.copysign(limit, t)
            message = f"Geometric exponent {t} clamped to {clamped}"
            logger.warning(message)
            warnings.warn(message, RuntimeWarning, stacklevel=3)
            t = clamped
        object.__setattr__(self, 't', t)

    def as_dict(self):
        return {'kind': self.kind, 't': self.t}


@dataclass(frozen=True)
class RootSet:
    """Distinct roots in canonical order; a collapsed zero root carries its multiplicity."""
    points: np.ndarray
    multiplicity: int = 1

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class BackwardTree:
    paths: np.ndarray
    log_multiplicity: np.ndarray

    @property
    def leaves(self):
        return self.paths[:, 0]

    def __len__(self):
        return len(self.paths)


@dataclass(frozen=True)
class EmpiricalMeasure:
    points: np.ndarray
    logweights: np.ndarray
    paths: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def log_total(self):
        return float(logsumexp(self.logweights))

    def total_mass(self):
        return math.exp(self.log_total())

    def normalized(self):
        return EmpiricalMeasure(
            self.points, self.logweights - self.log_total(), self.paths, dict(self.metadata)
        )

    def masses(self):
        return np.exp(self.logweights - self.log_total())

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class DensityGrid:
    bounds: tuple
    resolution: tuple
    bins: np.ndarray
    outside: float

    def same_grid(self, other):
        return (
            tuple(self.resolution) == tuple(other.resolution) and
            np.allclose(self.bounds, other.bounds, rtol=0.0, atol=1e-12)
        )

    def centers(self):
        re_min, re_max, im_min, im_max = self.bounds
        nx, ny = self.resolution
        re = re_min + (np.arange(nx) + 0.5) * (re_max - re_min) / nx
        im = im_min + (np.arange(ny) + 0.5) * (im_max - im_min) / ny
        return re, im


# ---------------------------------------------------------------------------
# Roots
# ---------------------------------------------------------------------------

def _argument(values):
    angles = np.angle(values)
    return np.where(angles <= -np.pi, angles + 2 * np.pi, angles)


def _principal_roots(values, k):
    values = np.asarray(values, dtype=complex)
    return np.abs(values) ** (1.0 / k) * np.exp(1j * _argument(values) / k)


def _ordered_roots(values, k):
    """All k-th roots of each value, shape (N, k), ordered by argument."""
    unit = np.exp(2j * np.pi * np.arange(k) / k)
    roots = _principal_roots(values, k)[:, None] * unit[None, :]
    order = np.argsort(_argument(roots), axis=1, kind='stable')
    return np.take_along_axis(roots, order, axis=1)


def _check_residual(roots, k, targets):
    tol = resolve(None, 'ROOT_RESIDUAL_TOL')
    defect = np.abs(roots ** k - targets) / np.maximum(1.0, np.abs(targets))
    worst = float(defect.max()) if defect.size else 0.0
    if worst > tol:
        raise RootResidual(f'{worst:.3e}', detail=f'{k}-th roots miss their target')


def _root_set(target, k, offset):
    if target == 0:
        return RootSet(np.array([offset], dtype=complex), multiplicity=k)
    roots = _ordered_roots(np.array([target]), k)
    _check_residual(roots, k, np.array([[target]]))
    points = roots[0] + offset
    order = np.lexsort((np.abs(points), _argument(points)))
    return RootSet(points[order])


def forward_images(corr, z):
    """The p solutions w of (w - c)^p = z^q."""
    return _root_set(complex(z) ** corr.q, corr.p, corr.c)


def backward_images(corr, w):
    """The q solutions z of z^q = (w - c)^p."""
    return _root_set((complex(w) - corr.c) ** corr.p, corr.q, 0j)


# ---------------------------------------------------------------------------
# Potentials
# ---------------------------------------------------------------------------

def potential_values(spec, corr, z, w):
    """
    Vectorized potential on edges z -> w.

    Raises:
        SingularPotential: a geometric potential is evaluated within the
            guard distance of z = 0 or (for p > 1) of w = c
    """
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    if spec.kind == 'zero' or (spec.kind == 'geometric' and spec.t == 0.0):
        return np.zeros(np.broadcast(z, w).shape)
    if spec.kind == 'constant':
        return np.full(np.broadcast(z, w).shape, spec.t)

    guard = resolve(None, 'POTENTIAL_GUARD')
    if np.any(np.abs(z) < guard):
        raise SingularPotential(detail='geometric potential undefined near z = 0')
    shifted = np.abs(w - corr.c)
    if corr.p > 1 and np.any(shifted < guard):
        raise SingularPotential(detail='geometric potential undefined near w = c')
    log_derivative = (
        math.log(corr.q) + (corr.q - 1) * np.log(np.abs(z))
        - math.log(corr.p) - (corr.p - 1) * np.log(np.where(corr.p > 1, shifted, 1.0))
    )
    return -spec.t * log_derivative


def evaluate_potential(spec, corr, z, w):
    """The potential on a single edge z -> w."""
    return float(potential_values(spec, corr, z, w))


def path_sums(spec, corr, paths):
    """S_n phi = sum over i of phi(y_i, y_{i+1}) for each row of a path array."""
    paths = np.asarray(paths, dtype=complex)
    if paths.shape[1] < 2:
        return np.zeros(len(paths))
    return potential_values(spec, corr, paths[:, :-1], paths[:, 1:]).sum(axis=1)


# ---------------------------------------------------------------------------
# Backward trees and sampling
# ---------------------------------------------------------------------------

def enumerate_backward(corr, x, n, budget=None):
    """
    Every backward path (y_0, ..., y_n = x), level by level.

    Siblings keep the canonical root order, so rows come out in a fixed
    order. Repeated zero roots are collapsed into one child whose path
    carries log q extra multiplicity.

    Raises:
        BudgetExceeded: q^n is larger than ``budget``
    """
    if n < 0:
        raise InputError(n, detail='n must be nonnegative')
    budget = resolve(budget, 'ORBIT_BUDGET')
    if corr.q ** n > budget:
        raise BudgetExceeded(corr.q ** n, budget)

    paths = np.array([[complex(x)]], dtype=complex)
    log_multiplicity = np.zeros(1)
    log_q = math.log(corr.q)
    for _ in range(n):
        targets = (paths[:, 0] - corr.c) ** corr.p
        children = _ordered_roots(targets, corr.q)
        _check_residual(children, corr.q, targets[:, None])
        keep = np.ones(children.shape, dtype=bool)
        collapsed = targets == 0
        keep[collapsed, 1:] = False
        parents, slots = np.nonzero(keep)
        paths = np.hstack([children[parents, slots][:, None], paths[parents]])
        log_multiplicity = log_multiplicity[parents] + np.where(collapsed[parents], log_q, 0.0)
    logger.debug("Backward tree of depth %d has %d paths", n, len(paths))
    return BackwardTree(paths, log_multiplicity)


def _sample_chunk(corr, x, n, size, seed):
    rng = make_generator(seed)
    # draw k drives the k-th step counted from the leaf; prefixes do not depend on n
    choices = [rng.integers(0, corr.q, size=size) for _ in range(n)]
    unit = np.exp(2j * np.pi * np.arange(corr.q) / corr.q)
    paths = np.empty((size, n + 1), dtype=complex)
    paths[:, n] = x
    for level in range(n):
        column = n - level
        targets = (paths[:, column] - corr.c) ** corr.p
        branch = choices[n - 1 - level]
        paths[:, column - 1] = _principal_roots(targets, corr.q) * unit[branch]
    return paths


def sample_paths(corr, x, n, samples, seed, workers=None):
    """
    ``samples`` random backward paths, each step picking one of the q roots
    uniformly. Chunk k of SAMPLE_CHUNK paths uses the k-th seed split from
    ``seed``, so the result does not depend on ``workers``.

    Branch choices are coupled across depths: with the same seed, path i
    at depth n + 1 starts with a fresh step from x and then repeats the
    branches of path i at depth n. Backward branches contract, so the
    leaves of successive depths pair up and their empirical measures
    settle rather than differing by sampling noise.
    """
    if samples < 1:
        raise InputError(samples, detail='samples must be at least 1')
    if n < 0:
        raise InputError(n, detail='n must be nonnegative')
    chunk = resolve(None, 'SAMPLE_CHUNK')
    sizes = [min(chunk, samples - start) for start in range(0, samples, chunk)]
    seeds = split_seeds(seed, len(sizes))
    job = partial(_run_chunk, corr, complex(x), n)
    if workers and workers > 1 and len(sizes) > 1:
        with ThreadPool(workers) as pool:
            parts = pool.map(job, zip(sizes, seeds))
    else:
        parts = [job(item) for item in zip(sizes, seeds)]
    return np.vstack(parts)


def _run_chunk(corr, x, n, item):
    size, seed = item
    return _sample_chunk(corr, x, n, size, seed)


def sample_backward(corr, spec, x, n, samples, seed, workers=None):
    """
    Monte Carlo backward paths weighted so that the total weight is an
    unbiased estimate of Z_n(x): each path gets n log q + S_n phi - log(samples).

    Returns:
        EmpiricalMeasure on the leaves y_0, with the paths attached
    """
    paths = sample_paths(corr, x, n, samples, seed, workers)
    logweights = n * math.log(corr.q) + path_sums(spec, corr, paths) - math.log(samples)
    logger.info("Sampled %d backward paths of depth %d (seed %d)", samples, n, seed)
    return EmpiricalMeasure(paths[:, 0], logweights, paths, {'seed': int(seed), 'samples': samples})


def _weighted_paths(corr, spec, x, n, mode, samples, seed, budget, workers):
    if mode == 'exact':
        tree = enumerate_backward(corr, x, n, budget)
        return tree.paths, path_sums(spec, corr, tree.paths) + tree.log_multiplicity
    if mode == 'sampled':
        if samples is None:
            raise InputError(detail='sampled mode needs a sample count')
        seed = resolve(seed, 'DEFAULT_SEED')
        measure = sample_backward(corr, spec, x, n, samples, seed, workers)
        return measure.paths, measure.logweights
    raise InputError(mode, detail="mode must be 'exact' or 'sampled'")


def partition_function(corr, spec, x, n, mode='exact', samples=None, seed=None,
                       budget=None, workers=None):
    """
    log Z_n(x), the log of the sum of exp(S_n phi) over backward orbits of x.

    Exact mode enumerates the tree; sampled mode returns the log of the
    unbiased Monte Carlo estimate.
    """
    _, logweights = _weighted_paths(corr, spec, x, n, mode, samples, seed, budget, workers)
    return float(logsumexp(logweights))


def equidist_measure_a(corr, spec, x, n, mode='exact', samples=None, seed=None,
                       budget=None, workers=None):
    """
    Atoms at every point y_0, ..., y_n of every backward path, each with
    the path weight divided by n + 1, normalized to total mass 1.
    """
    paths, logweights = _weighted_paths(corr, spec, x, n, mode, samples, seed, budget, workers)
    points = paths.ravel()
    atom_weights = np.repeat(logweights - math.log(n + 1), n + 1)
    measure = EmpiricalMeasure(points, atom_weights, paths, {'measure': 'a', 'n': n})
    return measure.normalized()


def equidist_measure_b(corr, spec, x, n, mode='exact', samples=None, seed=None,
                       budget=None, workers=None):
    """Atoms at the path roots y_0 with normalized path weights."""
    paths, logweights = _weighted_paths(corr, spec, x, n, mode, samples, seed, budget, workers)
    measure = EmpiricalMeasure(paths[:, 0], logweights, paths, {'measure': 'b', 'n': n})
    return measure.normalized()


def julia_cloud(corr, n, burn, samples, seed, start=1 + 0.5j):
    """
    Random backward iteration from ``start``: ``samples`` independent chains
    of n steps, keeping the iterates after the first ``burn``.

    Returns:
        complex array of samples * (n - burn) points, chain by chain
    """
    if not 0 <= burn < n:
        raise InputError(burn, n, detail='burn must satisfy 0 <= burn < n')
    paths = sample_paths(corr, start, n, samples, seed)
    # column n is the start, column 0 the deepest preimage
    kept = paths[:, :n - burn][:, ::-1]
    return kept.ravel()


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------

def rasterize(measure, bounds, resolution):
    """
    Bin the normalized measure on a rectangular grid.

    Args:
        bounds: (re_min, re_max, im_min, im_max)
        resolution: (nx, ny)

    Returns:
        DensityGrid whose ``bins[iy, ix]`` hold mass; mass outside the
        rectangle is reported in ``outside``
    """
    re_min, re_max, im_min, im_max = (float(b) for b in bounds)
    nx, ny = (int(r) for r in resolution)
    if nx < 1 or ny < 1 or re_max <= re_min or im_max <= im_min:
        raise InputError(bounds, resolution, detail='grid needs positive size')
    masses = measure.masses()
    points = np.asarray(measure.points, dtype=complex)
    bins, _, _ = np.histogram2d(
        points.imag, points.real,
        bins=(ny, nx),
        range=[[im_min, im_max], [re_min, re_max]],
        weights=masses,
    )
    outside = max(0.0, 1.0 - float(bins.sum()))
    bins.setflags(write=False)
    return DensityGrid((re_min, re_max, im_min, im_max), (nx, ny), bins, outside)


def compare_measures(first, second):
    """
    Total-variation distance of two grids: half the L1 distance of their bins.

    Raises:
        GridMismatch: bounds or resolution differ
    """
    if not first.same_grid(second):
        raise GridMismatch(first.resolution, second.resolution, detail='grids differ')
    return 0.5 * float(np.abs(first.bins - second.bins).sum())
