"""Finite correspondences on the states {0, ..., d-1}.

A correspondence is stored as its (0,1)-adjacency matrix: state j is an
image of state i exactly when ``adjacency[i, j]`` is true. Orbits are
tuples of 0-based state indices.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from ..conf import resolve
from ..exceptions import (
    BudgetExceeded, CountOverflow, DimensionMismatch, DisallowedEdge, EmptyRow,
    IndexOutOfRange, InputError, NotSurjective,
)

logger = logging.getLogger(__name__)

INT128_MAX = 2**127 - 1


def _frozen(array, dtype):
    array = np.array(array, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class FiniteCorrespondence:
    """A correspondence on {0..d-1} given by its adjacency matrix."""
    adjacency: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.adjacency)
        if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
            raise DimensionMismatch('square matrix', raw.shape)
        if raw.shape[0] < 1:
            raise InputError(detail='a correspondence needs at least one state')
        if raw.dtype != bool and not np.all((raw == 0) | (raw == 1)):
            raise InputError(detail='adjacency entries must be 0 or 1')
        adjacency = _frozen(raw, bool)
        empty = np.flatnonzero(~adjacency.any(axis=1))
        if empty.size:
            raise EmptyRow(int(empty[0]))
        object.__setattr__(self, 'adjacency', adjacency)

    @property
    def d(self):
        return self.adjacency.shape[0]

    @property
    def edges(self):
        """Allowed edges (i, j) in lexicographic order."""
        return [tuple(int(k) for k in edge) for edge in np.argwhere(self.adjacency)]

    def images(self, state):
        return [int(j) for j in np.flatnonzero(self.adjacency[state])]

    def out_degrees(self):
        return self.adjacency.sum(axis=1)

    def __eq__(self, other):
        return (
            isinstance(other, FiniteCorrespondence) and
            np.array_equal(self.adjacency, other.adjacency)
        )

    def __hash__(self):
        return hash((self.d, self.adjacency.tobytes()))

    def __repr__(self):
        return f"FiniteCorrespondence(d={self.d}, edges={int(self.adjacency.sum())})"


@dataclass(frozen=True, eq=False)
class EdgePotential:
    """
    Real weights on the allowed edges of a correspondence.

    ``values`` is a d x d array whose off-edge entries are stored as 0 and
    never read.
    """
    adjacency: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        adjacency = _frozen(self.adjacency, bool)
        values = np.array(self.values, dtype=float, copy=True)
        if values.shape != adjacency.shape:
            raise DimensionMismatch(adjacency.shape, values.shape)
        values[~adjacency] = 0.0
        if not np.all(np.isfinite(values)):
            i, j = np.argwhere(~np.isfinite(values))[0]
            raise InputError(int(i), int(j), detail='potential must be finite on every edge')
        values.setflags(write=False)
        object.__setattr__(self, 'adjacency', adjacency)
        object.__setattr__(self, 'values', values)

    @classmethod
    def zero(cls, correspondence):
        return cls(correspondence.adjacency, np.zeros(correspondence.adjacency.shape))

    @classmethod
    def from_matrix(cls, correspondence, matrix):
        return cls(correspondence.adjacency, matrix)

    @classmethod
    def from_edges(cls, correspondence, edge_values):
        """
        Build a potential from a mapping {(i, j): value}.

        Edges of the correspondence missing from the mapping get 0.0.
        """
        values = np.zeros(correspondence.adjacency.shape)
        for (i, j), value in edge_values.items():
            if not (0 <= i < correspondence.d and 0 <= j < correspondence.d):
                raise DisallowedEdge(i, j)
            if not correspondence.adjacency[i, j]:
                raise DisallowedEdge(i, j)
            values[i, j] = value
        return cls(correspondence.adjacency, values)

    def __call__(self, i, j):
        if not self.adjacency[i, j]:
            raise DisallowedEdge(i, j)
        return float(self.values[i, j])

    def shifted(self, constant):
        """The potential plus a constant on every edge."""
        return EdgePotential(self.adjacency, self.values + constant)

    def scaled(self, factor):
        return EdgePotential(self.adjacency, self.values * factor)


def validate(matrix):
    """
    Check a square 0/1 matrix and wrap it as a correspondence.

    Raises:
        EmptyRow: some state has no image
    """
    return FiniteCorrespondence(np.asarray(matrix))


def from_map(images):
    """
    The correspondence C_f of a single-valued map, f given as its list of
    0-based images: exactly one true entry per row, at (i, f(i)).
    """
    d = len(images)
    adjacency = np.zeros((d, d), dtype=bool)
    for state, image in enumerate(images):
        if not isinstance(image, (int, np.integer)) or not 0 <= image < d:
            raise IndexOutOfRange(image, d)
        adjacency[state, image] = True
    return FiniteCorrespondence(adjacency)


def inverse(correspondence):
    """The inverse correspondence (transposed adjacency); requires T(X) = X."""
    empty = np.flatnonzero(~correspondence.adjacency.any(axis=0))
    if empty.size:
        raise NotSurjective(int(empty[0]))
    return FiniteCorrespondence(correspondence.adjacency.T)


def conjugate_potential(potential):
    """The conjugate potential (i, j) -> phi(j, i), living on the inverse."""
    return EdgePotential(potential.adjacency.T, potential.values.T)


def sup_norm(potential):
    """Maximum absolute value of the potential over its edges."""
    return float(np.abs(potential.values[potential.adjacency]).max())


def count_orbits(correspondence, n):
    """
    Exact number of orbits of length n + 1, i.e. 1^T A^n 1.

    Python integers keep the count exact; anything beyond the signed
    128-bit range is reported as an overflow.
    """
    if n < 0:
        raise InputError(n, detail='n must be nonnegative')
    successors = [correspondence.images(i) for i in range(correspondence.d)]
    counts = [1] * correspondence.d
    for _ in range(n):
        counts = [sum(counts[j] for j in successors[i]) for i in range(correspondence.d)]
        if max(counts) > INT128_MAX:
            raise CountOverflow(n)
    total = sum(counts)
    if total > INT128_MAX:
        raise CountOverflow(n)
    return total


def orbit_array(correspondence, length, budget=None):
    """
    All orbits of the given length as an (N, length) integer array in
    lexicographic order.

    Raises:
        BudgetExceeded: N is larger than ``budget`` (default ORBIT_BUDGET)
    """
    if length < 1:
        raise InputError(length, detail='orbit length must be at least 1')
    budget = resolve(budget, 'ORBIT_BUDGET')
    try:
        count = count_orbits(correspondence, length - 1)
    except CountOverflow:
        raise BudgetExceeded(f'>{INT128_MAX}', budget)
    if count > budget:
        raise BudgetExceeded(count, budget)

    adjacency = correspondence.adjacency
    orbits = np.arange(correspondence.d, dtype=np.int64).reshape(-1, 1)
    for _ in range(length - 1):
        # np.nonzero walks rows in order and columns ascending: lexicographic
        parents, children = np.nonzero(adjacency[orbits[:, -1]])
        orbits = np.hstack([orbits[parents], children.reshape(-1, 1)])
    return orbits


def enumerate_orbits(correspondence, n, budget=None):
    """All orbits (x_1, ..., x_n) as tuples, lexicographic by state index."""
    orbits = orbit_array(correspondence, n, budget=budget)
    logger.debug("Enumerated %d orbits of length %d", len(orbits), n)
    return [tuple(row) for row in orbits.tolist()]


def birkhoff_sum(potential, orbit):
    """
    Sum of the edge potential along an orbit.

    A single-state orbit has the empty sum 0.0.
    """
    if len(orbit) < 1:
        raise InputError(detail='orbit must contain at least one state')
    terms = []
    for i, j in zip(orbit[:-1], orbit[1:]):
        terms.append(potential(i, j))
    return math.fsum(terms)


def birkhoff_sums(potential, orbits):
    """Vectorized Birkhoff sums for an (N, L) orbit array."""
    orbits = np.asarray(orbits)
    if orbits.shape[1] < 2:
        return np.zeros(len(orbits))
    starts, ends = orbits[:, :-1], orbits[:, 1:]
    if not np.all(potential.adjacency[starts, ends]):
        row, col = np.argwhere(~potential.adjacency[starts, ends])[0]
        raise DisallowedEdge(int(starts[row, col]), int(ends[row, col]))
    return potential.values[starts, ends].sum(axis=1)


def is_irreducible(correspondence):
    """True when the adjacency digraph is strongly connected."""
    count, _ = connected_components(
        correspondence.adjacency.astype(np.int8), directed=True, connection='strong'
    )
    return count == 1


def is_strongly_transitive(correspondence):
    """
    Finite reading of strong transitivity: backward orbits of every state
    reach every state, i.e. the reversed digraph is strongly connected.
    """
    count, _ = connected_components(
        correspondence.adjacency.T.astype(np.int8), directed=True, connection='strong'
    )
    return count == 1


def is_primitive(correspondence):
    """
    True when some power A^k, k up to the Wielandt bound d^2 - 2d + 2, is
    entrywise positive.
    """
    d = correspondence.d
    adjacency = correspondence.adjacency.astype(np.int64)
    power = adjacency.copy()
    for _ in range(d * d - 2 * d + 2):
        if power.all():
            return True
        power = ((power @ adjacency) > 0).astype(np.int64)
    return bool(power.all())
