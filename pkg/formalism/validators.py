"""Custom validators for matrices and distributions used by the kernels."""
import numpy as np
from django.core.exceptions import ValidationError
from django.utils.deconstruct import deconstructible

PROBABILITY_TOLERANCE = 1e-12


@deconstructible
class FiniteArrayValidator:
    """
    Validator that checks an array has the expected number of dimensions
    and contains only finite reals.
    """
    ndim = None

    def __init__(self, ndim=None):
        if ndim is not None:
            self.ndim = ndim

    def __call__(self, value):
        array = np.asarray(value)
        if self.ndim is not None and array.ndim != self.ndim:
            raise ValidationError(
                f'Expected a {self.ndim}-dimensional array, got {array.ndim} dimensions.',
                code='ndim',
            )
        if self.ndim == 2 and array.shape[0] != array.shape[1]:
            raise ValidationError(
                f'Expected a square matrix, got shape {array.shape}.', code='shape'
            )
        if array.size == 0:
            raise ValidationError('Array is empty.', code='empty')
        if not np.all(np.isfinite(array)):
            raise ValidationError('Array contains non-finite entries.', code='finite')

    def __eq__(self, other):
        return isinstance(other, FiniteArrayValidator) and self.ndim == other.ndim


@deconstructible
class StochasticMatrixValidator:
    """
    Validator that checks a square matrix is row-stochastic: entries are
    nonnegative and every row sums to one within ``tolerance``.
    """
    tolerance = PROBABILITY_TOLERANCE

    def __init__(self, tolerance=None):
        if tolerance is not None:
            self.tolerance = tolerance

    def __call__(self, value):
        matrix = np.asarray(value, dtype=float)
        FiniteArrayValidator(ndim=2)(matrix)
        if np.any(matrix < 0):
            i, j = np.argwhere(matrix < 0)[0]
            raise ValidationError(
                f'Negative transition probability at ({i}, {j}).', code='negative'
            )
        deviation = np.abs(matrix.sum(axis=1) - 1.0)
        if deviation.max() > self.tolerance:
            row = int(deviation.argmax())
            raise ValidationError(
                f'Row {row} sums to {matrix[row].sum():.15g}, not 1.', code='row_sum'
            )

    def __eq__(self, other):
        return (
            isinstance(other, StochasticMatrixValidator) and
            self.tolerance == other.tolerance
        )


@deconstructible
class ProbabilityMassValidator:
    """
    Validator that checks an array of any shape is a probability mass:
    nonnegative entries with total one within ``tolerance``.
    """
    tolerance = PROBABILITY_TOLERANCE
    ndim = 1

    def __init__(self, ndim=None, tolerance=None):
        if ndim is not None:
            self.ndim = ndim
        if tolerance is not None:
            self.tolerance = tolerance

    def __call__(self, value):
        array = np.asarray(value, dtype=float)
        FiniteArrayValidator(ndim=self.ndim)(array)
        if np.any(array < 0):
            raise ValidationError('Negative probability mass.', code='negative')
        total = array.sum()
        if abs(total - 1.0) > self.tolerance:
            raise ValidationError(f'Total mass is {total:.15g}, not 1.', code='total')

    def __eq__(self, other):
        return (
            isinstance(other, ProbabilityMassValidator) and
            self.ndim == other.ndim and
            self.tolerance == other.tolerance
        )


# Convenience instances
validate_stochastic = StochasticMatrixValidator()
validate_distribution = ProbabilityMassValidator(ndim=1)
validate_joint = ProbabilityMassValidator(ndim=2)
