"""Exception hierarchy for the formalism app.

Every message starts with the error name and its arguments, e.g.
``EmptyRow(0)``, so command-line output names the failing invariant.
State indices in messages are 0-based.
"""


class ThermoError(Exception):
    """Base class for all errors raised by the formalism services."""

    def __init__(self, *args, detail=''):
        self.args_repr = ', '.join(str(a) for a in args)
        self.detail = detail
        message = f"{type(self).__name__}({self.args_repr})"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class InputError(ThermoError, ValueError):
    """The caller supplied data that violates a documented precondition."""


class NumericalError(ThermoError, ArithmeticError):
    """A numerical procedure failed to deliver a result within tolerance."""


# Correspondences and potentials

class EmptyRow(InputError):
    def __init__(self, state):
        self.state = state
        super().__init__(state, detail='state has no image, not a correspondence')


class NotSurjective(InputError):
    def __init__(self, state):
        self.state = state
        super().__init__(state, detail='column is empty, inverse undefined')


class IndexOutOfRange(InputError):
    def __init__(self, index, size):
        self.index = index
        super().__init__(index, detail=f'expected a state in 0..{size - 1}')


class BudgetExceeded(InputError):
    def __init__(self, count, budget=None):
        self.count = count
        self.budget = budget
        detail = f'cap is {budget}' if budget is not None else ''
        super().__init__(count, detail=detail)


class CountOverflow(InputError):
    def __init__(self, n):
        self.n = n
        super().__init__(n, detail='orbit count exceeds the signed 128-bit range')


class DisallowedEdge(InputError):
    def __init__(self, i, j):
        self.edge = (i, j)
        super().__init__(i, j, detail='edge is not in the correspondence')


class UndefinedPotential(InputError):
    def __init__(self, i, j):
        self.edge = (i, j)
        super().__init__(i, j, detail='potential has no value on this edge')


class DimensionMismatch(InputError):
    def __init__(self, expected, actual):
        super().__init__(expected, actual)


# Kernels

class InvalidKernel(InputError):
    pass


class NotStationary(InputError):
    def __init__(self, residual):
        self.residual = residual
        super().__init__(f'{residual:.3e}', detail='distribution is not invariant under the kernel')


class SupportViolation(InputError):
    def __init__(self, i, j):
        self.edge = (i, j)
        super().__init__(i, j, detail='positive mass outside the support')


class InsufficientData(InputError):
    def __init__(self, blocks, required):
        super().__init__(blocks, required, detail='too few blocks for the requested length')


class NotPrimitive(InputError):
    pass


class GridMismatch(InputError):
    pass


class SingularPotential(InputError):
    pass


class ParseError(InputError):
    def __init__(self, line, reason):
        self.line = line
        self.reason = reason
        super().__init__('-' if line is None else line, reason)


# Numerical failures

class NoConvergence(NumericalError):
    def __init__(self, max_iter, detail=''):
        self.max_iter = max_iter
        super().__init__(max_iter, detail=detail)


class DegenerateEigenvector(NumericalError):
    pass


class RootResidual(NumericalError):
    pass


class InvariantViolation(NumericalError):
    pass


class ZeroStateWarning(UserWarning):
    """A backward-kernel row was defaulted because its state has zero mass."""
