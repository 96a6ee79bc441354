"""Exception hierarchy shared by all varinf modules."""


class VarinfError(Exception):
    """Base class for every error raised by this package."""


# -- geometry ---------------------------------------------------------------

class DomainError(VarinfError):
    pass


class DRectTouchesBoundary(DomainError):
    pass


class DRectOffGrid(DomainError):
    pass


class NotBoundaryNode(DomainError):
    pass


class StencilOutOfDomain(DomainError):
    pass


# -- exponent ---------------------------------------------------------------

class ExponentError(VarinfError):
    pass


class PMinusTooSmall(ExponentError):
    pass


class PNotFinite(ExponentError):
    pass


class KTooSmall(ExponentError):
    pass


# -- functionals ------------------------------------------------------------

class ModularOverflow(VarinfError):
    """A power |t|**p would overflow; ``point`` is the offending quadrature index."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class BracketFailure(VarinfError):
    pass


# -- solver -----------------------------------------------------------------

class SolverError(VarinfError):
    pass


class NoConvergence(SolverError):
    def __init__(self, message, best=None, k=None):
        super().__init__(message)
        self.best = best
        self.k = k


class LineSearchStall(SolverError):
    def __init__(self, message, best=None, k=None):
        super().__init__(message)
        self.best = best
        self.k = k


# -- verification -----------------------------------------------------------

class MTooSmall(VarinfError):
    pass


class MinimalityViolated(VarinfError):
    def __init__(self, message, witness=None, gap=None):
        super().__init__(message)
        self.witness = witness
        self.gap = gap


# -- configuration / IO -----------------------------------------------------

class ParseError(VarinfError):
    def __init__(self, message, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column


class ValidationError(VarinfError):
    """Config failed validation; ``invariant`` names the rule that broke."""

    def __init__(self, invariant, message):
        super().__init__(f"{invariant}: {message}")
        self.invariant = invariant


class ShapeMismatch(VarinfError):
    pass
