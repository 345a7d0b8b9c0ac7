"""Exception hierarchy shared by all solver modules."""


class SparseLQError(Exception):
    """Base class for every error raised by this package."""


# linear algebra kernels
class NotHurwitz(SparseLQError):
    pass


class IllConditioned(SparseLQError):
    pass


class NotStabilizable(SparseLQError):
    pass


class NumericalFailure(SparseLQError):
    pass


class EigenFailure(SparseLQError):
    pass


# objectives
class UnstableClosedLoop(SparseLQError):
    """The closed loop A - BK is not Hurwitz; the LQR cost is infinite."""


# solvers
class NoStabilizingInit(SparseLQError):
    """The block-diagonal part of the dense LQR gain does not stabilize."""


class NotDescent(SparseLQError):
    pass


class LineSearchFailed(SparseLQError):
    pass


class NoStabilizingIterate(SparseLQError):
    """Pruning destabilized the loop and no stable fallback iterate exists."""


class MaxIters(SparseLQError):
    pass


# allocation
class DegenerateAllocation(SparseLQError):
    pass


# model construction / io
class InvalidParams(SparseLQError):
    pass


class SystemFileError(SparseLQError):
    """Raised for malformed system files; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class MissingSolverData(SparseLQError):
    pass


class InvalidConfig(SparseLQError):
    pass
