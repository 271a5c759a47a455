"""Exception hierarchy for torusfold."""


class TorusFoldError(Exception):
    pass


class NonPositiveWidth(TorusFoldError, ValueError):
    pass


class LobeBalanceFailure(TorusFoldError):
    pass


class DerivativeBudgetExceeded(TorusFoldError):
    pass


class OutOfRange(TorusFoldError, ValueError):
    pass


class Infeasible(TorusFoldError):
    pass


class ZeroVector(TorusFoldError, ValueError):
    pass


class LevelOutOfRange(TorusFoldError, ValueError):
    pass


class NotCritical(TorusFoldError, ValueError):
    pass


class NoRoot(TorusFoldError):
    pass


class BranchAmbiguity(TorusFoldError):
    pass


class DegenerateDenominator(TorusFoldError, ZeroDivisionError):
    pass


class NotFound(TorusFoldError):
    pass


class ConfigInvalid(TorusFoldError, ValueError):
    pass


class PreconditionViolated(TorusFoldError, ValueError):
    pass


class ConeExit(TorusFoldError):
    pass
