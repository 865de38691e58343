"""Exception types raised across belieflab."""


class BeliefLabError(Exception):
    """Base class for all library errors."""


class ConfigError(BeliefLabError, ValueError):
    """Invalid configuration or argument (maps to CLI exit code 2)."""


class AbsoluteContinuityError(BeliefLabError, ValueError):
    """p(s) > 0 where q(s) = 0, so D_KL(p || q) is infinite."""

    def __init__(self, symbol, message=None):
        self.symbol = symbol
        super().__init__(message or f"absolute continuity violated at symbol index {symbol}")


class AssumptionViolation(BeliefLabError, ValueError):
    """A model or weight matrix breaks a standing modelling assumption."""

    def __init__(self, message, offenders=()):
        self.offenders = list(offenders)
        super().__init__(message)


class DegenerateLikelihoodError(BeliefLabError, ArithmeticError):
    """Observed symbol has zero likelihood under every hypothesis."""


class OracleFailure(BeliefLabError, RuntimeError):
    """An independent numerical oracle failed to converge."""
