"""Exception types shared across the toolkit."""


class MicrostabError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(MicrostabError):
    """Invalid configuration document or parameter combination."""


class NoConvergence(MicrostabError):
    """An iterative solver exhausted its iteration budget."""


class SingularJacobian(MicrostabError):
    """Newton Jacobian is singular (equilibrium at a power-transfer limit)."""


class SingularSystem(MicrostabError):
    """Lyapunov coefficient matrix is not Hurwitz or is degenerate."""


class NoStabilizingSeed(MicrostabError):
    """No stabilizing initial gain found for the Riccati iteration."""


class NonFiniteState(MicrostabError):
    """Numerical integration diverged (instability or bad parameters)."""


class BudgetExceeded(MicrostabError):
    """Exhaustive enumeration would exceed the configured budget."""


class RankDeficient(MicrostabError):
    """Least-squares window fit is rank deficient (window too short or degenerate)."""


class DimensionMismatch(MicrostabError):
    """Input vector length does not match the model's expected dimension."""


class DuplicateId(MicrostabError):
    """Two dataset samples share a scenario id."""


class ParseError(MicrostabError):
    """A persisted artifact could not be parsed."""


class VersionMismatch(MicrostabError):
    """A persisted artifact has an unsupported format version."""


class InvariantViolation(MicrostabError):
    """A loaded artifact fails its structural invariants."""
