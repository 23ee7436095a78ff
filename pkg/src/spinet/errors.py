"""Exception hierarchy.

Two families matter to callers: :class:`PhysicsError` (a computation was set
up legally but hit a numerical or physical failure mode) and
:class:`ConfigError` (the inputs never made sense).  The command-line driver
maps them to exit codes 2 and 3 respectively.
"""


class SpinetError(Exception):
    """Base class for everything raised deliberately by this package."""


class PhysicsError(SpinetError):
    """A well-formed computation failed for numerical/physical reasons."""


class SingularKernel(PhysicsError):
    """A harmonic kernel was evaluated where sin(omega t) vanishes."""


class SingularMatrix(PhysicsError):
    """LU factorization met an effectively zero pivot."""


class BranchAmbiguity(PhysicsError):
    """Square-root branch tracking could not bridge a phase jump."""


class NotPositiveDefinite(PhysicsError):
    """A Hessian that must be positive definite is not."""


class NotOrthogonal(PhysicsError):
    """A matrix expected to be orthogonal is not, within tolerance."""


class NonconvergedRate(PhysicsError):
    """No flat-flux plateau was found when extracting a golden-rule rate."""


class PerturbationBreakdown(PhysicsError):
    """Transferred population left the perturbative regime (P > 0.5)."""


class TruncationError(PhysicsError):
    """A Fock-space truncation carries non-negligible thermal weight."""


class StepError(PhysicsError):
    """A propagation step lost unitarity beyond tolerance."""


class ConfigError(SpinetError):
    """User-supplied configuration is invalid."""


class ParseError(ConfigError):
    """Configuration could not be parsed (syntax, type, unknown key)."""


class ValidationError(ConfigError):
    """Configuration parsed but violates a constraint."""
