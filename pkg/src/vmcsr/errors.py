"""Exception types shared across the package."""


class VmcError(Exception):
    """Base class for package-specific errors."""


class ZeroMatrix(VmcError):
    """Matrix is numerically zero where a nonzero one is required."""


class RankTooLarge(VmcError):
    """Requested rank exceeds what the matrix dimensions admit."""


class DegenerateInput(VmcError):
    """Matrix carries no signal to factorize (zero Frobenius norm)."""


class NotPositiveDefinite(VmcError):
    """Symmetric factorization hit a nonpositive pivot."""


class SingularMatrix(VmcError):
    """Regularized system is singular to working precision."""


class RankCollapse(VmcError):
    """Effective rank fell to zero.

    Unreachable under the relative-spectrum rank rule (the leading mode
    always qualifies); kept as a typed guard so a logic error surfaces
    loudly instead of as a shape mismatch.
    """


class CoalescencePoint(VmcError):
    """Two charged particles are closer than the coalescence guard."""


class NodeProximity(VmcError):
    """Log-amplitude underflowed; derivatives are unreliable near a node."""


class DegenerateBatch(VmcError):
    """Sample batch too small to center."""


class NumericalAbort(VmcError):
    """Non-finite quantity reached the optimization loop."""


class ConfigError(VmcError):
    """Malformed, unknown, or inconsistent run-configuration content."""


class VersionMismatch(VmcError):
    """Checkpoint written by an incompatible format version."""


class CorruptChecksum(VmcError):
    """Checkpoint payload does not match its checksum."""
