"""Exception types shared across the package."""


class KamtoriError(Exception):
    """Base class for all package-specific errors."""


class TruncationError(KamtoriError):
    """Sample grid is too small for the requested mode cutoff."""


class NormOverflowError(KamtoriError):
    """Strip-weighted norm overflowed; retry with a smaller strip width."""


class NotSolvableError(KamtoriError):
    """Right-hand side of the small-divisor equation has nonzero average."""


class ResonanceError(KamtoriError):
    """A stored mode k has |k . omega| below the resonance floor."""

    def __init__(self, k, value, floor):
        self.k = tuple(int(x) for x in k)
        self.value = float(value)
        self.floor = float(floor)
        super().__init__(
            f"near-resonant divisor at mode k={self.k}: "
            f"|k . omega| = {self.value:.3e} < floor {self.floor:.3e}"
        )


class ResonantFrequencyError(KamtoriError):
    """Some k . omega vanishes exactly within the checked mode window."""

    def __init__(self, k):
        self.k = tuple(int(x) for x in k)
        super().__init__(f"frequency is resonant: k . omega = 0 at k={self.k}")


class OutsideDomainError(KamtoriError):
    """A phase-space point left the system's admissible domain."""


class DegenerateMetricError(KamtoriError):
    """Tangent Gram matrix of the embedding is singular (rank loss)."""


class NoTwistError(KamtoriError):
    """Averaged torsion matrix is singular or too ill-conditioned."""


class StructureSingularError(KamtoriError):
    """Structure matrix B is singular along the embedding."""


class FrameSingularError(KamtoriError):
    """Frame matrix is singular at some grid point."""


class SmallnessViolationError(KamtoriError):
    """Neumann-series smallness condition for the frame inverse fails."""


class StepTooLargeError(KamtoriError):
    """Newton update left the domain or grew the error even after damping."""


class ConfigError(KamtoriError):
    """Problem configuration is invalid."""
