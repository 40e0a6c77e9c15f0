"""Exception hierarchy.

Every error raised on purpose by the library derives from :class:`PhasorGuardError`
so callers (and the CLI) can map failures to exit codes without catching
unrelated bugs.
"""


class PhasorGuardError(Exception):
    """Base class for all library errors."""


class ModelError(PhasorGuardError, ValueError):
    """Malformed grid: dangling references, duplicate ids, bad admittances."""


class ObservabilityError(PhasorGuardError):
    """The topology matrix is not full column rank."""


class FrameError(PhasorGuardError, ValueError):
    """A measurement frame is malformed or contains non-finite values."""


class ConfigurationError(PhasorGuardError, ValueError):
    """An option is out of its admissible range."""


class UndefinedMetricError(PhasorGuardError):
    """ERR/IoS requested on a zero matrix."""


class DegenerateSiteError(PhasorGuardError):
    """All measurements of a targeted site are zero."""


class UnsupportedConfigurationError(PhasorGuardError):
    """Operation only defined for a narrower configuration (e.g. IoS* on multi-phasor sites)."""


class InfeasibleAttackError(PhasorGuardError):
    """The targeted sites are not vulnerable, so no undetectable attack exists."""


class GeometricInfeasibilityError(InfeasibleAttackError):
    """The unit-circle intersection has no non-trivial solution."""


class HardeningInfeasibleError(PhasorGuardError):
    """Secure-Grid ran out of candidate phasors before meeting the threshold."""


class IterationGuardError(HardeningInfeasibleError):
    """Secure-Grid exceeded its iteration guard."""
