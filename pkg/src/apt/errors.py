"""Exception types shared across the package.

Every error raised by the library derives from :class:`AptError`, so callers
(and the CLI) can catch one base class and still get a specific message.
"""


class AptError(Exception):
    """Base class for all library errors."""


# --- bank file format / data model ---

class MalformedHeader(AptError):
    """File does not start with the expected magic bytes / version."""


class TruncatedFile(AptError):
    """File ended before the advertised payload was read."""


class InvariantViolation(AptError):
    """In-memory or on-disk bank data violates a structural invariant."""


class IoFailure(AptError):
    """Underlying I/O failed while reading or writing an artifact."""


class InvalidSpec(AptError):
    """Synthetic-bank spec has non-positive counts or negative sigmas."""


class InsufficientSamples(AptError):
    """A class has fewer train-pool records than the requested shot count."""

    def __init__(self, class_index: int, available: int, requested: int):
        self.class_index = class_index
        self.available = available
        self.requested = requested
        super().__init__(
            f"class {class_index} has {available} train-pool records, "
            f"need {requested}"
        )


class TooFewClasses(AptError):
    """Operation needs more classes than the bank provides."""


# --- attention block ---

class DimMismatch(AptError):
    """Model width is not divisible by the head count (or similar)."""


class ShapeMismatch(AptError):
    """Input matrices disagree on the feature dimension."""


class NonFiniteInput(AptError):
    """An input array contains NaN or infinity."""


class StaleCache(AptError):
    """backward() was called with a cache from a different forward pass."""


class InvalidEpsilon(AptError):
    """Finite-difference step size must be positive."""


# --- classifier ---

class ZeroNormVector(AptError):
    """Cosine similarity is undefined for zero-norm vectors."""


class NonPositiveTemperature(AptError):
    """Softmax temperature must be > 0."""


class LabelOutOfRange(AptError):
    """Class label is outside [0, k)."""


# --- trainer ---

class UnsupportedShots(AptError):
    """Shot count outside the supported grid {1, 2, 4, 8, 16}."""


class StepOutOfRange(AptError):
    """Scheduler step outside [0, total_steps]."""


class DivergenceDetected(AptError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"non-finite loss at epoch {epoch}")


class MalformedCheckpoint(AptError):
    """Checkpoint file has a bad magic, version, or layout."""


# --- uq / analysis ---

class InvalidSampleCount(AptError):
    """Monte-Carlo sample count must be >= 1."""


class DegenerateMax(AptError):
    """Maximum entropy of the reference set is zero."""


class EmptyInput(AptError):
    """Metric called with no records."""


class EmptySet(AptError):
    """OOD evaluation needs both sets non-empty."""


class LengthMismatch(AptError):
    """Paired lists have different lengths."""


class BothZero(AptError):
    """Harmonic mean is undefined when both inputs are zero."""


class EmptyClass(AptError):
    """Variance statistic needs at least one sample per class."""


# --- cli ---

class UsageError(AptError):
    """Command line arguments are structurally invalid."""


class MissingArtifacts(AptError):
    """Output directory does not contain the artifacts needed for a report."""
