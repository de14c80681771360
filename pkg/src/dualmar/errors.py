"""Exception types shared across the package.

Every error a caller is expected to catch has a named class here so the CLI
can map failures onto machine-readable error records.
"""


class DualmarError(Exception):
    """Base class for all package errors."""


# knowledge-graph construction
class MalformedLine(DualmarError):
    """A delimited input line does not have the expected field count."""

    def __init__(self, line_number: int, message: str = ""):
        self.line_number = line_number
        super().__init__(message or f"malformed line {line_number}")


class EmptyFile(DualmarError):
    """An input file contained no usable records."""


class ConflictingMapping(DualmarError):
    """A cross-reference key maps to more than one normalized code."""


class InvalidThreshold(DualmarError):
    """Clustering threshold outside [0, 1]."""


# prompt harvesting
class InvalidSpec(DualmarError):
    """A prompt spec is missing a required field."""


class OracleFailure(DualmarError):
    """The text oracle failed for one prompt; recorded per-prompt, not fatal."""


# embedding training
class ConfigInvalid(DualmarError):
    """An embedding or pipeline hyperparameter is out of range."""


class IndexOutOfRange(DualmarError):
    """An entity or relation id exceeds the embedding table."""


# EHR data
class UnknownCode(DualmarError):
    """A record references a code absent from the vocabulary."""

    def __init__(self, code: str, line_number: int = -1):
        self.code = code
        self.line_number = line_number
        super().__init__(f"unknown code {code!r} (line {line_number})")


class EmptyAdmission(DualmarError):
    """An admission lists no disease codes."""

    def __init__(self, line_number: int = -1):
        self.line_number = line_number
        super().__init__(f"admission without disease codes (line {line_number})")


class RatioInvalid(DualmarError):
    """Split ratios are negative or do not sum to one."""


class TooFewAdmissions(DualmarError):
    """A downstream target needs at least two admissions."""


# co-occurrence graph
class PhiOutOfRange(DualmarError):
    """Self-connection weight outside [0, 1]."""


# numerics
class ShapeMismatch(DualmarError):
    """Operands have incompatible shapes."""


class MissingGradient(DualmarError):
    """An optimizer step was requested for a parameter without a gradient."""


class CorruptCheckpoint(DualmarError):
    """Checkpoint bytes fail magic, manifest, or payload validation."""


class ConfigMismatch(DualmarError):
    """Checkpoint config echo disagrees with the loading configuration."""


# pipeline
class MissingFeatureRow(DualmarError):
    """A code index has no row in the node feature matrix."""


class FrozenViolation(DualmarError):
    """A training phase tried to update frozen encoder parameters."""


class CheckpointMissing(DualmarError):
    """A required upstream checkpoint artifact does not exist."""


class EmptyEvaluation(DualmarError):
    """Metric evaluation received zero samples."""


# CLI
class StaleArtifact(DualmarError):
    """An upstream artifact was produced under a different config hash."""


class MissingInput(DualmarError):
    """A required input artifact path does not exist."""
