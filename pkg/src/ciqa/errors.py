"""Exception taxonomy.

Two families matter to the CLI exit-code contract: ``InputError`` (bad
user-supplied files/arguments, exit 2) and ``PipelineError`` (failures inside
the scoring pipeline, exit 3). Everything derives from ``CiqaError``.
"""


class CiqaError(Exception):
    """Base class for all package-specific errors."""


class InputError(CiqaError):
    """User-facing input problem (missing/corrupt file, bad pair, bad manifest)."""


class PipelineError(CiqaError):
    """Failure while executing the scoring pipeline on valid-looking inputs."""


# --- backbone / graph loading ------------------------------------------------

class GraphParseError(InputError):
    """The interchange graph file does not parse or violates the format contract."""


class UnknownStageTap(InputError):
    """A requested stage tap is not among the graph's named outputs."""

    def __init__(self, tap, available=()):
        self.tap = tap
        self.available = tuple(available)
        msg = f"stage tap {tap!r} is not a graph output"
        if available:
            msg += f" (available: {', '.join(self.available)})"
        super().__init__(msg)


class DecodeError(InputError):
    """Image bytes do not decode as a supported format."""


class ImageTooSmall(InputError):
    """Decoded image is below the minimum supported resolution."""


class InferenceError(PipelineError):
    """Graph execution failed (unsupported op, internal shape mismatch, ...)."""


class UnsupportedOp(InferenceError):
    """The executor does not implement an operator found in the graph."""


# --- intervention ------------------------------------------------------------

class IndexOutOfRange(PipelineError, IndexError):
    """Intensity or draw index outside the InterventionSpec bounds."""


class ShapeMismatch(PipelineError, ValueError):
    """Tensors or stacks with incompatible shapes."""


# --- confounder --------------------------------------------------------------

class EmptyCalibrationSet(InputError):
    """screen_channels received no outcomes."""


class DimMismatch(PipelineError, ValueError):
    """Intervention outcomes disagree on stage/channel dimensions."""


class SchemaVersionMismatch(InputError):
    """Dictionary file has the wrong magic, version, or is truncated."""


class BackboneMismatch(InputError):
    """Artifact was built for a different backbone than requested."""


# --- transport ---------------------------------------------------------------

class EmptyDistribution(PipelineError, ValueError):
    """An empirical distribution with zero samples."""


class WeightMismatch(PipelineError, ValueError):
    """Transport-oracle marginals do not both sum to one."""


class EmptyCausalSet(PipelineError):
    """No stage has any channel with positive causal weight."""


# --- scoring -----------------------------------------------------------------

class DimMismatchBetweenPair(InputError):
    """Reference and distorted images have different pixel dimensions."""


# --- datasets ----------------------------------------------------------------

class ParseError(InputError):
    """Manifest/MOS file could not be parsed; carries a line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyManifest(InputError):
    """Manifest contains no records."""


class MissingReferenceImage(InputError):
    """A reference image inferred from a MOS file does not exist on disk."""


class DegenerateRange(InputError):
    """MOS normalization is impossible because min == max."""


# --- metrics -----------------------------------------------------------------

class LengthMismatch(PipelineError, ValueError):
    """Correlation inputs differ in length or are too short."""


class ZeroVariance(PipelineError, ValueError):
    """Correlation input has no variance."""


class FitDiverged(PipelineError):
    """Logistic fit failed to converge to anything usable."""
