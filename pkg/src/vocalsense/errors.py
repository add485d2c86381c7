"""Exception types shared across the package."""


class VocalSenseError(Exception):
    """Base class for all errors raised by this package."""


# -- audio ------------------------------------------------------------------

class UnsupportedFormat(VocalSenseError):
    """WAV encoding is not PCM16 or IEEE float32, or channel count > 2."""


class CorruptHeader(VocalSenseError):
    """RIFF/WAVE chunk structure is inconsistent with the file contents."""


class EmptyAudio(VocalSenseError):
    """File parsed fine but contains zero samples."""


class InsufficientLength(VocalSenseError):
    """Waveform has fewer samples than the requested segment count."""


class SegmentTooShort(VocalSenseError):
    """Segment is too short for the requested analysis window."""


# -- neural -----------------------------------------------------------------

class ShapeMismatch(VocalSenseError):
    """Tensor shapes are incompatible for the requested operation."""


class OddDimension(VocalSenseError):
    """Sinusoidal positional encoding requires an even model dimension."""


class NonFiniteLoss(VocalSenseError):
    """A loss evaluated to NaN or infinity."""


class UnknownFormatVersion(VocalSenseError):
    """Checkpoint or report carries a format_version this build cannot read."""


# -- acoustic encoder -------------------------------------------------------

class EmptyEncoding(VocalSenseError):
    """Input too short: the conv stack produced zero frames."""


class DegenerateVector(VocalSenseError):
    """Zero-norm vector where a cosine similarity is required."""


# -- text model -------------------------------------------------------------

class EmptySplit(VocalSenseError):
    """A training or validation split contains no examples."""


# -- analytics --------------------------------------------------------------

class InvalidN(VocalSenseError):
    """n-gram order must be >= 1."""


class EmptyTable(VocalSenseError):
    """Frequency table has no entries."""


class EmptyInput(VocalSenseError):
    """Operation requires at least one input element."""


class SchemaMismatch(VocalSenseError):
    """Two reports do not share a comparable schema."""


# -- synthesis / pipeline ---------------------------------------------------

class InvalidProfile(VocalSenseError):
    """Cohort profile parameters violate their documented ranges."""


class MissingSection(VocalSenseError):
    """Requested plot family has no data in the report."""


class ConfigError(VocalSenseError):
    """Pipeline configuration is invalid or incomplete."""
