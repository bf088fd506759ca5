"""Exception hierarchy shared across the toolkit."""


class HideError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(HideError):
    """Tensor shapes are inconsistent with an operation's contract."""


class NonFiniteError(HideError):
    """A NaN or Inf value reached a layer boundary."""


class CoderError(HideError):
    """Range coder misuse (invalid cdf, symbol out of alphabet)."""


class DecodeError(HideError):
    """A bitstream could not be decoded (truncated or corrupt)."""


class FormatError(HideError):
    """A file (checkpoint, image, compressed payload) is malformed."""


class ConfigError(HideError):
    """A model configuration is invalid or cannot be parsed."""


class TrainingDiverged(HideError):
    """Training hit a non-finite value; message names the tensor."""


class MetricsError(HideError):
    """Metric preconditions violated (e.g. no PSNR overlap)."""
