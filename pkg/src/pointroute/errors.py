"""Exception types shared across the package."""


class PointRouteError(Exception):
    """Base class for all package errors."""


class ParameterError(PointRouteError, ValueError):
    """An argument is outside its documented domain."""


class TourError(PointRouteError, ValueError):
    """A node sequence is not a valid tour.

    ``kind`` is one of ``"duplicate"``, ``"missing"``, ``"out_of_range"``,
    ``"length"``; ``index`` is the offending node index where applicable.
    """

    def __init__(self, kind: str, message: str, index=None):
        super().__init__(message)
        self.kind = kind
        self.index = index


class DegenerateInstanceError(PointRouteError, ValueError):
    """All nodes coincide; the instance cannot be normalized."""


class ParseError(PointRouteError, ValueError):
    """Malformed input file; ``line`` is the 1-based line number if known."""

    def __init__(self, message: str, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class UnsupportedFormatError(PointRouteError, ValueError):
    """The file is well-formed but uses a feature this package rejects."""


class ShapeError(PointRouteError, ValueError):
    """Tensor shapes are inconsistent; message names the tensors."""


class NumericError(PointRouteError, ArithmeticError):
    """A non-finite value surfaced during evaluation or training."""


class ConfigError(PointRouteError, ValueError):
    """A config file or config object failed validation."""


class CheckpointError(PointRouteError, ValueError):
    """Base for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Manifest version is not supported."""


class CheckpointShapeError(CheckpointError):
    """A tensor in the blob does not match its manifest entry."""


class CheckpointTruncatedError(CheckpointError):
    """The blob file is shorter than the manifest describes."""


class ConfigMismatchError(CheckpointError):
    """Checkpoint was produced under a different model configuration."""


class EmptyRouteError(PointRouteError, ValueError):
    """A context query was requested before any node was visited."""


class NoCandidatesError(PointRouteError, ValueError):
    """Every node is already visited; there is nothing to decode."""
