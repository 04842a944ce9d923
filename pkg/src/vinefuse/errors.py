"""Exception hierarchy shared across the toolkit.

The CLI maps these to exit codes: any ``VinefuseError`` is a validation
failure (exit 2) except the external-tool failures (exit 3).
"""


class VinefuseError(Exception):
    """Base class for all toolkit errors."""


class StampMismatchError(VinefuseError):
    """Cloud stamp does not match the pose it is claimed to be captured at."""


class StreamOrderError(VinefuseError):
    """A stamped input stream is not monotonically increasing."""

    def __init__(self, stream: str, stamp: float):
        super().__init__(f"stream '{stream}' is not stamp-ordered at t={stamp:.6f}")
        self.stream = stream
        self.stamp = stamp


class GeodesicDomainError(VinefuseError):
    """Tangent-plane conversion requested too close to a pole."""


class DegeneratePolygonError(VinefuseError):
    """Polygon has fewer than three vertices or zero area."""


class DatasetError(VinefuseError):
    """Dataset store constraint violated (bad ratios, too few examples, ...)."""


class LabelNotFoundError(DatasetError):
    """Verdict addressed to a label that does not exist."""


class InputError(VinefuseError):
    """Evaluation input malformed (duplicate frames, empty ground truth)."""


class SimulationError(VinefuseError):
    """Simulator configuration inconsistent."""


class ConfigError(VinefuseError):
    """Pipeline configuration file invalid."""


class ToolFailure(VinefuseError):
    """Base for external-tool failures (CLI exit code 3)."""


class InvocationError(ToolFailure):
    """External tool exceeded its timeout; its work_dir is preserved."""


class ToolError(ToolFailure):
    """External tool exited nonzero."""

    def __init__(self, message: str, stderr: str = ""):
        super().__init__(message)
        self.stderr = stderr


class ProtocolError(ToolFailure):
    """External tool produced a malformed result file."""

    def __init__(self, message: str, record_index: int | None = None):
        if record_index is not None:
            message = f"{message} (record {record_index})"
        super().__init__(message)
        self.record_index = record_index
