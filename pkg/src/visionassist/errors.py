"""Exception types shared across the package."""


class VisionAssistError(Exception):
    """Base class for all package errors."""


class InvalidInputError(VisionAssistError):
    """Malformed domain object or argument (bad frame bytes, bad box, ...)."""


class DetectionBackendError(VisionAssistError):
    """Object-detection backend failed; message carries the backend diagnostic."""


class EmbeddingBackendError(VisionAssistError):
    """Face/object embedding backend failed."""


class InvalidLabelError(VisionAssistError):
    """Enrollment label empty after trimming."""


class SnapshotFormatError(VisionAssistError):
    """Database snapshot malformed or version-mismatched; message includes position."""


class UndefinedMetricError(VisionAssistError):
    """Metric denominator is zero; reported as n/a in reports."""


class ScenarioFormatError(VisionAssistError):
    """Scenario file violates the schema; message includes the offending path."""


class DescriptionTimeoutError(VisionAssistError):
    """LVLM call exceeded its configured timeout."""


class DescriptionTransportError(VisionAssistError):
    """Remote LVLM endpoint unreachable or returned a transport-level failure."""


class PrivacyViolationError(VisionAssistError):
    """Image-bearing description request without blue-button origin; never dispatched."""
