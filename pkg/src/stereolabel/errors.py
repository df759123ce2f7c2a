"""Exception types shared across the toolkit."""


class StereoLabelError(Exception):
    """Base class for all toolkit errors."""


class BehindCameraError(StereoLabelError, ValueError):
    """A point with non-positive depth was projected."""


class InvalidDisparityError(StereoLabelError, ValueError):
    """Disparity must be positive to convert to depth."""


class InsufficientTagsError(StereoLabelError, ValueError):
    """Fewer than the minimum number of fiducial tags were detected."""


class SolverDivergenceError(StereoLabelError, RuntimeError):
    """Nonlinear least squares failed to reduce the residual."""


class InsufficientViewsError(StereoLabelError, ValueError):
    """Triangulation needs at least two annotated views."""


class DegenerateRaysError(StereoLabelError, ValueError):
    """Viewing rays are too close to parallel to triangulate."""


class DegenerateGeometryError(StereoLabelError, ValueError):
    """Capture geometry is degenerate (e.g. coincident viewpoints)."""


class SchemaError(StereoLabelError, ValueError):
    """A file violated the on-disk schema.

    ``field`` names the offending field with a dotted path, e.g.
    ``frames[3].detections.tag_id``.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class SessionLockedError(StereoLabelError, RuntimeError):
    """Another writer holds the session lock."""


class PipelineError(StereoLabelError):
    """A labeling-pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


class QaRejectionError(StereoLabelError):
    """A scan failed the QA gate (used by the CLI to exit with code 3)."""
