"""Exception hierarchy shared across bikit.

Every domain error carries a short machine-readable ``code`` so that the CLI
and the HTTP layer can report it without parsing messages.
"""

from __future__ import annotations


class BikitError(Exception):
    code = "error"

    def __init__(self, message: str, *, code: str | None = None, details: list | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code
        self.details = list(details or [])

    def to_dict(self) -> dict:
        out = {"code": self.code, "message": str(self)}
        if self.details:
            out["details"] = self.details
        return out


class ManifestError(BikitError):
    code = "manifest-invalid"

    def __init__(self, message: str, *, field: str, code: str | None = None):
        super().__init__(f"{field}: {message}", code=code)
        self.field = field


class AnnotationError(BikitError):
    code = "annotation-invalid"


class SplitError(BikitError):
    code = "split-invalid"


class MetricsError(BikitError):
    code = "metrics-invalid"


class PredictionFileError(BikitError):
    code = "malformed-row"


class PlanError(BikitError):
    code = "plan-invalid"


class PreprocessError(BikitError):
    code = "preprocess-invalid"


class SearchError(BikitError):
    code = "search-error"


class SpaceExhausted(SearchError):
    code = "space-exhausted"


class SubmissionError(BikitError):
    """Raised when a prediction payload fails validation against a test split."""

    code = "invalid-submission"


class NotFound(BikitError):
    code = "not-found"


class IntegrityError(BikitError):
    code = "integrity-error"
