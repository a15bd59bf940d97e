"""Exception hierarchy shared across the package."""

from __future__ import annotations


class ObzError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(ObzError):
    """Input violates a documented precondition (shape, finiteness, range)."""


class InsufficientData(ObzError):
    """Too few samples/scores to fit or calibrate."""


class InvalidRank(ObzError):
    """Requested PCA rank exceeds what the data supports."""


class NotCalibrated(ObzError):
    """Detector used for verdicts before a threshold was set."""


class OracleError(ObzError):
    """A model oracle returned a non-finite score."""


class CorruptTensor(ObzError):
    """OBZT payload failed to decode; `offset` is the byte position of the defect."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class BadQuery(ObzError):
    """Malformed read-endpoint query (bad range, unknown metric name)."""


class NotFound(ObzError):
    """Referenced entity (project, log, blob, token) does not exist."""


class Forbidden(ObzError):
    """Caller is not authorized for the target project or resource."""


class DuplicateName(ObzError):
    """Project name already taken by the same owner."""


class AlreadyFitted(ObzError):
    """Reference features already uploaded; pass refit=true to replace."""


class NotFitted(ObzError):
    """Scoring requested before any reference model was fitted."""
