"""Exception types shared across the package.

The CLI maps these onto exit codes: validation and data problems exit 2,
transport and response-parse problems exit 3.
"""


class TopicloopError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(TopicloopError):
    """An argument or precondition check failed."""


class DataError(TopicloopError):
    """An input file is missing, malformed, or internally inconsistent."""


class TransportError(TopicloopError):
    """An LLM endpoint call failed (possibly after retries).

    ``kind`` distinguishes the failure: "timeout", "connection", "status"
    (non-2xx response), or "payload" (unusable response body).
    """

    def __init__(self, message: str, kind: str = "status"):
        super().__init__(message)
        self.kind = kind


class ResponseParseError(TopicloopError):
    """An LLM response could not be parsed into the expected structure.

    ``partial`` carries whatever was salvaged (may be None).
    """

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial
