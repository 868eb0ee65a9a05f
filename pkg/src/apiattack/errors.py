"""Exception taxonomy shared by the library, the service and the CLI.

Each class carries the process exit code the CLI reports for it.
"""


class ApiAttackError(Exception):
    exit_code = 1
    kind = "error"


class ValidationError(ApiAttackError, ValueError):
    exit_code = 2
    kind = "validation"


class ShapeError(ValidationError):
    kind = "shape"


class ArtifactIOError(ApiAttackError, OSError):
    exit_code = 3
    kind = "io"


class OracleUnavailable(ApiAttackError, ConnectionError):
    """The classification endpoint could not be reached or answered garbage."""

    exit_code = 4
    kind = "network"


class RateLimited(ApiAttackError):
    """The query budget for the current window is used up."""

    exit_code = 5
    kind = "rate_limited"

    def __init__(self, retry_after_seconds: int, remaining: int = 0):
        super().__init__(f"rate limit reached; retry after {retry_after_seconds} s")
        self.retry_after_seconds = int(retry_after_seconds)
        self.remaining = remaining


class TrainingDiverged(ApiAttackError, ArithmeticError):
    exit_code = 6
    kind = "diverged"

    def __init__(self, epoch: int, detail: str = "non-finite loss"):
        super().__init__(f"training diverged at epoch {epoch}: {detail}")
        self.epoch = epoch


class UnsupportedInThisMode(ApiAttackError):
    exit_code = 7
    kind = "unsupported"
