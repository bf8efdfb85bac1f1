"""Exception types shared across the package."""


class NoisefleetError(Exception):
    """Base class for package errors."""


class DomainError(NoisefleetError, ValueError):
    """Input outside an operation's domain (bad frequency, wrong duration...)."""


class AssemblyError(NoisefleetError, ValueError):
    """Minute-file assembly precondition violated (missing/duplicate blocks)."""


class PackagingError(NoisefleetError):
    """Snippet container could not be built."""


class AuthenticationError(NoisefleetError):
    """Ciphertext failed authentication; payload was tampered with."""


class AccessDeniedError(NoisefleetError):
    """Certificate missing, expired, or not signed by the project authority."""


class ScenarioError(NoisefleetError, ValueError):
    """Scenario config invalid. Carries the offending field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class AlertRuleError(NoisefleetError, ValueError):
    """Alert rule references an unknown metric or has a bad shape."""


class SplitOverlapError(NoisefleetError):
    """A window instance appears in both the train and test split."""


class AnalysisError(NoisefleetError, ValueError):
    """An analytics precondition failed (empty series, single class...)."""
