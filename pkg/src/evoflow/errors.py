"""Exception types shared across the package."""


class EvoflowError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(EvoflowError, ValueError):
    """Invalid model parameters, dimensions, or integrator settings."""


class EvaluationError(EvoflowError, RuntimeError):
    """A reward or field evaluation produced an unusable value."""


class StateError(EvoflowError, RuntimeError):
    """A state object is missing data required by the requested operation."""


class UsageError(EvoflowError, ValueError):
    """An operation was called with arguments it cannot honor."""


class ValidationFailure(EvoflowError, RuntimeError):
    """A scenario failed one or more model assumption checks.

    Carries the full validation report so callers can list every failed
    check rather than just the first one.
    """

    def __init__(self, report):
        self.report = report
        failed = ", ".join(item.name for item in report.failures())
        super().__init__(f"validation failed: {failed}")


class IntegrationError(EvoflowError, RuntimeError):
    """Numerical integration could not continue.

    ``last_time`` and ``last_state`` hold the most recent state that was
    still finite, so callers can inspect where the run broke down.
    """

    def __init__(self, message, last_time=None, last_state=None):
        super().__init__(message)
        self.last_time = last_time
        self.last_state = last_state
