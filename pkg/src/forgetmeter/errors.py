class ForgetMeterError(Exception):
    """Base class for errors raised by this package."""


class PreconditionError(ForgetMeterError, ValueError):
    pass


class InterfaceError(ForgetMeterError):
    """Learner and environment disagree on the observation/output layout."""


class NumericalDivergenceError(ForgetMeterError, FloatingPointError):
    def __init__(self, message: str, step: int | None = None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class InfiniteDivergenceError(ForgetMeterError):
    """KL support violation: p puts mass where q has none."""

    def __init__(self, message: str, indices=None):
        self.indices = indices
        super().__init__(message)


class DomainError(ForgetMeterError, ValueError):
    pass


class DegenerateBandwidthError(ForgetMeterError, ValueError):
    pass


class RolloutTermination(ForgetMeterError):
    """Base environment terminated and no reset policy was given."""


class StepError(ForgetMeterError):
    """Wraps an error raised while stepping the interaction process."""

    def __init__(self, time: int, cause: Exception):
        self.time = time
        self.cause = cause
        super().__init__(f"interaction failed at t={time}: {cause!r}")
