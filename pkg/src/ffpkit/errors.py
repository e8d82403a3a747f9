"""Exception types shared across the toolkit.

Each class carries a short machine-readable ``code`` that the CLI prints on
failure.
"""


class FFPError(Exception):
    code = "error"


class InvalidArgument(FFPError, ValueError):
    code = "invalid-argument"


class NumericInputError(FFPError, ValueError):
    code = "numeric-input"


class ConfigurationError(FFPError, ValueError):
    code = "configuration"


class NonFiniteLoss(FFPError, ArithmeticError):
    """Raised when a loss component is NaN or infinite.

    ``component`` names the offending term and ``step`` is set by the
    trainer when the failure happens mid-run.
    """

    code = "non-finite-loss"

    def __init__(self, component: str, value: float, step: int | None = None):
        self.component = component
        self.value = value
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"loss component {component!r} is {value}{where}")
