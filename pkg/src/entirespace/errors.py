class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""

    def __init__(self, field, message):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class ShapeError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class RoutingError(ValueError):
    pass


class ValidationError(ValueError):
    pass


class UndefinedMetricError(ValueError):
    """Metric is undefined for the input (e.g. a single label class)."""


class NumericAbort(FloatingPointError):
    def __init__(self, step, message="non-finite loss"):
        self.step = step
        super().__init__(f"{message} at step {step}")
