"""Exception hierarchy shared by the library and the CLI."""


class PulseOptError(Exception):
    """Base class for all library errors."""


class ConfigError(PulseOptError, ValueError):
    """Invalid configuration, with the offending key when known."""

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class IntegrationError(PulseOptError, RuntimeError):
    """The adaptive integrator gave up before reaching the horizon."""

    def __init__(self, message, last_time):
        self.last_time = last_time
        super().__init__(f"{message} (last valid time t={last_time:.6g})")


class NumericalError(PulseOptError, ArithmeticError):
    """A NaN or infinity appeared in a computed quantity."""

    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message)
