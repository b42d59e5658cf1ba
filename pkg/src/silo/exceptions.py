class SiloError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(SiloError, ValueError):
    """Shapes, widths or settings that cannot work together."""


class NumericError(SiloError, ArithmeticError):
    """A non-finite value reached a place where it would corrupt state."""


class ProtocolError(SiloError, RuntimeError):
    """An operation was called out of order (e.g. stepping a finished episode)."""


class KindMismatchError(ConfigurationError):
    """Demonstrations recorded in one environment kind used with another."""


class DemoParseError(SiloError, ValueError):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line
