"""Exception hierarchy shared across the simulator."""


class SNNAccelError(Exception):
    """Base class for all simulator errors."""


class ManifestError(SNNAccelError, ValueError):
    """Malformed manifest document or tensor blob."""


class ShapeError(SNNAccelError, ValueError):
    pass


class BitWidthError(SNNAccelError, ValueError):
    pass


class ConfigError(SNNAccelError, ValueError):
    """Illegal parallelism or layer configuration."""


class PsumOverflowError(SNNAccelError, ArithmeticError):
    """A fixed-point value left its declared signed range.

    Overflow is always a hard error; nothing in the simulator wraps around.
    """


class BankConflictError(SNNAccelError, RuntimeError):
    """Two im2col addresses of one fetch landed in the same bank."""


class DivergenceError(SNNAccelError, AssertionError):
    def __init__(self, layer, index, expected, actual):
        self.layer = layer
        self.index = index
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"layer {layer} diverges at (t, c, y, x)={index}: "
            f"oracle={expected} accel={actual}"
        )
