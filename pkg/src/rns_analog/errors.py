"""Exception hierarchy shared by every module of the package."""

import math


class RnsError(Exception):
    """Base class for all errors raised by ``rns_analog``."""


class NotCoprimeError(RnsError, ValueError):
    def __init__(self, a: int, b: int):
        self.pair = (a, b)
        super().__init__(
            f"moduli {a} and {b} share factor {math.gcd(a, b)}"
        )


class RangeOverflowError(RnsError, OverflowError):
    pass


class OutOfRangeError(RnsError, ValueError):
    pass


class InvalidResidueError(RnsError, ValueError):
    pass


class DimensionMismatchError(RnsError, ValueError):
    pass


class ModuliMismatchError(RnsError, ValueError):
    pass


class ConfigMismatchError(RnsError, ValueError):
    pass


class RangeViolationError(RnsError, ValueError):
    """The moduli product is too small for the dot-product output width."""


class NonFiniteError(RnsError, ValueError):
    pass


class InvalidCodeError(RnsError, ValueError):
    pass


class ShapeError(RnsError, ValueError):
    pass


class TensorFileError(RnsError, ValueError):
    pass


class ConfigError(RnsError, ValueError):
    pass
