"""
Exception hierarchy shared by the simulation modules and the experiment harness
"""

from typing import Optional


class ImaginaryGeometryError(Exception):
    """Base class for every error raised by this package"""


class ParameterError(ImaginaryGeometryError, ValueError):
    """A precondition on the arguments of an operation is violated"""


class DomainError(ParameterError):
    """An input lies outside the domain of a function"""


class ConfigError(ImaginaryGeometryError):
    """An experiment configuration is invalid or names an unknown experiment"""


class NumericalError(ImaginaryGeometryError, ArithmeticError):
    """A numerical scheme produced a non-finite or unusable value"""

    def __init__(self, message: str, step: Optional[int] = None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step
