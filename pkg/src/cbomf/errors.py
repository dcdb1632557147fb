"""Exception hierarchy shared by all modules."""


class CbomfError(Exception):
    """Base class for package errors."""


class DomainError(CbomfError, ValueError):
    """An input lies outside the domain of an operation."""


class ConfigError(CbomfError, ValueError):
    """Invalid parameters or configuration, detected before any computation."""


class PreconditionError(CbomfError, ValueError):
    """Inputs are individually valid but inconsistent with each other."""


class NumericalError(CbomfError, ArithmeticError):
    """A computation produced non-finite or otherwise unusable numbers."""


class IntegrationError(NumericalError):
    """A particle update produced a non-finite coordinate."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class SchemeError(NumericalError):
    """The finite-volume scheme lost positivity."""


class PicardConvergenceError(NumericalError):
    """The Picard iteration did not reach its tolerance."""

    def __init__(self, message: str, defect: float, iterations: int):
        super().__init__(f"{message}: last defect {defect:.3e} after {iterations} iterations")
        self.defect = defect
        self.iterations = iterations
