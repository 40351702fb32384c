"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class PignpiError(Exception):
    exit_code = 1


class ConfigurationError(PignpiError, ValueError):
    exit_code = 2


class DataError(PignpiError, ValueError):
    exit_code = 3


class DivergenceError(PignpiError, ArithmeticError):
    exit_code = 4


class SimulationDiverged(DivergenceError):
    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"simulation diverged at step {step}: non-finite state")


class TrainingDiverged(DivergenceError):
    pass


class InvariantViolation(PignpiError, AssertionError):
    exit_code = 5


class ContractViolation(PignpiError, ValueError):
    """Caller broke an operation's precondition (e.g. gradient of a non-scalar)."""

    exit_code = 5


class SingularityError(PignpiError, ZeroDivisionError):
    exit_code = 3
