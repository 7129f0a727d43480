"""Exception hierarchy. The CLI maps ConfigError to exit code 2 and every
other GreduxError to exit code 3."""


class GreduxError(Exception):
    pass


class ConfigError(GreduxError, ValueError):
    pass


class InsufficientSamplesError(GreduxError, ValueError):
    pass


class DomainError(GreduxError, ValueError):
    pass


class ReductionError(GreduxError):
    pass


class SolverError(GreduxError):
    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class SimulationError(SolverError):
    pass


class OracleError(SolverError):
    pass
