"""Exception hierarchy shared by all modules."""


class PdgMpcError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(PdgMpcError, ValueError):
    pass


class NumericError(PdgMpcError, ValueError):
    pass


class DomainError(PdgMpcError, ValueError):
    pass


class SingularMatrixError(PdgMpcError, ArithmeticError):
    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class AssumptionError(PdgMpcError, ValueError):
    """A modelling assumption needed by the stability theory does not hold."""


class InconsistentTargetError(PdgMpcError, ValueError):
    pass


class CertificationError(PdgMpcError, RuntimeError):
    """Step-size backtracking failed to find a Lyapunov-decreasing step."""


class NonConvergenceError(PdgMpcError, RuntimeError):
    def __init__(self, message, residuals=None, state=None):
        super().__init__(message)
        self.residuals = residuals or {}
        self.state = state


class CyclingError(PdgMpcError, RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class DivergenceError(PdgMpcError, RuntimeError):
    def __init__(self, message, step=None, log=None):
        super().__init__(message)
        self.step = step
        self.log = log


class ConfigError(PdgMpcError, ValueError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid config:\n  " + "\n  ".join(self.problems))
