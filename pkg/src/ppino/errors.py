"""Exception hierarchy; the CLI maps validation errors to exit code 2 and numerical ones to 3."""


class ValidationError(ValueError):
    """Bad user input: sizes, names, config keys, mismatched files."""


class NumericalError(RuntimeError):
    """A solver or optimizer failed to produce a finite, converged result."""


class SolverError(NumericalError):
    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history or [])


class DivergenceError(NumericalError):
    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])
