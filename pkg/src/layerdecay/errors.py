"""Exception hierarchy shared across the package."""


class LayerDecayError(Exception):
    """Base class for all errors raised by layerdecay."""


class InvalidArgumentError(LayerDecayError, ValueError):
    pass


class MeshFormatError(LayerDecayError):
    """Raised when an MSH file cannot be parsed or describes an invalid mesh."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NonconformingMeshError(LayerDecayError):
    pass


class SingularProblemError(LayerDecayError):
    """The reduced system has a kernel (lambda == 0 and no homogeneous boundary part)."""


class SolverError(LayerDecayError):
    def __init__(self, message, residual=None, iterations=None):
        self.residual = residual
        self.iterations = iterations
        super().__init__(message)


class PreconditionError(LayerDecayError):
    pass


class DegenerateProfileError(LayerDecayError):
    pass


class EstimationError(LayerDecayError):
    pass


class ConfigError(LayerDecayError):
    pass
