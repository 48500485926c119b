"""Layer-wise energy decay of finite element solutions and overlapping Schwarz contraction."""
from .errors import (ConfigError, DegenerateProfileError, EstimationError, InvalidArgumentError,
                     LayerDecayError, MeshFormatError, NonconformingMeshError, PreconditionError,
                     SingularProblemError, SolverError)
from .mesh import GAMMA, GAMMA_C, Mesh

__all__ = [
    "GAMMA", "GAMMA_C", "Mesh", "ConfigError", "DegenerateProfileError", "EstimationError",
    "InvalidArgumentError", "LayerDecayError", "MeshFormatError", "NonconformingMeshError",
    "PreconditionError", "SingularProblemError", "SolverError",
]
