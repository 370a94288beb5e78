"""formlab: discrete symmetric Dirichlet forms with diffusive and jump parts.

Build finite metric measure spaces, assemble local + jump Dirichlet forms,
compute their heat kernels, and verify scaling/Harnack-type conditions with
explicitly fitted constants.
"""

__version__ = "0.1.0"

from .scales import ScaleFunction, ScaleTriple
from .space import MetricMeasureSpace, build_space
from .form import DirichletForm, JumpKernel, assemble, heat_kernel

__all__ = [
    "ScaleFunction",
    "ScaleTriple",
    "MetricMeasureSpace",
    "build_space",
    "DirichletForm",
    "JumpKernel",
    "assemble",
    "heat_kernel",
    "__version__",
]
