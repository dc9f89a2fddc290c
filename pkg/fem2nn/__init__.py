"""Exact compilation of Lagrange finite element functions into ReLU/ReLU^2 networks."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CompilationError,
    ConfigError,
    Fem2nnError,
    MeshError,
    NetworkError,
    StudyError,
    VerificationError,
)
from .mesh import Mesh, load_mesh, save_mesh  # noqa: E402
from .network import Activation, Layer, Network, load_network, realize, save_network  # noqa: E402

__all__ = [
    "Activation",
    "CompilationError",
    "ConfigError",
    "Fem2nnError",
    "Layer",
    "Mesh",
    "MeshError",
    "Network",
    "NetworkError",
    "StudyError",
    "VerificationError",
    "load_mesh",
    "load_network",
    "realize",
    "save_mesh",
    "save_network",
]
