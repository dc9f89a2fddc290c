from __future__ import annotations

from typing import Sequence


class Fem2nnError(RuntimeError):
    """Base class for all errors raised by the library."""


class ConfigError(Fem2nnError):
    pass


class MeshError(Fem2nnError):
    """
    Invalid or degenerate mesh input. `indices` names the offending
    elements (or vertices, for duplicate-vertex errors).
    """

    def __init__(self, message: str, indices: Sequence[int] | None = None) -> None:
        super().__init__(message)
        self.indices = list(indices or [])


class NetworkError(Fem2nnError):
    pass


class CompilationError(Fem2nnError):
    pass


class VerificationError(Fem2nnError):
    def __init__(self, message: str, max_error: float, location: Sequence[float] | None = None) -> None:
        super().__init__(message)
        self.max_error = max_error
        self.location = list(location) if location is not None else None


class StudyError(Fem2nnError):
    pass
