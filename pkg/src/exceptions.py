"""
Exception hierarchy for the quasiconformal imaging toolkit.

Every error raised by the library derives from QcwarpError and carries a
machine-readable ``category`` token. The CLI prints the token on stderr and
maps it to an exit code.
"""

from typing import Optional, Sequence


# ============================================================================
# Custom Exception Classes
# ============================================================================

class QcwarpError(Exception):
    """Base exception for toolkit errors"""
    category = "error"


class InvalidArgumentError(QcwarpError, ValueError):
    """Argument outside its documented domain, or mismatched shapes"""
    category = "invalid-argument"


class FormatError(QcwarpError, ValueError):
    """File content does not match the expected format (bad magic, truncated payload)"""
    category = "bad-format"


class InvalidMeshError(QcwarpError, ValueError):
    """Reference mesh has a face of zero area"""
    category = "invalid-mesh"


class UnderdeterminedSystemError(QcwarpError, ValueError):
    """Linear system has no boundary constraints"""
    category = "underdetermined-system"


class InadmissibleCoefficientError(QcwarpError, ValueError):
    """Beltrami coefficient with |mu| too close to (or above) 1"""
    category = "inadmissible-coefficient"


class DegenerateMapError(QcwarpError, ValueError):
    """Mapped face with vanishing f_z"""
    category = "degenerate-map"

    def __init__(self, message: str, face_index: int):
        super().__init__(message)
        self.face_index = face_index


class NumericalFailureError(QcwarpError, RuntimeError):
    """Iterative solver did not reach its tolerance"""
    category = "numerical-failure"

    def __init__(self, message: str, residual: float, context: Optional[str] = None):
        super().__init__(message)
        self.residual = residual
        self.context = context


class FoldError(QcwarpError, ValueError):
    """Deformation map contains flipped faces"""
    category = "fold"

    def __init__(self, message: str, face_indices: Sequence[int]):
        super().__init__(message)
        self.face_indices = list(face_indices)
