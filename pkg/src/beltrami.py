"""
Beltrami module for the quasiconformal imaging toolkit.

This module computes, constrains and filters Beltrami coefficients of
piecewise-linear maps:
- Per-face Beltrami coefficient mu = f_zbar / f_z from exact face gradients
- Phase-preserving tanh squashing into the admissible disk |mu| <= 1 - eps
- Gaussian smoothing and low-frequency Fourier truncation on the cell grid
- Binary field serialization (QCB1)

A field is stored per face as (rho, tau) pairs with mu = rho + i tau.
Cell-grid operations average the two faces of each cell and write the
result back to both faces.
"""

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Union

import numpy as np
import scipy.sparse as sp
from scipy import ndimage
from scipy import fft as sfft

from src.config import DEGENERATE_AREA_EPS, FZ_EPS, QCB_MAGIC
from src.exceptions import (
    DegenerateMapError,
    FormatError,
    InvalidArgumentError,
    InvalidMeshError,
)
from src.logger import setup_logger
from src.mesh import DeformationMap, TriMesh, build_grid_mesh, signed_areas

# Set up logger for this module
logger = setup_logger(__name__)

_HEADER = struct.Struct("<4sII")


# ============================================================================
# Domain Types
# ============================================================================

@dataclass(frozen=True, eq=False)
class BeltramiField:
    """
    One complex Beltrami coefficient per face.

    Attributes:
        mesh: Owning mesh
        values: (m, 2) array of (rho, tau)
    """
    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.shape != (self.mesh.face_count, 2):
            error_msg = (
                f"Beltrami values have shape {values.shape}, "
                f"expected ({self.mesh.face_count}, 2)"
            )
            logger.error(error_msg)
            raise InvalidArgumentError(error_msg)
        if not np.all(np.isfinite(values)):
            error_msg = "Beltrami field contains non-finite entries"
            logger.error(error_msg)
            raise InvalidArgumentError(error_msg)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def from_complex(cls, mesh: TriMesh, mu: np.ndarray) -> "BeltramiField":
        mu = np.asarray(mu, dtype=np.complex128).ravel()
        return cls(mesh, np.column_stack([mu.real, mu.imag]))

    @classmethod
    def zeros(cls, mesh: TriMesh) -> "BeltramiField":
        return cls(mesh, np.zeros((mesh.face_count, 2)))

    @property
    def rho(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def tau(self) -> np.ndarray:
        return self.values[:, 1]

    @property
    def mu(self) -> np.ndarray:
        """Complex view of the coefficients, shape (m,)."""
        return self.values[:, 0] + 1j * self.values[:, 1]

    def is_admissible(self, epsilon: float) -> bool:
        return sup_norm(self) <= 1.0 - epsilon


# ============================================================================
# Face Gradients
# ============================================================================

def face_basis_gradients(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gradients of the three hat functions on every reference face.

    For a face with vertices p0, p1, p2 and area A, the hat function of
    vertex k has gradient (-e_y, e_x) / (2A) where e = p(k+2) - p(k+1).

    Args:
        mesh: Reference mesh

    Returns:
        (grad_x, grad_y, areas) with grad_* of shape (m, 3) and areas (m,)

    Raises:
        InvalidMeshError: If a reference face has area <= DEGENERATE_AREA_EPS
    """
    areas = signed_areas(mesh, mesh.vertices)
    bad = np.flatnonzero(areas <= DEGENERATE_AREA_EPS)
    if bad.size:
        error_msg = f"Reference mesh has {bad.size} degenerate faces (first: {bad[0]})"
        logger.error(error_msg)
        raise InvalidMeshError(error_msg)

    points = mesh.vertices[mesh.faces]  # (m, 3, 2)
    edges = np.roll(points, -2, axis=1) - np.roll(points, -1, axis=1)
    twice_area = (2.0 * areas)[:, None]
    grad_x = -edges[:, :, 1] / twice_area
    grad_y = edges[:, :, 0] / twice_area
    return grad_x, grad_y, areas


@lru_cache(maxsize=16)
def gradient_operators(mesh: TriMesh) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """
    Sparse per-face derivative operators of the piecewise-linear basis.

    Returns:
        (Dx, Dy), each of shape (m, vertex_count), so that Dx @ u gives u_x
        on every face
    """
    grad_x, grad_y, _ = face_basis_gradients(mesh)
    rows = np.repeat(np.arange(mesh.face_count), 3)
    cols = mesh.faces.ravel()
    shape = (mesh.face_count, mesh.vertex_count)
    dx = sp.csr_matrix((grad_x.ravel(), (rows, cols)), shape=shape)
    dy = sp.csr_matrix((grad_y.ravel(), (rows, cols)), shape=shape)
    return dx, dy


def wirtinger_derivatives(deformation: DeformationMap) -> tuple[np.ndarray, np.ndarray]:
    """Per-face (f_z, f_zbar) of a piecewise-linear map."""
    dx, dy = gradient_operators(deformation.mesh)
    u, v = deformation.u, deformation.v
    ux, uy = dx @ u, dy @ u
    vx, vy = dx @ v, dy @ v
    f_z = 0.5 * ((ux + vy) + 1j * (vx - uy))
    f_zbar = 0.5 * ((ux - vy) + 1j * (vx + uy))
    return f_z, f_zbar


# ============================================================================
# Core Operations
# ============================================================================

def compute_beltrami(deformation: DeformationMap) -> BeltramiField:
    """
    Compute the Beltrami coefficient mu = f_zbar / f_z on every face.

    Args:
        deformation: Piecewise-linear map

    Returns:
        BeltramiField on the map's mesh

    Raises:
        InvalidMeshError: If the reference mesh has a zero-area face
        DegenerateMapError: If |f_z| < FZ_EPS on some face

    Example:
        >>> mesh = build_grid_mesh(5, 5)
        >>> stretch = DeformationMap(mesh, mesh.vertices * [2.0, 1.0])
        >>> round(float(compute_beltrami(stretch).rho[0]), 6)
        0.333333
    """
    f_z, f_zbar = wirtinger_derivatives(deformation)
    degenerate = np.flatnonzero(np.abs(f_z) < FZ_EPS)
    if degenerate.size:
        face_index = int(degenerate[0])
        error_msg = (
            f"Degenerate mapped face {face_index}: |f_z| below {FZ_EPS} "
            f"({degenerate.size} faces affected)"
        )
        logger.error(error_msg)
        raise DegenerateMapError(error_msg, face_index=face_index)
    return BeltramiField.from_complex(deformation.mesh, f_zbar / f_z)


def _magnitude_limit(epsilon: float) -> float:
    # a few ulps below 1 - epsilon so that rescaled entries never round above it
    return (1.0 - epsilon) * (1.0 - 4.0 * np.finfo(np.float64).eps)


def squash_values(mu: np.ndarray, epsilon: float) -> np.ndarray:
    """
    Squash complex coefficients to magnitude min(tanh(|mu|), 1 - epsilon).

    Phase of every nonzero entry is kept; zeros stay zero.
    """
    mu = np.asarray(mu, dtype=np.complex128)
    magnitude = np.abs(mu)
    squashed = np.minimum(np.tanh(magnitude), _magnitude_limit(epsilon))
    scale = np.divide(squashed, magnitude, out=np.zeros_like(magnitude), where=magnitude > 0)
    return mu * scale


def squash_activation(field: BeltramiField, epsilon: float) -> BeltramiField:
    """
    Map every coefficient into the admissible disk of radius 1 - epsilon.

    Args:
        field: Input field
        epsilon: Margin in (0, 1)

    Returns:
        Field with |mu| = min(tanh(|mu|), 1 - epsilon) and unchanged phase

    Raises:
        InvalidArgumentError: If epsilon is outside (0, 1)
    """
    if not (0.0 < epsilon < 1.0):
        error_msg = f"epsilon must lie in (0, 1), got {epsilon}"
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)
    return BeltramiField.from_complex(field.mesh, squash_values(field.mu, epsilon))


def clamp_magnitude(field: BeltramiField, epsilon: float) -> BeltramiField:
    """Scale down entries with |mu| > 1 - epsilon onto that circle; others are untouched."""
    mu = field.mu
    magnitude = np.abs(mu)
    limit = _magnitude_limit(epsilon)
    if not np.any(magnitude > limit):
        return field
    scale = np.where(magnitude > limit, limit / np.maximum(magnitude, limit), 1.0)
    return BeltramiField.from_complex(field.mesh, mu * scale)


def sup_norm(field: BeltramiField) -> float:
    """Maximum |mu| over faces."""
    if field.values.shape[0] == 0:
        return 0.0
    return float(np.max(np.hypot(field.rho, field.tau)))


def field_correlation(field: BeltramiField, reference: BeltramiField) -> tuple[float, float]:
    """
    Pearson correlation of rho and of tau between two fields on the same grid.

    A component that is constant on either side has no defined correlation
    and reports 0.0.

    Returns:
        (r_rho, r_tau)

    Raises:
        InvalidArgumentError: If the fields live on different grids
    """
    if field.values.shape != reference.values.shape:
        error_msg = f"Fields differ in face count: {field.values.shape[0]} vs {reference.values.shape[0]}"
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)

    def pearson(a: np.ndarray, b: np.ndarray) -> float:
        if np.ptp(a) == 0 or np.ptp(b) == 0:
            return 0.0
        return float(np.corrcoef(a, b)[0, 1])

    return pearson(field.rho, reference.rho), pearson(field.tau, reference.tau)


# ============================================================================
# Cell-Grid Filtering
# ============================================================================

def field_to_grid(field: BeltramiField) -> np.ndarray:
    """Average each cell's two faces; returns a complex (rows, cols) grid."""
    mu = field.mu
    return (0.5 * (mu[0::2] + mu[1::2])).reshape(field.mesh.cell_shape)


def field_from_grid(mesh: TriMesh, grid: np.ndarray) -> BeltramiField:
    """Write each cell value of a complex grid to both faces of the cell."""
    grid = np.asarray(grid, dtype=np.complex128)
    if grid.shape != mesh.cell_shape:
        error_msg = f"Cell grid has shape {grid.shape}, expected {mesh.cell_shape}"
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)
    return BeltramiField.from_complex(mesh, np.repeat(grid.ravel(), 2))


def smooth_field(field: BeltramiField, sigma: float) -> BeltramiField:
    """
    Gaussian-blur the field on the cell grid.

    rho and tau are filtered independently with standard deviation sigma
    (in cells) and mirrored boundaries, which keeps the total of each
    component unchanged. sigma = 0 returns the field as is.

    Raises:
        InvalidArgumentError: If sigma is negative
    """
    if sigma < 0:
        error_msg = f"Smoothing sigma must be >= 0, got {sigma}"
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)
    if sigma == 0:
        return field

    grid = field_to_grid(field)
    rho = ndimage.gaussian_filter(grid.real, sigma=sigma, mode="reflect")
    tau = ndimage.gaussian_filter(grid.imag, sigma=sigma, mode="reflect")
    return field_from_grid(field.mesh, rho + 1j * tau)


def fourier_truncate(field: BeltramiField, k: int) -> BeltramiField:
    """
    Keep only the centered k x k block of low frequencies of the cell grid.

    The complex grid is transformed with a 2D FFT, shifted so the DC term
    sits at (rows // 2, cols // 2), masked outside the block starting at
    (rows // 2 - k // 2, cols // 2 - k // 2), and transformed back.

    Args:
        field: Input field
        k: Block size, 1 <= k <= min(cell-grid dimensions)

    Returns:
        Truncated field (a projection: truncating twice equals truncating once)

    Raises:
        InvalidArgumentError: If k is outside the valid range
    """
    rows, cols = field.mesh.cell_shape
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or not 1 <= k <= min(rows, cols):
        error_msg = f"Truncation size k must be an integer in [1, {min(rows, cols)}], got {k!r}"
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)

    spectrum = sfft.fftshift(sfft.fft2(field_to_grid(field)))
    r0 = rows // 2 - k // 2
    c0 = cols // 2 - k // 2
    mask = np.zeros((rows, cols), dtype=bool)
    mask[r0:r0 + k, c0:c0 + k] = True
    spectrum[~mask] = 0.0
    grid = sfft.ifft2(sfft.ifftshift(spectrum))
    return field_from_grid(field.mesh, grid)


# ============================================================================
# QCB1 Serialization
# ============================================================================

def field_to_bytes(field: BeltramiField) -> bytes:
    """Encode a field in the QCB1 format."""
    mesh = field.mesh
    header = _HEADER.pack(QCB_MAGIC, mesh.width_v, mesh.height_v)
    return header + field.values.astype("<f8").tobytes()


def field_from_bytes(payload: bytes) -> BeltramiField:
    """
    Decode a QCB1 payload.

    Raises:
        FormatError: On bad magic, invalid dimensions, size mismatch or
            non-finite values
    """
    if len(payload) < _HEADER.size:
        error_msg = f"QCB1 payload too short ({len(payload)} bytes)"
        logger.error(error_msg)
        raise FormatError(error_msg)

    magic, width_v, height_v = _HEADER.unpack_from(payload)
    if magic != QCB_MAGIC:
        error_msg = f"Bad Beltrami magic {magic!r}, expected {QCB_MAGIC!r}"
        logger.error(error_msg)
        raise FormatError(error_msg)
    if width_v < 2 or height_v < 2:
        error_msg = f"Invalid field dimensions {width_v}x{height_v}"
        logger.error(error_msg)
        raise FormatError(error_msg)

    face_count = 2 * (width_v - 1) * (height_v - 1)
    expected = _HEADER.size + face_count * 2 * 8
    if len(payload) != expected:
        error_msg = f"QCB1 payload has {len(payload)} bytes, expected {expected}"
        logger.error(error_msg)
        raise FormatError(error_msg)

    values = np.frombuffer(payload, dtype="<f8", offset=_HEADER.size).reshape(-1, 2)
    try:
        return BeltramiField(build_grid_mesh(width_v, height_v), values)
    except InvalidArgumentError as e:
        raise FormatError(f"Invalid QCB1 content: {e}") from e


def write_field(field: BeltramiField, path: Union[str, Path]) -> None:
    """Write a field to a QCB1 file."""
    Path(path).write_bytes(field_to_bytes(field))
    logger.debug(f"Wrote Beltrami field ({field.mesh.face_count} faces) to {path}")


def read_field(path: Union[str, Path]) -> BeltramiField:
    """Read a field from a QCB1 file."""
    field = field_from_bytes(Path(path).read_bytes())
    logger.debug(f"Read Beltrami field ({field.mesh.face_count} faces) from {path}")
    return field


if __name__ == "__main__":
    demo_mesh = build_grid_mesh(33, 33)
    demo_map = DeformationMap(demo_mesh, demo_mesh.vertices * [2.0, 1.0])
    demo_field = compute_beltrami(demo_map)
    print(f"mu of (2x, y): {demo_field.mu[0]:.6f}, sup norm {sup_norm(demo_field):.6f}")
