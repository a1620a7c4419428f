"""
Mesh module for the quasiconformal imaging toolkit.

This module builds and queries the triangulated image domain on which all
deformation maps and Beltrami fields live:
- Regular grid triangulation with one vertex per pixel center
- Piecewise-linear deformation maps given by per-vertex target positions
- Fold detection through signed face areas
- Point evaluation of a map (with Jacobians) on the canonical triangles
- Binary map serialization (QCM1)

Conventions: vertex (i, j) has index i * width_v + j and sits at position
(x = j, y = i). Cell (i, j) is split along its SW -> NE diagonal into a lower
triangle (SW, SE, NE) followed by an upper triangle (SW, NE, NW), where
SW = (i, j), SE = (i, j + 1), NE = (i + 1, j + 1), NW = (i + 1, j).
"""

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np

from src.config import DEGENERATE_AREA_EPS, QCM_MAGIC
from src.exceptions import FormatError, InvalidArgumentError
from src.logger import setup_logger

# Set up logger for this module
logger = setup_logger(__name__)

_HEADER = struct.Struct("<4sII")


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


# ============================================================================
# Domain Types
# ============================================================================

@dataclass(frozen=True, eq=False)
class TriMesh:
    """
    Regular triangulation of a width_v x height_v vertex grid.

    Attributes:
        width_v: Vertex-grid columns
        height_v: Vertex-grid rows
        vertices: (width_v * height_v, 2) reference positions in pixels
        faces: (m, 3) vertex indices, counter-clockwise, canonical order
    """
    width_v: int
    height_v: int
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(self.vertices, np.float64))
        object.__setattr__(self, "faces", _frozen(self.faces, np.int64))

    @property
    def vertex_count(self) -> int:
        return self.width_v * self.height_v

    @property
    def face_count(self) -> int:
        return 2 * (self.width_v - 1) * (self.height_v - 1)

    @property
    def cell_shape(self) -> tuple[int, int]:
        """(rows, cols) of the cell grid."""
        return self.height_v - 1, self.width_v - 1


@dataclass(frozen=True, eq=False)
class DeformationMap:
    """
    Piecewise-linear map f = (u, v) given by per-vertex target positions.

    Attributes:
        mesh: The reference mesh
        positions: (vertex_count, 2) target coordinates (u_i, v_i) in pixels
    """
    mesh: TriMesh
    positions: np.ndarray

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=np.float64)
        if positions.shape != (self.mesh.vertex_count, 2):
            error_msg = (
                f"Map positions have shape {positions.shape}, "
                f"expected ({self.mesh.vertex_count}, 2)"
            )
            logger.error(error_msg)
            raise InvalidArgumentError(error_msg)
        if not np.all(np.isfinite(positions)):
            error_msg = "Map positions contain non-finite coordinates"
            logger.error(error_msg)
            raise InvalidArgumentError(error_msg)
        object.__setattr__(self, "positions", _frozen(positions, np.float64))

    @classmethod
    def from_displacement(cls, mesh: TriMesh, displacement: np.ndarray) -> "DeformationMap":
        """Build a map from per-vertex displacement, shape (N, 2) or (H, W, 2)."""
        displacement = np.asarray(displacement, dtype=np.float64).reshape(-1, 2)
        return cls(mesh, mesh.vertices + displacement)

    @property
    def u(self) -> np.ndarray:
        return self.positions[:, 0]

    @property
    def v(self) -> np.ndarray:
        return self.positions[:, 1]

    @property
    def displacement(self) -> np.ndarray:
        return self.positions - self.mesh.vertices

    def positions_grid(self) -> np.ndarray:
        """Positions reshaped to (height_v, width_v, 2)."""
        return self.positions.reshape(self.mesh.height_v, self.mesh.width_v, 2)


class OrientationCount(NamedTuple):
    positive: int
    degenerate: int
    flipped: int


# ============================================================================
# Construction
# ============================================================================

@lru_cache(maxsize=32)
def build_grid_mesh(width_v: int, height_v: int) -> TriMesh:
    """
    Build the canonical triangulation of a width_v x height_v vertex grid.

    Args:
        width_v: Number of vertex columns (>= 2)
        height_v: Number of vertex rows (>= 2)

    Returns:
        TriMesh with width_v * height_v vertices and
        2 * (width_v - 1) * (height_v - 1) faces

    Raises:
        InvalidArgumentError: If either dimension is below 2

    Example:
        >>> mesh = build_grid_mesh(65, 65)
        >>> mesh.vertex_count, mesh.face_count
        (4225, 8192)
    """
    for label, value in (("width_v", width_v), ("height_v", height_v)):
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 2:
            error_msg = f"Mesh dimension {label} must be an integer >= 2, got {value!r}"
            logger.error(error_msg)
            raise InvalidArgumentError(error_msg)
    width_v, height_v = int(width_v), int(height_v)

    rows, cols = np.mgrid[0:height_v, 0:width_v]
    vertices = np.column_stack([cols.ravel(), rows.ravel()]).astype(np.float64)

    ci, cj = np.mgrid[0:height_v - 1, 0:width_v - 1]
    sw = (ci * width_v + cj).ravel()
    se = sw + 1
    nw = sw + width_v
    ne = nw + 1

    faces = np.empty((2 * sw.size, 3), dtype=np.int64)
    faces[0::2] = np.column_stack([sw, se, ne])
    faces[1::2] = np.column_stack([sw, ne, nw])

    logger.debug(f"Built grid mesh {width_v}x{height_v} with {faces.shape[0]} faces")
    return TriMesh(width_v, height_v, vertices, faces)


def identity_map(mesh: TriMesh) -> DeformationMap:
    """Map every vertex to its own reference position."""
    return DeformationMap(mesh, mesh.vertices)


def boundary_mask(mesh: TriMesh) -> np.ndarray:
    """Boolean mask over vertices, True on the outer boundary of the grid."""
    mask = np.zeros((mesh.height_v, mesh.width_v), dtype=bool)
    mask[0, :] = mask[-1, :] = True
    mask[:, 0] = mask[:, -1] = True
    return mask.ravel()


# ============================================================================
# Orientation Queries
# ============================================================================

def signed_areas(mesh: TriMesh, positions: np.ndarray) -> np.ndarray:
    """
    Signed area of every face under the given vertex positions.

    Args:
        mesh: Mesh providing the face topology
        positions: (vertex_count, 2) vertex coordinates

    Returns:
        (m,) array; positive for counter-clockwise faces
    """
    p0 = positions[mesh.faces[:, 0]]
    p1 = positions[mesh.faces[:, 1]]
    p2 = positions[mesh.faces[:, 2]]
    e1 = p1 - p0
    e2 = p2 - p0
    return 0.5 * (e1[:, 0] * e2[:, 1] - e2[:, 0] * e1[:, 1])


def face_orientation_count(deformation: DeformationMap) -> OrientationCount:
    """
    Classify every mapped face as positive, degenerate or flipped.

    A face is degenerate when its absolute signed area is at most
    DEGENERATE_AREA_EPS pixel^2 and flipped when its area is below
    -DEGENERATE_AREA_EPS.

    Args:
        deformation: Map to inspect

    Returns:
        OrientationCount(positive, degenerate, flipped), summing to m

    Example:
        >>> face_orientation_count(identity_map(build_grid_mesh(3, 3)))
        OrientationCount(positive=8, degenerate=0, flipped=0)
    """
    areas = signed_areas(deformation.mesh, deformation.positions)
    degenerate = int(np.count_nonzero(np.abs(areas) <= DEGENERATE_AREA_EPS))
    flipped = int(np.count_nonzero(areas < -DEGENERATE_AREA_EPS))
    positive = int(areas.size - degenerate - flipped)
    return OrientationCount(positive, degenerate, flipped)


def flipped_faces(deformation: DeformationMap) -> np.ndarray:
    """Indices of faces whose mapped signed area is below -DEGENERATE_AREA_EPS."""
    areas = signed_areas(deformation.mesh, deformation.positions)
    return np.flatnonzero(areas < -DEGENERATE_AREA_EPS)


# ============================================================================
# Map Evaluation
# ============================================================================

def evaluate_map(deformation: DeformationMap, points: np.ndarray, with_jacobian: bool = False):
    """
    Evaluate the piecewise-linear map at arbitrary points.

    Each point is assigned to the canonical triangle of the cell containing
    it. Points outside the grid use the cell nearest to them, extended
    linearly, so affine maps are reproduced exactly everywhere.

    Args:
        deformation: Map to evaluate
        points: (P, 2) array of (x, y) coordinates
        with_jacobian: Also return the (P, 2, 2) Jacobian [[u_x, u_y], [v_x, v_y]]

    Returns:
        (P, 2) mapped points, or a tuple (mapped, jacobian)
    """
    mesh = deformation.mesh
    width_v = mesh.width_v
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    x, y = points[:, 0], points[:, 1]

    cx = np.clip(np.floor(x), 0, mesh.width_v - 2).astype(np.int64)
    cy = np.clip(np.floor(y), 0, mesh.height_v - 2).astype(np.int64)
    fx = (x - cx)[:, None]
    fy = (y - cy)[:, None]

    positions = deformation.positions
    sw = positions[cy * width_v + cx]
    se = positions[cy * width_v + cx + 1]
    nw = positions[(cy + 1) * width_v + cx]
    ne = positions[(cy + 1) * width_v + cx + 1]

    lower = fy <= fx
    d_dx = np.where(lower, se - sw, ne - nw)
    d_dy = np.where(lower, ne - se, nw - sw)
    mapped = sw + fx * d_dx + fy * d_dy

    if not with_jacobian:
        return mapped
    jacobian = np.stack([d_dx, d_dy], axis=2)
    return mapped, jacobian


# ============================================================================
# QCM1 Serialization
# ============================================================================

def map_to_bytes(deformation: DeformationMap) -> bytes:
    """Encode a map in the QCM1 format."""
    mesh = deformation.mesh
    header = _HEADER.pack(QCM_MAGIC, mesh.width_v, mesh.height_v)
    return header + deformation.positions.astype("<f8").tobytes()


def map_from_bytes(payload: bytes) -> DeformationMap:
    """
    Decode a QCM1 payload.

    Raises:
        FormatError: On bad magic, invalid dimensions, size mismatch or
            non-finite coordinates
    """
    if len(payload) < _HEADER.size:
        error_msg = f"QCM1 payload too short ({len(payload)} bytes)"
        logger.error(error_msg)
        raise FormatError(error_msg)

    magic, width_v, height_v = _HEADER.unpack_from(payload)
    if magic != QCM_MAGIC:
        error_msg = f"Bad map magic {magic!r}, expected {QCM_MAGIC!r}"
        logger.error(error_msg)
        raise FormatError(error_msg)
    if width_v < 2 or height_v < 2:
        error_msg = f"Invalid map dimensions {width_v}x{height_v}"
        logger.error(error_msg)
        raise FormatError(error_msg)

    expected = _HEADER.size + width_v * height_v * 2 * 8
    if len(payload) != expected:
        error_msg = f"QCM1 payload has {len(payload)} bytes, expected {expected}"
        logger.error(error_msg)
        raise FormatError(error_msg)

    positions = np.frombuffer(payload, dtype="<f8", offset=_HEADER.size).reshape(-1, 2)
    mesh = build_grid_mesh(width_v, height_v)
    try:
        return DeformationMap(mesh, positions.astype(np.float64))
    except InvalidArgumentError as e:
        raise FormatError(f"Invalid QCM1 content: {e}") from e


def write_map(deformation: DeformationMap, path: Union[str, Path]) -> None:
    """Write a map to a QCM1 file."""
    path = Path(path)
    path.write_bytes(map_to_bytes(deformation))
    logger.debug(f"Wrote map {deformation.mesh.width_v}x{deformation.mesh.height_v} to {path}")


def read_map(path: Union[str, Path]) -> DeformationMap:
    """Read a map from a QCM1 file."""
    path = Path(path)
    deformation = map_from_bytes(path.read_bytes())
    logger.debug(f"Read map {deformation.mesh.width_v}x{deformation.mesh.height_v} from {path}")
    return deformation


if __name__ == "__main__":
    demo_mesh = build_grid_mesh(65, 65)
    print(f"Vertices: {demo_mesh.vertex_count}, faces: {demo_mesh.face_count}")
    print(f"Identity orientation: {face_orientation_count(identity_map(demo_mesh))}")
