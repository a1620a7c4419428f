"""
Tests for the mesh module.

This test suite validates the mesh module's functionality including:
- Grid triangulation layout and face orientation
- Deformation map construction and validation
- Fold and degeneracy counting
- Point evaluation of piecewise-linear maps
- QCM1 serialization and its format errors
"""

import struct

import numpy as np
import pytest

from src.exceptions import FormatError, InvalidArgumentError
from src.mesh import (
    DeformationMap,
    OrientationCount,
    boundary_mask,
    build_grid_mesh,
    evaluate_map,
    face_orientation_count,
    flipped_faces,
    identity_map,
    map_from_bytes,
    map_to_bytes,
    read_map,
    signed_areas,
    write_map,
)


# ============================================================================
# Tests for build_grid_mesh Function
# ============================================================================

class TestBuildGridMesh:
    """Tests for the build_grid_mesh function."""

    @pytest.mark.unit
    @pytest.mark.parametrize("width_v,height_v,faces", [
        (2, 2, 2),
        (3, 3, 8),
        (5, 3, 16),
        (65, 65, 8192),
    ], ids=["single_cell", "3x3", "wide", "65x65"])
    def test_counts(self, width_v, height_v, faces):
        """Test vertex and face counts of the canonical triangulation."""
        mesh = build_grid_mesh(width_v, height_v)

        assert mesh.vertex_count == width_v * height_v
        assert mesh.face_count == faces
        assert mesh.faces.shape == (faces, 3)
        assert mesh.cell_shape == (height_v - 1, width_v - 1)

    @pytest.mark.unit
    def test_vertex_positions(self, mesh_3x3):
        """Test that vertex (i, j) has index i * W + j and position (j, i)."""
        assert mesh_3x3.vertices[5].tolist() == [2.0, 1.0]
        assert mesh_3x3.vertices[7].tolist() == [1.0, 2.0]

    @pytest.mark.unit
    def test_canonical_face_order(self, mesh_3x3):
        """Test lower (SW, SE, NE) then upper (SW, NE, NW) triangle per cell."""
        assert mesh_3x3.faces[0].tolist() == [0, 1, 4]
        assert mesh_3x3.faces[1].tolist() == [0, 4, 3]
        assert mesh_3x3.faces[2].tolist() == [1, 2, 5]
        assert mesh_3x3.faces[7].tolist() == [4, 8, 7]

    @pytest.mark.unit
    def test_reference_faces_are_positive(self, mesh_17):
        """Test that every reference face is counter-clockwise with area 1/2."""
        areas = signed_areas(mesh_17, mesh_17.vertices)
        np.testing.assert_allclose(areas, 0.5)

    @pytest.mark.unit
    def test_arrays_are_read_only(self, mesh_3x3):
        """Test that mesh arrays cannot be modified in place."""
        with pytest.raises(ValueError):
            mesh_3x3.vertices[0, 0] = 9.0

    @pytest.mark.unit
    def test_cached(self):
        """Test that the same dimensions return the same mesh object."""
        assert build_grid_mesh(9, 7) is build_grid_mesh(9, 7)

    @pytest.mark.unit
    @pytest.mark.validation
    @pytest.mark.error_handling
    @pytest.mark.parametrize("width_v,height_v", [
        (1, 5),
        (5, 0),
        (2.5, 3),
        (True, 3),
    ], ids=["width_one", "height_zero", "float", "bool"])
    def test_invalid_dimensions(self, width_v, height_v):
        """Test rejection of dimensions below 2 or of non-integer type."""
        with pytest.raises(InvalidArgumentError):
            build_grid_mesh(width_v, height_v)


# ============================================================================
# Tests for DeformationMap
# ============================================================================

class TestDeformationMap:
    """Tests for DeformationMap construction."""

    @pytest.mark.unit
    def test_from_displacement_grid_shape(self, mesh_3x3):
        """Test building a map from an (H, W, 2) displacement grid."""
        displacement = np.zeros((3, 3, 2))
        displacement[1, 1] = [0.25, -0.5]
        deformation = DeformationMap.from_displacement(mesh_3x3, displacement)

        assert deformation.positions[4].tolist() == [1.25, 0.5]
        np.testing.assert_allclose(deformation.displacement.reshape(3, 3, 2), displacement)
        assert deformation.positions_grid().shape == (3, 3, 2)

    @pytest.mark.unit
    @pytest.mark.validation
    def test_wrong_shape(self, mesh_3x3):
        """Test rejection of positions with the wrong vertex count."""
        with pytest.raises(InvalidArgumentError, match="expected"):
            DeformationMap(mesh_3x3, np.zeros((8, 2)))

    @pytest.mark.unit
    @pytest.mark.validation
    def test_non_finite(self, mesh_3x3):
        """Test rejection of NaN coordinates."""
        positions = mesh_3x3.vertices.copy()
        positions[3, 1] = np.nan
        with pytest.raises(InvalidArgumentError, match="non-finite"):
            DeformationMap(mesh_3x3, positions)

    @pytest.mark.unit
    def test_boundary_mask(self, mesh_3x3):
        """Test that only the center of a 3x3 grid is interior."""
        mask = boundary_mask(mesh_3x3)

        assert mask.sum() == 8
        assert not mask[4]


# ============================================================================
# Tests for Orientation Queries
# ============================================================================

class TestFaceOrientationCount:
    """Tests for face_orientation_count and flipped_faces."""

    @pytest.mark.unit
    def test_identity(self, mesh_3x3):
        """Test that the identity has only positive faces."""
        assert face_orientation_count(identity_map(mesh_3x3)) == OrientationCount(8, 0, 0)

    @pytest.mark.unit
    def test_mirror_flips_everything(self, mirrored_map):
        """Test that a reflection flips every face."""
        count = face_orientation_count(mirrored_map)

        assert count.flipped == mirrored_map.mesh.face_count
        assert count.positive == 0
        assert flipped_faces(mirrored_map).size == mirrored_map.mesh.face_count

    @pytest.mark.unit
    def test_collapsed_map_is_degenerate(self, mesh_3x3):
        """Test that a map sending everything to one point is fully degenerate."""
        count = face_orientation_count(DeformationMap(mesh_3x3, np.zeros((9, 2))))

        assert count == OrientationCount(0, 8, 0)

    @pytest.mark.unit
    def test_single_fold(self, mesh_3x3):
        """Test that pushing the center vertex past a corner folds some faces."""
        positions = mesh_3x3.vertices.copy()
        positions[4] = [2.5, 2.5]
        deformation = DeformationMap(mesh_3x3, positions)
        count = face_orientation_count(deformation)

        assert count.flipped > 0
        assert sum(count) == 8
        assert set(flipped_faces(deformation).tolist()) <= set(range(8))

    @pytest.mark.unit
    def test_bump_map_is_fold_free(self, bump_map):
        """Test the smooth test map used throughout the suite."""
        assert face_orientation_count(bump_map).flipped == 0


# ============================================================================
# Tests for evaluate_map Function
# ============================================================================

class TestEvaluateMap:
    """Tests for point evaluation of piecewise-linear maps."""

    @pytest.mark.unit
    def test_vertices_return_positions(self, bump_map):
        """Test that evaluating at vertices returns the vertex targets."""
        np.testing.assert_allclose(evaluate_map(bump_map, bump_map.mesh.vertices), bump_map.positions, atol=1e-12)

    @pytest.mark.unit
    def test_affine_map_reproduced_everywhere(self, mesh_17):
        """Test that an affine map is reproduced exactly, also outside the grid."""
        linear = np.array([[1.2, 0.3], [-0.2, 0.9]])
        offset = np.array([1.5, -2.0])
        deformation = DeformationMap(mesh_17, mesh_17.vertices @ linear.T + offset)
        points = np.random.default_rng(0).uniform(-3.0, 19.0, size=(200, 2))

        mapped, jacobian = evaluate_map(deformation, points, with_jacobian=True)

        np.testing.assert_allclose(mapped, points @ linear.T + offset, atol=1e-10)
        np.testing.assert_allclose(jacobian, np.broadcast_to(linear, (200, 2, 2)), atol=1e-10)

    @pytest.mark.unit
    def test_picks_triangle_by_diagonal(self, mesh_3x3):
        """Test that points below and above the SW-NE diagonal use different faces."""
        positions = mesh_3x3.vertices.copy()
        positions[1] = [1.0, 0.5]  # SE of cell (0, 0), lower triangle only
        deformation = DeformationMap(mesh_3x3, positions)

        below = evaluate_map(deformation, np.array([[0.75, 0.25]]))
        above = evaluate_map(deformation, np.array([[0.25, 0.75]]))

        np.testing.assert_allclose(below, [[0.75, 0.5]])
        np.testing.assert_allclose(above, [[0.25, 0.75]])


# ============================================================================
# Tests for QCM1 Serialization
# ============================================================================

class TestQcmFormat:
    """Tests for the QCM1 map format."""

    @pytest.mark.unit
    def test_header_layout(self, mesh_3x3):
        """Test magic, little-endian dimensions and payload size."""
        payload = map_to_bytes(identity_map(mesh_3x3))

        assert payload[:4] == b"QCM1"
        assert struct.unpack("<II", payload[4:12]) == (3, 3)
        assert len(payload) == 12 + 9 * 16

    @pytest.mark.integration
    @pytest.mark.file_operations
    def test_file_round_trip(self, bump_map, tmp_path):
        """Test that a written map is read back bit for bit."""
        path = tmp_path / "bump.qcm"
        write_map(bump_map, path)
        loaded = read_map(path)

        assert loaded.mesh is bump_map.mesh
        np.testing.assert_array_equal(loaded.positions, bump_map.positions)

    @pytest.mark.unit
    @pytest.mark.validation
    @pytest.mark.error_handling
    @pytest.mark.parametrize("mutate,message", [
        (lambda p: p[:10], "too short"),
        (lambda p: b"QCB1" + p[4:], "magic"),
        (lambda p: p[:-8], "expected"),
        (lambda p: p[:4] + struct.pack("<II", 1, 9) + p[12:], "dimensions"),
        (lambda p: p[:12] + struct.pack("<d", np.nan) + p[20:], "non-finite"),
    ], ids=["truncated_header", "bad_magic", "short_payload", "dimension_one", "nan_coordinate"])
    def test_format_errors(self, mesh_3x3, mutate, message):
        """Test that malformed payloads raise FormatError."""
        payload = map_to_bytes(identity_map(mesh_3x3))

        with pytest.raises(FormatError, match=message):
            map_from_bytes(mutate(payload))

    @pytest.mark.unit
    @pytest.mark.error_handling
    def test_missing_file(self, tmp_path):
        """Test that reading a nonexistent file raises an OSError."""
        with pytest.raises(FileNotFoundError):
            read_map(tmp_path / "missing.qcm")
