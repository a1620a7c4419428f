"""
Tests for the beltrami module.

This test suite validates the beltrami module's functionality including:
- Beltrami coefficients of affine, conformal and degenerate maps
- Phase-preserving squashing into the admissible disk
- Supremum norm and magnitude clamping
- Cell-grid Gaussian smoothing and Fourier truncation
- QCB1 serialization and its format errors
"""

import struct

import numpy as np
import pytest

from src.beltrami import (
    BeltramiField,
    clamp_magnitude,
    compute_beltrami,
    field_from_bytes,
    field_from_grid,
    field_to_bytes,
    field_to_grid,
    fourier_truncate,
    gradient_operators,
    read_field,
    smooth_field,
    squash_activation,
    squash_values,
    sup_norm,
    write_field,
)
from src.exceptions import (
    DegenerateMapError,
    FormatError,
    InvalidArgumentError,
    InvalidMeshError,
)
from src.mesh import DeformationMap, TriMesh, build_grid_mesh, identity_map


def affine_map(mesh, a: complex, b: complex, c: complex = 0.0) -> DeformationMap:
    """The map z -> a z + b conj(z) + c on the mesh vertices."""
    z = mesh.vertices[:, 0] + 1j * mesh.vertices[:, 1]
    w = a * z + b * np.conj(z) + c
    return DeformationMap(mesh, np.column_stack([w.real, w.imag]))


# ============================================================================
# Tests for compute_beltrami Function
# ============================================================================

class TestComputeBeltrami:
    """Tests for the compute_beltrami function."""

    @pytest.mark.unit
    def test_stretch(self, stretch_map):
        """Test that (2x, y) has mu = 1/3 on every face."""
        field = compute_beltrami(stretch_map)

        np.testing.assert_allclose(field.rho, 1.0 / 3.0, atol=1e-12)
        np.testing.assert_allclose(field.tau, 0.0, atol=1e-12)

    @pytest.mark.unit
    def test_shear(self, mesh_17):
        """Test that the shear (x + y, y) has mu = -0.2 + 0.4i."""
        positions = mesh_17.vertices.copy()
        positions[:, 0] += positions[:, 1]
        field = compute_beltrami(DeformationMap(mesh_17, positions))

        np.testing.assert_allclose(field.mu, -0.2 + 0.4j, atol=1e-12)

    @pytest.mark.unit
    def test_identity_is_conformal(self, mesh_17):
        """Test that the identity has mu = 0."""
        assert sup_norm(compute_beltrami(identity_map(mesh_17))) <= 1e-14

    @pytest.mark.unit
    @pytest.mark.property
    def test_affine_law(self):
        """Test mu = b / a for 20 random maps a z + b conj(z) on a 65x65 grid."""
        mesh = build_grid_mesh(65, 65)
        rng = np.random.default_rng(2024)
        for _ in range(20):
            a = rng.uniform(0.5, 2.0) * np.exp(1j * rng.uniform(-np.pi, np.pi))
            b = rng.uniform(0.0, 0.9) * abs(a) * np.exp(1j * rng.uniform(-np.pi, np.pi))
            c = complex(*rng.uniform(-5, 5, size=2))

            field = compute_beltrami(affine_map(mesh, a, b, c))

            assert np.max(np.abs(field.mu - b / a)) <= 1e-10

    @pytest.mark.unit
    @pytest.mark.property
    @pytest.mark.parametrize("a", [
        1.0,
        0.5 + 0.5j,
        -2.0j,
    ], ids=["translation_only", "rotate_scale", "rotate_quarter"])
    def test_conformal_maps(self, mesh_17, a):
        """Test |mu| <= 1e-10 for similarity maps a z + c."""
        field = compute_beltrami(affine_map(mesh_17, a, 0.0, 3.0 - 1.0j))

        assert sup_norm(field) <= 1e-10

    @pytest.mark.unit
    @pytest.mark.error_handling
    def test_reflection_is_degenerate(self, mirrored_map):
        """Test that an orientation-reversing affine map has f_z = 0 everywhere."""
        with pytest.raises(DegenerateMapError) as excinfo:
            compute_beltrami(mirrored_map)

        assert excinfo.value.face_index == 0
        assert excinfo.value.category == "degenerate-map"

    @pytest.mark.unit
    @pytest.mark.error_handling
    def test_degenerate_reference_mesh(self, mesh_3x3):
        """Test that a reference mesh with zero-area faces is rejected."""
        collapsed = TriMesh(3, 3, np.zeros((9, 2)), mesh_3x3.faces)

        with pytest.raises(InvalidMeshError):
            compute_beltrami(DeformationMap(collapsed, np.zeros((9, 2))))

    @pytest.mark.unit
    def test_gradient_operators_on_coordinates(self, mesh_17):
        """Test that Dx, Dy differentiate the coordinate functions exactly."""
        dx, dy = gradient_operators(mesh_17)
        x, y = mesh_17.vertices[:, 0], mesh_17.vertices[:, 1]

        np.testing.assert_allclose(dx @ x, 1.0, atol=1e-12)
        np.testing.assert_allclose(dy @ x, 0.0, atol=1e-12)
        np.testing.assert_allclose(dy @ y, 1.0, atol=1e-12)


# ============================================================================
# Tests for squash_activation and sup_norm Functions
# ============================================================================

class TestSquashActivation:
    """Tests for phase-preserving squashing."""

    @pytest.mark.unit
    @pytest.mark.parametrize("mu,expected", [
        (2.0, 0.9640275800758169),
        (0.3j, 0.2913126124515909j),
        (0.0, 0.0),
    ], ids=["real", "imaginary", "zero"])
    def test_known_values(self, mu, expected):
        """Test |out| = tanh(|mu|) below the cap."""
        out = squash_values(np.array([mu]), 1e-3)

        np.testing.assert_allclose(out, [expected], atol=1e-15)

    @pytest.mark.unit
    def test_cap(self):
        """Test that huge inputs land just inside 1 - epsilon with their phase."""
        mu = np.array([50.0 * np.exp(0.7j)])
        out = squash_values(mu, 0.1)

        assert abs(out[0]) <= 0.9
        assert abs(out[0]) == pytest.approx(0.9, abs=1e-12)
        assert np.angle(out[0]) == pytest.approx(0.7, abs=1e-12)

    @pytest.mark.unit
    @pytest.mark.property
    def test_million_random_inputs(self):
        """Test magnitude < 1 - epsilon and phase preservation on 10^6 inputs."""
        rng = np.random.default_rng(7)
        mu = 5.0 * (rng.standard_normal(10 ** 6) + 1j * rng.standard_normal(10 ** 6))
        out = squash_values(mu, 1e-3)

        assert np.max(np.abs(out)) <= 1.0 - 1e-3
        assert np.max(np.abs(np.angle(out) - np.angle(mu))) <= 1e-12

    @pytest.mark.unit
    def test_field_result_is_admissible(self, mesh_17):
        """Test sup_norm(squash_activation(field)) <= 1 - epsilon."""
        values = np.random.default_rng(3).normal(scale=10.0, size=(mesh_17.face_count, 2))
        field = squash_activation(BeltramiField(mesh_17, values), 0.01)

        assert sup_norm(field) <= 0.99
        assert field.is_admissible(0.01)

    @pytest.mark.unit
    @pytest.mark.validation
    @pytest.mark.parametrize("epsilon", [0.0, 1.0, -0.1], ids=["zero", "one", "negative"])
    def test_invalid_epsilon(self, mesh_3x3, epsilon):
        """Test that epsilon outside (0, 1) is rejected."""
        with pytest.raises(InvalidArgumentError):
            squash_activation(BeltramiField.zeros(mesh_3x3), epsilon)

    @pytest.mark.unit
    def test_sup_norm_pythagorean(self, mesh_3x3):
        """Test that a single 0.6 + 0.8i entry gives sup norm 1."""
        mu = np.zeros(mesh_3x3.face_count, dtype=complex)
        mu[5] = 0.6 + 0.8j

        assert sup_norm(BeltramiField.from_complex(mesh_3x3, mu)) == pytest.approx(1.0, abs=1e-15)
        assert sup_norm(BeltramiField.zeros(mesh_3x3)) == 0.0

    @pytest.mark.unit
    def test_clamp_magnitude(self, mesh_3x3):
        """Test that clamping touches only entries beyond the limit."""
        mu = np.full(mesh_3x3.face_count, 0.2 + 0.0j)
        mu[2] = 1.5j
        clamped = clamp_magnitude(BeltramiField.from_complex(mesh_3x3, mu), 0.05)

        np.testing.assert_allclose(clamped.mu[[0, 1, 3]], 0.2)
        assert abs(clamped.mu[2]) == pytest.approx(0.95, abs=1e-12)
        assert clamped.mu[2].real == 0.0

    @pytest.mark.unit
    def test_clamp_returns_admissible_field_unchanged(self, admissible_field):
        """Test that an admissible field is returned as is."""
        assert clamp_magnitude(admissible_field, 1e-3) is admissible_field


# ============================================================================
# Tests for Cell-Grid Filtering
# ============================================================================

class TestSmoothField:
    """Tests for the smooth_field function."""

    @pytest.mark.unit
    def test_sigma_zero_is_identity(self, admissible_field):
        """Test that sigma = 0 returns the input field."""
        assert smooth_field(admissible_field, 0) is admissible_field

    @pytest.mark.unit
    def test_constant_field_unchanged(self, mesh_17):
        """Test that blurring a constant field leaves it constant."""
        field = BeltramiField.from_complex(mesh_17, np.full(mesh_17.face_count, 0.3 - 0.1j))
        smoothed = smooth_field(field, 2.5)

        np.testing.assert_allclose(smoothed.mu, 0.3 - 0.1j, atol=1e-12)

    @pytest.mark.unit
    def test_impulse_mass_preserved(self, mesh_17):
        """Test that an impulse spreads while the total of rho and tau is kept."""
        grid = np.zeros(mesh_17.cell_shape, dtype=complex)
        grid[3, 11] = 0.8 - 0.4j
        smoothed = smooth_field(field_from_grid(mesh_17, grid), 1.5)
        out = field_to_grid(smoothed)

        assert abs(out[3, 11]) < 0.8
        assert np.count_nonzero(np.abs(out) > 1e-6) > 1
        assert out.real.sum() == pytest.approx(0.8, abs=1e-9)
        assert out.imag.sum() == pytest.approx(-0.4, abs=1e-9)

    @pytest.mark.unit
    def test_faces_of_a_cell_agree(self, admissible_field):
        """Test that both faces of each cell carry the smoothed cell value."""
        smoothed = smooth_field(admissible_field, 1.0)

        np.testing.assert_array_equal(smoothed.mu[0::2], smoothed.mu[1::2])
        assert sup_norm(smoothed) <= sup_norm(admissible_field) + 1e-12

    @pytest.mark.unit
    @pytest.mark.validation
    def test_negative_sigma(self, admissible_field):
        """Test that a negative sigma is rejected."""
        with pytest.raises(InvalidArgumentError):
            smooth_field(admissible_field, -1.0)


class TestFourierTruncate:
    """Tests for the fourier_truncate function."""

    @pytest.mark.unit
    def test_full_block_unchanged(self, admissible_field):
        """Test that keeping every frequency returns the cell-averaged field."""
        truncated = fourier_truncate(admissible_field, 32)

        np.testing.assert_allclose(truncated.values, admissible_field.values, atol=1e-9)

    @pytest.mark.unit
    def test_dc_only_gives_mean(self, admissible_field):
        """Test that k = 1 keeps only the mean of the cell grid."""
        truncated = fourier_truncate(admissible_field, 1)
        mean = field_to_grid(admissible_field).mean()

        np.testing.assert_allclose(truncated.mu, mean, atol=1e-12)

    @pytest.mark.unit
    def test_constant_field_k1_unchanged(self, mesh_17):
        """Test that a constant field survives DC-only truncation."""
        field = BeltramiField.from_complex(mesh_17, np.full(mesh_17.face_count, -0.25 + 0.5j))

        np.testing.assert_allclose(fourier_truncate(field, 1).mu, -0.25 + 0.5j, atol=1e-12)

    @pytest.mark.unit
    @pytest.mark.property
    def test_projection_and_energy(self, mesh_17):
        """Test idempotence within 1e-9 and energy non-increase on 50 seeded fields."""
        rng = np.random.default_rng(99)
        for seed in range(50):
            values = rng.uniform(-0.5, 0.5, size=(mesh_17.face_count, 2))
            field = BeltramiField(mesh_17, values)
            k = 1 + seed % 16

            once = fourier_truncate(field, k)
            twice = fourier_truncate(once, k)

            np.testing.assert_allclose(twice.values, once.values, atol=1e-9)
            energy_in = np.sum(np.abs(field_to_grid(field)) ** 2)
            energy_out = np.sum(np.abs(field_to_grid(once)) ** 2)
            assert energy_out <= energy_in + 1e-12

    @pytest.mark.unit
    @pytest.mark.validation
    @pytest.mark.parametrize("k", [0, 33, True, 2.0], ids=["zero", "too_large", "bool", "float"])
    def test_invalid_k(self, admissible_field, k):
        """Test that k outside [1, min(cell dims)] is rejected."""
        with pytest.raises(InvalidArgumentError):
            fourier_truncate(admissible_field, k)

    @pytest.mark.unit
    @pytest.mark.validation
    def test_grid_shape_mismatch(self, mesh_17):
        """Test that field_from_grid checks the cell-grid shape."""
        with pytest.raises(InvalidArgumentError):
            field_from_grid(mesh_17, np.zeros((16, 15)))


# ============================================================================
# Tests for QCB1 Serialization
# ============================================================================

class TestQcbFormat:
    """Tests for the QCB1 field format."""

    @pytest.mark.integration
    @pytest.mark.file_operations
    def test_file_round_trip(self, admissible_field, tmp_path):
        """Test that a written field is read back bit for bit."""
        path = tmp_path / "mu.qcb"
        write_field(admissible_field, path)
        loaded = read_field(path)

        assert path.read_bytes()[:4] == b"QCB1"
        np.testing.assert_array_equal(loaded.values, admissible_field.values)

    @pytest.mark.unit
    @pytest.mark.validation
    @pytest.mark.error_handling
    @pytest.mark.parametrize("mutate,message", [
        (lambda p: p[:6], "too short"),
        (lambda p: b"QCM1" + p[4:], "magic"),
        (lambda p: p + b"\x00" * 16, "expected"),
        (lambda p: p[:4] + struct.pack("<II", 0, 3) + p[12:], "dimensions"),
        (lambda p: p[:12] + struct.pack("<d", np.inf) + p[20:], "non-finite"),
    ], ids=["truncated_header", "bad_magic", "trailing_bytes", "dimension_zero", "inf_value"])
    def test_format_errors(self, mesh_3x3, mutate, message):
        """Test that malformed payloads raise FormatError."""
        payload = field_to_bytes(BeltramiField.zeros(mesh_3x3))

        with pytest.raises(FormatError, match=message):
            field_from_bytes(mutate(payload))
