"""
Shared pytest fixtures and configuration for the quasiconformal imaging toolkit tests.

This module provides reusable fixtures for the mesh, beltrami, lbs, warp,
distort, restore, metrics and cli tests, including small meshes, smooth
fold-free maps, admissible fields, seeded texture images and image files.
"""

import logging

import numpy as np
import pytest
from scipy import ndimage

from src.beltrami import field_from_grid
from src.mesh import DeformationMap, build_grid_mesh
from src.warp import RasterImage, seeded_generator, write_image


# ============================================================================
# Helpers
# ============================================================================

def bump_displacement(mesh, a: float, b: float) -> np.ndarray:
    """
    (a, b) * sin(pi x / (W - 1)) * sin(pi y / (H - 1)) at every vertex.

    Vanishes on the boundary; the map p + displacement is fold-free whenever
    (|a| + |b|) * pi / (min(W, H) - 1) < 1.
    """
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    bump = np.sin(np.pi * x / (mesh.width_v - 1)) * np.sin(np.pi * y / (mesh.height_v - 1))
    return np.column_stack([a * bump, b * bump])


def smooth_random_field(mesh, seed: int, sup: float, sigma: float = 6.0):
    """Blurred complex Philox noise on the cell grid, rescaled to sup_norm == sup."""
    rng = seeded_generator(seed)
    rows, cols = mesh.cell_shape
    noise = rng.standard_normal((2, rows, cols))
    real = ndimage.gaussian_filter(noise[0], sigma=sigma, mode="reflect")
    imag = ndimage.gaussian_filter(noise[1], sigma=sigma, mode="reflect")
    grid = real + 1j * imag
    return field_from_grid(mesh, sup * grid / np.max(np.abs(grid)))


def texture_data(seed: int, height: int, width: int, channels: int = 1, sigma: float = 2.0) -> np.ndarray:
    """Smooth random texture in [0.05, 0.95], shape (H, W, C)."""
    rng = seeded_generator(seed)
    planes = []
    for _ in range(channels):
        plane = ndimage.gaussian_filter(rng.standard_normal((height, width)), sigma=sigma, mode="reflect")
        plane = (plane - plane.min()) / (plane.max() - plane.min())
        planes.append(0.05 + 0.9 * plane)
    return np.stack(planes, axis=-1)


# ============================================================================
# Mesh Fixtures
# ============================================================================

@pytest.fixture
def mesh_3x3():
    """
    Provides the smallest mesh with an interior vertex.

    Returns:
        TriMesh: 3x3 vertices, 8 faces, vertex 4 interior
    """
    return build_grid_mesh(3, 3)


@pytest.fixture
def mesh_17():
    """
    Provides a 17x17 vertex mesh (16x16 cells).

    Returns:
        TriMesh: Mesh for fast numerical tests
    """
    return build_grid_mesh(17, 17)


@pytest.fixture
def mesh_33():
    """
    Provides a 33x33 vertex mesh (32x32 cells).

    Returns:
        TriMesh: Mesh for round-trip and solver tests
    """
    return build_grid_mesh(33, 33)


# ============================================================================
# Map and Field Fixtures
# ============================================================================

@pytest.fixture
def bump_map(mesh_33):
    """
    Provides a smooth fold-free map with identity boundary on the 33x33 mesh.

    Returns:
        DeformationMap: Vertices pushed by a sine bump of peak (2.0, -1.5) pixels
    """
    return DeformationMap.from_displacement(mesh_33, bump_displacement(mesh_33, 2.0, -1.5))


@pytest.fixture
def stretch_map(mesh_17):
    """
    Provides the affine map (x, y) -> (2x, y), whose Beltrami coefficient is 1/3.

    Returns:
        DeformationMap: Horizontal stretch by two
    """
    return DeformationMap(mesh_17, mesh_17.vertices * [2.0, 1.0])


@pytest.fixture
def mirrored_map(mesh_17):
    """
    Provides the orientation-reversing map (x, y) -> (W - 1 - x, y).

    Returns:
        DeformationMap: Every face flipped
    """
    positions = mesh_17.vertices.copy()
    positions[:, 0] = (mesh_17.width_v - 1) - positions[:, 0]
    return DeformationMap(mesh_17, positions)


@pytest.fixture
def admissible_field(mesh_33):
    """
    Provides a smooth admissible field with sup_norm 0.5.

    Returns:
        BeltramiField: Seeded smooth field on the 33x33 mesh
    """
    return smooth_random_field(mesh_33, seed=11, sup=0.5)


# ============================================================================
# Image Fixtures
# ============================================================================

@pytest.fixture
def texture_image():
    """
    Provides a 33x33 grayscale texture matching the 33x33 mesh.

    Returns:
        RasterImage: Smooth random texture in [0.05, 0.95]
    """
    return RasterImage(texture_data(seed=5, height=33, width=33))


@pytest.fixture
def rgb_image():
    """
    Provides a 24x20 three-channel texture.

    Returns:
        RasterImage: Smooth random RGB texture
    """
    return RasterImage(texture_data(seed=6, height=24, width=20, channels=3))


@pytest.fixture
def ramp_image():
    """
    Provides a 16x16 horizontal ramp with distinct column values.

    Returns:
        RasterImage: Column j has value j / 15
    """
    return RasterImage(np.tile(np.linspace(0.0, 1.0, 16), (16, 1)))


# ============================================================================
# File Fixtures
# ============================================================================

@pytest.fixture
def texture_png(tmp_path):
    """
    Creates a 16x16 grayscale PNG texture.

    Args:
        tmp_path: pytest's temporary path fixture

    Returns:
        Path: Path to the written PNG
    """
    path = tmp_path / "texture.png"
    write_image(RasterImage(texture_data(seed=9, height=16, width=16)), path)
    return path


@pytest.fixture
def garbage_png(tmp_path):
    """
    Creates a file with a .png suffix that is not an image.

    Args:
        tmp_path: pytest's temporary path fixture

    Returns:
        Path: Path to the bogus file
    """
    path = tmp_path / "garbage.png"
    path.write_bytes(b"definitely not a png")
    return path


# ============================================================================
# Logging Fixtures
# ============================================================================

@pytest.fixture
def disable_logging():
    """
    Temporarily disables logging for cleaner test output.

    Yields:
        None

    Note:
        Automatically re-enables logging after test completes
    """
    logging.disable(logging.CRITICAL)
    yield
    logging.disable(logging.NOTSET)


# ============================================================================
# Factory Fixtures
# ============================================================================

@pytest.fixture
def bump_factory():
    """
    Provides the bump displacement helper for custom amplitudes.

    Returns:
        Callable: bump_displacement(mesh, a, b) -> (N, 2) array
    """
    return bump_displacement


@pytest.fixture
def field_factory():
    """
    Provides the seeded smooth-field helper.

    Returns:
        Callable: smooth_random_field(mesh, seed, sup, sigma=6.0) -> BeltramiField
    """
    return smooth_random_field


@pytest.fixture
def texture_factory():
    """
    Provides the seeded texture helper.

    Returns:
        Callable: texture_data(seed, height, width, channels=1, sigma=2.0) -> ndarray
    """
    return texture_data
