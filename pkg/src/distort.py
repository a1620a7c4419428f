"""
Distortion module for the quasiconformal imaging toolkit.

This module generates parametric synthetic distortions and paired data:
- Affine maps about the image center (rotation, scale, translation)
- Elastic fields: seeded white noise, Gaussian blur, border envelope, rescale to amplitude a
- Ripple and ocean-like wave fields
- Air-like multi-scale turbulence with weak/strong presets
- Combined distortions (affine applied after elastic)
- (clean, distorted, ground-truth map) pairs and threaded batch generation
- JSON serialization of specs and batch manifests
- Numerical inversion of a distortion map

All randomness comes from the Philox counter-based generator, seeded per
spec, so generated fields are reproducible across platforms.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import NamedTuple, Optional, Union

import numpy as np
from scipy import ndimage

from src.config import (
    AFFINE_ROTATION_RANGE,
    AFFINE_SCALE_RANGE,
    AFFINE_TRANSLATION_FRACTION,
    AIR_PRESETS,
    AIR_SCALES,
    DEFAULT_ELASTIC_AMPLITUDE,
    DEFAULT_ELASTIC_SIGMA,
    OCEAN_WAVE_COUNT,
    THREADS,
)
from src.exceptions import DegenerateMapError, FormatError, InvalidArgumentError
from src.logger import setup_logger
from src.mesh import DeformationMap, TriMesh, build_grid_mesh, evaluate_map
from src.warp import FIELD_STREAM, RasterImage, compose_displacement, seeded_generator

# Set up logger for this module
logger = setup_logger(__name__)

DISTORTION_KINDS = ("affine", "elastic", "combined", "ripple", "ocean-like", "air-like")


# ============================================================================
# Domain Types
# ============================================================================

@dataclass(frozen=True)
class DistortionSpec:
    """
    Parametric description of a synthetic distortion plus noise level.

    Attributes:
        kind: One of DISTORTION_KINDS
        rotation: Affine rotation angle (radians)
        scale: Affine scale factor (> 0)
        tx, ty: Affine translation (pixels)
        amplitude: Elastic maximum displacement a (pixels, >= 0)
        sigma: Elastic smoothness sigma_e (pixels, > 0)
        wave_amplitude: Ripple/ocean maximum displacement (pixels, >= 0)
        wave_frequency: Ripple/ocean cycles across the image (>= 0)
        wave_phase: Ripple/ocean phase offset (radians)
        strength: Air-like maximum displacement (pixels, >= 0)
        seed: Seed of the field and noise streams
        noise_sigma: Standard deviation of additive noise (>= 0)
    """
    kind: str = "affine"
    rotation: float = 0.0
    scale: float = 1.0
    tx: float = 0.0
    ty: float = 0.0
    amplitude: float = DEFAULT_ELASTIC_AMPLITUDE
    sigma: float = DEFAULT_ELASTIC_SIGMA
    wave_amplitude: float = 0.0
    wave_frequency: float = 1.0
    wave_phase: float = 0.0
    strength: float = 0.0
    seed: int = 0
    noise_sigma: float = 0.0

    def validate(self) -> None:
        """
        Check the spec invariants.

        Raises:
            InvalidArgumentError: On an unknown kind or out-of-range parameter
        """
        problems = []
        if self.kind not in DISTORTION_KINDS:
            problems.append(f"unknown kind {self.kind!r}")
        for name in ("rotation", "scale", "tx", "ty", "amplitude", "sigma", "wave_amplitude",
                     "wave_frequency", "wave_phase", "strength", "noise_sigma"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                problems.append(f"{name} must be a finite number, got {value!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            problems.append(f"seed must be a non-negative integer, got {self.seed!r}")
        if problems:
            error_msg = "Invalid distortion spec: " + "; ".join(problems)
            logger.error(error_msg)
            raise InvalidArgumentError(error_msg)

        if self.scale <= 0:
            problems.append(f"scale must be > 0, got {self.scale}")
        if self.sigma <= 0:
            problems.append(f"sigma must be > 0, got {self.sigma}")
        for name in ("amplitude", "wave_amplitude", "wave_frequency", "strength", "noise_sigma"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0, got {getattr(self, name)}")
        if problems:
            error_msg = "Invalid distortion spec: " + "; ".join(problems)
            logger.error(error_msg)
            raise InvalidArgumentError(error_msg)


class DistortedPair(NamedTuple):
    distorted: RasterImage
    truth_map: DeformationMap


# ============================================================================
# Field Generators
# ============================================================================

def _center(mesh: TriMesh) -> np.ndarray:
    return np.array([(mesh.width_v - 1) / 2.0, (mesh.height_v - 1) / 2.0])


def _apply_affine(spec: DistortionSpec, mesh: TriMesh, points: np.ndarray) -> np.ndarray:
    cos_t, sin_t = math.cos(spec.rotation), math.sin(spec.rotation)
    linear = spec.scale * np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    center = _center(mesh)
    return center + (points - center) @ linear.T + np.array([spec.tx, spec.ty])


def _smoothed_noise(rng: np.random.Generator, shape: tuple[int, int], sigma: float) -> np.ndarray:
    """Two blurred white-noise components, shape (H, W, 2), max magnitude 1 (or all zero)."""
    noise = rng.standard_normal((2,) + shape)
    field = np.stack([ndimage.gaussian_filter(n, sigma=sigma, mode="reflect") for n in noise], axis=-1)
    peak = np.max(np.hypot(field[..., 0], field[..., 1]))
    return field / peak if peak > 0 else field


def _border_envelope(shape: tuple[int, int]) -> np.ndarray:
    """sin(pi y / (H - 1)) * sin(pi x / (W - 1)), exactly zero on the image border."""
    profiles = []
    for size in shape:
        profile = np.sin(np.pi * np.arange(size) / (size - 1))
        profile[[0, -1]] = 0.0
        profiles.append(profile)
    return np.outer(profiles[0], profiles[1])


def _elastic_displacement(spec: DistortionSpec, mesh: TriMesh) -> np.ndarray:
    """Smoothed noise fading to zero at the border (edges stay put), peak magnitude a."""
    shape = (mesh.height_v, mesh.width_v)
    if spec.amplitude == 0:
        return np.zeros(shape + (2,))
    rng = seeded_generator(spec.seed, FIELD_STREAM)
    field = _border_envelope(shape)[..., None] * _smoothed_noise(rng, shape, spec.sigma)
    peak = np.max(np.hypot(field[..., 0], field[..., 1]))
    return spec.amplitude * field / peak if peak > 0 else field


def _ripple_displacement(spec: DistortionSpec, mesh: TriMesh) -> np.ndarray:
    y, x = np.mgrid[0:mesh.height_v, 0:mesh.width_v].astype(np.float64)
    dx = spec.wave_amplitude * np.sin(2 * math.pi * spec.wave_frequency * y / mesh.height_v + spec.wave_phase)
    dy = spec.wave_amplitude * np.sin(2 * math.pi * spec.wave_frequency * x / mesh.width_v + spec.wave_phase)
    return np.stack([dx, dy], axis=-1)


def _ocean_displacement(spec: DistortionSpec, mesh: TriMesh) -> np.ndarray:
    y, x = np.mgrid[0:mesh.height_v, 0:mesh.width_v].astype(np.float64)
    rng = seeded_generator(spec.seed, FIELD_STREAM)
    extent = float(max(mesh.width_v, mesh.height_v))
    displacement = np.zeros((mesh.height_v, mesh.width_v, 2))
    weight = spec.wave_amplitude / OCEAN_WAVE_COUNT

    for _ in range(OCEAN_WAVE_COUNT):
        heading = rng.uniform(0.0, 2 * math.pi)
        swing = rng.uniform(0.0, 2 * math.pi)
        cycles = spec.wave_frequency * rng.uniform(0.5, 1.5)
        phase = rng.uniform(0.0, 2 * math.pi) + spec.wave_phase
        k = 2 * math.pi * cycles / extent
        wave = np.sin(k * (math.cos(heading) * x + math.sin(heading) * y) + phase)
        displacement[..., 0] += weight * math.cos(swing) * wave
        displacement[..., 1] += weight * math.sin(swing) * wave
    return displacement


def _air_displacement(spec: DistortionSpec, mesh: TriMesh) -> np.ndarray:
    shape = (mesh.height_v, mesh.width_v)
    if spec.strength == 0:
        return np.zeros(shape + (2,))
    rng = seeded_generator(spec.seed, FIELD_STREAM)
    total = sum(AIR_SCALES)
    field = sum((scale / total) * _smoothed_noise(rng, shape, scale) for scale in AIR_SCALES)
    peak = np.max(np.hypot(field[..., 0], field[..., 1]))
    return spec.strength * field / peak if peak > 0 else field


def generate_field(spec: DistortionSpec, mesh: TriMesh) -> DeformationMap:
    """
    Generate the deformation map described by a spec.

    Args:
        spec: Distortion description
        mesh: Grid mesh of the target image

    Returns:
        DeformationMap; deterministic in (spec, mesh)

    Raises:
        InvalidArgumentError: If the spec is invalid

    Example:
        >>> mesh = build_grid_mesh(128, 128)
        >>> field = generate_field(DistortionSpec(kind="elastic", amplitude=4, sigma=8, seed=7), mesh)
    """
    spec.validate()
    vertices = mesh.vertices

    if spec.kind == "affine":
        positions = _apply_affine(spec, mesh, vertices)
    elif spec.kind == "elastic":
        positions = vertices + _elastic_displacement(spec, mesh).reshape(-1, 2)
    elif spec.kind == "combined":
        elastic = vertices + _elastic_displacement(spec, mesh).reshape(-1, 2)
        positions = _apply_affine(spec, mesh, elastic)
    elif spec.kind == "ripple":
        positions = vertices + _ripple_displacement(spec, mesh).reshape(-1, 2)
    elif spec.kind == "ocean-like":
        positions = vertices + _ocean_displacement(spec, mesh).reshape(-1, 2)
    else:
        positions = vertices + _air_displacement(spec, mesh).reshape(-1, 2)

    logger.debug(f"Generated {spec.kind} field on {mesh.width_v}x{mesh.height_v} (seed {spec.seed})")
    return DeformationMap(mesh, positions)


def sample_affine_spec(
    seed: int,
    width: int,
    height: int,
    rotation_range: tuple[float, float] = AFFINE_ROTATION_RANGE,
    scale_range: tuple[float, float] = AFFINE_SCALE_RANGE,
    translation_fraction: float = AFFINE_TRANSLATION_FRACTION,
    noise_sigma: float = 0.0,
) -> DistortionSpec:
    """
    Draw a random affine spec from the benchmark parameter ranges.

    Rotation and scale are uniform over their ranges; translations are
    uniform within +/- translation_fraction of the image extent.
    """
    rng = seeded_generator(seed, FIELD_STREAM)
    return DistortionSpec(
        kind="affine",
        rotation=float(rng.uniform(*rotation_range)),
        scale=float(rng.uniform(*scale_range)),
        tx=float(rng.uniform(-1, 1) * translation_fraction * width),
        ty=float(rng.uniform(-1, 1) * translation_fraction * height),
        seed=seed,
        noise_sigma=noise_sigma,
    )


def air_preset(name: str, seed: int = 0, noise_sigma: float = 0.0) -> DistortionSpec:
    """Air-like turbulence spec for the "weak" or "strong" preset."""
    if name not in AIR_PRESETS:
        error_msg = f"Unknown air turbulence preset {name!r} (expected one of {sorted(AIR_PRESETS)})"
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)
    return DistortionSpec(kind="air-like", strength=AIR_PRESETS[name], seed=seed, noise_sigma=noise_sigma)


# ============================================================================
# Pairs and Batches
# ============================================================================

def make_pair(image: RasterImage, spec: DistortionSpec) -> DistortedPair:
    """
    Distort a clean image and return it with the ground-truth map.

    Args:
        image: Clean image
        spec: Distortion description

    Returns:
        DistortedPair(distorted, truth_map)
    """
    mesh = build_grid_mesh(image.width, image.height)
    truth_map = generate_field(spec, mesh)
    distorted = compose_displacement(image, truth_map, spec.noise_sigma, spec.seed)
    return DistortedPair(distorted, truth_map)


def generate_batch(
    image: RasterImage,
    specs: list[DistortionSpec],
    threads: Optional[int] = None,
) -> list[DistortedPair]:
    """
    Build pairs for many specs on a thread pool; results keep spec order.

    Args:
        image: Clean image shared by all pairs
        specs: Distortion descriptions
        threads: Worker count, defaults to QCWARP_THREADS / CPU count
    """
    for spec in specs:
        spec.validate()
    workers = max(1, min(threads or THREADS, len(specs) or 1))
    logger.info(f"Generating {len(specs)} distorted pairs on {workers} threads")
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(lambda spec: make_pair(image, spec), specs))


# ============================================================================
# Inversion
# ============================================================================

def invert_map(deformation: DeformationMap, max_iterations: int = 50, tolerance: float = 1e-10) -> DeformationMap:
    """
    Numerically invert a fold-free map at the mesh vertices.

    For every vertex p, Newton's method on the piecewise-linear map solves
    f(q) = p; the returned map sends p to q.

    Args:
        deformation: Map to invert
        max_iterations: Newton iteration cap
        tolerance: Stop once max |f(q) - p| falls below this (pixels)

    Returns:
        Approximate inverse map on the same mesh

    Raises:
        DegenerateMapError: If Newton lands on a face whose Jacobian is singular
    """
    targets = deformation.mesh.vertices
    guess = 2.0 * targets - deformation.positions
    error = np.inf
    for _ in range(max_iterations):
        mapped, jacobian = evaluate_map(deformation, guess, with_jacobian=True)
        offset = mapped - targets
        error = float(np.max(np.abs(offset)))
        if error < tolerance:
            break
        try:
            guess = guess - np.linalg.solve(jacobian, offset[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError as e:
            error_msg = "Cannot invert map: a face it lands on has a singular Jacobian"
            logger.error(error_msg)
            raise DegenerateMapError(error_msg) from e
    else:
        logger.warning(f"Map inversion stopped after {max_iterations} iterations (max error {error:.3e} px)")
    return DeformationMap(deformation.mesh, guess)


# ============================================================================
# JSON Serialization
# ============================================================================

_SPEC_FIELDS = tuple(f.name for f in fields(DistortionSpec))


def spec_from_dict(document: dict) -> DistortionSpec:
    """
    Build a validated spec from a JSON object.

    Raises:
        InvalidArgumentError: On unknown or missing keys, or invalid values
    """
    if not isinstance(document, dict):
        error_msg = f"Distortion spec must be a JSON object, got {type(document).__name__}"
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)
    unknown = sorted(set(document) - set(_SPEC_FIELDS))
    if unknown:
        error_msg = f"Unknown distortion spec fields: {', '.join(unknown)}"
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)
    if "kind" not in document:
        error_msg = "Distortion spec is missing required field 'kind'"
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)
    spec = DistortionSpec(**document)
    spec.validate()
    return spec


def spec_to_dict(spec: DistortionSpec) -> dict:
    return asdict(spec)


def load_specs(path: Union[str, Path]) -> tuple[list[DistortionSpec], bool]:
    """
    Load a single spec or a batch manifest (JSON array of specs).

    Returns:
        (specs, is_batch)

    Raises:
        FormatError: If the file is not valid JSON
        InvalidArgumentError: If a spec is invalid
    """
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        error_msg = f"Spec file {path} is not valid JSON: {e}"
        logger.error(error_msg)
        raise FormatError(error_msg) from e

    if isinstance(document, list):
        return [spec_from_dict(item) for item in document], True
    return [spec_from_dict(document)], False


def save_specs(specs: list[DistortionSpec], path: Union[str, Path]) -> None:
    """Write specs as a batch manifest."""
    Path(path).write_text(json.dumps([spec_to_dict(s) for s in specs], indent=2), encoding="utf-8")


def with_seed(spec: DistortionSpec, seed: int) -> DistortionSpec:
    return replace(spec, seed=seed)


if __name__ == "__main__":
    from src.mesh import face_orientation_count

    demo_mesh = build_grid_mesh(128, 128)
    demo_field = generate_field(DistortionSpec(kind="elastic", seed=3), demo_mesh)
    print(f"Max displacement: {np.max(np.linalg.norm(demo_field.displacement, axis=1)):.3f} px")
    print(f"Orientation: {face_orientation_count(demo_field)}")
