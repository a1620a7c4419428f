"""
Restore module for the quasiconformal imaging toolkit.

This module estimates a bijective deformation map that restores a distorted
image toward a reference image. Each iteration:
1. Takes a per-vertex Gauss-Newton style step reducing the estimation loss
2. Computes the Beltrami coefficient of the candidate map
3. Smooths, squashes (and optionally Fourier-truncates) the coefficient
4. Rebuilds the map with the linear Beltrami solver under identity boundary

Steps are accepted only if no face flips and the full-resolution loss does
not increase; otherwise the step is halved. The whole procedure runs
coarse-to-fine over an image pyramid, and coarse maps are scored after
upsampling, so the recorded loss never rises from one level to the next.

Two estimation losses are available: the intensity MSE between the warped
distorted image and the reference ("image"), and the RMS inverse-consistency
error against a known distortion map ("map").
"""

import json
from dataclasses import asdict, dataclass, field as dataclass_field, fields, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from scipy import ndimage

from src.beltrami import (
    BeltramiField,
    clamp_magnitude,
    compute_beltrami,
    field_correlation,
    fourier_truncate,
    smooth_field,
    squash_activation,
    sup_norm,
)
from src.config import RESTORE_DEFAULTS
from src.distort import invert_map
from src.exceptions import (
    DegenerateMapError,
    FormatError,
    InvalidArgumentError,
    NumericalFailureError,
)
from src.lbs import LbsSystem, assemble, identity_boundary, residual_loss, solve
from src.logger import setup_logger
from src.mesh import (
    DeformationMap,
    boundary_mask,
    build_grid_mesh,
    evaluate_map,
    face_orientation_count,
    identity_map,
)
from src.warp import RasterImage, sample_array, warp_image

# Set up logger for this module
logger = setup_logger(__name__)

TRACE_COLUMNS = ["iteration", "level", "l_est", "residual", "fold_count", "sup_norm", "composite"]

_TINY = 1e-12


# ============================================================================
# Domain Types
# ============================================================================

@dataclass(frozen=True)
class RestoreConfig:
    """
    Parameters of a restoration run.

    Attributes:
        weight_est: Weight alpha of the estimation loss
        weight_bsnet: Weight beta of the solver residual (diagnostic only)
        levels: Pyramid levels L (>= 1)
        iterations: Iterations per level T (>= 1)
        step_size: Maximum vertex move per step eta (pixels, > 0)
        mu_sigma: Smoothing of mu in cells (>= 0)
        epsilon: Admissibility margin in (0, 1)
        truncate_k: Optional Fourier truncation block size
        max_halvings: Step halvings tried before a level stops
        update_sigma: Gaussian smoothing of each vertex step (pixels, >= 0)
        loss_mode: "image" or "map"
        solver: "direct" or "cg"
    """
    weight_est: float = RESTORE_DEFAULTS["weight_est"]
    weight_bsnet: float = RESTORE_DEFAULTS["weight_bsnet"]
    levels: int = RESTORE_DEFAULTS["levels"]
    iterations: int = RESTORE_DEFAULTS["iterations"]
    step_size: float = RESTORE_DEFAULTS["step_size"]
    mu_sigma: float = RESTORE_DEFAULTS["mu_sigma"]
    epsilon: float = RESTORE_DEFAULTS["epsilon"]
    truncate_k: Optional[int] = RESTORE_DEFAULTS["truncate_k"]
    max_halvings: int = RESTORE_DEFAULTS["max_halvings"]
    update_sigma: float = RESTORE_DEFAULTS["update_sigma"]
    loss_mode: str = RESTORE_DEFAULTS["loss_mode"]
    solver: str = RESTORE_DEFAULTS["solver"]

    def validate(self) -> None:
        """
        Check every constraint on the parameters.

        Raises:
            InvalidArgumentError: Listing all violated constraints
        """
        problems = []

        def is_int(value):
            return isinstance(value, (int, np.integer)) and not isinstance(value, bool)

        def is_real(value):
            return isinstance(value, (int, float, np.floating)) and not isinstance(value, bool) and np.isfinite(value)

        for name in ("weight_est", "weight_bsnet", "step_size", "mu_sigma", "epsilon", "update_sigma"):
            if not is_real(getattr(self, name)):
                problems.append(f"{name} must be a finite number")
        for name in ("levels", "iterations", "max_halvings"):
            if not is_int(getattr(self, name)):
                problems.append(f"{name} must be an integer")
        if self.truncate_k is not None and not is_int(self.truncate_k):
            problems.append("truncate_k must be an integer or null")

        if not problems:
            if self.weight_est < 0 or self.weight_bsnet < 0:
                problems.append("weights must be >= 0")
            if self.levels < 1:
                problems.append("levels must be >= 1")
            if self.iterations < 1:
                problems.append("iterations must be >= 1")
            if self.step_size <= 0:
                problems.append("step_size must be > 0")
            if self.mu_sigma < 0 or self.update_sigma < 0:
                problems.append("smoothing sigmas must be >= 0")
            if not 0 < self.epsilon < 1:
                problems.append("epsilon must lie in (0, 1)")
            if self.truncate_k is not None and self.truncate_k < 1:
                problems.append("truncate_k must be >= 1")
            if self.max_halvings < 0:
                problems.append("max_halvings must be >= 0")
        if self.loss_mode not in ("image", "map"):
            problems.append(f"loss_mode must be 'image' or 'map', got {self.loss_mode!r}")
        if self.solver not in ("direct", "cg"):
            problems.append(f"solver must be 'direct' or 'cg', got {self.solver!r}")

        if problems:
            error_msg = "Invalid restore config: " + "; ".join(problems)
            logger.error(error_msg)
            raise InvalidArgumentError(error_msg)

    @classmethod
    def from_dict(cls, document: dict) -> "RestoreConfig":
        """Build a validated config; unknown keys are rejected."""
        if not isinstance(document, dict):
            error_msg = "Restore config must be a JSON object"
            logger.error(error_msg)
            raise InvalidArgumentError(error_msg)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(document) - known)
        if unknown:
            error_msg = f"Unknown restore config fields: {', '.join(unknown)}"
            logger.error(error_msg)
            raise InvalidArgumentError(error_msg)
        config = cls(**document)
        config.validate()
        return config

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TraceEntry:
    """One accepted iterate."""
    iteration: int
    level: int
    l_est: float
    residual: float
    fold_count: int
    sup_norm: float
    composite: float


@dataclass(frozen=True, eq=False)
class RestoreResult:
    """
    Outcome of a restoration run.

    Attributes:
        map: Recovered restoring map on the full-resolution grid
        field: Admissible Beltrami field of the recovered map
        restored: distorted image warped by map
        trace: Accepted iterates in order
        fold_history: Flipped-face count of each accepted iterate
        level_start_losses: (level, full-resolution loss) at the start of each pyramid level
    """
    map: DeformationMap
    field: BeltramiField
    restored: RasterImage
    trace: list[TraceEntry] = dataclass_field(default_factory=list)
    fold_history: list[int] = dataclass_field(default_factory=list)
    level_start_losses: list[tuple[int, float]] = dataclass_field(default_factory=list)

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(entry) for entry in self.trace], columns=TRACE_COLUMNS)

    def write_trace(self, path: Union[str, Path]) -> None:
        """Write the loss trace as CSV."""
        self.trace_frame().to_csv(path, index=False)
        logger.info(f"Wrote loss trace ({len(self.trace)} rows) to {path}")


# ============================================================================
# Losses
# ============================================================================

def _check_same_shape(distorted: RasterImage, reference: RasterImage) -> None:
    if distorted.shape != reference.shape:
        error_msg = f"Distorted image {distorted.shape} and reference {reference.shape} differ in shape"
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)


def estimation_loss(distorted: RasterImage, reference: RasterImage, deformation: DeformationMap) -> float:
    """Mean squared difference between distorted warped by the map and the reference."""
    _check_same_shape(distorted, reference)
    warped = warp_image(distorted, deformation)
    return float(np.mean((warped.data - reference.data) ** 2))


def composite_loss(
    distorted: RasterImage,
    reference: RasterImage,
    deformation: DeformationMap,
    field: BeltramiField,
    system: Optional[LbsSystem],
    config: RestoreConfig,
) -> float:
    """
    Weighted objective alpha * L_est + beta * residual.

    The task term of the full objective is not part of this toolkit and is
    taken as zero.

    Args:
        distorted: Distorted image
        reference: Reference image
        deformation: Candidate restoring map
        field: Beltrami field the map was built from
        system: Assembled system of field; assembled with identity boundary
            when None
        config: Supplies the weights

    Returns:
        Composite loss value
    """
    if system is None:
        system = assemble(field.mesh, field, identity_boundary(field.mesh))
    l_est = estimation_loss(distorted, reference, deformation)
    return config.weight_est * l_est + config.weight_bsnet * residual_loss(system, deformation)


def map_error(result: Union[RestoreResult, DeformationMap], truth: DeformationMap) -> float:
    """
    RMS inverse-consistency error in pixels: sqrt(mean |truth(f(p)) - p|^2).

    Args:
        result: Restoration result or recovered map f
        truth: Ground-truth distortion map

    Raises:
        InvalidArgumentError: If the maps live on different grids

    Example:
        >>> map_error(identity_map(mesh), identity_map(mesh))
        0.0
    """
    recovered = result.map if isinstance(result, RestoreResult) else result
    a, b = recovered.mesh, truth.mesh
    if (a.width_v, a.height_v) != (b.width_v, b.height_v):
        error_msg = f"Map grids differ: {a.width_v}x{a.height_v} vs {b.width_v}x{b.height_v}"
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)
    composed = evaluate_map(truth, recovered.positions)
    offsets = composed - a.vertices
    return float(np.sqrt(np.mean(np.sum(offsets ** 2, axis=1))))


def compare_to_truth(result: RestoreResult, truth: DeformationMap) -> dict:
    """
    Score a recovered map against the known distortion.

    Returns:
        Dict with map_error, identity_map_error (the do-nothing baseline),
        truth_inverse_rms (RMS pixel distance to the numerical inverse of
        truth) and field_correlation (Pearson r of rho and tau against the
        coefficient of that inverse)

    Raises:
        InvalidArgumentError: If the maps live on different grids
        DegenerateMapError: If truth cannot be inverted
    """
    error = map_error(result, truth)
    inverse = invert_map(truth)
    offsets = result.map.positions - inverse.positions
    r_rho, r_tau = field_correlation(result.field, compute_beltrami(inverse))
    return {
        "map_error": error,
        "identity_map_error": map_error(identity_map(truth.mesh), truth),
        "truth_inverse_rms": float(np.sqrt(np.mean(np.sum(offsets ** 2, axis=1)))),
        "field_correlation": {"rho": r_rho, "tau": r_tau},
    }


# ============================================================================
# Pyramid Levels
# ============================================================================

def _pyramid_factors(height: int, width: int, levels: int) -> list[int]:
    """Subsampling factors coarse to fine; levels leaving fewer than 3x3 vertices are dropped."""
    factors = []
    for level in range(levels - 1, -1, -1):
        factor = 2 ** level
        if level == 0 or min((height - 1) // factor, (width - 1) // factor) >= 2:
            factors.append(factor)
    return factors


def _level_array(data: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return data
    blurred = ndimage.gaussian_filter(data, sigma=(factor / 2.0, factor / 2.0, 0), mode="nearest")
    return blurred[::factor, ::factor]


def _upsample_displacement(displacement: np.ndarray, shape: tuple[int, int], ratio: int) -> np.ndarray:
    """Bilinearly upsample a (h, w, 2) displacement grid to shape, scaling vectors by ratio."""
    rows, cols = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64) / ratio
    components = [
        ratio * ndimage.map_coordinates(displacement[..., c], [rows, cols], order=1, mode="nearest")
        for c in range(2)
    ]
    return np.stack(components, axis=-1)


class _LevelProblem:
    """Loss and descent direction on one pyramid level."""

    def __init__(self, distorted, reference, truth_map, factor, config):
        self.factor = factor
        self.config = config
        self.moving = _level_array(distorted.data, factor)
        self.fixed = _level_array(reference.data, factor)
        self.truth_map = truth_map
        height, width = self.fixed.shape[:2]
        self.mesh = build_grid_mesh(width, height)
        self.boundary = identity_boundary(self.mesh)
        self.edge = boundary_mask(self.mesh).reshape(height, width)
        self.grad_y, self.grad_x = np.gradient(self.moving, axis=(0, 1))

    def _inverse_consistency(self, deformation: DeformationMap):
        points = self.factor * deformation.positions
        mapped, jacobian = evaluate_map(self.truth_map, points, with_jacobian=True)
        return mapped / self.factor - self.mesh.vertices, jacobian

    def direction(self, deformation: DeformationMap) -> np.ndarray:
        """Per-vertex step of magnitude <= 1, smoothed, zero on the boundary; shape (H, W, 2)."""
        height, width = self.fixed.shape[:2]
        if self.config.loss_mode == "map":
            offsets, jacobian = self._inverse_consistency(deformation)
            step = -np.linalg.solve(jacobian, offsets[:, :, None])[:, :, 0]
            length = np.linalg.norm(step, axis=1, keepdims=True)
            step = (step / np.maximum(length, 1.0)).reshape(height, width, 2)
        else:
            grid = deformation.positions_grid()
            x, y = grid[..., 0], grid[..., 1]
            residual = sample_array(self.moving, x, y) - self.fixed
            gx = sample_array(self.grad_x, x, y)
            gy = sample_array(self.grad_y, x, y)
            denominator = np.sum(gx ** 2 + gy ** 2 + residual ** 2, axis=2) + _TINY
            step = np.stack([
                -2.0 * np.sum(residual * gx, axis=2) / denominator,
                -2.0 * np.sum(residual * gy, axis=2) / denominator,
            ], axis=-1)

        if self.config.update_sigma > 0:
            step = np.stack([
                ndimage.gaussian_filter(step[..., c], sigma=self.config.update_sigma, mode="nearest")
                for c in range(2)
            ], axis=-1)
        step[self.edge] = 0.0
        return step


def _full_resolution_map(deformation: DeformationMap, factor: int, height: int, width: int) -> DeformationMap:
    """Upsample a level map to the full grid, keeping the boundary pinned."""
    if factor == 1:
        return deformation
    mesh = deformation.mesh
    full_mesh = build_grid_mesh(width, height)
    displacement = deformation.displacement.reshape(mesh.height_v, mesh.width_v, 2)
    upsampled = _upsample_displacement(displacement, (height, width), factor)
    upsampled[boundary_mask(full_mesh).reshape(height, width)] = 0.0
    return DeformationMap.from_displacement(full_mesh, upsampled)


def _full_resolution_loss(
    deformation: DeformationMap,
    factor: int,
    distorted: RasterImage,
    reference: RasterImage,
    truth_map: Optional[DeformationMap],
    loss_mode: str,
) -> float:
    """L_est of a level map measured on the full-resolution images (or truth map)."""
    full = _full_resolution_map(deformation, factor, reference.height, reference.width)
    if loss_mode == "map":
        return map_error(full, truth_map)
    return estimation_loss(distorted, reference, full)


# ============================================================================
# Projection
# ============================================================================

def project_map(
    candidate: DeformationMap,
    config: RestoreConfig,
) -> tuple[DeformationMap, BeltramiField, LbsSystem]:
    """
    Project a map onto the admissible set: smooth, squash, truncate, re-solve.

    Args:
        candidate: Map to project
        config: Supplies mu_sigma, epsilon, truncate_k and solver

    Returns:
        (projected map, admissible field, assembled system)

    Raises:
        DegenerateMapError: If the candidate has a face with vanishing f_z
        NumericalFailureError: If the linear solve fails
    """
    mesh = candidate.mesh
    field = compute_beltrami(candidate)
    field = smooth_field(field, config.mu_sigma)
    field = squash_activation(field, config.epsilon)
    if config.truncate_k is not None:
        k = min(config.truncate_k, *mesh.cell_shape)
        field = clamp_magnitude(fourier_truncate(field, k), config.epsilon)
    system = assemble(mesh, field, identity_boundary(mesh))
    return solve(system, method=config.solver), field, system


# ============================================================================
# Restoration
# ============================================================================

def restore_pair(
    distorted: RasterImage,
    reference: RasterImage,
    config: Optional[RestoreConfig] = None,
    truth_map: Optional[DeformationMap] = None,
) -> RestoreResult:
    """
    Estimate a fold-free map f such that distorted o f approximates reference.

    Args:
        distorted: Distorted input image
        reference: Target image of the same shape
        config: Restoration parameters (defaults when None)
        truth_map: Known distortion map; required when config.loss_mode is "map"

    Returns:
        RestoreResult with the map, its field, the restored image and the trace

    Raises:
        InvalidArgumentError: On shape mismatch, invalid config or missing truth map
        NumericalFailureError: If a linear solve fails, with level/iteration context

    Example:
        >>> result = restore_pair(distorted, reference, RestoreConfig(levels=3))
        >>> print(result.trace[-1].l_est)
    """
    config = config or RestoreConfig()
    config.validate()
    _check_same_shape(distorted, reference)
    height, width = reference.height, reference.width

    if config.loss_mode == "map":
        if truth_map is None:
            error_msg = "loss_mode 'map' needs a ground-truth distortion map"
            logger.error(error_msg)
            raise InvalidArgumentError(error_msg)
        if (truth_map.mesh.width_v, truth_map.mesh.height_v) != (width, height):
            error_msg = "Ground-truth map grid does not match the images"
            logger.error(error_msg)
            raise InvalidArgumentError(error_msg)

    logger.info("=" * 80)
    logger.info(f"Starting restoration of {width}x{height} image ({config.loss_mode} loss)")
    logger.info("=" * 80)

    factors = _pyramid_factors(height, width, config.levels)
    trace: list[TraceEntry] = []
    fold_history: list[int] = []
    level_start_losses: list[tuple[int, float]] = []
    iteration = 0
    displacement = None
    previous_factor = None
    current_field: Optional[BeltramiField] = None

    for factor in factors:
        level = int(np.log2(factor))
        problem = _LevelProblem(distorted, reference, truth_map, factor, config)
        mesh = problem.mesh

        if displacement is None:
            current = identity_map(mesh)
            current_field = BeltramiField.zeros(mesh)
        else:
            upsampled = _upsample_displacement(displacement, (mesh.height_v, mesh.width_v), previous_factor // factor)
            upsampled[problem.edge] = 0.0
            current = DeformationMap.from_displacement(mesh, upsampled)
            current_field = None
            if face_orientation_count(current).flipped:
                logger.warning(f"Upsampled map folds at level {level}; projecting")
                try:
                    current, current_field, _ = project_map(current, config)
                except DegenerateMapError:
                    current = identity_map(mesh)
                    current_field = BeltramiField.zeros(mesh)
                if face_orientation_count(current).flipped:
                    current = identity_map(mesh)
                    current_field = BeltramiField.zeros(mesh)

        loss = _full_resolution_loss(current, factor, distorted, reference, truth_map, config.loss_mode)
        level_start_losses.append((level, loss))
        logger.info(f"Level {level} ({mesh.width_v}x{mesh.height_v}): starting loss {loss:.6g}")
        if trace:
            # Upsampling can add rounding noise; the bar stays at the last accepted value
            loss = min(loss, trace[-1].l_est)

        for t in range(config.iterations):
            if loss == 0.0:
                break
            direction = problem.direction(current)
            if np.max(np.abs(direction)) < _TINY:
                break

            step = config.step_size
            accepted = False
            for _ in range(config.max_halvings + 1):
                candidate = DeformationMap(mesh, current.positions + step * direction.reshape(-1, 2))
                try:
                    projected, field, system = project_map(candidate, config)
                except DegenerateMapError:
                    logger.debug(f"Degenerate candidate at level {level}, iteration {t}; halving step")
                    step /= 2.0
                    continue
                except NumericalFailureError as e:
                    error_msg = f"Linear Beltrami solve failed at level {level}, iteration {t}: {e}"
                    logger.error(error_msg)
                    raise NumericalFailureError(error_msg, residual=e.residual, context=f"level={level} iteration={t}") from e

                folds = face_orientation_count(projected).flipped
                new_loss = _full_resolution_loss(projected, factor, distorted, reference, truth_map, config.loss_mode)
                if folds == 0 and new_loss <= loss:
                    iteration += 1
                    residual = residual_loss(system, projected)
                    trace.append(TraceEntry(
                        iteration=iteration,
                        level=level,
                        l_est=new_loss,
                        residual=residual,
                        fold_count=folds,
                        sup_norm=sup_norm(field),
                        composite=config.weight_est * new_loss + config.weight_bsnet * residual,
                    ))
                    fold_history.append(folds)
                    logger.debug(f"Level {level} iteration {t}: loss {loss:.6g} -> {new_loss:.6g} (step {step:.4g})")
                    current, current_field, loss = projected, field, new_loss
                    accepted = True
                    break
                step /= 2.0

            if not accepted:
                logger.debug(f"Level {level}: no descent after {config.max_halvings} halvings; stopping level")
                break

        logger.info(f"Level {level} finished with loss {loss:.6g}")
        displacement = current.displacement.reshape(mesh.height_v, mesh.width_v, 2)
        previous_factor = factor

    final_map = current
    final_field = current_field if current_field is not None else compute_beltrami(final_map)
    if sup_norm(final_field) > 1.0 - config.epsilon:
        logger.warning("Final map field exceeds the admissible bound; clamping the reported field")
        final_field = clamp_magnitude(final_field, config.epsilon)

    restored = warp_image(distorted, final_map)
    logger.info(f"Restoration finished: {len(trace)} accepted steps, final loss {loss:.6g}")
    return RestoreResult(
        map=final_map,
        field=final_field,
        restored=restored,
        trace=trace,
        fold_history=fold_history,
        level_start_losses=level_start_losses,
    )


# ============================================================================
# Config I/O
# ============================================================================

def load_restore_config(path: Union[str, Path], **overrides) -> RestoreConfig:
    """
    Read a RestoreConfig from a JSON file; keyword overrides win.

    Raises:
        FormatError: If the file is not valid JSON
        InvalidArgumentError: On unknown keys or invalid values
    """
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        error_msg = f"Config file {path} is not valid JSON: {e}"
        logger.error(error_msg)
        raise FormatError(error_msg) from e
    config = RestoreConfig.from_dict(document)
    if overrides:
        config = replace(config, **overrides)
        config.validate()
    return config
