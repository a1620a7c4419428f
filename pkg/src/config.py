"""
Configuration module for the quasiconformal imaging toolkit.

This module centralizes all configuration settings including:
- Project paths
- Logging settings
- Parallelism
- Numerical thresholds for meshes, Beltrami fields and the linear solver
- Default parameters for distortion generation, restoration and metrics
"""

import os
import math
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _env_flag(name: str, default: bool) -> bool:
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() not in ("0", "false", "no", "off", "")


# ============================================================================
# Project Paths
# ============================================================================

# Base directory (project root)
BASE_DIR = Path(__file__).resolve().parent.parent

# Data directory (test patterns, manifests)
DATA_DIR = BASE_DIR / "data"

# Logs directory
LOG_DIR = BASE_DIR / "logs"

# ============================================================================
# Logging Configuration
# ============================================================================

# Log file path
LOG_FILE = LOG_DIR / "qcwarp.log"

# Log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")

# Log format
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Date format for logs
LOG_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

# Set QCWARP_LOG_TO_FILE=0 to keep logs on the console only
LOG_TO_FILE = _env_flag("QCWARP_LOG_TO_FILE", True)

# ============================================================================
# Parallelism
# ============================================================================

# Worker threads for batch generation; 0 or unset means one per CPU
THREADS = int(os.getenv("QCWARP_THREADS", "0")) or (os.cpu_count() or 1)

# ============================================================================
# Mesh
# ============================================================================

# Faces with |signed area| at or below this (pixel^2) count as degenerate
DEGENERATE_AREA_EPS = 1e-12

# Map file magic
QCM_MAGIC = b"QCM1"

# ============================================================================
# Beltrami Fields
# ============================================================================

# |f_z| below this is a degenerate face of the mapped mesh
FZ_EPS = 1e-14

# Default admissibility margin used by the squashing activation
DEFAULT_EPSILON = 1e-3

# Beltrami field file magic
QCB_MAGIC = b"QCB1"

# ============================================================================
# Linear Beltrami Solver
# ============================================================================

# Fields with |mu| > 1 - ASSEMBLY_MARGIN are rejected at assembly
ASSEMBLY_MARGIN = 1e-6

# Relative residual target of the reduced systems
CG_RTOL = 1e-10

# Conjugate gradient iteration cap = factor * vertex count
CG_MAX_ITER_FACTOR = 20

# "cg" (diagonal-preconditioned conjugate gradient) or "direct" (sparse LU)
LBS_SOLVER = os.getenv("QCWARP_LBS_SOLVER", "cg")

# ============================================================================
# Warping and Image I/O
# ============================================================================

# Maximum number of folded faces listed in a fold error
FOLD_REPORT_LIMIT = 10

# Image suffixes understood by the image reader/writer
IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm")

# ============================================================================
# Distortion Generation
# ============================================================================

DEFAULT_ELASTIC_AMPLITUDE = 4.0
DEFAULT_ELASTIC_SIGMA = 8.0

# Affine sampling ranges used for the benchmark distortions
AFFINE_ROTATION_RANGE = (-math.pi / 3, math.pi / 3)
AFFINE_SCALE_RANGE = (0.2, 0.6)
# Maximum translation as a fraction of image width/height
AFFINE_TRANSLATION_FRACTION = 0.25

# Air-like turbulence presets (maximum displacement in pixels)
AIR_PRESETS = {
    "weak": 1.0,
    "strong": 2.5,
}

# Scales (pixels) blended by the air-like generator, coarse to fine
AIR_SCALES = (16.0, 8.0, 4.0)

# Number of superposed waves in an ocean-like field
OCEAN_WAVE_COUNT = 6

# ============================================================================
# Restoration
# ============================================================================

RESTORE_DEFAULTS = {
    "weight_est": 1.0,
    "weight_bsnet": 0.0,
    "levels": 3,
    "iterations": 50,
    "step_size": 0.5,
    "mu_sigma": 2.0,
    "epsilon": DEFAULT_EPSILON,
    "truncate_k": None,
    "max_halvings": 8,
    "update_sigma": 3.0,
    "loss_mode": "image",
    "solver": "direct",
}

# ============================================================================
# Metrics
# ============================================================================

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# PSNR reported for identical images (dB)
PSNR_CAP = 99.0

# ============================================================================
# Visualization
# ============================================================================

# Draw every n-th grid line of the deformed mesh
VIZ_GRID_STEP = 4

# Output pixels per input pixel
VIZ_SCALE = 4
