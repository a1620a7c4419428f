"""
Metrics module for the quasiconformal imaging toolkit.

This module computes the image-quality figures used to judge restorations:
- Mean squared error over all samples
- PSNR for peak value 1, capped for identical images
- SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels
- Per-pixel squared-error maps
- Report export as JSON or as a CSV row
"""

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd
from skimage.metrics import structural_similarity

from src.config import PSNR_CAP, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW
from src.exceptions import InvalidArgumentError
from src.logger import setup_logger
from src.warp import RasterImage

# Set up logger for this module
logger = setup_logger(__name__)


# ============================================================================
# Domain Types
# ============================================================================

@dataclass(frozen=True)
class MetricReport:
    """MSE, PSNR (dB) and SSIM between two images."""
    mse: float
    psnr: float
    ssim: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([self.to_dict()], columns=["mse", "psnr", "ssim"])

    def to_csv_row(self) -> str:
        """Header line plus one data row."""
        return self.to_frame().to_csv(index=False)


# ============================================================================
# Metric Functions
# ============================================================================

def _check_same_shape(a: RasterImage, b: RasterImage) -> None:
    if a.shape != b.shape:
        error_msg = f"Image shapes differ: {a.shape} vs {b.shape}"
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)


def mse(a: RasterImage, b: RasterImage) -> float:
    """Mean squared difference over all samples."""
    _check_same_shape(a, b)
    return float(np.mean((a.data - b.data) ** 2))


def psnr_from_mse(value: float) -> float:
    """PSNR for peak 1; PSNR_CAP when the error vanishes."""
    if value <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / value))


def ssim(a: RasterImage, b: RasterImage) -> float:
    """
    Structural similarity with a Gaussian window, averaged over channels.

    Raises:
        InvalidArgumentError: If shapes differ or the image is smaller than
            the SSIM window
    """
    _check_same_shape(a, b)
    if min(a.height, a.width) < SSIM_WINDOW:
        error_msg = f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {a.width}x{a.height}"
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)

    multichannel = a.channels > 1
    x = a.data if multichannel else a.data[:, :, 0]
    y = b.data if multichannel else b.data[:, :, 0]
    return float(structural_similarity(
        x, y,
        data_range=1.0,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        K1=SSIM_K1,
        K2=SSIM_K2,
        channel_axis=-1 if multichannel else None,
    ))


def evaluate(a: RasterImage, b: RasterImage) -> MetricReport:
    """
    Compute MSE, PSNR and SSIM between two images of the same shape.

    Args:
        a: First image
        b: Second image

    Returns:
        MetricReport

    Raises:
        InvalidArgumentError: On shape mismatch

    Example:
        >>> report = evaluate(restored, reference)
        >>> print(f"PSNR {report.psnr:.2f} dB, SSIM {report.ssim:.4f}")
    """
    value = mse(a, b)
    report = MetricReport(mse=value, psnr=psnr_from_mse(value), ssim=ssim(a, b))
    logger.debug(f"Metrics: mse={report.mse:.6g} psnr={report.psnr:.3f} ssim={report.ssim:.5f}")
    return report


def error_map(a: RasterImage, b: RasterImage) -> np.ndarray:
    """Per-pixel squared error averaged over channels, shape (H, W), values in [0, 1]."""
    _check_same_shape(a, b)
    return np.mean((a.data - b.data) ** 2, axis=2)


def write_report(report: MetricReport, path: Union[str, Path]) -> None:
    """
    Write a report as JSON (.json) or as a CSV row (.csv).

    Raises:
        InvalidArgumentError: On any other suffix
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".json":
        path.write_text(report.to_json() + "\n", encoding="utf-8")
    elif suffix == ".csv":
        report.to_frame().to_csv(path, index=False)
    else:
        error_msg = f"Report path must end in .json or .csv, got {path.name}"
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)
    logger.info(f"Wrote metric report to {path}")
