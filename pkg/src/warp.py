"""
Warp module for the quasiconformal imaging toolkit.

This module applies piecewise-linear deformation maps to raster images:
- Backward warping I'(p) = I(f(p)) with bilinear sampling and border clamp
- The forward degradation model: warp, add seeded Gaussian noise, clamp
- Optional bijectivity enforcement (fold errors)
- Reading and writing 8/16-bit PNG and PGM/PPM images

Because the vertex grid equals the pixel grid, the map value at pixel
(row r, col c) is simply the position of vertex (r, c).
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from src.config import FOLD_REPORT_LIMIT, IMAGE_SUFFIXES
from src.exceptions import FoldError, FormatError, InvalidArgumentError
from src.logger import setup_logger
from src.mesh import DeformationMap, flipped_faces

# Set up logger for this module
logger = setup_logger(__name__)

# Independent random streams derived from one user seed
FIELD_STREAM = 0
NOISE_STREAM = 1


# ============================================================================
# Domain Types
# ============================================================================

@dataclass(frozen=True, eq=False)
class RasterImage:
    """
    Intensity image with samples in [0, 1].

    Attributes:
        data: (height, width, channels) float64 array, channels 1 or 3
        bit_depth: Sample depth of the file the image came from (8 or 16);
            used as the default depth when writing
    """
    data: np.ndarray
    bit_depth: int = 8

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            error_msg = f"Image data must be (H, W), (H, W, 1) or (H, W, 3), got {data.shape}"
            logger.error(error_msg)
            raise InvalidArgumentError(error_msg)
        if data.shape[0] < 1 or data.shape[1] < 1:
            error_msg = f"Image has empty extent {data.shape[:2]}"
            logger.error(error_msg)
            raise InvalidArgumentError(error_msg)
        if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0:
            error_msg = "Image samples must be finite and lie in [0, 1]"
            logger.error(error_msg)
            raise InvalidArgumentError(error_msg)
        if self.bit_depth not in (8, 16):
            error_msg = f"Unsupported bit depth {self.bit_depth}"
            logger.error(error_msg)
            raise InvalidArgumentError(error_msg)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def channel(self, index: int) -> "RasterImage":
        return RasterImage(self.data[:, :, index], self.bit_depth)


def seeded_generator(seed: int, stream: int = FIELD_STREAM) -> np.random.Generator:
    """
    Counter-based Philox generator for one (seed, stream) pair.

    Streams derived from the same seed are statistically independent, so
    field generation and noise never share random numbers.
    """
    if isinstance(seed, bool) or int(seed) != seed or seed < 0:
        error_msg = f"Seed must be a non-negative integer, got {seed!r}"
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(sequence))


# ============================================================================
# Warping
# ============================================================================

def _check_alignment(image: RasterImage, deformation: DeformationMap) -> None:
    mesh = deformation.mesh
    if (mesh.width_v, mesh.height_v) != (image.width, image.height):
        error_msg = (
            f"Map grid {mesh.width_v}x{mesh.height_v} does not match "
            f"image {image.width}x{image.height}"
        )
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)


def sample_array(array: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """
    Bilinear samples of an (H, W, C) array at (x, y), clamped to the border.

    Returns:
        Array of shape x.shape + (C,)
    """
    coordinates = np.stack([np.asarray(y, dtype=np.float64), np.asarray(x, dtype=np.float64)])
    samples = [
        ndimage.map_coordinates(array[:, :, c], coordinates, order=1, mode="nearest")
        for c in range(array.shape[2])
    ]
    return np.stack(samples, axis=-1)


def sample_image(image: RasterImage, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear samples of every channel of an image at (x, y)."""
    return sample_array(image.data, x, y)


def warp_image(
    image: RasterImage,
    deformation: DeformationMap,
    require_bijective: bool = False,
) -> RasterImage:
    """
    Backward-warp an image: output pixel p takes the value image(f(p)).

    Args:
        image: Source image
        deformation: Map on the image's pixel grid
        require_bijective: Refuse maps with flipped faces

    Returns:
        Warped image of the same shape

    Raises:
        InvalidArgumentError: If map and image sizes differ
        FoldError: If require_bijective is set and the map folds

    Example:
        >>> mesh = build_grid_mesh(image.width, image.height)
        >>> same = warp_image(image, identity_map(mesh))
    """
    _check_alignment(image, deformation)

    if require_bijective:
        folded = flipped_faces(deformation)
        if folded.size:
            listed = [int(i) for i in folded[:FOLD_REPORT_LIMIT]]
            error_msg = f"Map has {folded.size} flipped faces (first: {listed})"
            logger.error(error_msg)
            raise FoldError(error_msg, face_indices=listed)

    grid = deformation.positions_grid()
    warped = sample_image(image, grid[:, :, 0], grid[:, :, 1])
    return RasterImage(np.clip(warped, 0.0, 1.0), image.bit_depth)


def compose_displacement(
    image: RasterImage,
    deformation: DeformationMap,
    noise_sigma: float,
    seed: int,
    require_bijective: bool = False,
) -> RasterImage:
    """
    Forward degradation model: warp, add Gaussian noise, clamp to [0, 1].

    Args:
        image: Clean image
        deformation: Distortion map on the image grid
        noise_sigma: Noise standard deviation (>= 0)
        seed: Seed of the noise stream

    Returns:
        Distorted image

    Raises:
        InvalidArgumentError: If noise_sigma is negative, plus warp_image errors
    """
    if not noise_sigma >= 0:
        error_msg = f"noise_sigma must be >= 0, got {noise_sigma}"
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)

    warped = warp_image(image, deformation, require_bijective=require_bijective)
    if noise_sigma == 0:
        return warped

    rng = seeded_generator(seed, NOISE_STREAM)
    noise = rng.standard_normal(warped.shape) * noise_sigma
    return RasterImage(np.clip(warped.data + noise, 0.0, 1.0), image.bit_depth)


# ============================================================================
# Image I/O
# ============================================================================

def _check_suffix(path: Path) -> None:
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        error_msg = f"Unsupported image type {path.suffix!r} (expected one of {IMAGE_SUFFIXES})"
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)


def read_image(path: Union[str, Path]) -> RasterImage:
    """
    Read a PNG/PGM/PPM image into [0, 1] samples.

    8-bit data is divided by 255, 16-bit grayscale by 65535. Palette and
    alpha images are converted to RGB or L first.

    Raises:
        FormatError: If the file is not a readable image of a supported mode
        OSError: If the file cannot be opened
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode in ("I;16", "I;16L", "I;16B", "I"):
                array = np.asarray(img).astype(np.float64)
                if array.min() < 0 or array.max() > 65535:
                    raise FormatError(f"Integer image {path} has samples outside 16-bit range")
                return RasterImage(array / 65535.0, bit_depth=16)
            if mode in ("1", "L", "LA"):
                img = img.convert("L")
            elif mode in ("RGB", "RGBA", "P", "PA", "CMYK", "YCbCr"):
                img = img.convert("RGB")
            else:
                raise FormatError(f"Unsupported image mode {mode!r} in {path}")
            array = np.asarray(img).astype(np.float64) / 255.0
    except UnidentifiedImageError as e:
        error_msg = f"Not a readable image: {path}"
        logger.error(error_msg)
        raise FormatError(error_msg) from e
    except FormatError as e:
        logger.error(str(e))
        raise

    logger.debug(f"Read image {path} ({array.shape[1]}x{array.shape[0]}, mode {mode})")
    return RasterImage(array, bit_depth=8)


def quantize(image: RasterImage, bit_depth: int) -> np.ndarray:
    """Quantize [0, 1] samples to integers, rounding half to even."""
    peak = 255 if bit_depth == 8 else 65535
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    return np.rint(image.data * peak).astype(dtype)


def write_image(image: RasterImage, path: Union[str, Path], bit_depth: Optional[int] = None) -> None:
    """
    Write an image as PNG/PGM/PPM.

    Args:
        image: Image to write
        path: Output path; the suffix selects the format
        bit_depth: 8 or 16; defaults to the image's own depth. 16-bit output
            is supported for single-channel images only; colour images are
            written at 8 bits with a warning.

    Raises:
        InvalidArgumentError: On unsupported suffix or depth
    """
    path = Path(path)
    _check_suffix(path)
    depth = bit_depth or image.bit_depth
    if depth not in (8, 16):
        error_msg = f"Unsupported bit depth {depth}"
        logger.error(error_msg)
        raise InvalidArgumentError(error_msg)
    if depth == 16 and image.channels == 3:
        logger.warning(f"16-bit colour output is not supported; writing {path} at 8 bits")
        depth = 8

    samples = quantize(image, depth)
    if image.channels == 1:
        samples = samples[:, :, 0]
    if depth == 16 and path.suffix.lower() == ".png":
        pil_image = Image.frombytes("I;16", (image.width, image.height), samples.astype("<u2").tobytes())
    elif depth == 16:
        # The PNM writer emits 16-bit samples from mode "I"
        pil_image = Image.fromarray(samples.astype(np.int32))
    else:
        pil_image = Image.fromarray(samples)
    path.parent.mkdir(parents=True, exist_ok=True)
    pil_image.save(path)
    logger.debug(f"Wrote image {path} ({image.width}x{image.height}, {depth}-bit)")


if __name__ == "__main__":
    from src.mesh import build_grid_mesh, identity_map

    demo = RasterImage(np.linspace(0.0, 1.0, 64 * 64).reshape(64, 64))
    same = warp_image(demo, identity_map(build_grid_mesh(64, 64)))
    print(f"Identity warp exact: {np.array_equal(same.data, demo.data)}")
