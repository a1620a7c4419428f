"""
Generate synthetic test images and a batch manifest for the toolkit.

This script writes seeded, reproducible inputs into data/:
- checkerboard.png: 128x128 checkerboard with 16-pixel squares
- square.png: centered bright square on a dark background
- texture.png: smooth random texture (blurred Philox noise)
- texture_rgb.png: three-channel variant of the texture
- manifest.json: 10 distortion specs (elastic, affine, combined, ripple, ocean-like, air-like)
"""

from pathlib import Path

import numpy as np
from scipy import ndimage

from src.config import DATA_DIR
from src.distort import DistortionSpec, air_preset, sample_affine_spec, save_specs
from src.warp import RasterImage, seeded_generator, write_image

IMAGE_SIZE = 128


def set_seeds(seed: int = 42) -> np.random.Generator:
    """Counter-based generator for reproducible patterns."""
    return seeded_generator(seed)


def checkerboard(size: int = IMAGE_SIZE, square: int = 16) -> RasterImage:
    rows, cols = np.indices((size, size))
    return RasterImage(((rows // square + cols // square) % 2).astype(np.float64))


def centered_square(size: int = IMAGE_SIZE, fraction: float = 0.4) -> RasterImage:
    data = np.full((size, size), 0.1)
    half = int(size * fraction / 2)
    center = size // 2
    data[center - half:center + half, center - half:center + half] = 0.9
    return RasterImage(data)


def smooth_texture(rng: np.random.Generator, size: int = IMAGE_SIZE, channels: int = 1, sigma: float = 3.0) -> RasterImage:
    """Blurred white noise rescaled to [0.05, 0.95] per channel."""
    planes = []
    for _ in range(channels):
        plane = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=sigma, mode="reflect")
        plane = (plane - plane.min()) / (plane.max() - plane.min())
        planes.append(0.05 + 0.9 * plane)
    return RasterImage(np.stack(planes, axis=-1))


def build_manifest(size: int = IMAGE_SIZE) -> list[DistortionSpec]:
    """Ten specs covering every distortion kind."""
    return [
        DistortionSpec(kind="elastic", amplitude=4.0, sigma=8.0, seed=1),
        DistortionSpec(kind="elastic", amplitude=2.0, sigma=6.0, seed=2, noise_sigma=0.01),
        sample_affine_spec(seed=3, width=size, height=size),
        DistortionSpec(kind="affine", rotation=np.pi / 6, seed=4),
        DistortionSpec(kind="combined", rotation=0.1, scale=0.95, amplitude=3.0, sigma=8.0, seed=5),
        DistortionSpec(kind="ripple", wave_amplitude=2.0, wave_frequency=2.0, seed=6),
        DistortionSpec(kind="ocean-like", wave_amplitude=2.5, wave_frequency=3.0, seed=7),
        air_preset("weak", seed=8),
        air_preset("strong", seed=9),
        DistortionSpec(kind="elastic", amplitude=4.0, sigma=8.0, seed=10, noise_sigma=0.02),
    ]


def print_summary(paths: list[Path], specs: list[DistortionSpec]) -> None:
    print("\n" + "=" * 60)
    print("TEST PATTERN GENERATION SUMMARY")
    print("=" * 60)
    for path in paths:
        print(f"  {path}")
    print(f"\nManifest entries: {len(specs)}")
    for kind in sorted({spec.kind for spec in specs}):
        print(f"  {kind:<12} {sum(spec.kind == kind for spec in specs):>3}")
    print("=" * 60 + "\n")


def main():
    """Main execution function."""
    try:
        rng = set_seeds(42)
        DATA_DIR.mkdir(parents=True, exist_ok=True)

        images = {
            "checkerboard.png": checkerboard(),
            "square.png": centered_square(),
            "texture.png": smooth_texture(rng),
            "texture_rgb.png": smooth_texture(rng, channels=3),
        }
        paths = []
        for name, image in images.items():
            path = DATA_DIR / name
            write_image(image, path)
            paths.append(path)

        specs = build_manifest()
        manifest_path = DATA_DIR / "manifest.json"
        save_specs(specs, manifest_path)
        paths.append(manifest_path)

        print_summary(paths, specs)
        print("Pattern generation completed successfully!")

    except Exception as e:
        print(f"\nError generating patterns: {str(e)}")
        raise


if __name__ == "__main__":
    main()
