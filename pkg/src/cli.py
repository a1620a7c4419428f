"""
Command-line interface for the quasiconformal imaging toolkit.

This module ties the library into reproducible file-based pipelines:
- simulate: distort an image from a spec (or batch manifest) and save the truth map
- compute-mu / solve: convert between deformation maps (QCM1) and Beltrami fields (QCB1)
- warp: apply a map to an image, optionally refusing folded maps
- restore: recover a restoring map, restored image, field, trace and report
- evaluate: MSE / PSNR / SSIM report between two images
- viz-grid: draw the deformed mesh as a line drawing

Exit codes:
    0: Success
    1: Unexpected failure
    2: Invalid input (bad arguments, spec, format or mesh)
    3: I/O failure
    4: Inadmissible coefficient or numerical failure
    5: Fold detected with --require-bijective
    130: Interrupted by user (Ctrl+C)

Errors are reported on stderr as "error category=<token> message=<text>".
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from PIL import Image, ImageDraw

from src.beltrami import compute_beltrami, read_field, write_field
from src.config import VIZ_GRID_STEP, VIZ_SCALE
from src.distort import generate_batch, load_specs, make_pair, with_seed
from src.exceptions import (
    DegenerateMapError,
    FoldError,
    InadmissibleCoefficientError,
    InvalidArgumentError,
    NumericalFailureError,
    QcwarpError,
)
from src.lbs import assemble, boundary_from_map, identity_boundary, solve
from src.logger import set_log_level, setup_logger
from src.mesh import DeformationMap, face_orientation_count, read_map, write_map
from src.metrics import MetricReport, error_map, evaluate, write_report
from src.restore import RestoreConfig, compare_to_truth, load_restore_config, restore_pair
from src.warp import RasterImage, read_image, warp_image, write_image

# Set up logger for this module
logger = setup_logger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INPUT = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_FOLD = 5
EXIT_INTERRUPTED = 130


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the documented exit code."""
    if isinstance(error, FoldError):
        return EXIT_FOLD
    if isinstance(error, (InadmissibleCoefficientError, NumericalFailureError, DegenerateMapError)):
        return EXIT_NUMERIC
    if isinstance(error, QcwarpError):
        return EXIT_INPUT
    if isinstance(error, OSError):
        return EXIT_IO
    return EXIT_UNEXPECTED


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


# ============================================================================
# Subcommand Handlers
# ============================================================================

def cmd_simulate(args) -> int:
    """Distort an image with one spec, or with every spec of a batch manifest."""
    image = read_image(args.image_in)
    specs, is_batch = load_specs(args.spec_json)

    if not is_batch:
        spec = specs[0] if args.seed is None else with_seed(specs[0], args.seed)
        distorted, truth_map = make_pair(image, spec)
        write_image(distorted, args.image_out)
        write_map(truth_map, args.map_out)
        _say(args, f"Wrote {args.image_out} and {args.map_out}")
        return EXIT_OK

    if args.seed is not None:
        specs = [with_seed(spec, args.seed + i) for i, spec in enumerate(specs)]
    image_dir, map_dir = Path(args.image_out), Path(args.map_out)
    image_dir.mkdir(parents=True, exist_ok=True)
    map_dir.mkdir(parents=True, exist_ok=True)

    pairs = generate_batch(image, specs)
    for i, (distorted, truth_map) in enumerate(pairs):
        write_image(distorted, image_dir / f"distorted_{i:04d}.png")
        write_map(truth_map, map_dir / f"map_{i:04d}.qcm")
    _say(args, f"Wrote {len(pairs)} pairs to {image_dir} and {map_dir}")
    return EXIT_OK


def cmd_compute_mu(args) -> int:
    """Beltrami coefficient of a QCM1 map, written as QCB1."""
    deformation = read_map(args.map_in)
    field = compute_beltrami(deformation)
    write_field(field, args.mu_out)
    _say(args, f"Wrote Beltrami field ({field.mesh.face_count} faces) to {args.mu_out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    """Reconstruct a map from a QCB1 field (identity boundary unless --boundary-map)."""
    field = read_field(args.mu_in)
    mesh = field.mesh
    if args.boundary_map:
        boundary_map = read_map(args.boundary_map)
        if (boundary_map.mesh.width_v, boundary_map.mesh.height_v) != (mesh.width_v, mesh.height_v):
            raise InvalidArgumentError("Boundary map grid does not match the Beltrami field")
        bc = boundary_from_map(boundary_map)
    else:
        bc = identity_boundary(mesh)
    deformation = solve(assemble(mesh, field, bc), method=args.solver)
    write_map(deformation, args.map_out)
    _say(args, f"Wrote map to {args.map_out} (orientation {tuple(face_orientation_count(deformation))})")
    return EXIT_OK


def cmd_warp(args) -> int:
    """Backward-warp an image by a QCM1 map."""
    image = read_image(args.image_in)
    deformation = read_map(args.map_in)
    warped = warp_image(image, deformation, require_bijective=args.require_bijective)
    write_image(warped, args.image_out)
    _say(args, f"Wrote {args.image_out}")
    return EXIT_OK


def print_restore_summary(result, report: MetricReport, initial: MetricReport, truth_error: Optional[float]) -> None:
    print("\n" + "=" * 80)
    print("RESTORATION SUMMARY")
    print("=" * 80)
    print(f"Accepted steps: {len(result.trace)}")
    print(f"MSE:  {initial.mse:.6g} -> {report.mse:.6g}")
    print(f"PSNR: {initial.psnr:.3f} -> {report.psnr:.3f} dB")
    print(f"SSIM: {initial.ssim:.5f} -> {report.ssim:.5f}")
    if truth_error is not None:
        print(f"Inverse-consistency error: {truth_error:.4f} px")
    print("=" * 80 + "\n")


def cmd_restore(args) -> int:
    """Restore a distorted image toward a reference and write all artifacts."""
    distorted = read_image(args.distorted_in)
    reference = read_image(args.reference_in)
    truth_map = read_map(args.truth_map) if args.truth_map else None

    overrides = {}
    if args.loss_mode:
        overrides["loss_mode"] = args.loss_mode
    if args.config:
        config = load_restore_config(args.config, **overrides)
    else:
        config = RestoreConfig(**overrides)

    result = restore_pair(distorted, reference, config, truth_map=truth_map)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_image(result.restored, out_dir / "restored.png")
    write_map(result.map, out_dir / "map.qcm")
    write_field(result.field, out_dir / "mu.qcb")
    result.write_trace(out_dir / "trace.csv")

    initial = evaluate(distorted, reference)
    report = evaluate(result.restored, reference)
    document = {
        "restored": report.to_dict(),
        "distorted": initial.to_dict(),
        "accepted_steps": len(result.trace),
        "config": config.to_dict(),
    }
    truth_error = None
    if truth_map is not None:
        document.update(compare_to_truth(result, truth_map))
        truth_error = document["map_error"]
    (out_dir / "report.json").write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")

    if not args.quiet:
        print_restore_summary(result, report, initial, truth_error)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    """MSE / PSNR / SSIM between two images."""
    a = read_image(args.a)
    b = read_image(args.b)
    report = evaluate(a, b)
    write_report(report, args.report_out)
    if args.error_map:
        write_image(RasterImage(error_map(a, b)), args.error_map)
    _say(args, f"mse={report.mse:.6g} psnr={report.psnr:.3f} ssim={report.ssim:.5f}")
    return EXIT_OK


def render_grid(deformation: DeformationMap, step: int = VIZ_GRID_STEP, scale: int = VIZ_SCALE) -> Image.Image:
    """
    Draw every step-th row and column line of the deformed mesh.

    Returns:
        8-bit grayscale PIL image, black lines on white, covering the
        reference domain at `scale` output pixels per input pixel
    """
    if step < 1 or scale < 1:
        raise InvalidArgumentError(f"step and scale must be >= 1, got {step} and {scale}")
    mesh = deformation.mesh
    grid = deformation.positions_grid() * scale
    canvas = Image.new("L", ((mesh.width_v - 1) * scale + 1, (mesh.height_v - 1) * scale + 1), color=255)
    draw = ImageDraw.Draw(canvas)

    rows = sorted(set(range(0, mesh.height_v, step)) | {mesh.height_v - 1})
    cols = sorted(set(range(0, mesh.width_v, step)) | {mesh.width_v - 1})
    for i in rows:
        draw.line([tuple(point) for point in grid[i, :, :].tolist()], fill=0, width=1)
    for j in cols:
        draw.line([tuple(point) for point in grid[:, j, :].tolist()], fill=0, width=1)
    return canvas


def cmd_viz_grid(args) -> int:
    """Render the deformed mesh of a QCM1 map."""
    deformation = read_map(args.map_in)
    canvas = render_grid(deformation, step=args.step, scale=args.scale)
    Path(args.image_out).parent.mkdir(parents=True, exist_ok=True)
    canvas.save(args.image_out)
    _say(args, f"Wrote grid visualization to {args.image_out}")
    return EXIT_OK


# ============================================================================
# Command-Line Interface
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    """
    Build the argument parser with one subparser per command.

    Global flags (--config, --seed, --quiet, --verbose) are accepted after
    any subcommand.
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, default=None,
                        help='JSON config file (restore parameters)')
    common.add_argument('--seed', type=int, default=None,
                        help='Seed override for simulate (batch entry i gets seed + i)')
    common.add_argument('--quiet', action='store_true', help='Only log warnings and errors; no summaries')
    common.add_argument('--verbose', action='store_true', help='Enable debug logging output')

    parser = argparse.ArgumentParser(
        prog='qcwarp',
        description='Quasiconformal imaging toolkit - Beltrami coefficients, exact LBS, bijective warping',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Distort an image and keep the ground-truth map
  python -m src.cli simulate data/square.png spec.json out/distorted.png out/truth.qcm --seed 7

  # Restore it against the clean reference
  python -m src.cli restore out/distorted.png data/square.png out/restore --truth-map out/truth.qcm

  # Compare restored and reference images
  python -m src.cli evaluate out/restore/restored.png data/square.png out/report.json

  # Beltrami coefficient round trip
  python -m src.cli compute-mu out/truth.qcm out/truth.qcb
  python -m src.cli solve out/truth.qcb out/rebuilt.qcm --boundary-map out/truth.qcm

Environment:
  QCWARP_THREADS    cap on worker threads for batch manifests
  LOG_LEVEL         default log level (INFO)
        """
    )
    subparsers = parser.add_subparsers(dest='command', required=True)

    p = subparsers.add_parser('simulate', parents=[common], help='Distort an image from a spec or manifest')
    p.add_argument('image_in')
    p.add_argument('spec_json')
    p.add_argument('image_out', help='Output image, or directory for a batch manifest')
    p.add_argument('map_out', help='Output QCM1 map, or directory for a batch manifest')
    p.set_defaults(handler=cmd_simulate)

    p = subparsers.add_parser('compute-mu', parents=[common], help='Beltrami coefficient of a map')
    p.add_argument('map_in')
    p.add_argument('mu_out')
    p.set_defaults(handler=cmd_compute_mu)

    p = subparsers.add_parser('solve', parents=[common], help='Reconstruct a map from a Beltrami field')
    p.add_argument('mu_in')
    p.add_argument('map_out')
    p.add_argument('--boundary-map', default=None, help='Take boundary positions from this QCM1 map')
    p.add_argument('--solver', choices=['cg', 'direct'], default=None, help='Linear solver (default: QCWARP_LBS_SOLVER)')
    p.set_defaults(handler=cmd_solve)

    p = subparsers.add_parser('warp', parents=[common], help='Backward-warp an image by a map')
    p.add_argument('image_in')
    p.add_argument('map_in')
    p.add_argument('image_out')
    p.add_argument('--require-bijective', action='store_true', help='Fail with exit 5 if the map folds')
    p.set_defaults(handler=cmd_warp)

    p = subparsers.add_parser('restore', parents=[common], help='Restore a distorted image toward a reference')
    p.add_argument('distorted_in')
    p.add_argument('reference_in')
    p.add_argument('out_dir', help='Directory for restored.png, map.qcm, mu.qcb, trace.csv, report.json')
    p.add_argument('--truth-map', default=None, help='Ground-truth distortion map (enables map_error)')
    p.add_argument('--loss-mode', choices=['image', 'map'], default=None, help='Estimation loss')
    p.set_defaults(handler=cmd_restore)

    p = subparsers.add_parser('evaluate', parents=[common], help='MSE / PSNR / SSIM between two images')
    p.add_argument('a')
    p.add_argument('b')
    p.add_argument('report_out', help='.json or .csv report')
    p.add_argument('--error-map', default=None, help='Also write the per-pixel squared error image')
    p.set_defaults(handler=cmd_evaluate)

    p = subparsers.add_parser('viz-grid', parents=[common], help='Draw the deformed mesh')
    p.add_argument('map_in')
    p.add_argument('image_out')
    p.add_argument('--step', type=int, default=VIZ_GRID_STEP, help=f'Draw every n-th line (default: {VIZ_GRID_STEP})')
    p.add_argument('--scale', type=int, default=VIZ_SCALE, help=f'Pixels per mesh unit (default: {VIZ_SCALE})')
    p.set_defaults(handler=cmd_viz_grid)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    """
    Parse arguments, run one subcommand and return its exit code.

    Example:
        >>> main(["evaluate", "a.png", "b.png", "report.json", "--quiet"])
        0
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_INPUT

    if args.verbose:
        set_log_level(logging.DEBUG)
        logger.debug("Verbose logging enabled")
    elif args.quiet:
        set_log_level(logging.WARNING)

    if args.seed is not None and args.seed < 0:
        print("error category=invalid-argument message=--seed must be non-negative", file=sys.stderr)
        return EXIT_INPUT
    if args.config and args.command != 'restore':
        logger.warning(f"--config is only used by restore; ignoring it for {args.command}")

    try:
        return args.handler(args)
    except KeyboardInterrupt:
        print("error category=interrupted message=interrupted by user", file=sys.stderr)
        return EXIT_INTERRUPTED
    except QcwarpError as e:
        print(f"error category={e.category} message={e}", file=sys.stderr)
        return exit_code_for(e)
    except OSError as e:
        logger.error(f"I/O failure: {e}")
        print(f"error category=io message={e}", file=sys.stderr)
        return EXIT_IO
    except Exception as e:
        logger.exception(f"Unexpected failure in {args.command}")
        print(f"error category=unexpected message={e}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == '__main__':
    sys.exit(main())
