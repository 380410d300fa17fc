"""`avatar` command line: gen, render, bench, validate.

Exit codes: 0 ok, 1 validation failure, 2 IO error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("avatar")


def _cmd_gen(args) -> int:
    from . import codec
    from .asset import SynthSpec, generate_synthetic_asset, save_asset

    spec = SynthSpec(splat_count=args.splats, seed=args.seed, garment=args.garment, vertex_budget=args.vertices,
                     joint_count=args.joints, sh_degree=args.sh_degree)
    asset = generate_synthetic_asset(spec)
    if args.profile != "raw":
        asset.splats = codec.compress_splats(asset.splats, args.profile)
    save_asset(asset, args.out)
    log.info("wrote %s: %d splats, %d vertices, %d triangles", args.out, asset.splat_count, asset.vertex_count,
             asset.triangle_count)
    return EXIT_OK


def _cmd_validate(args) -> int:
    from .asset import container, validate_asset

    asset = container.load_asset(args.asset, validate=False)
    report = validate_asset(asset)
    for v in report:
        print(v)
    if report:
        print(f"{len(report)} violation(s)")
        return EXIT_INVALID
    print("ok")
    return EXIT_OK


def _cmd_render(args) -> int:
    from .asset import load_asset
    from .pipeline import RenderConfig, load_config, load_stereo, run_sequence
    from .raster import load_camera
    from .rig import load_pose_sequence

    asset = load_asset(args.asset)
    seq = load_pose_sequence(args.poses)
    config = load_config(args.config) if args.config else RenderConfig()
    if args.threads:
        config = config.replace(threads=args.threads)
    camera = load_stereo(args.stereo) if args.stereo else load_camera(args.camera)
    doc, _ = run_sequence(asset, seq, camera, config, out_dir=args.out, timings_path=args.timings, png=args.png)
    agg = doc["aggregate"]["total"]
    log.info("%d frames, total ms mean %.1f p50 %.1f p99 %.1f", doc["frame_count"], agg["mean"], agg["p50"], agg["p99"])
    return EXIT_OK


def _cmd_bench(args) -> int:
    from .asset import load_asset
    from .bench import default_matrix, format_table, run_matrix, save_results
    from .pipeline import RenderConfig

    asset = load_asset(args.asset)
    matrix = json.loads(Path(args.matrix).read_text()) if args.matrix else default_matrix()
    base = RenderConfig(threads=args.threads or 1)
    rows = run_matrix(asset, matrix, frames=args.frames, base=base)
    print(format_table(rows))
    if args.out:
        save_results(rows, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="avatar", description="Mesh-bound Gaussian splat avatar renderer")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic avatar")
    g.add_argument("--splats", type=int, default=100_000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--garment", action="store_true")
    g.add_argument("--vertices", type=int, default=20_000, help="target vertex budget")
    g.add_argument("--joints", type=int, default=17)
    g.add_argument("--sh-degree", type=int, default=3)
    g.add_argument("--profile", choices=["default", "aggressive", "raw"], default="default",
                   help="splat storage: compressed profile or raw float32")
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen)

    r = sub.add_parser("render", help="render a pose sequence")
    r.add_argument("--asset", required=True)
    r.add_argument("--poses", required=True)
    cams = r.add_mutually_exclusive_group(required=True)
    cams.add_argument("--camera")
    cams.add_argument("--stereo")
    r.add_argument("--config")
    r.add_argument("--out", required=True)
    r.add_argument("--timings")
    r.add_argument("--threads", type=int)
    r.add_argument("--png", action="store_true", help="also write PNG frames")
    r.set_defaults(func=_cmd_render)

    b = sub.add_parser("bench", help="run the on/off ablation matrix")
    b.add_argument("--asset", required=True)
    b.add_argument("--frames", type=int, default=120)
    b.add_argument("--matrix")
    b.add_argument("--threads", type=int)
    b.add_argument("--out", help="write results JSON")
    b.set_defaults(func=_cmd_bench)

    v = sub.add_parser("validate", help="check asset invariants")
    v.add_argument("--asset", required=True)
    v.set_defaults(func=_cmd_validate)
    return p


def main(argv=None) -> int:
    from .asset.types import AssetError, InvariantViolationError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except InvariantViolationError as exc:
        print(f"invalid asset: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, AssetError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
