"""Command line entry point: ``depthdet {detect,eval,synth,calibrate,bench}``.

Exit codes
----------
0  success
1  configuration or usage error (bad flag, out-of-range value, unknown key)
2  parse, input or I/O error (missing file, malformed file, frame mismatch)
3  calibration error (too few or degenerate correspondences, point behind camera)
4  classifier backend error (external program failed, timed out, bad output)
5  internal error

Every pipeline key can be given as ``--key=value`` and overrides the
``--config`` file. The log level is read from ``DEPTHDET_LOG_LEVEL``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .calibration import load_correspondences, projection_report, reprojection_rms, solve_projection_dlt
from .config import KEYS, load_config, parse_overrides
from .evaluation import dump_frames
from .exceptions import (
    BackendError,
    BehindCameraError,
    CalibrationError,
    ConfigError,
    InputError,
    ParseError,
    PlacementError,
)
from .pipeline import format_bench_table, run_bench, run_detect, run_eval
from .synth import SceneSpec, generate_scene, write_scene

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INPUT = 2
EXIT_CALIBRATION = 3
EXIT_BACKEND = 4
EXIT_INTERNAL = 5

log = logging.getLogger("depthdet")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, PlacementError)):
        return EXIT_CONFIG
    if isinstance(exc, (CalibrationError, BehindCameraError)):
        return EXIT_CALIBRATION
    if isinstance(exc, BackendError):
        return EXIT_BACKEND
    if isinstance(exc, (ParseError, InputError, OSError)):
        return EXIT_INPUT
    return EXIT_INTERNAL


def _pipeline_config(args, extra):
    overrides = parse_overrides(extra)
    for key in ("cloud", "image", "calib", "out", "frame"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    scene = getattr(args, "scene", None)
    if scene:
        d = Path(scene)
        overrides.setdefault("cloud", str(d / "cloud.pcd"))
        overrides.setdefault("image", str(d / "image.ppm"))
        overrides.setdefault("calib", str(d / "calib.json"))
    return load_config(args.config, overrides)


def _cmd_detect(args, extra):
    config = _pipeline_config(args, extra)
    result = run_detect(config)
    print(dump_frames([(result.frame, result.detections)]), end="")
    return EXIT_OK


def _cmd_bench(args, extra):
    config = _pipeline_config(args, extra)
    bench = run_bench(config, args.repeat)
    if args.json:
        print(json.dumps(bench, indent=2))
    else:
        print(format_bench_table(bench))
    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(json.dumps(bench, indent=2) + "\n")
    return EXIT_OK


def _cmd_eval(args, extra):
    config = load_config(args.config, parse_overrides(extra))
    report = run_eval(args.detections, args.gt, config.iou_thresh, config.class_aware)
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def _object_range(text):
    lo, sep, hi = text.partition("-")
    try:
        lo, hi = int(lo), int(hi) if sep else int(lo)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected K or A-B, got {text!r}") from None
    if not 1 <= lo <= hi:
        raise argparse.ArgumentTypeError(f"bad object count range {text!r}")
    return lo, hi


def _cmd_synth(args, extra):
    if extra:
        raise ConfigError(f"unrecognized arguments: {' '.join(extra)}")
    if args.scenes < 1:
        raise ConfigError("--scenes must be >= 1")
    lo, hi = args.objects
    out = Path(args.out)
    frames = []
    for i in range(args.scenes):
        seed = args.seed + i
        spec = SceneSpec(seed=seed, n_objects=lo + i % (hi - lo + 1), noise_sigma=args.noise, floor=args.floor)
        name = f"scene_{seed:04d}"
        scene = generate_scene(spec, frame=name)
        write_scene(scene, out / name, force=args.force)
        frames.append((name, scene.gt))
        log.info("wrote %s (%d objects, %d points)", name, spec.n_objects, len(scene.cloud))
    gt_path = out / "gt.json"
    if gt_path.exists() and not args.force:
        raise FileExistsError(f"{gt_path} exists (use --force)")
    gt_path.write_text(dump_frames(frames))
    print(f"wrote {args.scenes} scene(s) to {out}")
    return EXIT_OK


def _cmd_calibrate(args, extra):
    if extra:
        raise ConfigError(f"unrecognized arguments: {' '.join(extra)}")
    corr = load_correspondences(Path(args.calib))
    P = solve_projection_dlt(corr)
    text = projection_report(P, reprojection_rms(P, corr))
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    epilog = "pipeline keys (as --key=value): " + ", ".join(KEYS)
    parser = _Parser(prog="depthdet", description="Depth-cluster object detection toolkit.", epilog=epilog)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def pipeline_args(p):
        p.add_argument("--config", help="flat TOML config file")
        p.add_argument("--scene", help="scene directory holding cloud.pcd, image.ppm, calib.json")
        for key in ("cloud", "image", "calib", "out", "frame"):
            p.add_argument(f"--{key}")

    p = sub.add_parser("detect", help="detect objects in one frame", epilog=epilog)
    pipeline_args(p)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("bench", help="time the pipeline over repeated runs", epilog=epilog)
    pipeline_args(p)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", action="store_true", help="print JSON instead of a table")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("--detections", nargs="+", required=True)
    p.add_argument("--gt", nargs="+", required=True)
    p.add_argument("--config")
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--objects", type=_object_range, default=(3, 8), help="count K or range A-B")
    p.add_argument("--noise", type=float, default=0.0, help="point noise sigma in meters")
    p.add_argument("--floor", action="store_true", help="add a floor plane")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true", help="overwrite existing files")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("calibrate", help="solve the projection matrix from correspondences")
    p.add_argument("--calib", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_calibrate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("DEPTHDET_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        return args.func(args, extra)
    except Exception as exc:
        code = exit_code_for(exc)
        stage = getattr(exc, "stage", None)
        where = f"{args.command}" + (f" [{stage}]" if stage else "")
        if code == EXIT_INTERNAL:
            log.debug("internal error", exc_info=True)
        print(f"depthdet {where}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
