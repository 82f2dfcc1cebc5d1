"""Command-line interface.

    lidartracks synth scenarios/turntable.yaml out/scene
    lidartracks annotate --input out/scene --output out/tracks --workers 4
    lidartracks validate out/tracks
    lidartracks evaluate out/scene/oracle out/tracks --json report.json
    lidartracks render out/tracks --out overlays --samples 20
    lidartracks split scene_ids.txt --seed 0

Every subcommand accepts ``--config FILE``: a YAML mapping whose keys are
the subcommand's long option names with dashes replaced by underscores.
Flags given on the command line win over the file.

Exit codes: 0 success, 1 validation or evaluation failure, 2 input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import __version__
from .binio import BundleFileError
from .metrics import DEFAULT_QUERY_COUNT, DEFAULT_RESOLUTION, THRESHOLDS, EvaluationError, UndefinedMetricError
from .occlusion import DEFAULT_TOLERANCE
from .quality import DEFAULT_MAX_MIN_DISTANCE, DEFAULT_MIN_FRAMES
from .scene import SceneError
from .trackbundle import TrackBundleError

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2

log = logging.getLogger("lidartracks")


class InputError(Exception):
    pass


def _csv(value):
    return [v for v in value.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lidartracks", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", type=Path, help="YAML file with option defaults")
        return p

    p = add("annotate", "build point tracks for every eligible object in a scene bundle")
    p.add_argument("--input", "-i", help="scene bundle directory")
    p.add_argument("--output", "-o", help="track bundle directory to write")
    p.add_argument("--cameras", type=_csv, help="comma-separated camera subset (default: all)")
    p.add_argument("--depth", default="nearest_neighbor",
                   help="nearest_neighbor, external (bundle maps) or external:<dir>")
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    p.add_argument("--min-frames", type=int, default=DEFAULT_MIN_FRAMES)
    p.add_argument("--max-min-distance", type=float, default=DEFAULT_MAX_MIN_DISTANCE)
    p.add_argument("--stride", type=int, default=1, help="use every k-th frame as a source frame")
    p.add_argument("--workers", "-j", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-speed-error", type=float, help="drop tracks whose speed error exceeds this (m/s)")
    p.add_argument("--objects", type=_csv, help="comma-separated object subset")

    p = add("validate", "re-check a track bundle")
    p.add_argument("bundle", nargs="?")
    p.add_argument("--scene", help="scene bundle (default: path recorded in the manifest)")
    p.add_argument("--pixel-tol", type=float, default=1e-2)
    p.add_argument("--speed-tol", type=float, default=1e-3)

    p = add("evaluate", "score predicted tracks against a track bundle")
    p.add_argument("predictions", nargs="?")
    p.add_argument("ground_truth", nargs="?")
    p.add_argument("--resolution", type=int, nargs=2, metavar=("W", "H"), default=list(DEFAULT_RESOLUTION))
    p.add_argument("--native", action="store_true", help="score at the camera's native resolution")
    p.add_argument("--thresholds", type=float, nargs="+", default=list(THRESHOLDS))
    p.add_argument("--queries", type=int, default=DEFAULT_QUERY_COUNT, help="query points per video")
    p.add_argument("--all-points", action="store_true", help="score every track instead of sampling")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bin-width", type=float, default=10.0, help="histogram bin width in pixels")
    p.add_argument("--json", type=Path, help="write the machine-readable report here")

    p = add("synth", "generate a synthetic scene bundle with oracle files")
    p.add_argument("scenario", nargs="?")
    p.add_argument("output", nargs="?")
    p.add_argument("--no-oracle", action="store_true")

    p = add("render", "draw sampled tracks over scene frames")
    p.add_argument("bundle", nargs="?")
    p.add_argument("--scene")
    p.add_argument("--out", default="overlays")
    p.add_argument("--frames", type=int, nargs=2, metavar=("FIRST", "LAST"), help="1-based, inclusive")
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--object")
    p.add_argument("--camera")

    p = add("split", "assign scenes to train/val/test")
    p.add_argument("scenes", nargs="*",
                   help="scene ids, a text file with one id per line, or a directory of scenes")
    p.add_argument("--fractions", type=float, nargs=3, default=[0.8, 0.1, 0.1])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", type=Path, help="write the assignment as YAML")
    return parser


def _apply_config(parser, argv):
    """Parse ``argv``; if ``--config`` is given, use the file as defaults and parse again."""
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        data = yaml.safe_load(args.config.read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise InputError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(data, dict):
        raise InputError(f"config {args.config} must be a mapping")
    sub = next(a for a in parser._subparsers._group_actions if isinstance(a, argparse._SubParsersAction))
    subparser = sub.choices[args.command]
    known = {a.dest for a in subparser._actions} - {"help", "config"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise InputError(f"unknown keys in {args.config}: {unknown}")
    for key, value in data.items():
        if key in ("cameras", "objects") and isinstance(value, str):
            data[key] = _csv(value)
    subparser.set_defaults(**data)
    return parser.parse_args(argv)


def _require(args, *names):
    missing = [n for n in names if not getattr(args, n)]
    if missing:
        raise InputError(f"missing required argument(s): {', '.join(missing)}")


def cmd_annotate(args) -> int:
    from .pipeline import RunConfig, annotate

    _require(args, "input", "output")
    try:
        config = RunConfig(
            input=args.input, output=args.output, cameras=args.cameras, depth=args.depth,
            tolerance=args.tolerance, min_frames=args.min_frames, max_min_distance=args.max_min_distance,
            stride=args.stride, workers=args.workers, seed=args.seed,
            max_speed_error=args.max_speed_error, objects=args.objects,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    manifest = annotate(config)
    for e in manifest["entries"]:
        status = f"{e['n_tracks']} tracks x {e['n_frames']} frames" if e["eligible"] else \
            "skipped: " + ", ".join(e["reasons"])
        print(f"{e['object_id']}/{e['camera_id']}: {status}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .pipeline import validate

    _require(args, "bundle")
    report = validate(args.bundle, args.scene, pixel_tol=args.pixel_tol, speed_tol=args.speed_tol)
    for v in report.violations:
        print(f"FAIL {v}")
    print(f"{report.checked} entries checked, {len(report.violations)} violations")
    return EXIT_OK if report.ok else EXIT_FAIL


def cmd_evaluate(args) -> int:
    from .pipeline import evaluate, format_table

    _require(args, "predictions", "ground_truth")
    resolution = None if args.native else tuple(args.resolution)
    report = evaluate(args.predictions, args.ground_truth, resolution=resolution,
                      thresholds=tuple(args.thresholds), query_count=args.queries, seed=args.seed,
                      all_points=args.all_points, bins=args.bin_width)
    print(format_table(report))
    if args.json:
        args.json.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import load_scenario, synthesize

    _require(args, "scenario", "output")
    scenario = load_scenario(args.scenario)
    bundle, _ = synthesize(scenario, args.output, with_oracle=not args.no_oracle)
    print(f"wrote {bundle.name}: {bundle.n_frames} frames, {len(bundle.box_tracks)} objects -> {args.output}")
    return EXIT_OK


def cmd_render(args) -> int:
    from .pipeline import render

    _require(args, "bundle")
    records = render(args.bundle, args.out, scene_path=args.scene, frames=args.frames,
                     sample_count=args.samples, seed=args.seed, object_id=args.object, camera_id=args.camera)
    for r in records:
        print(f"frame {r['frame']}: {r['visible']} visible, {r['occluded']} occluded -> {r['path']}")
    return EXIT_OK


def _scene_ids(items) -> list[str]:
    if len(items) == 1:
        p = Path(items[0])
        if p.is_dir():
            return sorted(c.name for c in p.iterdir() if c.is_dir())
        if p.is_file():
            return [line.strip() for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]
    return list(items)


def cmd_split(args) -> int:
    from .pipeline import split

    ids = _scene_ids(args.scenes)
    if not ids:
        raise InputError("no scene ids given")
    try:
        result = split(ids, args.fractions, seed=args.seed)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    text = yaml.safe_dump(result, sort_keys=False)
    if args.output:
        args.output.write_text(text, encoding="utf-8")
    print(" ".join(f"{k}={len(v)}" for k, v in result.items()))
    if not args.output:
        print(text, end="")
    return EXIT_OK


COMMANDS = {
    "annotate": cmd_annotate,
    "validate": cmd_validate,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
    "render": cmd_render,
    "split": cmd_split,
}


def main(argv=None) -> int:
    from .pipeline import RenderError
    from .synthetic import GenerationError, ScenarioError

    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # argparse usage errors
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (EvaluationError, UndefinedMetricError) as exc:
        print(f"evaluation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (InputError, BundleFileError, SceneError, TrackBundleError, ScenarioError, GenerationError,
            RenderError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
