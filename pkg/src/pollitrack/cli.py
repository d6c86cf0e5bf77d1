"""Command line entry point: ``pollitrack {track,simulate,evaluate,report,bench}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import dataset
from .core import CONFIG_FIELDS, ConfigError, EngineConfig, load_config
from .metrics import evaluate_flowers, evaluate_tracks, evaluate_visits, match_flowers

log = logging.getLogger("pollitrack")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key=value engine config file")
    group = p.add_argument_group("engine config overrides")
    for name, f in CONFIG_FIELDS.items():
        group.add_argument(f"--{name}", dest=name, metavar=str(f.type).upper(), default=None)


def _config(args: argparse.Namespace) -> EngineConfig:
    overrides = {name: getattr(args, name, None) for name in CONFIG_FIELDS}
    return load_config(args.config, overrides)


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        json.dump(payload, sys.stdout, indent=2, sort_keys=True, default=str)
        sys.stdout.write("\n")
    else:
        sys.stdout.write(text)


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.2f}"
    return str(x)


def _table(rows: Sequence[dict], columns: Sequence[str]) -> str:
    cells = [list(columns)] + [[_fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    return "".join("  ".join(v.rjust(w) for v, w in zip(row, widths)) + "\n" for row in cells)


def _write_csv(path: Path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: ("" if r.get(c) is None else r.get(c)) for c in columns})


# -- subcommands ------------------------------------------------------------

def cmd_track(args) -> int:
    from .pipeline import run_batch

    cfg = _config(args)
    entries = dataset.read_manifest(args.manifest)
    args.out.mkdir(parents=True, exist_ok=True)
    outcomes = run_batch(entries, cfg, args.out, workers=args.workers)
    failed = [o for o in outcomes if not o.ok]
    payload = {"videos": [o.__dict__ for o in outcomes], "failed": len(failed)}
    text = "".join(f"{o.video_id}\t{'ok' if o.ok else 'FAILED'}\t{o.error or ''}\n" for o in outcomes)
    _emit(args, payload, text)
    return 1 if failed else 0


def cmd_simulate(args) -> int:
    from .core import read_key_values
    from .simulate import generate_scene, scene_from_mapping, write_simulation

    values = read_key_values(args.scene) if args.scene else {}
    overrides = {
        "seed": args.seed,
        "frame_count": args.frame_count,
        "flower_count": args.flowers,
        "insects": args.insects,
        "miss_rate": args.miss_rate,
        "jitter_px": args.jitter_px,
        "false_positive_rate": args.false_positive_rate,
        "frame_width": args.width,
        "frame_height": args.height,
    }
    if args.width or args.height:
        # shrink flower placement margins with the frame unless the scene file sets them
        scale = min((args.width or 1920) / 1920, (args.height or 1080) / 1080)
        values.setdefault("flower_border_px", str(150 * scale))
        values.setdefault("flower_min_spacing_px", str(180 * scale))
    scene = scene_from_mapping(values, **overrides)
    truth = generate_scene(scene)
    paths = write_simulation(truth, args.out, args.video_id, frames=args.frames)
    payload = {
        "seed": scene.seed,
        "tracks": len(truth.tracks),
        "visits": len(truth.visits),
        "flowers": len(truth.flowers),
        "files": {k: str(v) for k, v in paths.items()},
    }
    text = (f"seed {scene.seed}: {len(truth.tracks)} insects, {len(truth.flowers)} flowers, "
            f"{len(truth.visits)} visits -> {args.out}\n")
    _emit(args, payload, text)
    return 0


TRACK_TABLE = ["species", "observed", "visible_frames", "tracklets", "tp", "fn", "fp", "is",
               "precision", "recall", "f_score"]
VISIT_TABLE = ["species", "observed", "tp", "fp", "fn", "precision", "recall", "f_score"]


def _video_id(pred_dir: Path, given: str | None) -> str:
    if given:
        return given
    found = sorted(p.name[: -len("_tracks.csv")] for p in pred_dir.glob("*_tracks.csv"))
    if len(found) != 1:
        raise ConfigError(f"{pred_dir}: expected one *_tracks.csv, found {len(found)}; pass --video-id")
    return found[0]


def evaluate_dirs(pred_dir: Path, truth_dir: Path, video_id: str | None = None,
                  cfg: EngineConfig | None = None) -> dict:
    cfg = cfg or EngineConfig()
    vid = _video_id(pred_dir, video_id)
    paths = dataset.output_paths(pred_dir, vid)
    truth_files = {k: truth_dir / v for k, v in dataset.TRUTH_FILES.items()}
    truth_tracks = dataset.read_truth_tracks(truth_files["tracks"])
    frame_count = json.loads(truth_files["scene"].read_text())["frame_count"] if truth_files["scene"].exists() else None
    tracks = evaluate_tracks(dataset.read_tracks(paths["tracks"]), truth_tracks, cfg.min_track_frames, frame_count)

    pred_flowers = dataset.read_flowers(paths["flowers"])
    truth_flowers = dataset.read_flowers(truth_files["flowers"])
    fmap = match_flowers(dataset.final_flowers(pred_flowers), dataset.final_flowers(truth_flowers), cfg.flower_gate_px)
    visits = evaluate_visits(dataset.read_visits(paths["visits"]), dataset.read_visits(truth_files["visits"]),
                             tracks.track_to_truth, fmap)
    flowers = evaluate_flowers(dataset.flowers_by_epoch(pred_flowers), dataset.final_flowers(truth_flowers),
                               cfg.flower_gate_px)

    visit_rows = []
    for species, c in sorted(visits.per_species.items()):
        visit_rows.append({"species": species, "observed": visits.observed.get(species, 0), "tp": c.tp,
                           "fp": c.fp, "fn": c.fn, "precision": c.precision, "recall": c.recall,
                           "f_score": c.f_score})
    c = visits.counts
    visit_rows.append({"species": "all", "observed": sum(visits.observed.values()), "tp": c.tp, "fp": c.fp,
                       "fn": c.fn, "precision": c.precision, "recall": c.recall, "f_score": c.f_score})
    a = tracks.aggregate
    return {
        "video_id": vid,
        "tracks": tracks.species_table(),
        "tracks_total": {"tp": a.tp, "fp": a.fp, "fn": a.fn, "is": a.identity_swaps,
                         "precision": a.precision, "recall": a.recall, "f_score": a.f_score},
        "per_insect": [
            {"true_track_id": e.truth.true_track_id, "species": e.truth.species.value,
             "track_codes": e.track_codes, "tp": e.counts.tp, "fp": e.counts.fp, "fn": e.counts.fn,
             "is": e.counts.identity_swaps, "precision": e.counts.precision, "recall": e.counts.recall,
             "f_score": e.counts.f_score}
            for e in tracks.insects
        ],
        "false_tracks": [t.track_code for t in tracks.false_tracks],
        "visits": visit_rows,
        "visit_false_negatives": [{"insect": v.insect, "flower_id": v.flower_id, "entry_frame": v.entry_frame,
                                   "reason": why} for v, why in visits.false_negatives],
        "flowers": {"tp": flowers.tp, "fp": flowers.fp, "fn": flowers.fn},
    }


def cmd_evaluate(args) -> int:
    result = evaluate_dirs(args.predicted, args.truth, args.video_id, _config(args))
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        _write_csv(args.out / f"{result['video_id']}_eval_tracks.csv", TRACK_TABLE, result["tracks"])
        _write_csv(args.out / f"{result['video_id']}_eval_visits.csv", VISIT_TABLE, result["visits"])
    fl = result["flowers"]
    text = (f"tracks ({result['video_id']})\n" + _table(result["tracks"], TRACK_TABLE)
            + "\nvisits\n" + _table(result["visits"], VISIT_TABLE)
            + f"\nflowers  tp {fl['tp']}  fp {fl['fp']}  fn {fl['fn']}\n")
    _emit(args, result, text)
    return 0


def cmd_report(args) -> int:
    from .pipeline import BAR_COLUMNS, write_report

    payload = write_report(args.datasets, args.out, plots=not args.no_plots)
    text = ",".join(BAR_COLUMNS) + "\n"
    text += "".join(",".join(str(r[c]) for c in BAR_COLUMNS) + "\n" for r in payload["bars"])
    for loc in payload["locations"]:
        text += (f"# {loc['location_id']}: honeybee-only fertilised {loc['honeybee_only_fertilised_pct']:.2f}% "
                 f"of {loc['flower_count']} flowers\n")
    _emit(args, payload, text)
    return 0


def cmd_bench(args) -> int:
    from .pipeline import bench, load_bench_input, synthetic_bench_input

    cfg = _config(args)
    if args.detections or args.frames:
        if not (args.detections and args.frames):
            raise ConfigError("bench needs both --detections and --frames, or neither")
        frames, dets, meta, empty = load_bench_input(args.detections, args.frames)
    else:
        frames, dets, meta, empty = synthetic_bench_input(seed=args.seed or 0, frame_count=args.frame_count)
    result = bench(frames, dets, meta, cfg, repeats=args.repeats)
    result.empty_fraction = empty
    text = (f"frames {result.frames}  insect-free {100 * empty:.1f}%\n"
            f"full-res  {result.fullres_fps:8.1f} fps\n"
            f"low-res   {result.lowres_fps:8.1f} fps  ({result.lowres_frames} frames on the fast path)\n"
            f"ratio     {result.ratio:8.2f}\n")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        dataset.write_json(args.out / "bench.json", result.as_dict())
    _emit(args, result.as_dict(), text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pollitrack", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
    common.add_argument("--seed", type=int, default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", parents=[common], help="process every video in a manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--workers", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic scene with ground truth")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--scene", type=Path, help="key=value scene file")
    p.add_argument("--video-id", default=None)
    p.add_argument("--frame-count", type=int, default=None)
    p.add_argument("--flowers", type=int, default=None)
    p.add_argument("--insects", default=None, help='e.g. "honeybee=2,syrphidae=1"')
    p.add_argument("--miss-rate", type=float, default=None)
    p.add_argument("--jitter-px", type=float, default=None)
    p.add_argument("--false-positive-rate", type=float, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--frames", action="store_true", help="also rasterize a packed frame stream")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", parents=[common], help="score predicted outputs against ground truth")
    p.add_argument("predicted", type=Path)
    p.add_argument("truth", type=Path)
    p.add_argument("--video-id", default=None)
    p.add_argument("--out", type=Path, default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="aggregate datasets per location")
    p.add_argument("datasets", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("bench", parents=[common], help="low-res vs full-res throughput")
    p.add_argument("--detections", type=Path)
    p.add_argument("--frames", type=Path)
    p.add_argument("--frame-count", type=int, default=600)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--out", type=Path, default=None, help="also write bench.json here")
    _add_config_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
