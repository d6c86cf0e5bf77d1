"""Per-video processing, batch orchestration, cross-location aggregation and benchmarking."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import shutil
import tempfile
import time
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import dataset
from .core import INSECT_SPECIES, ConfigError, Detection, EngineConfig, SpeciesClass, VideoMeta
from .detect import (
    BackgroundModel,
    Choice,
    DetectionBatch,
    DetectionStream,
    Mode,
    arbitrate,
    count_regions,
    downscale,
    extract_blobs,
    iter_frames,
    read_packed_header,
)
from .flowers import FlowerTracker
from .metrics import VisitLog, pollination_report
from .tracking import EventKind, InsectTracker, StepResult, Verdict, finalize_track, select_processing_mode
from .visits import VisitDetector

log = logging.getLogger(__name__)


class AggregationError(ValueError):
    pass


@dataclass
class ModeStats:
    frames: int = 0
    lowres: int = 0
    full: int = 0
    deep: int = 0
    segmentation: int = 0
    deep_fallback: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


class VideoProcessor:
    """Owns every piece of per-video state: trackers, visit detector, background models."""

    def __init__(self, cfg: EngineConfig, meta: VideoMeta, video_id: str):
        self.cfg = cfg
        self.meta = meta
        self.video_id = video_id
        self.tracker = InsectTracker(cfg, meta)
        self.flowers = FlowerTracker(cfg)
        self.visits = VisitDetector(cfg.visit_dwell_frames)
        self.stats = ModeStats()
        self.last_frame = -1
        self._bg_full: BackgroundModel | None = None
        self._bg_low: BackgroundModel | None = None

    def _background(self) -> BackgroundModel:
        c = self.cfg
        return BackgroundModel(c.bg_history, c.bg_knn, c.bg_distance_threshold, c.bg_update_stride)

    # -- per-frame work ------------------------------------------------------

    def _apply(self, result: StepResult) -> None:
        for track, points in result.appended:
            for p in points:
                self.visits.update(track, p, self.flowers.flowers)
        for ev in result.events:
            if ev.kind is EventKind.CLOSED:
                self.visits.close_track(ev.track)
                finalize_track(ev.track, self.cfg)

    def _step(self, f: int, detections: list[Detection], mode: Mode = Mode.FULL, regions: int = 0) -> None:
        if self.flowers.is_epoch(f):
            self.flowers.update(detections, f)
        insects = [d for d in detections if d.species is not SpeciesClass.FLOWER]
        if insects or self.tracker.live:
            self._apply(self.tracker.step(DetectionBatch(f, insects, mode, regions)))

    def process_detections(self, f: int, detections: list[Detection]) -> None:
        """Detections-only path: the deep stream is the sole source."""
        self.stats.frames += 1
        self.stats.full += 1
        self.stats.deep += 1
        self.last_frame = f
        self._step(f, detections)

    def process_frame(self, f: int, image: np.ndarray, stream: DetectionStream | None) -> None:
        """Hybrid path over a raw frame plus an optional deep-detection stream."""
        cfg = self.cfg
        self.stats.frames += 1
        self.last_frame = f
        epoch = self.flowers.is_epoch(f)
        if self._bg_full is None:
            self._bg_full, self._bg_low = self._background(), self._background()

        if cfg.lowres_enabled and not epoch:
            s = cfg.lowres_scale_factor
            low = self._bg_low.update(downscale(image, s), f)
            candidate = count_regions(low.mask, max(1, cfg.min_blob_area_px // (s * s))) > 0
            if select_processing_mode(self.tracker.active_count, candidate) is Mode.LOWRES:
                self.stats.lowres += 1
                return
        self.stats.full += 1

        fg = extract_blobs(self._bg_full.update(image, f), cfg.min_blob_area_px)
        choice = arbitrate(fg, stream is not None, self.tracker.active_count, len(fg), epoch)
        if choice is Choice.SEGMENTATION:
            a = self.tracker.match(fg, f)
            if a.unassigned_rows or a.unassigned_cols:
                # segmentation lost a track or split a blob: re-detect with the deep stream
                choice = Choice.DEEP if stream is not None else choice
                self.stats.deep_fallback += choice is Choice.DEEP
        if choice is Choice.DEEP and stream is not None:
            self.stats.deep += 1
            self._step(f, stream.get(f), Mode.FULL, len(fg))
        else:
            self.stats.segmentation += 1
            self._step(f, fg, Mode.FULL, len(fg))

    def finish(self) -> None:
        self._apply(self.tracker.close_all(max(self.last_frame, 0)))

    # -- outputs -------------------------------------------------------------

    @property
    def accepted(self) -> list:
        return [t for t in self.tracker.tracks if t.verdict is Verdict.ACCEPTED]

    def visit_events(self) -> list:
        return sorted((v for t in self.accepted for v in t.visits), key=lambda v: (v.entry_frame, v.track_id))

    def summary(self) -> dict:
        cfg = self.cfg
        counts = Counter(t.species.value for t in self.accepted)
        visits = Counter(v.species.value for v in self.visit_events())
        m = self.meta
        return {
            "video_id": self.video_id,
            "camera_number": m.camera_number,
            "record_date": m.record_date.isoformat(),
            "record_start_time": m.record_start_time.isoformat(),
            "fps": m.fps,
            "frame_width": m.frame_width,
            "frame_height": m.frame_height,
            "config": cfg.as_dict(),
            "fertilisation_threshold": cfg.fertilisation_threshold,
            "mode_stats": self.stats.as_dict(),
            "species_track_counts": {s.value: counts.get(s.value, 0) for s in INSECT_SPECIES},
            "species_visit_counts": {s.value: visits.get(s.value, 0) for s in INSECT_SPECIES},
            "culled_tracks": sum(1 for t in self.tracker.tracks if t.verdict is Verdict.CULLED),
            "tracks": [
                {
                    "track_id": t.track_id,
                    "track_code": t.track_code,
                    "species": t.species.value,
                    "first_frame": t.first_frame,
                    "last_frame": t.last_frame,
                    "points": len(t.points),
                    "tp_eligible": len(t.points) >= cfg.min_track_frames,
                    "visits": len(t.visits),
                }
                for t in self.accepted
            ],
            "flowers": [
                {"flower_id": f.flower_id, "x": round(f.x, 3), "y": round(f.y, 3), "radius": round(f.radius, 3)}
                for f in self.flowers.flowers
            ],
        }

    def write(self, out_dir: Path) -> dict[str, Path]:
        paths = dataset.output_paths(out_dir, self.video_id)
        dataset.write_tracks(paths["tracks"], self.tracker.tracks)
        dataset.write_visits(paths["visits"], self.visit_events())
        dataset.write_flowers(paths["flowers"], self.flowers.flowers)
        dataset.write_json(paths["summary"], self.summary())
        return paths


def _frame_range(stream: DetectionStream, frame_count: int | None) -> Iterator[int]:
    f = 0
    while frame_count is None or f < frame_count:
        if frame_count is None and stream.exhausted:
            return
        yield f
        f += 1


def process_video(entry: dataset.ManifestEntry, cfg: EngineConfig) -> VideoProcessor:
    proc = VideoProcessor(cfg, entry.meta, entry.video_id)
    stream = DetectionStream.open(entry.detections, entry.video_id, entry.meta) if entry.detections else None
    try:
        if entry.frames is not None:
            if stream is None:
                log.warning("%s: no deep detections; tracks cannot be created", entry.video_id)
            for f, image in enumerate(iter_frames(entry.frames)):
                if image.shape != (entry.meta.frame_height, entry.meta.frame_width):
                    h, w = image.shape
                    entry.meta = VideoMeta(entry.meta.camera_number, entry.meta.record_date,
                                           entry.meta.record_start_time, entry.meta.fps, w, h)
                    proc.meta = proc.tracker.meta = entry.meta
                proc.process_frame(f, image, stream)
        else:
            for f in _frame_range(stream, entry.frame_count):
                proc.process_detections(f, stream.get(f))
        proc.finish()
    finally:
        if stream is not None:
            stream.close()
    return proc


def process_records(lines: Iterable[str], meta: VideoMeta, cfg: EngineConfig, video_id: str = "video",
                    frame_count: int | None = None) -> VideoProcessor:
    """Detections-only processing of in-memory JSONL records."""
    proc = VideoProcessor(cfg, meta, video_id)
    stream = DetectionStream(lines, None, meta)
    for f in _frame_range(stream, frame_count):
        proc.process_detections(f, stream.get(f))
    proc.finish()
    return proc


def run_video(entry: dataset.ManifestEntry, cfg: EngineConfig, out_dir: str | Path) -> dict[str, Path]:
    """Process one video and write its four output files atomically.

    Outputs are staged in a scratch directory and only moved into ``out_dir``
    once everything succeeded, so a failure leaves no partial files behind.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    proc = process_video(entry, cfg)
    with tempfile.TemporaryDirectory(dir=out) as tmp:
        staged = proc.write(Path(tmp))
        final = {}
        for key, p in staged.items():
            target = out / p.name
            shutil.move(str(p), target)
            final[key] = target
    return final


@dataclass
class VideoOutcome:
    video_id: str
    ok: bool
    error: str | None = None
    paths: dict[str, str] = field(default_factory=dict)


def _run_one(args: tuple[dataset.ManifestEntry, EngineConfig, str]) -> VideoOutcome:
    entry, cfg, out = args
    try:
        paths = run_video(entry, cfg, out)
    except Exception as exc:  # one bad video must not take down the batch
        log.error("%s failed: %s", entry.video_id, exc)
        return VideoOutcome(entry.video_id, False, f"{type(exc).__name__}: {exc}")
    return VideoOutcome(entry.video_id, True, None, {k: str(v) for k, v in paths.items()})


def run_batch(entries: Sequence[dataset.ManifestEntry], cfg: EngineConfig, out_dir: str | Path,
              workers: int = 1) -> list[VideoOutcome]:
    jobs = [(e, cfg, str(out_dir)) for e in entries]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


# -- aggregation ------------------------------------------------------------

@dataclass
class VideoDataset:
    video_id: str
    summary: dict
    visits: list[dict]

    @classmethod
    def load(cls, summary_path: str | Path) -> "VideoDataset":
        summary_path = Path(summary_path)
        summary = json.loads(summary_path.read_text())
        vid = summary["video_id"]
        with open(summary_path.with_name(f"{vid}_visits.csv"), newline="") as fh:
            visits = list(csv.DictReader(fh))
        return cls(vid, summary, visits)

    @property
    def location(self) -> str:
        return f"camera{self.summary['camera_number']}"


def find_datasets(directory: str | Path) -> list[VideoDataset]:
    return [VideoDataset.load(p) for p in sorted(Path(directory).glob("*_summary.json"))]


@dataclass
class LocationAggregate:
    location_id: str
    log: VisitLog
    track_counts: dict
    report: object
    trajectories: list = field(default_factory=list)


BAR_COLUMNS = ["location", "tracks", "visits", "visits_per_track", "flowers", "flowers_fertilised",
               "flowers_fertilised_combined"]
SPECIES_COLUMNS = ["location", "species", "tracks", "visits", "flowers_visited_pct", "flowers_fertilised_pct"]


def aggregate_locations(datasets: Sequence[VideoDataset]) -> list[LocationAggregate]:
    if not datasets:
        raise AggregationError("no datasets to aggregate")
    thresholds = {d.summary["fertilisation_threshold"] for d in datasets}
    if len(thresholds) != 1:
        raise AggregationError(f"inconsistent fertilisation thresholds across datasets: {sorted(thresholds)}")
    v_hat = thresholds.pop()
    by_location: dict[str, list[VideoDataset]] = defaultdict(list)
    for d in datasets:
        by_location[d.location].append(d)
    out = []
    for loc in sorted(by_location):
        vlog = VisitLog()
        counts: Counter = Counter()
        for d in by_location[loc]:
            for f in d.summary["flowers"]:
                vlog.add_flower(f"{d.video_id}:{f['flower_id']}")
            for t in d.summary["tracks"]:
                species = SpeciesClass.parse(t["species"])
                vlog.add_insect(species, f"{d.video_id}:{t['track_id']}")
                counts[species] += 1
            for row in d.visits:
                vlog.add_visit(f"{d.video_id}:{row['flower_id']}", SpeciesClass.parse(row["species"]),
                               f"{d.video_id}:{row['track_id']}")
        report = pollination_report(vlog, loc, v_hat, counts)
        out.append(LocationAggregate(loc, vlog, dict(counts), report))
    return out


def bar_rows(aggregates: Iterable[LocationAggregate]) -> list[dict]:
    rows = []
    for a in aggregates:
        r = a.report
        tracks = sum(r.track_counts.values())
        visits = sum(r.fv.values())
        rows.append({
            "location": a.location_id,
            "tracks": tracks,
            "visits": visits,
            "visits_per_track": round(visits / tracks, 4) if tracks else 0.0,
            "flowers": r.flower_count,
            "flowers_fertilised": r.n_pol,
            "flowers_fertilised_combined": r.n_pol_combined,
        })
    return rows


def species_rows(aggregates: Iterable[LocationAggregate]) -> list[dict]:
    rows = []
    for a in aggregates:
        r = a.report
        for s in INSECT_SPECIES:
            visited = r.visited_share[s.value]
            fert = r.fertilised_share[s.value]
            rows.append({
                "location": a.location_id,
                "species": s.value,
                "tracks": r.track_counts[s.value],
                "visits": r.fv[s.value],
                "flowers_visited_pct": round(100 * visited, 2) if visited is not None else 0.0,
                "flowers_fertilised_pct": round(100 * fert, 2) if fert is not None else 0.0,
            })
    return rows


def honeybee_only_share(aggregate: LocationAggregate) -> float:
    """Percentage of flowers reaching the threshold through honeybee visits alone."""
    share = aggregate.report.fertilised_share[SpeciesClass.HONEYBEE.value]
    return 0.0 if share is None else round(100 * share, 2)


def load_trajectories(directory: Path, ds: VideoDataset) -> list[dict]:
    """Polylines of the accepted tracks of one video."""
    tracks = dataset.read_tracks(directory / f"{ds.video_id}_tracks.csv")
    return [{"video_id": ds.video_id, "track_id": t.track_id, "species": t.species.value,
             "points": [(x, y) for _, x, y in t.points]} for t in tracks]


def _write_csv(path: Path, columns: Sequence[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def write_report(in_dir: str | Path, out_dir: str | Path, plots: bool = True) -> dict:
    """Aggregate every dataset in ``in_dir`` and write report files to ``out_dir``."""
    in_dir, out = Path(in_dir), Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    datasets = find_datasets(in_dir)
    aggregates = aggregate_locations(datasets)
    bars = bar_rows(aggregates)
    species = species_rows(aggregates)
    _write_csv(out / "report_bars.csv", BAR_COLUMNS, bars)
    _write_csv(out / "report_species.csv", SPECIES_COLUMNS, species)

    traj_rows = []
    flower_rows = []
    for d in datasets:
        for line in load_trajectories(in_dir, d):
            for i, (x, y) in enumerate(line["points"]):
                traj_rows.append({"location": d.location, "video_id": d.video_id, "track_id": line["track_id"],
                                  "species": line["species"], "seq": i, "x": f"{x:.3f}", "y": f"{y:.3f}"})
        for f in d.summary["flowers"]:
            flower_rows.append({"location": d.location, "video_id": d.video_id, **f})
    _write_csv(out / "report_trajectories.csv",
               ["location", "video_id", "track_id", "species", "seq", "x", "y"], traj_rows)
    _write_csv(out / "report_flowers.csv", ["location", "video_id", "flower_id", "x", "y", "radius"], flower_rows)

    payload = {
        "locations": [
            {**a.report.as_dict(), "honeybee_only_fertilised_pct": honeybee_only_share(a)} for a in aggregates
        ],
        "bars": bars,
        "species": species,
    }
    for a, loc in zip(aggregates, payload["locations"]):
        dataset.write_json(out / f"report_{a.location_id}.json", loc)
    files = ["report_bars.csv", "report_species.csv", "report_trajectories.csv", "report_flowers.csv"]
    files += [f"report_{a.location_id}.json" for a in aggregates]
    if plots:
        from .plotting import plot_bars, plot_species, plot_trajectories

        plot_bars(bars, out / "report_bars.svg")
        plot_species(species, out / "report_species.svg")
        plot_trajectories(traj_rows, flower_rows, out / "report_trajectories.svg")
        files += ["report_bars.svg", "report_species.svg", "report_trajectories.svg"]
    payload["files"] = files
    return payload


# -- throughput benchmark ---------------------------------------------------

@dataclass
class BenchResult:
    frames: int
    fullres_fps: float
    lowres_fps: float
    lowres_frames: int
    empty_fraction: float | None = None

    @property
    def ratio(self) -> float:
        return self.lowres_fps / self.fullres_fps if self.fullres_fps else float("inf")

    def as_dict(self) -> dict:
        return {**self.__dict__, "ratio": self.ratio}


def _timed_run(frames: Sequence[np.ndarray], detections: Sequence[Detection], meta: VideoMeta,
               cfg: EngineConfig) -> tuple[float, VideoProcessor]:
    by_frame: dict[int, list[str]] = defaultdict(list)
    from .detect import format_record

    for d in detections:
        by_frame[d.frame_index].append(format_record(d))
    lines = [line for f in sorted(by_frame) for line in by_frame[f]]
    proc = VideoProcessor(cfg, meta, "bench")
    stream = DetectionStream(lines)
    t0 = time.perf_counter()
    for f, image in enumerate(frames):
        proc.process_frame(f, image, stream)
    proc.finish()
    return time.perf_counter() - t0, proc


def bench(frames: Sequence[np.ndarray], detections: Sequence[Detection], meta: VideoMeta,
          cfg: EngineConfig | None = None, repeats: int = 1) -> BenchResult:
    """Throughput with the low-resolution path enabled versus disabled.

    Both runs see identical frames and detections; the best of ``repeats``
    timings is kept for each.
    """
    cfg = cfg or EngineConfig()
    on = cfg.replace(lowres_enabled=True)
    off = cfg.replace(lowres_enabled=False)
    t_on = t_off = float("inf")
    lowres_frames = 0
    for _ in range(max(1, repeats)):
        dt_off, _ = _timed_run(frames, detections, meta, off)
        dt_on, proc = _timed_run(frames, detections, meta, on)
        t_off, t_on = min(t_off, dt_off), min(t_on, dt_on)
        lowres_frames = proc.stats.lowres
    n = len(frames)
    return BenchResult(n, n / t_off, n / t_on, lowres_frames)


def synthetic_bench_input(seed: int = 0, frame_count: int = 600, width: int = 480, height: int = 270,
                          busy_fraction: float = 0.08):
    """A mostly empty scene: one honeybee crosses during ``busy_fraction`` of the frames."""
    from .simulate import SceneConfig, emit_detections, generate_scene, rasterize_frames

    scene = SceneConfig(seed=seed, frame_count=frame_count, frame_width=width, frame_height=height,
                        flower_count=2, flower_border_px=40, flower_min_spacing_px=80,
                        insects=((SpeciesClass.HONEYBEE, 1),), speed_range=(3.0, 5.0),
                        attraction_probability=0.0, wander_range=(30, 60), entry_margin_frames=frame_count // 3)
    truth = generate_scene(scene)
    # trim the insect so at most busy_fraction of frames contain it
    limit = int(busy_fraction * frame_count)
    for t in truth.tracks:
        t.points = t.points[:limit]
    busy = {p[0] for t in truth.tracks for p in t.points}
    frames = list(rasterize_frames(truth))
    dets = emit_detections(truth)
    return frames, dets, scene.meta, 1 - len(busy) / frame_count


def load_bench_input(detections: str | Path, frames: str | Path, meta: VideoMeta | None = None):
    from .detect import read_all_detections

    if meta is None:
        try:
            w, h, _ = read_packed_header(frames)
        except (OSError, ValueError):
            w, h = 1920, 1080
        meta = VideoMeta(1, dt.date(2021, 1, 1), dt.time(0, 0), 30.0, w, h)
    images = list(iter_frames(frames))
    dets = read_all_detections(detections)
    busy = {d.frame_index for d in dets if d.species.is_insect}
    return images, dets, meta, 1 - len(busy) / max(1, len(images))


def check_entry(entry: dataset.ManifestEntry) -> None:
    for p in (entry.detections, entry.frames):
        if p is not None and not Path(p).exists():
            raise ConfigError(f"{entry.video_id}: missing input {p}")
