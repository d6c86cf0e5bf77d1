"""Readers and writers for per-video outputs, ground truth and run manifests."""

from __future__ import annotations

import csv
import datetime as dt
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .core import ConfigError, SpeciesClass, VideoMeta, make_track_code
from .metrics import PredictedTrack, TruthTrack, VisitRecord
from .visits import containing_flower

TRACK_COLUMNS = ["track_code", "species", "frame", "x", "y", "flower_id", "event", "track_id"]
VISIT_COLUMNS = ["track_code", "species", "flower_id", "entry_frame", "exit_frame", "kind", "track_id"]
FLOWER_COLUMNS = ["flower_id", "epoch_frame", "x", "y", "radius", "detected"]


def _fmt(value: float) -> str:
    return f"{value:.3f}"


def output_paths(out_dir: str | Path, video_id: str) -> dict[str, Path]:
    out = Path(out_dir)
    return {
        "tracks": out / f"{video_id}_tracks.csv",
        "visits": out / f"{video_id}_visits.csv",
        "flowers": out / f"{video_id}_flowers.csv",
        "summary": out / f"{video_id}_summary.json",
    }


def _writer(path: Path, columns: Sequence[str]):
    fh = open(path, "w", newline="", encoding="utf-8")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    return fh, w


# -- engine outputs ---------------------------------------------------------

def point_events(track) -> dict[int, list[str]]:
    events: dict[int, list[str]] = defaultdict(list)
    events[track.first_frame].append("created")
    for visit in track.visits:
        events[visit.entry_frame].append("visit_start")
        events[visit.exit_frame].append("visit_end")
    verdict = getattr(track, "verdict", None)
    events[track.last_frame].append("culled" if verdict is not None and verdict.value == "culled" else "closed")
    return events


def write_tracks(path: Path, tracks: Iterable) -> None:
    fh, w = _writer(path, TRACK_COLUMNS)
    with fh:
        for t in tracks:
            events = point_events(t)
            for p in t.points:
                w.writerow([t.track_code, t.species.value, p.frame_index, _fmt(p.x), _fmt(p.y),
                            p.flower_id or "", "|".join(events.get(p.frame_index, ())), t.track_id])


def write_visits(path: Path, visits: Iterable) -> None:
    fh, w = _writer(path, VISIT_COLUMNS)
    with fh:
        for v in visits:
            w.writerow([v.track_code, v.species.value, v.flower_id, v.entry_frame, v.exit_frame,
                        v.kind.value, v.track_id])


def write_flowers(path: Path, flowers: Iterable) -> None:
    fh, w = _writer(path, FLOWER_COLUMNS)
    with fh:
        rows = [(e.frame_index, f.flower_id, e) for f in flowers for e in f.epoch_history]
        for frame, fid, e in sorted(rows, key=lambda r: (r[0], int(r[1][1:]))):
            w.writerow([fid, frame, _fmt(e.x), _fmt(e.y), _fmt(e.radius), int(e.detected)])


def write_json(path: Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_tracks(path: str | Path, include_culled: bool = False) -> list[PredictedTrack]:
    points: dict[int, list] = defaultdict(list)
    info: dict[int, tuple[str, SpeciesClass]] = {}
    culled = set()
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            tid = int(row["track_id"])
            info[tid] = (row["track_code"], SpeciesClass.parse(row["species"]))
            points[tid].append((int(row["frame"]), float(row["x"]), float(row["y"])))
            if "culled" in row["event"].split("|"):
                culled.add(tid)
    return [PredictedTrack(tid, info[tid][0], info[tid][1], points[tid])
            for tid in sorted(points) if include_culled or tid not in culled]


def read_visits(path: str | Path) -> list[VisitRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            insect = int(row["true_track_id"]) if "true_track_id" in row else int(row["track_id"])
            out.append(VisitRecord(insect, SpeciesClass.parse(row["species"]), row["flower_id"],
                                   int(row["entry_frame"]), int(row["exit_frame"]), row["kind"]))
    return out


@dataclass
class FlowerRow:
    flower_id: str
    epoch_frame: int
    x: float
    y: float
    radius: float
    detected: bool
    w: float = 0.0
    h: float = 0.0

    @property
    def body_radius(self) -> float:
        return max(self.w, self.h) / 2


def read_flowers(path: str | Path) -> list[FlowerRow]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(FlowerRow(row["flower_id"], int(row["epoch_frame"]), float(row["x"]), float(row["y"]),
                                 float(row["radius"]), row["detected"] == "1",
                                 float(row.get("w") or 0.0), float(row.get("h") or 0.0)))
    return out


def final_flowers(rows: Sequence[FlowerRow]) -> list[FlowerRow]:
    latest: dict[str, FlowerRow] = {}
    for r in rows:
        if r.flower_id not in latest or r.epoch_frame >= latest[r.flower_id].epoch_frame:
            latest[r.flower_id] = r
    return sorted(latest.values(), key=lambda r: int(r.flower_id[1:]))


def flowers_by_epoch(rows: Sequence[FlowerRow]) -> dict[int, list[FlowerRow]]:
    epochs: dict[int, list[FlowerRow]] = defaultdict(list)
    for r in rows:
        epochs[r.epoch_frame].append(r)
    return dict(epochs)


# -- ground truth -----------------------------------------------------------

TRUTH_FILES = {
    "tracks": "truth_tracks.csv",
    "visits": "truth_visits.csv",
    "flowers": "truth_flowers.csv",
    "scene": "truth_scene.json",
}


def write_truth(out_dir: str | Path, truth) -> dict[str, Path]:
    """Serialise a ``GroundTruth`` in the engine schemas plus truth-only columns."""
    out = Path(out_dir)
    paths = {k: out / v for k, v in TRUTH_FILES.items()}
    meta = truth.meta
    visits_by_insect: dict[int, list] = defaultdict(list)
    for v in truth.visits:
        visits_by_insect[v.insect].append(v)

    fh, w = _writer(paths["tracks"], TRACK_COLUMNS + ["w", "h", "true_track_id"])
    with fh:
        for t in truth.tracks:
            code = make_track_code(meta, t.entry_frame, t.species)
            events: dict[int, list[str]] = defaultdict(list)
            events[t.entry_frame].append("created")
            for v in visits_by_insect[t.true_track_id]:
                events[v.entry_frame].append("visit_start")
                events[v.exit_frame].append("visit_end")
            events[t.exit_frame].append("closed")
            for frame, x, y, bw, bh in t.points:
                w.writerow([code, t.species.value, frame, _fmt(x), _fmt(y),
                            containing_flower(x, y, truth.flowers) or "",
                            "|".join(events.get(frame, ())), t.true_track_id,
                            _fmt(bw), _fmt(bh), t.true_track_id])

    codes = {t.true_track_id: make_track_code(meta, t.entry_frame, t.species) for t in truth.tracks}
    fh, w = _writer(paths["visits"], VISIT_COLUMNS + ["true_track_id"])
    with fh:
        for v in truth.visits:
            w.writerow([codes[v.insect], v.species.value, v.flower_id, v.entry_frame, v.exit_frame,
                        v.kind, v.insect, v.insect])

    from .simulate import epoch_frames

    fh, w = _writer(paths["flowers"], FLOWER_COLUMNS + ["w", "h"])
    with fh:
        for frame in epoch_frames(truth.config):
            for f in truth.flowers:
                w.writerow([f.flower_id, frame, _fmt(f.x), _fmt(f.y), _fmt(f.radius), 1, _fmt(f.w), _fmt(f.h)])

    write_json(paths["scene"], scene_to_dict(truth.config))
    return paths


def read_truth_tracks(path: str | Path) -> list[TruthTrack]:
    points: dict[int, list] = defaultdict(list)
    species: dict[int, SpeciesClass] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            tid = int(row["true_track_id"])
            species[tid] = SpeciesClass.parse(row["species"])
            points[tid].append((int(row["frame"]), float(row["x"]), float(row["y"]),
                                float(row["w"]), float(row["h"])))
    return [TruthTrack(tid, species[tid], points[tid]) for tid in sorted(points)]


def scene_to_dict(cfg) -> dict:
    d = {}
    for name in cfg.__dataclass_fields__:
        value = getattr(cfg, name)
        if name == "insects":
            value = {s.value: n for s, n in value}
        elif name == "noise":
            value = dict(value.__dict__)
        elif isinstance(value, (dt.date, dt.time)):
            value = value.isoformat()
        elif isinstance(value, tuple):
            value = list(value)
        d[name] = value
    return d


# -- manifests --------------------------------------------------------------

@dataclass
class ManifestEntry:
    video_id: str
    meta: VideoMeta
    detections: Path | None
    frames: Path | None
    frame_count: int | None = None


def parse_date(text: str) -> dt.date:
    text = text.strip()
    for fmt in ("%Y-%m-%d", "%d/%m/%Y"):
        try:
            return dt.datetime.strptime(text, fmt).date()
        except ValueError:
            pass
    raise ConfigError(f"unrecognised date {text!r}")


def parse_time(text: str) -> dt.time:
    try:
        return dt.time.fromisoformat(text.strip())
    except ValueError:
        raise ConfigError(f"unrecognised time {text!r}") from None


MANIFEST_KEYS = {"fps", "width", "height", "frame_count"}


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Comma-separated lines ``video_id, camera, date, start_time, detections[, frames]``.

    Paths are relative to the manifest. Optional trailing ``key=value`` fields
    set ``fps``, ``width``, ``height`` and ``frame_count``. Empty fields mean
    "no such input".
    """
    path = Path(path)
    base = path.parent
    entries = []
    seen = set()
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(",")]
        extras = {}
        while fields and "=" in fields[-1]:
            k, v = fields.pop().split("=", 1)
            extras[k.strip()] = v.strip()
        unknown = sorted(set(extras) - MANIFEST_KEYS)
        if unknown:
            raise ConfigError(f"{path}:{lineno}: unknown manifest key(s) {', '.join(unknown)}")
        if len(fields) < 5:
            raise ConfigError(f"{path}:{lineno}: expected video_id, camera, date, start_time, detections[, frames]")
        video_id, camera, date, start, detections = fields[:5]
        frames = fields[5] if len(fields) > 5 else ""
        if video_id in seen:
            raise ConfigError(f"{path}:{lineno}: duplicate video_id {video_id}")
        seen.add(video_id)
        if not detections and not frames:
            raise ConfigError(f"{path}:{lineno}: no input for {video_id}")
        try:
            meta = VideoMeta(int(camera), parse_date(date), parse_time(start),
                             float(extras.get("fps", 30.0)),
                             int(extras.get("width", 1920)), int(extras.get("height", 1080)))
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
        entries.append(ManifestEntry(
            video_id, meta,
            base / detections if detections else None,
            base / frames if frames else None,
            int(extras["frame_count"]) if "frame_count" in extras else None,
        ))
    return entries


def write_manifest(path: str | Path, entries: Iterable[ManifestEntry]) -> None:
    lines = []
    for e in entries:
        m = e.meta
        fields = [e.video_id, str(m.camera_number), m.record_date.isoformat(), m.record_start_time.isoformat(),
                  str(e.detections or ""), str(e.frames or ""),
                  f"fps={m.fps:g}", f"width={m.frame_width}", f"height={m.frame_height}"]
        if e.frame_count is not None:
            fields.append(f"frame_count={e.frame_count}")
        lines.append(", ".join(fields))
    Path(path).write_text("\n".join(lines) + "\n")
