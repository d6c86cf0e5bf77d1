"""Seeded synthetic foraging scenes used as ground truth.

Randomness comes from numpy's PCG64 generator. Every random quantity is drawn
from a child stream keyed by what it describes, e.g. ``(1, species_code, j)``
for the path of the j-th insect of a species, so adding an insect never
changes the path or noise of another one.
"""

from __future__ import annotations

import datetime as dt
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .core import Detection, Source, SpeciesClass, VideoMeta
from .flowers import flower_radius
from .metrics import TruthTrack, VisitRecord

# body extents (w, h) in px at 1920x1080; Syrphidae area is roughly 40-50 px
BODY_SIZE = {
    SpeciesClass.HONEYBEE: (36.0, 28.0),
    SpeciesClass.SYRPHIDAE: (8.0, 6.0),
    SpeciesClass.LEPIDOPTERA: (48.0, 40.0),
    SpeciesClass.VESPIDAE: (36.0, 26.0),
}

_STREAM_FLOWERS = 0
_STREAM_PATH = 1
_STREAM_NOISE = 2
_STREAM_FALSE_POSITIVES = 3


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    miss_rate: float = 0.0
    false_positive_rate: float = 0.0
    jitter_px: float = 0.0

    def __post_init__(self):
        for name in ("miss_rate", "false_positive_rate"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise GenerationError(f"{name} must lie in [0, 1]")
        if self.jitter_px < 0:
            raise GenerationError("jitter_px must be non-negative")


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    frame_count: int = 3000
    frame_width: int = 1920
    frame_height: int = 1080
    fps: float = 30.0
    flower_count: int = 6
    flower_size_range: tuple[float, float] = (30.0, 50.0)
    flower_border_px: float = 150.0
    flower_min_spacing_px: float = 180.0
    flower_margin_fraction: float = 0.2
    insects: tuple[tuple[SpeciesClass, int], ...] = ((SpeciesClass.HONEYBEE, 2),)
    speed_range: tuple[float, float] = (3.0, 8.0)
    turn_spread: float = 0.3
    attraction_probability: float = 0.7
    dwell_range: tuple[int, int] = (20, 120)
    wander_range: tuple[int, int] = (30, 150)
    max_visits: int = 4
    entry_margin_frames: int = 60
    flower_update_interval_frames: int = 3000
    visit_dwell_frames: int = 5
    noise: NoiseModel = NoiseModel()
    camera_number: int = 1
    record_date: dt.date = dt.date(2021, 3, 8)
    record_start_time: dt.time = dt.time(11, 0, 0)

    def __post_init__(self):
        if not 0.0 <= self.attraction_probability <= 1.0:
            raise GenerationError("attraction_probability must lie in [0, 1]")
        lo, hi = self.speed_range
        if lo < 0 or hi < lo:
            raise GenerationError("speed_range must be non-negative and ordered")
        if self.frame_count <= 0:
            raise GenerationError("frame_count must be positive")
        if self.dwell_range[0] < 0 or self.dwell_range[1] < self.dwell_range[0]:
            raise GenerationError("dwell_range must be non-negative and ordered")

    @property
    def meta(self) -> VideoMeta:
        return VideoMeta(self.camera_number, self.record_date, self.record_start_time,
                         self.fps, self.frame_width, self.frame_height)


@dataclass
class TruthFlower:
    flower_id: str
    x: float
    y: float
    w: float
    h: float
    radius: float

    @property
    def body_radius(self) -> float:
        return max(self.w, self.h) / 2


@dataclass
class GroundTruth:
    config: SceneConfig
    flowers: list[TruthFlower]
    tracks: list[TruthTrack]
    visits: list[VisitRecord]

    @property
    def meta(self) -> VideoMeta:
        return self.config.meta


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _species_code(species: SpeciesClass) -> int:
    return int(species.suffix)


def _place_flowers(cfg: SceneConfig) -> list[TruthFlower]:
    rng = _rng(cfg.seed, _STREAM_FLOWERS)
    b = cfg.flower_border_px
    if cfg.frame_width <= 2 * b or cfg.frame_height <= 2 * b:
        raise GenerationError("flower placement bounds are empty")
    flowers: list[TruthFlower] = []
    attempts = 0
    while len(flowers) < cfg.flower_count:
        attempts += 1
        if attempts > 10000:
            raise GenerationError(f"cannot place {cfg.flower_count} flowers {cfg.flower_min_spacing_px}px apart")
        x = round(float(rng.uniform(b, cfg.frame_width - b)), 3)
        y = round(float(rng.uniform(b, cfg.frame_height - b)), 3)
        size = round(float(rng.uniform(*cfg.flower_size_range)), 3)
        if any(math.hypot(x - f.x, y - f.y) < cfg.flower_min_spacing_px for f in flowers):
            continue
        flowers.append(TruthFlower(f"F{len(flowers)}", x, y, size, size,
                                   flower_radius((size, size), cfg.flower_margin_fraction)))
    return flowers


def _border_start(rng: np.random.Generator, w: int, h: int) -> tuple[float, float, float]:
    side = int(rng.integers(4))
    if side == 0:
        x, y, heading = 1.0, float(rng.uniform(1, h - 1)), 0.0
    elif side == 1:
        x, y, heading = w - 1.0, float(rng.uniform(1, h - 1)), math.pi
    elif side == 2:
        x, y, heading = float(rng.uniform(1, w - 1)), 1.0, math.pi / 2
    else:
        x, y, heading = float(rng.uniform(1, w - 1)), h - 1.0, -math.pi / 2
    return x, y, heading + float(rng.uniform(-0.6, 0.6))


def _exit_heading(x: float, y: float, w: int, h: int) -> float:
    options = [(x, math.pi), (w - x, 0.0), (y, -math.pi / 2), (h - y, math.pi / 2)]
    return min(options)[1]


def _insect_path(cfg: SceneConfig, flowers: Sequence[TruthFlower], species: SpeciesClass, j: int) -> list[tuple[int, float, float]]:
    rng = _rng(cfg.seed, _STREAM_PATH, _species_code(species), j)
    w, h = cfg.frame_width, cfg.frame_height
    last_entry = max(1, cfg.frame_count - cfg.entry_margin_frames)
    frame = int(rng.integers(0, last_entry))
    x, y, heading = _border_start(rng, w, h)
    speed = float(rng.uniform(*cfg.speed_range))
    state, timer, target = "wander", int(rng.integers(cfg.wander_range[0], cfg.wander_range[1] + 1)), None
    visits_done, last_flower = 0, None
    path = []

    def decide():
        nonlocal state, timer, target, visits_done, last_flower, speed
        speed = float(rng.uniform(*cfg.speed_range))
        choices = [f for f in flowers if f is not last_flower]
        if choices and visits_done < cfg.max_visits and rng.random() < cfg.attraction_probability:
            f = choices[int(rng.integers(len(choices)))]
            ang = float(rng.uniform(0, 2 * math.pi))
            off = float(rng.uniform(0, 0.5)) * f.body_radius
            target = (f.x + off * math.cos(ang), f.y + off * math.sin(ang))
            state, last_flower = "approach", f
            visits_done += 1
        elif rng.random() < 0.5:
            state = "wander"
            timer = int(rng.integers(cfg.wander_range[0], cfg.wander_range[1] + 1))
        else:
            state = "exit"

    while frame < cfg.frame_count:
        if not (0 <= x < w and 0 <= y < h):
            break
        path.append((frame, round(x, 3), round(y, 3)))
        frame += 1
        if state == "approach":
            tx, ty = target
            dist = math.hypot(tx - x, ty - y)
            if speed > 0 and dist <= speed:
                x, y = tx, ty
                state = "dwell"
                timer = int(rng.integers(cfg.dwell_range[0], cfg.dwell_range[1] + 1))
            elif dist > 0:
                heading = math.atan2(ty - y, tx - x)
                x += speed * math.cos(heading)
                y += speed * math.sin(heading)
        elif state == "dwell":
            timer -= 1
            if timer <= 0:
                decide()
        elif state == "wander":
            heading += float(rng.normal(0.0, cfg.turn_spread))
            nx, ny = x + speed * math.cos(heading), y + speed * math.sin(heading)
            if not (2 <= nx < w - 2 and 2 <= ny < h - 2):
                # turn back rather than leave while wandering
                heading += math.pi
                nx, ny = x + speed * math.cos(heading), y + speed * math.sin(heading)
            x, y = nx, ny
            timer -= 1
            if timer <= 0:
                decide()
        else:  # exit
            heading = _exit_heading(x, y, w, h)
            x += speed * math.cos(heading)
            y += speed * math.sin(heading)
    return path


def replay_visits(path: Sequence[tuple[int, float, float]], flowers: Sequence, dwell_frames: int) -> list[tuple[str, int, int, str]]:
    """Apply the dwell rule to a stored trajectory by re-scanning it.

    Returns ``(flower_id, entry, exit, kind)`` tuples. Kept deliberately
    separate from the incremental detector so each can check the other.
    """
    labels = []
    for frame, x, y in path:
        inside = [(math.hypot(x - f.x, y - f.y), i, f.flower_id) for i, f in enumerate(flowers)
                  if math.hypot(x - f.x, y - f.y) <= f.radius]
        labels.append((frame, min(inside)[2] if inside else None))
    # split into maximal runs of consecutive frames on one flower
    runs = []
    for key, group in itertools.groupby(enumerate(labels), key=lambda item: (item[1][1], item[1][0] - item[0])):
        flower = key[0]
        frames = [fr for _, (fr, _) in group]
        if flower is not None and len(frames) > dwell_frames:
            runs.append((flower, frames[0], frames[-1]))
    out = []
    history: list[str] = []
    for flower, entry, exit_ in runs:
        kind = "revisit" if flower in history and history[-1] != flower else "visit"
        history.append(flower)
        out.append((flower, entry, exit_, kind))
    return out


def generate_scene(cfg: SceneConfig) -> GroundTruth:
    flowers = _place_flowers(cfg)
    tracks: list[TruthTrack] = []
    visits: list[VisitRecord] = []
    tid = 0
    for species, count in cfg.insects:
        bw, bh = BODY_SIZE[species]
        for j in range(count):
            path = _insect_path(cfg, flowers, species, j)
            if not path:
                continue
            tracks.append(TruthTrack(tid, species, [(f, x, y, bw, bh) for f, x, y in path]))
            for flower, entry, exit_, kind in replay_visits(path, flowers, cfg.visit_dwell_frames):
                visits.append(VisitRecord(tid, species, flower, entry, exit_, kind))
            tid += 1
    return GroundTruth(cfg, flowers, tracks, visits)


def epoch_frames(cfg: SceneConfig) -> range:
    return range(0, cfg.frame_count, cfg.flower_update_interval_frames)


def emit_detections(truth: GroundTruth, noise: NoiseModel | None = None) -> list[Detection]:
    """Noisy deep-detector output for a scene, sorted by frame.

    Per true position the miss draw and the jitter draw are always consumed,
    so raising the miss rate only removes detections, never moves others.
    """
    cfg = truth.config
    noise = noise or cfg.noise
    w, h = cfg.frame_width, cfg.frame_height
    by_frame: dict[int, list[Detection]] = {}

    def clamp(x, y):
        return min(max(x, 0.0), w - 1e-3), min(max(y, 0.0), h - 1e-3)

    flower_rng = _rng(cfg.seed, _STREAM_NOISE, 99)
    for frame in epoch_frames(cfg):
        for f in truth.flowers:
            dx, dy = flower_rng.normal(0.0, 1.0, 2) * noise.jitter_px
            x, y = clamp(f.x + dx, f.y + dy)
            by_frame.setdefault(frame, []).append(
                Detection(frame, SpeciesClass.FLOWER, round(x, 3), round(y, 3), f.w, f.h, 0.95, Source.DEEP))

    ordinal: dict[SpeciesClass, int] = {}
    for t in truth.tracks:
        j = ordinal.get(t.species, 0)
        ordinal[t.species] = j + 1
        rng = _rng(cfg.seed, _STREAM_NOISE, _species_code(t.species), j)
        for frame, x, y, bw, bh in t.points:
            u = rng.random()
            dx, dy = rng.normal(0.0, 1.0, 2) * noise.jitter_px
            if u < noise.miss_rate:
                continue
            if noise.jitter_px > 0:
                x, y = clamp(x + dx, y + dy)
                x, y = round(x, 3), round(y, 3)
            by_frame.setdefault(frame, []).append(Detection(frame, t.species, x, y, bw, bh, 0.9, Source.DEEP))

    if noise.false_positive_rate > 0:
        rng = _rng(cfg.seed, _STREAM_FALSE_POSITIVES)
        species = list(BODY_SIZE)
        hits = rng.random(cfg.frame_count) < noise.false_positive_rate
        for frame in np.flatnonzero(hits):
            s = species[int(rng.integers(len(species)))]
            x = round(float(rng.uniform(0, w - 1)), 3)
            y = round(float(rng.uniform(0, h - 1)), 3)
            bw, bh = BODY_SIZE[s]
            by_frame.setdefault(int(frame), []).append(Detection(int(frame), s, x, y, bw, bh, 0.5, Source.DEEP))

    out = []
    for frame in sorted(by_frame):
        out.extend(by_frame[frame])
    return out


def rasterize_frames(truth: GroundTruth, background: int = 120, flower_intensity: int = 220,
                     insect_intensity: int = 30, frames: range | None = None) -> Iterator[np.ndarray]:
    """Grayscale frames: static bright flower discs, dark insect rectangles.

    A pixel is painted when its centre falls inside the shape.
    """
    cfg = truth.config
    w, h = cfg.frame_width, cfg.frame_height
    base = np.full((h, w), background, dtype=np.uint8)
    yy, xx = np.mgrid[0:h, 0:w]
    for f in truth.flowers:
        disc = (xx + 0.5 - f.x) ** 2 + (yy + 0.5 - f.y) ** 2 <= f.body_radius ** 2
        base[disc] = flower_intensity
    by_frame: dict[int, list[tuple[float, float, float, float]]] = {}
    for t in truth.tracks:
        for frame, x, y, bw, bh in t.points:
            by_frame.setdefault(frame, []).append((x, y, bw, bh))
    for frame in (frames if frames is not None else range(cfg.frame_count)):
        img = base.copy()
        for x, y, bw, bh in by_frame.get(frame, ()):
            c0 = max(0, math.ceil(x - bw / 2 - 0.5))
            c1 = min(w, math.ceil(x + bw / 2 - 0.5))
            r0 = max(0, math.ceil(y - bh / 2 - 0.5))
            r1 = min(h, math.ceil(y + bh / 2 - 0.5))
            img[r0:r1, c0:c1] = insect_intensity
        yield img


def parse_insects(text: str) -> tuple[tuple[SpeciesClass, int], ...]:
    """``"honeybee=2, syrphidae=1"`` -> species counts."""
    out = []
    for part in text.split(","):
        if not part.strip():
            continue
        name, _, count = part.partition("=")
        out.append((SpeciesClass.parse(name.strip()), int(count or 1)))
    return tuple(out)


def scene_from_mapping(values: dict[str, str], **overrides) -> SceneConfig:
    """Build a scene from string values (as read from a key=value file)."""
    fields = SceneConfig.__dataclass_fields__
    noise_fields = NoiseModel.__dataclass_fields__
    kwargs: dict = {}
    noise: dict = {}
    for key, raw in {**values, **{k: v for k, v in overrides.items() if v is not None}}.items():
        if key in noise_fields:
            noise[key] = float(raw)
        elif key == "insects":
            kwargs[key] = parse_insects(raw) if isinstance(raw, str) else tuple(raw)
        elif key == "record_date":
            kwargs[key] = raw if isinstance(raw, dt.date) else dt.date.fromisoformat(raw)
        elif key == "record_start_time":
            kwargs[key] = raw if isinstance(raw, dt.time) else dt.time.fromisoformat(raw)
        elif key in ("flower_size_range", "speed_range", "dwell_range", "wander_range"):
            lo, hi = (raw.split(",") if isinstance(raw, str) else raw)
            cast = int if key in ("dwell_range", "wander_range") else float
            kwargs[key] = (cast(lo), cast(hi))
        elif key in fields:
            kind = fields[key].type
            kwargs[key] = int(raw) if kind == "int" else float(raw)
        else:
            raise GenerationError(f"unknown scene key {key!r}")
    if noise:
        kwargs["noise"] = NoiseModel(**noise)
    return SceneConfig(**kwargs)


def write_simulation(truth: GroundTruth, out_dir, video_id: str | None = None, frames: bool = False):
    """Write detections, ground truth, optional packed frames and a one-line manifest."""
    from .dataset import ManifestEntry, write_manifest, write_truth
    from .detect import format_record, write_packed_frames

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = truth.config
    video_id = video_id or f"sim{cfg.seed}"
    det_path = out / f"{video_id}_detections.jsonl"
    with open(det_path, "w", encoding="utf-8") as fh:
        for d in emit_detections(truth):
            fh.write(format_record(d, video_id) + "\n")
    paths = {"detections": det_path, **write_truth(out, truth)}
    frame_path = None
    if frames:
        frame_path = out / f"{video_id}_frames.bin"
        write_packed_frames(frame_path, rasterize_frames(truth), cfg.frame_width, cfg.frame_height, cfg.frame_count)
        paths["frames"] = frame_path
    manifest = out / "manifest.txt"
    write_manifest(manifest, [ManifestEntry(video_id, cfg.meta, Path(det_path.name),
                                            Path(frame_path.name) if frame_path else None, cfg.frame_count)])
    paths["manifest"] = manifest
    return paths
