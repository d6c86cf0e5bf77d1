"""Detection sources: ingested deep-detector records and a KNN background model.

Frames are 8-bit grayscale arrays indexed ``[row, col]``; pixel ``(row, col)``
covers ``[col, col+1) x [row, row+1)`` so its centre is at ``(col+0.5, row+0.5)``.
"""

from __future__ import annotations

import enum
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator

import numpy as np
from scipy import ndimage

from .core import Detection, ParseError, Source, SpeciesClass, StreamError, VideoMeta

log = logging.getLogger(__name__)

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class Mode(enum.Enum):
    FULL = "full"
    LOWRES = "lowres"


@dataclass
class ForegroundMask:
    frame_index: int
    mask: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


@dataclass
class DetectionBatch:
    frame_index: int
    detections: list[Detection] = field(default_factory=list)
    mode: Mode = Mode.FULL
    foreground_region_count: int = 0


class BackgroundModel:
    """Per-pixel K-nearest-neighbour background classifier.

    Each pixel keeps a ring buffer of ``history`` past intensities. A pixel is
    foreground when fewer than ``k`` of those samples lie within
    ``threshold`` of its current value. Every ``stride``-th frame the oldest
    sample is overwritten with the current frame, except that pixels
    classified as foreground are only written every ``foreground_stride``-th
    frame. The default for the latter lets a persistent change (lighting)
    collect ``k`` samples within one history length while an insect passing
    over a pixel for a few frames leaves too few samples to be absorbed.
    The buffer is seeded with the first frame seen.
    """

    def __init__(self, history: int = 50, k: int = 3, threshold: int = 12, stride: int = 2,
                 foreground_stride: int | None = None):
        if not history >= k >= 1:
            raise ValueError("need history >= k >= 1")
        if stride < 1:
            raise ValueError("stride must be >= 1")
        if foreground_stride is None:
            foreground_stride = stride * max(1, history // (k * stride))
        if foreground_stride < stride or foreground_stride % stride:
            raise ValueError("foreground_stride must be a positive multiple of stride")
        self.history = history
        self.k = k
        self.threshold = threshold
        self.stride = stride
        self.foreground_stride = foreground_stride
        self._samples: np.ndarray | None = None
        self._diff: np.ndarray | None = None
        self._close: np.ndarray | None = None
        self._cursor = 0
        self._seen = 0

    @property
    def shape(self) -> tuple[int, int] | None:
        return None if self._samples is None else self._samples.shape[1:]

    def classify(self, frame: np.ndarray) -> np.ndarray:
        if self._diff is None:
            self._diff = np.empty_like(self._samples)
            self._close = np.empty(self._samples.shape, dtype=bool)
        np.subtract(self._samples, frame.astype(np.int16), out=self._diff)
        np.abs(self._diff, out=self._diff)
        np.less_equal(self._diff, self.threshold, out=self._close)
        return self._close.sum(axis=0, dtype=np.int16) < self.k

    def update(self, frame: np.ndarray, frame_index: int = 0) -> ForegroundMask:
        if frame.ndim != 2:
            raise StreamError("frames must be single-channel")
        if self._samples is None:
            self._samples = np.repeat(frame.astype(np.int16)[None], self.history, axis=0)
        elif frame.shape != self._samples.shape[1:]:
            raise StreamError(f"frame shape changed from {self._samples.shape[1:]} to {frame.shape}")
        mask = self.classify(frame)
        if self._seen % self.stride == 0:
            slot = self._samples[self._cursor]
            if self._seen % self.foreground_stride == 0:
                slot[...] = frame
            else:
                np.copyto(slot, frame, where=~mask)
            self._cursor = (self._cursor + 1) % self.history
        self._seen += 1
        return ForegroundMask(frame_index, mask)


def update_background_model(model: BackgroundModel, frame: np.ndarray, frame_index: int = 0) -> ForegroundMask:
    return model.update(frame, frame_index)


def count_regions(mask: np.ndarray, min_area_px: int) -> int:
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if n == 0:
        return 0
    areas = np.bincount(labels.ravel())[1:]
    return int(np.count_nonzero(areas >= min_area_px))


def extract_blobs(mask: ForegroundMask | np.ndarray, min_area_px: int, scale: float = 1.0) -> list[Detection]:
    """8-connected components of at least ``min_area_px`` pixels.

    ``scale`` maps mask coordinates back to full-frame pixels for
    downscaled masks.
    """
    if min_area_px <= 0:
        raise ValueError("min_area_px must be positive")
    frame_index = mask.frame_index if isinstance(mask, ForegroundMask) else 0
    grid = mask.mask if isinstance(mask, ForegroundMask) else np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(grid, structure=EIGHT_CONNECTED)
    if n == 0:
        return []
    index = np.arange(1, n + 1)
    areas = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    centroids = ndimage.center_of_mass(grid, labels, index)
    out = []
    for label, area, (cy, cx), sl in zip(index, areas, centroids, ndimage.find_objects(labels)):
        if area < min_area_px:
            continue
        h = sl[0].stop - sl[0].start
        w = sl[1].stop - sl[1].start
        out.append(Detection(
            frame_index=frame_index,
            species=SpeciesClass.UNKNOWN,
            x=(cx + 0.5) * scale,
            y=(cy + 0.5) * scale,
            w=w * scale,
            h=h * scale,
            confidence=1.0,
            source=Source.SEGMENTATION,
        ))
    return out


def downscale(frame: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean downsampling; trailing rows/cols that do not fill a block are dropped."""
    if factor == 1:
        return frame
    h = frame.shape[0] // factor * factor
    w = frame.shape[1] // factor * factor
    blocks = frame[:h, :w].reshape(h // factor, factor, w // factor, factor)
    return blocks.mean(axis=(1, 3)).astype(np.uint8)


class Choice(enum.Enum):
    SEGMENTATION = "segmentation"
    DEEP = "deep"


def arbitrate(fg: list[Detection] | None, deep_available: bool, active_track_count: int,
              fg_region_count: int, flower_epoch_due: bool = False) -> Choice:
    """Pick the detection source for one frame.

    Segmentation is trusted only for routine updates of existing tracks with
    an unambiguous foreground; anything that may be a new object, and any
    flower epoch, goes to the deep detector.
    """
    if not deep_available:
        return Choice.SEGMENTATION
    if flower_epoch_due:
        return Choice.DEEP
    if active_track_count > 0 and fg_region_count <= active_track_count:
        return Choice.SEGMENTATION
    return Choice.DEEP


# -- deep detector stream ---------------------------------------------------

_REQUIRED = ("frame", "class", "cx", "cy", "w", "h", "conf")


def parse_record(line: str, lineno: int | None = None, meta: VideoMeta | None = None) -> tuple[str | None, Detection]:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
    if not isinstance(rec, dict):
        raise ParseError("record is not an object", lineno)
    missing = [k for k in _REQUIRED if k not in rec]
    if missing:
        raise ParseError(f"missing fields {missing}", lineno)
    try:
        frame = rec["frame"]
        if isinstance(frame, bool) or not isinstance(frame, int):
            raise ValueError(f"frame must be an integer, got {frame!r}")
        det = Detection(
            frame_index=frame,
            species=SpeciesClass.parse(str(rec["class"])),
            x=float(rec["cx"]),
            y=float(rec["cy"]),
            w=float(rec["w"]),
            h=float(rec["h"]),
            confidence=float(rec["conf"]),
            source=Source.DEEP,
        )
    except ParseError as exc:
        raise ParseError(str(exc), lineno) from None
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), lineno) from None
    if meta is not None and not meta.contains(det.x, det.y):
        raise ParseError(f"center ({det.x}, {det.y}) outside frame", lineno)
    return rec.get("video_id"), det


def format_record(det: Detection, video_id: str | None = None) -> str:
    rec = {}
    if video_id is not None:
        rec["video_id"] = video_id
    rec.update({
        "frame": det.frame_index,
        "class": det.species.value,
        "cx": round(det.x, 3),
        "cy": round(det.y, 3),
        "w": round(det.w, 3),
        "h": round(det.h, 3),
        "conf": round(det.confidence, 4),
    })
    return json.dumps(rec)


class DetectionStream:
    """Sequential reader over a JSONL deep-detection file.

    ``get(frame)`` must be called with non-decreasing frame indices; records
    for skipped frames are discarded.
    """

    def __init__(self, lines: Iterable[str], video_id: str | None = None, meta: VideoMeta | None = None):
        self._lines = iter(enumerate(lines, start=1))
        self.video_id = video_id
        self.meta = meta
        self._pending: Detection | None = None
        self._last_record_frame = -1
        self._last_query = -1
        self._exhausted = False

    @classmethod
    def open(cls, path: str | Path, video_id: str | None = None, meta: VideoMeta | None = None) -> "DetectionStream":
        fh = open(path, "r", encoding="utf-8")
        stream = cls(fh, video_id, meta)
        stream._fh = fh
        return stream

    def close(self) -> None:
        fh: IO | None = getattr(self, "_fh", None)
        if fh is not None:
            fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _next(self) -> Detection | None:
        for lineno, line in self._lines:
            if not line.strip():
                continue
            vid, det = parse_record(line, lineno, self.meta)
            if det.frame_index < self._last_record_frame:
                raise StreamError(f"line {lineno}: frame {det.frame_index} after {self._last_record_frame}")
            self._last_record_frame = det.frame_index
            if self.video_id is not None and vid is not None and vid != self.video_id:
                continue
            return det
        self._exhausted = True
        return None

    def get(self, frame_index: int) -> list[Detection]:
        if frame_index < self._last_query:
            raise StreamError(f"query for frame {frame_index} after {self._last_query}")
        self._last_query = frame_index
        out = []
        while True:
            if self._pending is None:
                if self._exhausted:
                    break
                self._pending = self._next()
                if self._pending is None:
                    break
            if self._pending.frame_index < frame_index:
                self._pending = None
                continue
            if self._pending.frame_index > frame_index:
                break
            out.append(self._pending)
            self._pending = None
        return out

    @property
    def exhausted(self) -> bool:
        """True once every record has been read and handed out."""
        if self._pending is None and not self._exhausted:
            self._pending = self._next()
        return self._pending is None and self._exhausted

    @property
    def last_frame(self) -> int:
        return self._last_record_frame


def ingest_deep_detections(stream: DetectionStream, frame_index: int) -> list[Detection]:
    return stream.get(frame_index)


def read_all_detections(path: str | Path, video_id: str | None = None) -> list[Detection]:
    with DetectionStream.open(path, video_id) as stream:
        out = []
        while (det := stream._next()) is not None:
            out.append(det)
        return out


# -- raw frames -------------------------------------------------------------

_HEADER = struct.Struct("<III")


def write_packed_frames(path: str | Path, frames: Iterable[np.ndarray], width: int, height: int, count: int) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(width, height, count))
        written = 0
        for frame in frames:
            if frame.shape != (height, width):
                raise StreamError(f"frame shape {frame.shape} != {(height, width)}")
            fh.write(np.ascontiguousarray(frame, dtype=np.uint8).tobytes())
            written += 1
    if written != count:
        raise StreamError(f"wrote {written} frames, header says {count}")


def read_packed_header(path: str | Path) -> tuple[int, int, int]:
    with open(path, "rb") as fh:
        return _HEADER.unpack(fh.read(_HEADER.size))


def iter_packed_frames(path: str | Path) -> Iterator[np.ndarray]:
    width, height, count = read_packed_header(path)
    data = np.memmap(path, dtype=np.uint8, mode="r", offset=_HEADER.size)
    if data.size < width * height * count:
        raise StreamError(f"{path}: truncated frame stream")
    frames = data[: width * height * count].reshape(count, height, width)
    for i in range(count):
        yield np.asarray(frames[i])


def iter_pgm_frames(directory: str | Path) -> Iterator[np.ndarray]:
    """Numbered 8-bit PGM images in numeric filename order."""
    from PIL import Image

    paths = sorted(Path(directory).glob("*.pgm"), key=lambda p: int("".join(ch for ch in p.stem if ch.isdigit()) or 0))
    shape = None
    for path in paths:
        with Image.open(path) as img:
            frame = np.asarray(img.convert("L"))
        if shape is not None and frame.shape != shape:
            raise StreamError(f"{path.name}: frame shape changed")
        shape = frame.shape
        yield frame


def iter_frames(path: str | Path) -> Iterator[np.ndarray]:
    path = Path(path)
    if path.is_dir():
        return iter_pgm_frames(path)
    return iter_packed_frames(path)
