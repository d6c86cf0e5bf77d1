"""Insect track state: prediction, association, lifecycle and culling."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

from .assignment import Assignment, solve_assignment
from .core import (
    Detection,
    EngineConfig,
    Source,
    SpeciesClass,
    StreamError,
    TrackPoint,
    VideoMeta,
    make_track_code,
)
from .detect import DetectionBatch, Mode


class TrackStatus(enum.Enum):
    ACTIVE = "active"
    COASTING = "coasting"
    CLOSED = "closed"


class Verdict(enum.Enum):
    ACCEPTED = "accepted"
    CULLED = "culled"


@dataclass
class InsectTrack:
    track_id: int
    track_code: str
    species: SpeciesClass
    points: list[TrackPoint] = field(default_factory=list)
    status: TrackStatus = TrackStatus.ACTIVE
    missed_frames: int = 0
    visits: list = field(default_factory=list)
    closed_frame: int | None = None
    verdict: Verdict | None = None
    snapshot: Detection | None = None

    @property
    def first_frame(self) -> int:
        return self.points[0].frame_index

    @property
    def last_frame(self) -> int:
        return self.points[-1].frame_index

    @property
    def live(self) -> bool:
        return self.status is not TrackStatus.CLOSED

    def append(self, point: TrackPoint) -> None:
        if self.status is TrackStatus.CLOSED:
            raise RuntimeError(f"track {self.track_code} is closed")
        if self.points and point.frame_index <= self.points[-1].frame_index:
            raise RuntimeError("track frames must increase")
        self.points.append(point)

    def path_length(self) -> float:
        pts = self.points
        return sum(math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(pts, pts[1:]))


def predict_position(track: InsectTrack, frame_index: int | None = None) -> tuple[float, float]:
    """Constant-velocity extrapolation from the last two points.

    ``frame_index`` defaults to the frame after the last point.
    """
    if not track.points:
        raise ValueError("cannot predict an empty track")
    last = track.points[-1]
    if len(track.points) < 2:
        return last.x, last.y
    prev = track.points[-2]
    if frame_index is None:
        frame_index = last.frame_index + 1
    dt = last.frame_index - prev.frame_index
    ahead = frame_index - last.frame_index
    return (last.x + (last.x - prev.x) / dt * ahead,
            last.y + (last.y - prev.y) / dt * ahead)


class EventKind(enum.Enum):
    CREATED = "created"
    CLOSED = "closed"


@dataclass
class TrackEvent:
    kind: EventKind
    track: InsectTrack
    frame_index: int
    detection: Detection | None = None


@dataclass
class StepResult:
    events: list[TrackEvent] = field(default_factory=list)
    # (track, points appended this step) in frame order per track
    appended: list[tuple[InsectTrack, list[TrackPoint]]] = field(default_factory=list)
    assignment: Assignment | None = None


def cost_matrix(tracks: Sequence[InsectTrack], detections: Sequence[Detection], frame_index: int) -> list[list[float]]:
    preds = [predict_position(t, frame_index) for t in tracks]
    return [[math.hypot(px - d.x, py - d.y) for d in detections] for px, py in preds]


class InsectTracker:
    """Single-video tracker; frames must arrive in increasing order."""

    def __init__(self, cfg: EngineConfig, meta: VideoMeta):
        self.cfg = cfg
        self.meta = meta
        self.tracks: list[InsectTrack] = []
        self.live: list[InsectTrack] = []
        self.last_frame = -1

    @property
    def active_count(self) -> int:
        return len(self.live)

    def _associate(self, insects: Sequence[Detection], frame_index: int) -> Assignment:
        if self.live and insects:
            return solve_assignment(cost_matrix(self.live, insects, frame_index), self.cfg.association_gate_px)
        return Assignment(unassigned_rows=list(range(len(self.live))),
                          unassigned_cols=list(range(len(insects))))

    def match(self, detections: Sequence[Detection], frame_index: int) -> Assignment:
        """Association the next ``step`` would make, without mutating state."""
        return self._associate([d for d in detections if d.species is not SpeciesClass.FLOWER], frame_index)

    def _close(self, track: InsectTrack, frame_index: int, result: StepResult) -> None:
        track.status = TrackStatus.CLOSED
        track.closed_frame = frame_index
        result.events.append(TrackEvent(EventKind.CLOSED, track, frame_index))

    def step(self, batch: DetectionBatch) -> StepResult:
        f = batch.frame_index
        if f <= self.last_frame:
            raise StreamError(f"frame {f} does not follow {self.last_frame}")
        self.last_frame = f
        result = StepResult()
        insects = [d for d in batch.detections if d.species is not SpeciesClass.FLOWER]

        assignment = self._associate(insects, f)
        result.assignment = assignment

        for r, c in assignment.pairs:
            track, det = self.live[r], insects[c]
            new_points = self._fill_gap(track, det, f)
            new_points.append(TrackPoint(f, det.x, det.y, det.source))
            for p in new_points:
                track.append(p)
            track.missed_frames = 0
            track.status = TrackStatus.ACTIVE
            result.appended.append((track, new_points))

        for r in assignment.unassigned_rows:
            track = self.live[r]
            track.missed_frames = f - track.last_frame
            track.status = TrackStatus.COASTING
            if track.missed_frames >= self.cfg.track_timeout_frames:
                self._close(track, f, result)

        for c in assignment.unassigned_cols:
            det = insects[c]
            if det.source is not Source.DEEP or not det.species.is_insect:
                continue
            track = InsectTrack(
                track_id=len(self.tracks),
                track_code=make_track_code(self.meta, f, det.species),
                species=det.species,
                snapshot=det,
            )
            point = TrackPoint(f, det.x, det.y, det.source)
            track.append(point)
            self.tracks.append(track)
            result.events.append(TrackEvent(EventKind.CREATED, track, f, det))
            result.appended.append((track, [point]))

        self.live = [t for t in self.tracks if t.live]
        return result

    def _fill_gap(self, track: InsectTrack, det: Detection, f: int) -> list[TrackPoint]:
        last = track.points[-1]
        gap = f - last.frame_index
        if gap <= 1 or not self.cfg.interpolate_gaps:
            return []
        out = []
        for k in range(1, gap):
            t = k / gap
            out.append(TrackPoint(last.frame_index + k,
                                  last.x + (det.x - last.x) * t,
                                  last.y + (det.y - last.y) * t,
                                  Source.INTERPOLATED))
        return out

    def expire(self, frame_index: int) -> StepResult:
        """Close tracks whose timeout has elapsed by ``frame_index`` without a detection step."""
        result = StepResult()
        for track in self.live:
            track.missed_frames = frame_index - track.last_frame
            if track.missed_frames >= self.cfg.track_timeout_frames:
                self._close(track, track.last_frame + self.cfg.track_timeout_frames, result)
        self.live = [t for t in self.tracks if t.live]
        return result

    def close_all(self, frame_index: int) -> StepResult:
        result = StepResult()
        for track in self.live:
            self._close(track, frame_index, result)
        self.live = []
        return result


def step_insects(tracker: InsectTracker, batch: DetectionBatch) -> list[TrackEvent]:
    return tracker.step(batch).events


def finalize_track(track: InsectTrack, cfg: EngineConfig) -> Verdict:
    if track.status is not TrackStatus.CLOSED:
        raise ValueError("only closed tracks can be finalised")
    if not track.visits and track.path_length() < cfg.false_positive_track_length_px:
        verdict = Verdict.CULLED
    else:
        verdict = Verdict.ACCEPTED
    track.verdict = verdict
    return verdict


def select_processing_mode(active_track_count: int, lowres_candidate_found: bool) -> Mode:
    if active_track_count == 0 and not lowres_candidate_found:
        return Mode.LOWRES
    return Mode.FULL
