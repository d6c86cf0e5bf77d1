"""Dwell-based flower visit and re-visit detection."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

from .core import SpeciesClass, TrackPoint


class VisitKind(enum.Enum):
    VISIT = "visit"
    REVISIT = "revisit"


@dataclass
class VisitEvent:
    track_code: str
    species: SpeciesClass
    flower_id: str
    entry_frame: int
    exit_frame: int
    kind: VisitKind = VisitKind.VISIT
    track_id: int = -1

    @property
    def dwell_frames(self) -> int:
        return self.exit_frame - self.entry_frame + 1


def containing_flower(x: float, y: float, flowers: Sequence) -> str | None:
    """Id of the nearest flower whose radius contains the point, if any."""
    best = None
    best_d = math.inf
    for f in flowers:
        d = math.hypot(x - f.x, y - f.y)
        if d <= f.radius and d < best_d:
            best, best_d = f.flower_id, d
    return best


@dataclass
class DwellState:
    run_flower: str | None = None
    run_start: int = -1
    run_last: int = -1
    run_count: int = 0
    open_visit: VisitEvent | None = None
    visited: set = field(default_factory=set)
    last_visited: str | None = None


class VisitDetector:
    """Tracks consecutive in-radius runs per insect track.

    A run is a sequence of consecutive frames spent inside the same flower
    (nearest centre wins when radii overlap). A visit opens once the run is
    longer than ``dwell_frames`` and closes when the run ends.
    """

    def __init__(self, dwell_frames: int = 5):
        self.dwell_frames = dwell_frames
        self.states: dict[int, DwellState] = {}
        self.events: list[VisitEvent] = []

    def update(self, track, point: TrackPoint, flowers: Sequence) -> list[VisitEvent]:
        """Feed one new track point; returns visits that closed at this point."""
        st = self.states.setdefault(track.track_id, DwellState())
        inside = containing_flower(point.x, point.y, flowers)
        point.flower_id = inside
        closed = []
        f = point.frame_index
        if inside is not None and inside == st.run_flower and f == st.run_last + 1:
            st.run_count += 1
            st.run_last = f
        else:
            ended = self._end_run(st)
            if ended is not None:
                closed.append(ended)
            if inside is not None:
                st.run_flower, st.run_start, st.run_last, st.run_count = inside, f, f, 1
        if st.run_flower is not None and st.open_visit is None and st.run_count > self.dwell_frames:
            kind = VisitKind.VISIT
            if st.run_flower in st.visited and st.last_visited != st.run_flower:
                kind = VisitKind.REVISIT
            st.open_visit = VisitEvent(track.track_code, track.species, st.run_flower,
                                       st.run_start, f, kind, track.track_id)
            st.visited.add(st.run_flower)
            st.last_visited = st.run_flower
            track.visits.append(st.open_visit)
            self.events.append(st.open_visit)
        if st.open_visit is not None:
            st.open_visit.exit_frame = f
        return closed

    def _end_run(self, st: DwellState) -> VisitEvent | None:
        ended = st.open_visit
        st.open_visit = None
        st.run_flower, st.run_start, st.run_last, st.run_count = None, -1, -1, 0
        return ended

    def close_track(self, track) -> VisitEvent | None:
        st = self.states.pop(track.track_id, None)
        return None if st is None else self._end_run(st)

    def opened(self, track) -> bool:
        st = self.states.get(track.track_id)
        return st is not None and st.open_visit is not None


def update_visit_state(detector: VisitDetector, track, point: TrackPoint, flowers: Sequence) -> list[VisitEvent]:
    return detector.update(track, point, flowers)
