"""Flower positions refreshed at fixed epochs with carry-forward on misses."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

from .assignment import solve_assignment
from .core import Detection, EngineConfig, SpeciesClass


def flower_radius(extent: tuple[float, float], margin_fraction: float) -> float:
    w, h = extent
    if w <= 0 or h <= 0:
        raise ValueError("flower extent must be positive")
    if margin_fraction < 0:
        raise ValueError("margin_fraction must be non-negative")
    return max(w, h) / 2 * (1 + margin_fraction)


@dataclass
class EpochEntry:
    frame_index: int
    x: float
    y: float
    radius: float
    detected: bool


@dataclass
class FlowerRecord:
    flower_id: str
    x: float
    y: float
    radius: float
    epoch_history: list[EpochEntry] = field(default_factory=list)

    @property
    def center(self) -> tuple[float, float]:
        return self.x, self.y


class FlowerEventKind(enum.Enum):
    REGISTERED = "registered"
    UPDATED = "updated"
    CARRIED = "carried"


@dataclass
class FlowerEvent:
    kind: FlowerEventKind
    flower: FlowerRecord
    frame_index: int


class FlowerTracker:
    def __init__(self, cfg: EngineConfig):
        self.cfg = cfg
        self.flowers: list[FlowerRecord] = []

    def is_epoch(self, frame_index: int) -> bool:
        return frame_index % self.cfg.flower_update_interval_frames == 0

    def update(self, detections: Sequence[Detection], frame_index: int) -> list[FlowerEvent]:
        """Associate this epoch's flower detections with the known flowers.

        Predicted positions are the current ones; unmatched flowers keep
        their position and radius, unmatched detections become new flowers.
        """
        if not self.is_epoch(frame_index):
            raise ValueError(f"frame {frame_index} is not a flower update epoch")
        if self.flowers and frame_index <= self.flowers[0].epoch_history[-1].frame_index:
            raise ValueError(f"flower epoch {frame_index} already processed")
        dets = [d for d in detections if d.species is SpeciesClass.FLOWER]
        margin = self.cfg.flower_radius_margin_fraction
        events = []
        pairs: list[tuple[int, int]] = []
        unmatched_dets = list(range(len(dets)))
        if self.flowers and dets:
            cost = [[math.hypot(f.x - d.x, f.y - d.y) for d in dets] for f in self.flowers]
            result = solve_assignment(cost, self.cfg.flower_gate_px)
            pairs = result.pairs
            unmatched_dets = result.unassigned_cols
        matched = {r: c for r, c in pairs}
        for r, flower in enumerate(self.flowers):
            if r in matched:
                d = dets[matched[r]]
                flower.x, flower.y = d.x, d.y
                flower.radius = flower_radius((d.w, d.h), margin)
                flower.epoch_history.append(EpochEntry(frame_index, flower.x, flower.y, flower.radius, True))
                events.append(FlowerEvent(FlowerEventKind.UPDATED, flower, frame_index))
            else:
                flower.epoch_history.append(EpochEntry(frame_index, flower.x, flower.y, flower.radius, False))
                events.append(FlowerEvent(FlowerEventKind.CARRIED, flower, frame_index))
        for c in unmatched_dets:
            d = dets[c]
            flower = FlowerRecord(f"F{len(self.flowers)}", d.x, d.y, flower_radius((d.w, d.h), margin))
            flower.epoch_history.append(EpochEntry(frame_index, flower.x, flower.y, flower.radius, True))
            self.flowers.append(flower)
            events.append(FlowerEvent(FlowerEventKind.REGISTERED, flower, frame_index))
        return events


def update_flowers(tracker: FlowerTracker, flower_detections: Sequence[Detection], frame_index: int) -> list[FlowerEvent]:
    return tracker.update(flower_detections, frame_index)
