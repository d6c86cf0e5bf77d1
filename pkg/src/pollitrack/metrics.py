"""Pollination metrics and detection/tracking evaluation."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .assignment import solve_assignment
from .core import INSECT_SPECIES, SpeciesClass

log = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


# -- flower-visit counts ----------------------------------------------------

@dataclass
class VisitLog:
    """Visit counts ``n[flower][species][insect]``.

    ``flowers`` lists every known flower, visited or not; ``insects`` maps
    each species to its insects (tracks), visitors or not.
    """

    counts: dict = field(default_factory=lambda: defaultdict(lambda: defaultdict(lambda: defaultdict(int))))
    flowers: list = field(default_factory=list)
    insects: dict = field(default_factory=lambda: defaultdict(list))

    def add_flower(self, flower) -> None:
        if flower not in self.flowers:
            self.flowers.append(flower)

    def add_insect(self, species: SpeciesClass, insect) -> None:
        if insect not in self.insects[species]:
            self.insects[species].append(insect)

    def add_visit(self, flower, species: SpeciesClass, insect, n: int = 1) -> None:
        self.add_flower(flower)
        self.add_insect(species, insect)
        self.counts[flower][species][insect] += n

    @property
    def species(self) -> list[SpeciesClass]:
        return [s for s in INSECT_SPECIES if self.insects.get(s)]

    @classmethod
    def from_events(cls, events: Iterable, flowers: Iterable = (), insects: Iterable[tuple[SpeciesClass, object]] = ()) -> "VisitLog":
        """Every event, visit or re-visit, adds one to its count."""
        log_ = cls()
        for f in flowers:
            log_.add_flower(f)
        for species, insect in insects:
            log_.add_insect(species, insect)
        for e in events:
            log_.add_visit(e.flower_id, e.species, e.insect if hasattr(e, "insect") else e.track_id)
        return log_


def fv(log_: VisitLog, species: SpeciesClass) -> int:
    if species not in log_.insects:
        log.warning("species %s not present in visit log", species.value)
        return 0
    return sum(by_species.get(species, {}).get(j, 0)
               for j in log_.insects[species]
               for by_species in log_.counts.values())


def vf(log_: VisitLog, flower, species: SpeciesClass) -> int:
    if flower not in log_.flowers:
        log.warning("flower %s not present in visit log", flower)
        return 0
    return sum(log_.counts.get(flower, {}).get(species, {}).values())


def v(log_: VisitLog, flower) -> int:
    if flower not in log_.flowers:
        log.warning("flower %s not present in visit log", flower)
        return 0
    return sum(sum(per_insect.values()) for per_insect in log_.counts.get(flower, {}).values())


def n_pol_species(log_: VisitLog, species: SpeciesClass, v_hat: int = 4) -> int:
    _check_vhat(v_hat)
    return sum(1 for f in log_.flowers if vf(log_, f, species) >= v_hat)


def n_pol(log_: VisitLog, v_hat: int = 4) -> int:
    """Per-species threshold summed over species (a flower may count once per species)."""
    _check_vhat(v_hat)
    return sum(n_pol_species(log_, s, v_hat) for s in log_.species)


def n_pol_combined(log_: VisitLog, v_hat: int = 4) -> int:
    """Flowers whose visits from all species together reach the threshold."""
    _check_vhat(v_hat)
    return sum(1 for f in log_.flowers if v(log_, f) >= v_hat)


def _check_vhat(v_hat: int) -> None:
    if v_hat < 1:
        raise ValueError("fertilisation threshold must be >= 1")


@dataclass
class PollinationReport:
    location_id: str
    fertilisation_threshold: int
    flower_count: int
    track_counts: dict[str, int]
    fv: dict[str, int]
    vf: dict[str, dict[str, int]]
    v: dict[str, int]
    n_pol_species: dict[str, int]
    n_pol: int
    n_pol_combined: int
    visited_share: dict[str, float | None]
    fertilised_share: dict[str, float | None]
    combined_fertilised_share: float | None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def pollination_report(log_: VisitLog, location_id: str, v_hat: int = 4,
                       track_counts: Mapping[SpeciesClass, int] | None = None) -> PollinationReport:
    species = list(INSECT_SPECIES)
    n_flowers = len(log_.flowers)
    flowers = [str(f) for f in log_.flowers]

    def share(k: int) -> float | None:
        return k / n_flowers if n_flowers else None

    if track_counts is None:
        track_counts = {s: len(log_.insects.get(s, [])) for s in species}
    return PollinationReport(
        location_id=location_id,
        fertilisation_threshold=v_hat,
        flower_count=n_flowers,
        track_counts={s.value: int(track_counts.get(s, 0)) for s in species},
        fv={s.value: fv(log_, s) if s in log_.insects else 0 for s in species},
        vf={name: {s.value: vf(log_, f, s) for s in species} for name, f in zip(flowers, log_.flowers)},
        v={name: v(log_, f) for name, f in zip(flowers, log_.flowers)},
        n_pol_species={s.value: n_pol_species(log_, s, v_hat) for s in species},
        n_pol=sum(n_pol_species(log_, s, v_hat) for s in species),
        n_pol_combined=n_pol_combined(log_, v_hat),
        visited_share={s.value: share(sum(1 for f in log_.flowers if vf(log_, f, s) > 0)) for s in species},
        fertilised_share={s.value: share(n_pol_species(log_, s, v_hat)) for s in species},
        combined_fertilised_share=share(n_pol_combined(log_, v_hat)),
    )


# -- detection metrics ------------------------------------------------------

def precision(tp: int, fp: int) -> float | None:
    return tp / (tp + fp) if tp + fp > 0 else None


def recall(tp: int, fn: int) -> float | None:
    return tp / (tp + fn) if tp + fn > 0 else None


def f_score(p: float | None, r: float | None) -> float | None:
    if p is None or r is None or p + r == 0:
        return None
    return 2 * (r * p) / (r + p)


@dataclass
class EvaluationCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    identity_swaps: int = 0

    @property
    def precision(self) -> float | None:
        return precision(self.tp, self.fp)

    @property
    def recall(self) -> float | None:
        return recall(self.tp, self.fn)

    @property
    def f_score(self) -> float | None:
        return f_score(self.precision, self.recall)

    def __iadd__(self, other: "EvaluationCounts") -> "EvaluationCounts":
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.identity_swaps += other.identity_swaps
        return self


# -- track evaluation -------------------------------------------------------

@dataclass
class PredictedTrack:
    track_id: int
    track_code: str
    species: SpeciesClass
    points: list[tuple[int, float, float]]


@dataclass
class TruthTrack:
    true_track_id: int
    species: SpeciesClass
    # (frame, x, y, w, h): body centre and extent
    points: list[tuple[int, float, float, float, float]]

    @property
    def entry_frame(self) -> int:
        return self.points[0][0]

    @property
    def exit_frame(self) -> int:
        return self.points[-1][0]


@dataclass
class InsectEvaluation:
    truth: TruthTrack
    track_ids: list[int]
    track_codes: list[str]
    counts: EvaluationCounts


@dataclass
class TrackEvaluation:
    insects: list[InsectEvaluation]
    false_tracks: list[PredictedTrack]
    ignored_truth: list[int]
    track_to_truth: dict[int, int]
    aggregate: EvaluationCounts

    def species_table(self) -> list[dict]:
        """Per-species rows laid out like the tracking summary table."""
        rows = []
        for species in INSECT_SPECIES:
            mine = [e for e in self.insects if e.truth.species is species]
            false = [t for t in self.false_tracks if t.species is species]
            if not mine and not false:
                continue
            tracked = [e for e in mine if e.track_ids]
            metrics = [(e.counts.precision, e.counts.recall, e.counts.f_score) for e in tracked]
            rows.append({
                "species": species.value,
                "observed": len(mine),
                "visible_frames": sum(len(e.truth.points) for e in mine),
                "tracklets": sum(len(e.track_ids) for e in mine) + len(false),
                "tp": len(tracked),
                "fn": len(mine) - len(tracked),
                "fp": len(false),
                "is": sum(e.counts.identity_swaps for e in mine),
                "precision": _mean(m[0] for m in metrics),
                "recall": _mean(m[1] for m in metrics),
                "f_score": _mean(m[2] for m in metrics),
            })
        return rows


def _mean(values: Iterable[float | None]) -> float | None:
    vals = [x for x in values if x is not None]
    return sum(vals) / len(vals) if vals else None


def _inside(x: float, y: float, body: tuple) -> bool:
    _, bx, by, bw, bh = body
    return abs(x - bx) <= bw / 2 and abs(y - by) <= bh / 2


def evaluate_tracks(predicted: Sequence[PredictedTrack], truth: Sequence[TruthTrack],
                    min_track_frames: int = 5, frame_count: int | None = None) -> TrackEvaluation:
    """Score predicted tracks against ground-truth body regions.

    Each predicted track is attributed to the true insect whose body contains
    most of its points. A point is a true positive when it lies inside that
    insect's body at that frame; each (insect, frame) is counted once. Extra
    tracks attributed to one insect are identity swaps. True insects seen in
    fewer than ``min_track_frames`` frames are ignored along with the tracks
    attributed to them.
    """
    by_frame: dict[int, list[tuple[int, tuple]]] = defaultdict(list)
    for t in truth:
        for body in t.points:
            by_frame[body[0]].append((t.true_track_id, body))
    if frame_count is None:
        frame_count = max(by_frame, default=-1) + 1
    ignored = {t.true_track_id for t in truth if len(t.points) < min_track_frames}

    owner: dict[int, int | None] = {}
    for p in predicted:
        votes: dict[int, int] = defaultdict(int)
        for f, x, y in p.points:
            if not 0 <= f < frame_count:
                raise EvaluationError(f"track {p.track_code}: frame {f} outside [0, {frame_count})")
            for tid, body in by_frame.get(f, ()):
                if _inside(x, y, body):
                    votes[tid] += 1
        owner[p.track_id] = min(votes, key=lambda k: (-votes[k], k)) if votes else None

    insects = []
    aggregate = EvaluationCounts()
    for t in truth:
        if t.true_track_id in ignored:
            continue
        mine = [p for p in predicted if owner[p.track_id] == t.true_track_id]
        bodies = {b[0]: b for b in t.points}
        covered: set[int] = set()
        fp = 0
        for p in mine:
            for f, x, y in p.points:
                body = bodies.get(f)
                if body is not None and f not in covered and _inside(x, y, body):
                    covered.add(f)
                else:
                    fp += 1
        counts = EvaluationCounts(tp=len(covered), fp=fp, fn=len(bodies) - len(covered),
                                  identity_swaps=max(0, len(mine) - 1))
        aggregate += counts
        insects.append(InsectEvaluation(t, [p.track_id for p in mine], [p.track_code for p in mine], counts))

    false_tracks = [p for p in predicted if owner[p.track_id] is None]
    for p in false_tracks:
        aggregate.fp += len(p.points)
    return TrackEvaluation(
        insects=insects,
        false_tracks=false_tracks,
        ignored_truth=sorted(ignored),
        track_to_truth={k: v for k, v in owner.items() if v is not None and v not in ignored},
        aggregate=aggregate,
    )


# -- visit evaluation -------------------------------------------------------

@dataclass
class VisitRecord:
    insect: int
    species: SpeciesClass
    flower_id: str
    entry_frame: int
    exit_frame: int
    kind: str = "visit"


@dataclass
class VisitEvaluation:
    counts: EvaluationCounts
    per_species: dict[str, EvaluationCounts]
    observed: dict[str, int]
    false_negatives: list[tuple[VisitRecord, str]]
    false_positives: list[VisitRecord]


def match_flowers(predicted: Sequence, truth: Sequence, gate: float) -> dict[str, str]:
    """Map predicted flower ids to true flower ids by centre distance."""
    if not predicted or not truth:
        return {}
    cost = [[math.hypot(p.x - t.x, p.y - t.y) for t in truth] for p in predicted]
    result = solve_assignment(cost, gate)
    return {predicted[r].flower_id: truth[c].flower_id for r, c in result.pairs}


def evaluate_visits(predicted: Sequence[VisitRecord], truth: Sequence[VisitRecord],
                    track_to_truth: Mapping[int, int] | None = None,
                    flower_map: Mapping[str, str] | None = None) -> VisitEvaluation:
    """Count predicted visits that coincide with a true visit.

    Predicted insects and flowers are translated into the truth id spaces
    first; a match needs the same insect and flower and overlapping frame
    intervals, and each true visit is matched at most once.
    """
    remaining = sorted(truth, key=lambda r: (r.insect, r.flower_id, r.entry_frame))
    used = [False] * len(remaining)
    counts = EvaluationCounts()
    per_species: dict[str, EvaluationCounts] = defaultdict(EvaluationCounts)
    observed: dict[str, int] = defaultdict(int)
    for t in truth:
        observed[t.species.value] += 1
    false_positives = []
    for p in sorted(predicted, key=lambda r: (r.entry_frame, r.insect)):
        insect = track_to_truth.get(p.insect) if track_to_truth is not None else p.insect
        flower = flower_map.get(p.flower_id) if flower_map is not None else p.flower_id
        hit = None
        for k, t in enumerate(remaining):
            if used[k] or t.insect != insect or t.flower_id != flower:
                continue
            if t.entry_frame <= p.exit_frame and p.entry_frame <= t.exit_frame:
                hit = k
                break
        if hit is None:
            counts.fp += 1
            per_species[p.species.value].fp += 1
            false_positives.append(p)
        else:
            used[hit] = True
            counts.tp += 1
            per_species[remaining[hit].species.value].tp += 1
    detected_flowers = set(flower_map.values()) if flower_map is not None else None
    false_negatives = []
    for k, t in enumerate(remaining):
        if used[k]:
            continue
        counts.fn += 1
        per_species[t.species.value].fn += 1
        reason = "missed"
        if detected_flowers is not None and t.flower_id not in detected_flowers:
            reason = "undetected flower"
        false_negatives.append((t, reason))
    return VisitEvaluation(counts, dict(per_species), dict(observed), false_negatives, false_positives)


# -- flower evaluation ------------------------------------------------------

def evaluate_flowers(predicted_epochs: Mapping[int, Sequence], truth: Sequence, gate: float) -> EvaluationCounts:
    """Per-epoch flower check: a true flower is covered when a predicted circle contains its whole disc.

    ``predicted_epochs`` maps epoch frame to the predicted flowers (objects
    with ``x``, ``y``, ``radius``); ``truth`` flowers carry ``x``, ``y`` and
    ``body_radius``.
    """
    counts = EvaluationCounts()
    for frame, preds in sorted(predicted_epochs.items()):
        mapping = match_flowers(preds, truth, gate)
        by_id = {t.flower_id: t for t in truth}
        covered = set()
        for p in preds:
            tid = mapping.get(p.flower_id)
            t = by_id.get(tid) if tid is not None else None
            if t is not None and math.hypot(p.x - t.x, p.y - t.y) + t.body_radius <= p.radius + 1e-9:
                counts.tp += 1
                covered.add(tid)
            else:
                counts.fp += 1
        counts.fn += len(truth) - len(covered)
    return counts
