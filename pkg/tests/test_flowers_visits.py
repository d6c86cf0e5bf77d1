import pytest
from hypothesis import given, strategies as st

from oracles import dwell_visits
from pollitrack.core import Detection, EngineConfig, Source, SpeciesClass, TrackPoint
from pollitrack.flowers import FlowerEventKind, FlowerTracker, flower_radius
from pollitrack.tracking import InsectTrack
from pollitrack.visits import VisitDetector, VisitKind, containing_flower


def flower(f, x, y, size=40.0):
    return Detection(f, SpeciesClass.FLOWER, x, y, size, size, 0.9, Source.DEEP)


def test_radius_from_extent_and_margin():
    assert flower_radius((40, 30), 0.2) == pytest.approx(24.0)
    assert flower_radius((40, 30), 0.0) == 20.0
    with pytest.raises(ValueError):
        flower_radius((0, 30), 0.2)
    with pytest.raises(ValueError):
        flower_radius((10, 30), -0.1)


def test_register_update_carry_forward():
    ft = FlowerTracker(EngineConfig(flower_update_interval_frames=100))
    ev = ft.update([flower(0, 100, 100), flower(0, 400, 100)], 0)
    assert [e.kind for e in ev] == [FlowerEventKind.REGISTERED] * 2
    ev = ft.update([flower(100, 104, 101, 50.0)], 100)
    kinds = {e.flower.flower_id: e.kind for e in ev}
    assert kinds == {"F0": FlowerEventKind.UPDATED, "F1": FlowerEventKind.CARRIED}
    f0, f1 = ft.flowers
    assert (f0.x, f0.y, f0.radius) == (104, 101, pytest.approx(30.0))
    assert (f1.x, f1.y, f1.radius) == (400, 100, pytest.approx(24.0))
    assert [e.detected for e in f1.epoch_history] == [True, False]


def test_far_detection_becomes_new_flower():
    ft = FlowerTracker(EngineConfig(flower_update_interval_frames=100))
    ft.update([flower(0, 100, 100)], 0)
    ft.update([flower(100, 300, 100)], 100)
    assert [f.flower_id for f in ft.flowers] == ["F0", "F1"]


def test_off_epoch_and_repeat_epoch_rejected():
    ft = FlowerTracker(EngineConfig(flower_update_interval_frames=100))
    with pytest.raises(ValueError):
        ft.update([], 50)
    ft.update([flower(0, 1, 1)], 0)
    with pytest.raises(ValueError):
        ft.update([], 0)


class F:
    def __init__(self, fid, x, y, r):
        self.flower_id, self.x, self.y, self.radius = fid, x, y, r


def test_nearest_center_wins_in_overlap():
    flowers = [F("A", 0, 0, 50), F("B", 40, 0, 50)]
    assert containing_flower(15, 0, flowers) == "A"
    assert containing_flower(25, 0, flowers) == "B"
    assert containing_flower(200, 0, flowers) is None


def feed(positions, flowers, dwell=5, start=0, frames=None):
    track = InsectTrack(0, "10111000000", SpeciesClass.HONEYBEE)
    det = VisitDetector(dwell)
    closed = []
    for i, (x, y) in enumerate(positions):
        f = frames[i] if frames else start + i
        closed += det.update(track, TrackPoint(f, x, y, Source.DEEP), flowers)
    last = det.close_track(track)
    return track, closed + ([last] if last else [])


def test_dwell_boundary():
    flowers = [F("A", 0, 0, 20)]
    inside, outside = (0, 0), (100, 100)
    assert feed([outside] + [inside] * 5 + [outside], flowers)[0].visits == []
    track, closed = feed([outside] + [inside] * 6 + [outside], flowers)
    (v,) = track.visits
    assert (v.entry_frame, v.exit_frame, v.dwell_frames) == (1, 6, 6)
    assert closed == [v]


def test_visit_open_at_track_end_is_closed():
    track, closed = feed([(0, 0)] * 10, [F("A", 0, 0, 20)])
    assert closed[0].exit_frame == 9


def test_frame_gap_breaks_run():
    flowers = [F("A", 0, 0, 20)]
    frames = [0, 1, 2, 3, 5, 6, 7, 8]
    track, _ = feed([(0, 0)] * 8, flowers, frames=frames)
    assert track.visits == []


def test_revisit_needs_intermediate_flower():
    flowers = [F("A", 0, 0, 20), F("B", 100, 0, 20)]
    a, b, out = (0, 0), (100, 0), (50, 50)
    track, _ = feed([a] * 7 + [out] * 2 + [a] * 7, flowers)
    assert [v.kind for v in track.visits] == [VisitKind.VISIT, VisitKind.VISIT]
    track, _ = feed([a] * 7 + [b] * 7 + [a] * 7, flowers)
    assert [v.kind for v in track.visits] == [VisitKind.VISIT, VisitKind.VISIT, VisitKind.REVISIT]


def test_points_are_labelled_with_containing_flower():
    track = InsectTrack(0, "10111000000", SpeciesClass.HONEYBEE)
    det = VisitDetector(5)
    points = [TrackPoint(0, 0.0, 0.0, Source.DEEP), TrackPoint(1, 100.0, 100.0, Source.DEEP)]
    for p in points:
        det.update(track, p, [F("A", 0, 0, 20)])
    assert [p.flower_id for p in points] == ["A", None]


@given(st.lists(st.sampled_from([None, "A", "B", "C"]), max_size=80), st.integers(1, 6))
def test_incremental_detector_matches_batch_oracle(labels, dwell):
    flowers = [F("A", 0, 0, 10), F("B", 100, 0, 10), F("C", 200, 0, 10)]
    pos = {"A": (0, 0), "B": (100, 0), "C": (200, 0), None: (50, 50)}
    track, _ = feed([pos[lab] for lab in labels], flowers, dwell)
    got = [(v.flower_id, v.entry_frame, v.exit_frame, v.kind.value) for v in track.visits]
    assert got == dwell_visits(labels, dwell)
