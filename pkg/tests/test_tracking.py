import datetime as dt

import pytest

from pollitrack.core import Detection, EngineConfig, Source, SpeciesClass, StreamError, TrackPoint, VideoMeta
from pollitrack.detect import DetectionBatch, Mode
from pollitrack.tracking import (
    EventKind,
    InsectTrack,
    InsectTracker,
    TrackStatus,
    Verdict,
    finalize_track,
    predict_position,
    select_processing_mode,
)

META = VideoMeta(2, dt.date(2021, 3, 8), dt.time(11, 0, 0))
HB = SpeciesClass.HONEYBEE


def deep(f, x, y, species=HB):
    return Detection(f, species, x, y, 36, 28, 0.9, Source.DEEP)


def seg(f, x, y):
    return Detection(f, SpeciesClass.UNKNOWN, x, y, 36, 28, 1.0, Source.SEGMENTATION)


def run(tracker, frames):
    results = []
    for f, dets in frames:
        results.append(tracker.step(DetectionBatch(f, dets)))
    return results


def test_constant_velocity_prediction():
    t = InsectTrack(0, "x", HB, [TrackPoint(0, 0.0, 0.0, Source.DEEP), TrackPoint(2, 4.0, 2.0, Source.DEEP)])
    assert predict_position(t) == (6.0, 3.0)
    assert predict_position(t, 6) == (12.0, 6.0)
    single = InsectTrack(1, "y", HB, [TrackPoint(0, 5.0, 5.0, Source.DEEP)])
    assert predict_position(single, 10) == (5.0, 5.0)


def test_track_created_from_deep_detection_with_code():
    tr = InsectTracker(EngineConfig(), META)
    (res,) = run(tr, [(90, [deep(90, 100, 100)])])
    assert [e.kind for e in res.events] == [EventKind.CREATED]
    assert tr.tracks[0].track_code == "20811000300"


def test_segmentation_never_creates_tracks():
    tr = InsectTracker(EngineConfig(), META)
    run(tr, [(0, [seg(0, 100, 100)]), (1, [seg(1, 103, 100)])])
    assert tr.tracks == []


def test_flower_detections_are_ignored():
    tr = InsectTracker(EngineConfig(), META)
    run(tr, [(0, [deep(0, 100, 100, SpeciesClass.FLOWER)])])
    assert tr.tracks == []


def test_association_follows_motion_and_inherits_species():
    tr = InsectTracker(EngineConfig(), META)
    frames = [(0, [deep(0, 100, 100), deep(0, 400, 100)])]
    for f in range(1, 20):
        frames.append((f, [seg(f, 100 + 5 * f, 100), seg(f, 400 - 5 * f, 100)]))
    run(tr, frames)
    a, b = tr.tracks
    assert len(a.points) == len(b.points) == 20
    assert a.points[-1].x == 195 and b.points[-1].x == 305
    assert a.species is HB


def test_gate_rejects_far_detection_and_new_track_is_made():
    tr = InsectTracker(EngineConfig(), META)
    run(tr, [(0, [deep(0, 100, 100)]), (1, [deep(1, 600, 600)])])
    assert len(tr.tracks) == 2
    assert tr.tracks[0].status is TrackStatus.COASTING


def test_timeout_closes_track():
    cfg = EngineConfig()
    tr = InsectTracker(cfg, META)
    frames = [(0, [deep(0, 100, 100)])] + [(f, []) for f in range(1, 16)]
    results = run(tr, frames)
    closed = [e for r in results for e in r.events if e.kind is EventKind.CLOSED]
    assert len(closed) == 1 and closed[0].frame_index == cfg.track_timeout_frames
    assert tr.live == []


def test_expire_without_steps():
    tr = InsectTracker(EngineConfig(), META)
    run(tr, [(0, [deep(0, 100, 100)])])
    assert tr.expire(10).events == []
    res = tr.expire(40)
    assert res.events[0].frame_index == 15


def test_gap_is_interpolated():
    tr = InsectTracker(EngineConfig(), META)
    res = run(tr, [(0, [deep(0, 100, 100)]), (4, [deep(4, 108, 100)])])
    track, points = res[1].appended[0]
    assert [p.frame_index for p in points] == [1, 2, 3, 4]
    assert [p.source for p in points[:3]] == [Source.INTERPOLATED] * 3
    assert points[1].x == pytest.approx(104.0)


def test_gap_not_interpolated_when_disabled():
    tr = InsectTracker(EngineConfig(interpolate_gaps=False), META)
    run(tr, [(0, [deep(0, 100, 100)]), (4, [deep(4, 108, 100)])])
    assert [p.frame_index for p in tr.tracks[0].points] == [0, 4]


def test_frames_must_increase():
    tr = InsectTracker(EngineConfig(), META)
    run(tr, [(5, [])])
    with pytest.raises(StreamError):
        run(tr, [(5, [])])


def test_match_does_not_mutate():
    tr = InsectTracker(EngineConfig(), META)
    run(tr, [(0, [deep(0, 100, 100)])])
    a = tr.match([seg(1, 102, 100)], 1)
    assert a.pairs == [(0, 0)]
    assert len(tr.tracks[0].points) == 1


def test_culling_rule():
    cfg = EngineConfig()
    short = InsectTrack(0, "a", HB, [TrackPoint(f, 100.0 + f, 100.0, Source.DEEP) for f in range(5)])
    short.status = TrackStatus.CLOSED
    assert finalize_track(short, cfg) is Verdict.CULLED
    long_ = InsectTrack(1, "b", HB, [TrackPoint(f, 100.0 + 3 * f, 100.0, Source.DEEP) for f in range(5)])
    long_.status = TrackStatus.CLOSED
    assert finalize_track(long_, cfg) is Verdict.ACCEPTED
    visited = InsectTrack(2, "c", HB, [TrackPoint(0, 1.0, 1.0, Source.DEEP)], visits=[object()])
    visited.status = TrackStatus.CLOSED
    assert finalize_track(visited, cfg) is Verdict.ACCEPTED
    with pytest.raises(ValueError):
        finalize_track(InsectTrack(3, "d", HB, [TrackPoint(0, 1.0, 1.0, Source.DEEP)]), cfg)


def test_processing_mode():
    assert select_processing_mode(0, False) is Mode.LOWRES
    assert select_processing_mode(0, True) is Mode.FULL
    assert select_processing_mode(1, False) is Mode.FULL
