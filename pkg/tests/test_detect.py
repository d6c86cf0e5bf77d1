import datetime as dt
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from oracles import flood_fill_components, knn_foreground
from pollitrack.core import Detection, ParseError, Source, SpeciesClass, StreamError, VideoMeta
from pollitrack.detect import (
    BackgroundModel,
    Choice,
    DetectionStream,
    arbitrate,
    count_regions,
    downscale,
    extract_blobs,
    format_record,
    iter_frames,
    parse_record,
    read_all_detections,
    write_packed_frames,
)


# -- background model -------------------------------------------------------

def test_static_scene_is_all_background():
    bg = BackgroundModel()
    frame = np.random.default_rng(0).integers(0, 255, (40, 50), dtype=np.uint8)
    for f in range(100):
        assert not bg.update(frame, f).mask.any()


def test_moving_square_mask_and_centroid():
    bg = BackgroundModel()
    base = np.full((120, 160), 100, np.uint8)
    for f in range(60):
        bg.update(base, f)
    for k in range(20):
        img = base.copy()
        x0 = 20 + 3 * k
        img[50:70, x0:x0 + 20] = 220
        blobs = extract_blobs(bg.update(img, 60 + k), 40)
        assert len(blobs) == 1
        assert abs(blobs[0].x - (x0 + 10)) <= 2 and abs(blobs[0].y - 60) <= 2


def test_illumination_step_clears_within_history():
    bg = BackgroundModel(history=50, k=3, threshold=12, stride=2)
    base = np.full((30, 30), 90, np.uint8)
    for f in range(50):
        bg.update(base, f)
    for k in range(50):
        if not bg.update(base + 30, 50 + k).mask.any():
            break
    else:
        pytest.fail("step never absorbed")


def test_frame_shape_change_is_stream_error():
    bg = BackgroundModel()
    bg.update(np.zeros((10, 10), np.uint8))
    with pytest.raises(StreamError):
        bg.update(np.zeros((10, 11), np.uint8))


def test_invalid_parameters():
    with pytest.raises(ValueError):
        BackgroundModel(history=2, k=3)
    with pytest.raises(ValueError):
        BackgroundModel(stride=0)
    with pytest.raises(ValueError):
        BackgroundModel(stride=2, foreground_stride=3)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 255), min_size=6, max_size=6), st.integers(0, 255))
def test_classifier_matches_per_pixel_rule(history, value):
    bg = BackgroundModel(history=6, k=3, threshold=12, stride=1, foreground_stride=1)
    for f, h in enumerate(history):
        bg.update(np.full((1, 1), h, np.uint8), f)
    # after the seed frame plus 6 writes the ring holds exactly ``history``
    got = bool(bg.classify(np.full((1, 1), value, np.uint8))[0, 0])
    assert got == knn_foreground(history, value, 3, 12)


# -- blobs ------------------------------------------------------------------

def test_empty_mask_gives_no_blobs():
    assert extract_blobs(np.zeros((10, 10), bool), 1) == []


def test_square_blob_extent_and_tags():
    mask = np.zeros((50, 50), bool)
    mask[10:30, 5:25] = True
    (b,) = extract_blobs(mask, 40)
    assert (b.w, b.h) == (20, 20)
    assert (b.x, b.y) == (15.0, 20.0)
    assert b.source is Source.SEGMENTATION and b.species is SpeciesClass.UNKNOWN and b.confidence == 1.0


def test_diagonal_touch_is_one_component():
    mask = np.zeros((20, 20), bool)
    mask[2:6, 2:6] = True
    mask[6:10, 6:10] = True
    assert len(extract_blobs(mask, 1)) == 1


def test_min_area_must_be_positive():
    with pytest.raises(ValueError):
        extract_blobs(np.zeros((3, 3), bool), 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_blobs_match_flood_fill(seed, min_area):
    mask = np.random.default_rng(seed).random((12, 15)) < 0.3
    comps = [c for c in flood_fill_components(mask.tolist()) if len(c) >= min_area]
    blobs = extract_blobs(mask, min_area)
    assert len(blobs) == len(comps) == count_regions(mask, min_area)
    want = sorted((round(sum(c for _, c in p) / len(p) + 0.5, 9), round(sum(r for r, _ in p) / len(p) + 0.5, 9))
                  for p in comps)
    got = sorted((round(b.x, 9), round(b.y, 9)) for b in blobs)
    assert got == want


def test_downscale_block_mean():
    frame = np.arange(16, dtype=np.uint8).reshape(4, 4)
    small = downscale(frame, 2)
    assert small.tolist() == [[2, 4], [10, 12]]
    assert downscale(frame, 1) is frame


# -- arbitration ------------------------------------------------------------

def test_arbitration_rules():
    assert arbitrate([], True, 1, 1) is Choice.SEGMENTATION
    assert arbitrate([], True, 0, 1) is Choice.DEEP
    assert arbitrate([], True, 2, 5) is Choice.DEEP
    assert arbitrate([], True, 2, 2, flower_epoch_due=True) is Choice.DEEP
    assert arbitrate([], False, 0, 3) is Choice.SEGMENTATION


# -- deep detection records -------------------------------------------------

def test_parse_record_example():
    vid, det = parse_record('{"frame": 10, "class": "honeybee", "cx": 100, "cy": 200, "w": 40, "h": 30, "conf": 0.9}')
    assert vid is None
    assert det == Detection(10, SpeciesClass.HONEYBEE, 100.0, 200.0, 40.0, 30.0, 0.9, Source.DEEP)


@pytest.mark.parametrize("line", [
    '{"frame": 1, "class": "honeybee", "cx": 1, "cy": 1, "w": 4, "h": 3, "conf": 1.2}',
    '{"frame": 1, "class": "honeybee", "cx": 1, "cy": 1, "w": 4, "h": 3}',
    '{"frame": 1.5, "class": "honeybee", "cx": 1, "cy": 1, "w": 4, "h": 3, "conf": 0.5}',
    '{"frame": 1, "class": "beetle", "cx": 1, "cy": 1, "w": 4, "h": 3, "conf": 0.5}',
    'not json',
])
def test_parse_errors_carry_line_number(line):
    with pytest.raises(ParseError) as err:
        parse_record(line, 7)
    assert err.value.line == 7


def test_out_of_frame_center_rejected():
    meta = VideoMeta(1, dt.date(2021, 1, 1), dt.time(0, 0), frame_width=100, frame_height=100)
    with pytest.raises(ParseError):
        parse_record('{"frame": 0, "class": "flower", "cx": 150, "cy": 1, "w": 4, "h": 3, "conf": 0.5}', 1, meta)


@given(st.integers(0, 10**6), st.sampled_from(list(SpeciesClass)[:5]), st.floats(0, 1919), st.floats(0, 1079),
       st.floats(1, 200), st.floats(1, 200), st.floats(0, 1))
def test_format_parse_round_trip(frame, species, x, y, w, h, conf):
    det = Detection(frame, species, round(x, 3), round(y, 3), round(w, 3), round(h, 3), round(conf, 4), Source.DEEP)
    vid, back = parse_record(format_record(det, "v1"))
    assert vid == "v1" and back == det


def _line(frame, cls="honeybee"):
    return json.dumps({"frame": frame, "class": cls, "cx": 5, "cy": 5, "w": 4, "h": 3, "conf": 0.5})


def test_stream_groups_by_frame_and_skips():
    s = DetectionStream([_line(0), _line(0), _line(2), _line(5), ""])
    assert len(s.get(0)) == 2
    assert s.get(1) == []
    assert s.get(3) == []  # frame 2 skipped and discarded
    assert len(s.get(5)) == 1
    assert s.exhausted


def test_stream_out_of_order_record():
    s = DetectionStream([_line(3), _line(1)])
    with pytest.raises(StreamError):
        s.get(3)
        s.get(4)


def test_stream_backwards_query():
    s = DetectionStream([_line(3)])
    s.get(3)
    with pytest.raises(StreamError):
        s.get(2)


def test_stream_filters_video_id(tmp_path):
    path = tmp_path / "d.jsonl"
    recs = [json.loads(_line(0)) | {"video_id": v} for v in ("a", "b", "a")]
    path.write_text("".join(json.dumps(r) + "\n" for r in recs))
    assert len(read_all_detections(path, "a")) == 2
    assert len(read_all_detections(path)) == 3


# -- raw frames -------------------------------------------------------------

def test_packed_frames_round_trip(tmp_path):
    frames = [np.full((6, 8), i, np.uint8) for i in range(5)]
    path = tmp_path / "f.bin"
    write_packed_frames(path, frames, 8, 6, 5)
    back = list(iter_frames(path))
    assert len(back) == 5 and all((a == b).all() for a, b in zip(frames, back))
    with pytest.raises(StreamError):
        write_packed_frames(tmp_path / "g.bin", frames, 8, 6, 4)


def test_truncated_packed_stream(tmp_path):
    path = tmp_path / "f.bin"
    write_packed_frames(path, [np.zeros((4, 4), np.uint8)] * 3, 4, 4, 3)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(StreamError):
        list(iter_frames(path))


def test_pgm_directory_in_numeric_order(tmp_path):
    for i in (10, 2, 1):
        Image.fromarray(np.full((4, 5), i, np.uint8)).save(tmp_path / f"frame_{i}.pgm")
    values = [int(f[0, 0]) for f in iter_frames(tmp_path)]
    assert values == [1, 2, 10]
