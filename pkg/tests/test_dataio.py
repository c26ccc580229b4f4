import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mreg.dataio import (bilinear_resize, crop_and_resize, load_split, make_bag, split_dataset)
from mreg.synthgen import gen_dataset


def test_identity_crop_and_resize(rng):
    frames = rng.integers(0, 256, size=(5, 20, 24, 3), dtype=np.uint8)
    out = crop_and_resize(frames, (0, 0, 24, 20), (20, 24))
    np.testing.assert_array_equal(out, frames.transpose(0, 3, 1, 2))
    assert out.dtype == np.uint8


def test_quarter_roi_keeps_output_dims(rng):
    frames = rng.integers(0, 256, size=(3, 64, 64, 3), dtype=np.uint8)
    out = crop_and_resize(frames, (10, 5, 32, 32), (48, 48))
    assert out.shape == (3, 3, 48, 48)


def test_roi_outside_frame_rejected(rng):
    frames = rng.integers(0, 256, size=(3, 16, 16, 3), dtype=np.uint8)
    for roi in [(-1, 0, 8, 8), (10, 10, 8, 8), (0, 0, 0, 4)]:
        with pytest.raises(ValueError):
            crop_and_resize(frames, roi, (8, 8))


def test_bilinear_checkerboard_hand_grid():
    board = np.array([[0.0, 1.0], [1.0, 0.0]])
    # half-pixel centres: output k samples input coordinate (k + 0.5) / 2 - 0.5, clamped
    coords = [0.0, 0.25, 0.75, 1.0]
    expected = np.empty((4, 4))
    for i, sy in enumerate(coords):
        for j, sx in enumerate(coords):
            expected[i, j] = (1 - sy) * sx * 1.0 + sy * (1 - sx) * 1.0
    np.testing.assert_allclose(bilinear_resize(board, (4, 4)), expected, atol=1e-12)
    np.testing.assert_allclose(expected[1], [0.25, 0.375, 0.625, 0.75])


def test_make_bag_exact_fit():
    frames = np.arange(48)[:, None]
    bag = make_bag(frames, 3, 16)
    assert bag.frame_ranges == [(0, 16), (16, 32), (32, 48)]
    np.testing.assert_array_equal(bag.clips[1, :, 0], np.arange(16, 32))


def test_make_bag_truncates_long_video():
    bag = make_bag(np.arange(60)[:, None], 3, 16)
    assert bag.frame_ranges == [(0, 16), (16, 32), (32, 48)]
    assert bag.clips.max() == 47


def test_make_bag_cyclic_padding():
    bag = make_bag(np.arange(40)[:, None], 3, 16)
    np.testing.assert_array_equal(bag.clips[2, :, 0], list(range(32, 40)) + list(range(8)))


def test_make_bag_errors():
    with pytest.raises(ValueError):
        make_bag(np.zeros((0, 3)), 3, 16)
    with pytest.raises(ValueError):
        make_bag(np.zeros((10, 3)), 0, 16)


@given(st.integers(1, 120), st.integers(1, 5), st.integers(1, 20))
@settings(max_examples=60, deadline=None)
def test_bag_shape_and_non_overlap(n_frames, n_inst, clip_len):
    frames = np.zeros((n_frames, 3, 4, 4), dtype=np.uint8)
    bag = make_bag(frames, n_inst, clip_len)
    assert bag.clips.shape == (n_inst, clip_len, 3, 4, 4)
    for a in range(n_inst):
        assert bag.frame_ranges[a][1] - bag.frame_ranges[a][0] == clip_len
        for b in range(a + 1, n_inst):
            ra, rb = bag.frame_ranges[a], bag.frame_ranges[b]
            assert ra[1] <= rb[0] or rb[1] <= ra[0]


def _manifest(counts):
    return [{"id": f"g{g}_{k}", "grade": g, "split": "train"}
            for g, n in enumerate(counts) for k in range(n)]


def test_split_all_train():
    out = split_dataset(_manifest([4, 3, 2]), (1.0, 0.0, 0.0))
    assert {r["split"] for r in out} == {"train"}


def test_split_largest_remainder():
    out = split_dataset(_manifest([10]), (0.5, 0.2, 0.3))
    assert [sum(r["split"] == s for r in out) for s in ("train", "val", "test")] == [5, 2, 3]


def test_split_reproduces_clinical_grade0_counts():
    # grade 0: 965 cases split 450 / 112 / 403
    out = split_dataset(_manifest([965]), (450 / 965, 112 / 965, 403 / 965), seed=4)
    assert [sum(r["split"] == s for r in out) for s in ("train", "val", "test")] == [450, 112, 403]


def test_split_per_grade_clinical_counts():
    fr = {0: (450 / 965, 112 / 965, 403 / 965), 1: (296 / 677, 74 / 677, 307 / 677),
          2: (103 / 226, 25 / 226, 98 / 226)}
    out = split_dataset(_manifest([965, 677, 226]), fr, seed=0)
    got = {(g, s): sum(1 for r in out if r["grade"] == g and r["split"] == s)
           for g in range(3) for s in ("train", "val", "test")}
    assert [got[(1, s)] for s in ("train", "val", "test")] == [296, 74, 307]
    assert [got[(2, s)] for s in ("train", "val", "test")] == [103, 25, 98]


def test_split_deterministic_and_stratified():
    m = _manifest([7, 5, 3])
    a = split_dataset(m, (0.6, 0.2, 0.2), seed=9)
    b = split_dataset(m, (0.6, 0.2, 0.2), seed=9)
    assert a == b
    assert all(r["split"] == "train" for r in m)  # input untouched


def test_split_rejects_bad_fractions():
    with pytest.raises(ValueError):
        split_dataset(_manifest([3]), (0.5, 0.2, 0.2))


def test_load_split_from_disk(tmp_path):
    gen_dataset({"train": [1, 1, 0], "val": [0, 0, 1]}, tmp_path, seed=0)
    X, y, recs = load_split(tmp_path, "train", out_hw=(48, 48))
    assert X.shape == (2, 3, 16, 3, 48, 48) and X.dtype == np.uint8
    assert list(y) == [0, 1]
    import shutil
    shutil.rmtree(tmp_path / recs[0]["dir"])
    with pytest.raises(FileNotFoundError, match=recs[0]["id"]):
        load_split(tmp_path, "train", out_hw=(48, 48))
