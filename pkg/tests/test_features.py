import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embedkit.container import load_tensors, require, save_tensors
from embedkit.errors import DatasetError, LoadError, ManifestError
from embedkit.features import (FVEC_HEADER, assign_ground_truth, load_blob, load_manifest,
                               load_split, window_clips, write_blob)


def test_blob_roundtrip(tmp_path):
    p = tmp_path / "a.fvec"
    write_blob(p, np.array([[1.0, 2.0, 3.0]]))
    out = load_blob(p)
    assert out.shape == (1, 3) and out.dtype == np.float64
    assert np.array_equal(out, [[1.0, 2.0, 3.0]])


def test_blob_float32_values_roundtrip_exactly(tmp_path):
    vals = np.random.default_rng(0).normal(size=(4, 7)).astype(np.float32)
    write_blob(tmp_path / "b.fvec", vals)
    assert np.array_equal(load_blob(tmp_path / "b.fvec"), vals.astype(np.float64))


def test_blob_wide_row(tmp_path):
    write_blob(tmp_path / "w.fvec", np.ones((1, 4096)))
    assert load_blob(tmp_path / "w.fvec").shape == (1, 4096)


def test_blob_truncated(tmp_path):
    p = tmp_path / "t.fvec"
    p.write_bytes(FVEC_HEADER.pack(b"FVEC", 2, 3, 0) + np.ones(3, "<f4").tobytes())
    with pytest.raises(LoadError, match="offset"):
        load_blob(p)


def test_blob_bad_magic_trailing_nonfinite(tmp_path):
    p = tmp_path / "m.fvec"
    p.write_bytes(FVEC_HEADER.pack(b"XVEC", 1, 1, 0) + np.ones(1, "<f4").tobytes())
    with pytest.raises(LoadError, match="magic"):
        load_blob(p)
    p.write_bytes(FVEC_HEADER.pack(b"FVEC", 1, 1, 0) + np.ones(2, "<f4").tobytes())
    with pytest.raises(LoadError, match="trailing"):
        load_blob(p)
    p.write_bytes(FVEC_HEADER.pack(b"FVEC", 1, 2, 0) + np.array([1, np.nan], "<f4").tobytes())
    with pytest.raises(LoadError, match="offset 20"):
        load_blob(p)


def test_window_counts():
    assert len(window_clips(np.zeros((12, 2)), 5, 1)) == 8
    assert len(window_clips(np.zeros((5, 2)), 5)) == 1
    short = window_clips(np.zeros((3, 2)), 5)
    assert len(short) == 1 and short[0].frames.shape == (3, 2)
    with pytest.raises(DatasetError):
        window_clips(np.zeros((0, 2)), 5)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.integers(1, 10), st.integers(1, 6))
def test_window_count_formula(m, window, stride):
    clips = window_clips(np.arange(m, dtype=float)[:, None], window, stride)
    if m >= window:
        assert len(clips) == (m - window) // stride + 1
        assert all(len(c.frames) == window for c in clips)
        assert [c.start for c in clips] == list(range(0, m - window + 1, stride))
    else:
        assert len(clips) == 1


def test_ground_truth_cap():
    sids = [f"s{k}" for k in range(7)]
    pairs = assign_ground_truth([0], [0] * 7, sids, cap=5)
    assert [p.sentence for p in pairs] == [0, 1, 2, 3, 4]
    pairs = assign_ground_truth([0], [0] * 3, sids[:3], cap=5)
    assert len(pairs) == 3


def test_ground_truth_shared_pool_and_id_order():
    sids = ["b", "a", "c"]
    pairs = assign_ground_truth([0, 0], [0, 0, 0], sids, cap=2)
    by_clip = {}
    for p in pairs:
        by_clip.setdefault(p.clip, []).append(sids[p.sentence])
    assert by_clip[0] == by_clip[1] == ["a", "b"]


def _edit(manifest_path, fn):
    raw = json.loads(manifest_path.read_text())
    fn(raw)
    manifest_path.write_text(json.dumps(raw))


@pytest.fixture
def small(tmp_path):
    from embedkit.synth import synth_dataset
    return synth_dataset(tmp_path, n_videos=3, val_videos=1, test_videos=1, d_v=6, d_c=8,
                         frames_per_video=3, sentences_per_video=2, d_w=4)


def test_manifest_loads(small):
    m = load_manifest(small)
    assert (m.d_v, m.d_c) == (6, 8)
    assert [v.video_id for v in m.videos_in("train")] == ["vid0000", "vid0001", "vid0002"]


@pytest.mark.parametrize("edit, match", [
    (lambda r: r["videos"].append(dict(r["videos"][0])), "duplicate"),
    (lambda r: r["videos"][0].update(split="dev"), "split"),
    (lambda r: r["sentences"][0].update(video_id="nope"), "unknown video"),
    (lambda r: r.update(sentences=[s for s in r["sentences"] if s["video_id"] != "vid0001"]),
     "without sentences"),
    (lambda r: r.update(d_v=7), "dim"),
    (lambda r: r["sentences"][0].pop("tokens"), "tokens"),
])
def test_manifest_validation(small, edit, match):
    _edit(small, edit)
    with pytest.raises(ManifestError, match=match):
        load_manifest(small)


def test_manifest_rejects_image_dim(small, tmp_path):
    write_blob(tmp_path / "images" / "vid0000_s00.fvec", np.ones((2, 5)))
    with pytest.raises(ManifestError, match="web-image dim"):
        load_manifest(small)


def test_split_loading(small):
    m = load_manifest(small)
    d = load_split(m, "train", window=2)
    assert len(d.video_ids) == 3 and len(d.clips) == 6
    assert d.sentence_vectors.shape == (6, 8)
    assert all(z.shape == (2, 6) for z in d.web_images)
    # each clip pairs with both sentences of its video
    assert len(d.positives) == 12
    with pytest.raises(DatasetError):
        load_split(m, "nosuch")


def test_precomputed_vectors_match_encoder(small):
    m = load_manifest(small)
    with_vec = load_split(m, "train")
    for s in m.sentences:
        s.precomputed_sentence_vector_path = None
    encoded = load_split(m, "train")
    assert np.array_equal(with_vec.sentence_vectors.astype(np.float32),
                          encoded.sentence_vectors.astype(np.float32))


def test_container_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    t = {"b": rng.normal(size=(2, 3)), "a": rng.normal(size=4), "s": np.array(2.5)}
    save_tensors(tmp_path / "c.ntsr", t, {"kind": "x", "n": 3})
    back, meta = load_tensors(tmp_path / "c.ntsr")
    assert meta == {"kind": "x", "n": 3}
    assert set(back) == set(t) and all(np.array_equal(back[k], t[k]) for k in t)


def test_container_errors(tmp_path):
    p = tmp_path / "c.ntsr"
    save_tensors(p, {"w": np.ones(3)}, {})
    raw = p.read_bytes()
    p.write_bytes(raw[:-10])
    with pytest.raises(LoadError, match="truncated"):
        load_tensors(p)
    p.write_bytes(raw + b"x")
    with pytest.raises(LoadError, match="trailing"):
        load_tensors(p)
    p.write_bytes(b"ABCD" + raw[4:])
    with pytest.raises(LoadError, match="magic"):
        load_tensors(p)
    with pytest.raises(LoadError, match="v_1"):
        require({"w": 1}, ["w", "v_1"], p)
