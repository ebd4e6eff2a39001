import numpy as np
import pytest

import oracles
from embedkit.embedding import (PRESETS, EmbedDims, branch_gradients, embed_clips, embed_image_set,
                                embed_sentence, embed_sentence_branch, embed_sentences,
                                embed_video, fuse, init_params, pair_distance, sentence_forward,
                                zero_params)
from embedkit.errors import ConfigError, ShapeError
from embedkit.numeric import Rng

# math.tanh(math.tanh(0.5)) and math.tanh(math.tanh(1.0))
TANH2_HALF = 0.4318081805950961
TANH2_ONE = 0.6420149920119997

DIMS = EmbedDims(d_v=5, d_c=4, d_h=6, d_e=3)


def _params(seed=0, dims=DIMS):
    rng = Rng(seed)
    p = init_params(dims, rng)
    for k in p:
        if k.startswith("b"):
            p[k] = rng.normal(p[k].shape, 0.3)
    return p


def _unit_params():
    return {k: np.ones(s) if k.startswith("W") else np.zeros(s)
            for k, s in EmbedDims(1, 1, 1, 1).shapes().items()}


def test_zero_params_give_zero_embeddings():
    p = zero_params(DIMS)
    rng = Rng(0)
    assert np.array_equal(embed_video(rng.normal((3, 5)), p), np.zeros(3))
    assert np.array_equal(embed_image_set(rng.normal((2, 5)), p), np.zeros(3))
    assert np.array_equal(embed_sentence_branch(rng.normal(4), p), np.zeros(3))


def test_scalar_chains():
    p = _unit_params()
    assert embed_video(np.array([[0.5]]), p)[0] == pytest.approx(TANH2_HALF, abs=1e-15)
    assert embed_sentence_branch(np.array([1.0]), p)[0] == pytest.approx(TANH2_ONE, abs=1e-15)


def test_video_matches_oracle():
    p = _params(3)
    X = Rng(1).normal((4, 5))
    expect = oracles.chain(p["W_v1"].tolist(), p["b_v1"].tolist(), p["W_v2"].tolist(),
                           p["b_v2"].tolist(), X.tolist())
    assert np.allclose(embed_video(X, p), expect, atol=1e-14, rtol=0)


def test_permutation_invariance_exact():
    p = _params(1)
    rng = Rng(2)
    X, Z = rng.normal((5, 5)), rng.normal((3, 5))
    perm = [3, 0, 4, 2, 1]
    assert np.array_equal(embed_video(X[perm], p), embed_video(X, p))
    assert np.array_equal(embed_image_set(Z[[2, 0, 1]], p), embed_image_set(Z, p))
    assert np.array_equal(embed_clips([X[perm]], p), embed_clips([X], p))


def test_identical_images_collapse():
    p = _params(2)
    z = Rng(3).normal((1, 5))
    assert np.allclose(embed_image_set(np.repeat(z, 2, axis=0), p), embed_image_set(z, p),
                       atol=1e-15, rtol=0)


def test_sentence_branch_bounded():
    p = _params(4)
    S = Rng(5).normal((1000, 4), 3.0)
    out = np.stack([embed_sentence_branch(s, p) for s in S])
    assert np.all(np.abs(out) < 1.0)


def test_fuse():
    v = np.array([0.3, -0.1])
    assert np.array_equal(fuse(v, v), v)
    assert np.array_equal(fuse(v, -v), np.zeros(2))
    assert np.allclose(fuse(np.array([0.2, 0.4]), np.array([0.6, 0.0])), [0.4, 0.2])
    assert np.array_equal(fuse(v), v)
    with pytest.raises(ShapeError):
        fuse(v, np.zeros(3))


def test_sentence_without_images_is_branch_only():
    p = _params(5)
    s = Rng(6).normal(4)
    assert np.array_equal(embed_sentence(s, None, p), embed_sentence_branch(s, p))
    assert np.array_equal(embed_sentence(s, np.zeros((0, 5)), p), embed_sentence_branch(s, p))


def test_pair_distance():
    a = np.array([0.1, -0.4, 0.7])
    assert pair_distance(a, a) == 0.0
    e = np.eye(4)
    assert pair_distance(e[0], e[1]) == 2.0
    rng = Rng(7)
    x, y = rng.normal(9), rng.normal(9)
    assert pair_distance(x, y) == pytest.approx(oracles.sqdist(x.tolist(), y.tolist()), abs=1e-12)
    assert pair_distance(np.ones(300), -np.ones(300)) <= 4 * 300


def test_batch_paths_match_single():
    p = _params(8)
    rng = Rng(9)
    clips = [rng.normal((m, 5)) for m in (1, 3, 2)]
    vecs = rng.normal((3, 4))
    imgs = [rng.normal((2, 5)), np.zeros((0, 5)), rng.normal((1, 5))]
    assert np.allclose(embed_clips(clips, p), [embed_video(c, p) for c in clips], atol=1e-15)
    same = clips[1:2] * 3
    assert np.array_equal(embed_clips(same, p)[0], embed_video(clips[1], p))
    assert np.allclose(embed_sentences(vecs, imgs, p),
                       [embed_sentence(v, z, p) for v, z in zip(vecs, imgs)], atol=1e-15)


def test_zero_adjoint_zero_gradients():
    p = _params(10)
    _, cache = sentence_forward(Rng(1).normal(4), Rng(2).normal((2, 5)), p)
    g = branch_gradients(np.zeros(3), cache, p)
    assert all(not v.any() for v in g.values())


def test_fuse_gradient_splits_adjoint():
    p = _params(11)
    s, Z = Rng(1).normal(4), Rng(2).normal((2, 5))
    adj = Rng(3).normal(3)
    _, fused = sentence_forward(s, Z, p)
    _, alone = sentence_forward(s, None, p)
    g_fused = branch_gradients(adj, fused, p)
    g_half = branch_gradients(0.5 * adj, alone, p)
    for k in ("W_s1", "b_s1", "W_s2", "b_s2"):
        assert np.allclose(g_fused[k], g_half[k], atol=1e-15)


def test_dims_and_presets():
    assert PRESETS["vgg"] == EmbedDims(4096, 4800, 1000, 300)
    assert PRESETS["googlenet"] == EmbedDims(1024, 4800, 600, 300)
    with pytest.raises(ConfigError):
        EmbedDims(0, 1, 1, 1)


def test_infer_is_deterministic_and_train_needs_valid_mode():
    p = _params(12)
    X = Rng(0).normal((3, 5))
    assert np.array_equal(embed_video(X, p), embed_video(X, p))
    with pytest.raises(ConfigError):
        embed_video(X, p, mode="eval")
    with pytest.raises(ShapeError):
        embed_video(np.zeros((0, 5)), p)
