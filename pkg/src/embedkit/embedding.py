"""Video, web-image and sentence embedding branches and their fusion.

Each branch is the same two-layer tanh chain averaged over its inputs (frames,
web images, or the single sentence vector).  Forward passes return a cache
that the matching backward pass consumes; gradients are derived by hand.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .numeric import DTYPE, Rng, check_dropout_ratio, dropout_mask, glorot_uniform

BRANCHES = ("v", "z", "s")
PARAM_NAMES = tuple(f"{kind}_{br}{layer}" for br in BRANCHES for layer in (1, 2)
                    for kind in ("W", "b"))


@dataclass(frozen=True)
class EmbedDims:
    d_v: int
    d_c: int
    d_h: int
    d_e: int

    def __post_init__(self):
        for k, v in asdict(self).items():
            if int(v) < 1:
                raise ConfigError(f"{k} must be positive, got {v}")

    def shapes(self) -> dict:
        out = {}
        for br, d_in in (("v", self.d_v), ("z", self.d_v), ("s", self.d_c)):
            out[f"W_{br}1"] = (self.d_h, d_in)
            out[f"b_{br}1"] = (self.d_h,)
            out[f"W_{br}2"] = (self.d_e, self.d_h)
            out[f"b_{br}2"] = (self.d_e,)
        return out


PRESETS = {
    "vgg": EmbedDims(d_v=4096, d_c=4800, d_h=1000, d_e=300),
    "googlenet": EmbedDims(d_v=1024, d_c=4800, d_h=600, d_e=300),
}


def init_params(dims: EmbedDims, rng: Rng) -> dict:
    """Glorot-uniform weights, zero biases."""
    params = {}
    for name, shape in dims.shapes().items():
        if name.startswith("W"):
            params[name] = glorot_uniform(rng, *shape)
        else:
            params[name] = np.zeros(shape)
    return params


def zero_params(dims: EmbedDims) -> dict:
    return {name: np.zeros(shape) for name, shape in dims.shapes().items()}


def check_params(params: dict, dims: EmbedDims) -> None:
    for name, shape in dims.shapes().items():
        if name not in params:
            raise ShapeError(f"missing embedding parameter {name}")
        if params[name].shape != shape:
            raise ShapeError(f"{name} has shape {params[name].shape}, config expects {shape}")


def dims_of(params: dict) -> EmbedDims:
    return EmbedDims(d_v=params["W_v1"].shape[1], d_c=params["W_s1"].shape[1],
                     d_h=params["W_v1"].shape[0], d_e=params["W_v2"].shape[0])


def _masks(rng, ratio, n, d_in, d_h):
    return dropout_mask((n, d_in), ratio, rng), dropout_mask((n, d_h), ratio, rng)


def _set_mean(rows: np.ndarray) -> np.ndarray:
    # summing each column in sorted order makes the mean bit-identical under
    # any permutation of the rows
    return np.sort(rows, axis=0).sum(axis=0) / rows.shape[0]


def _chain_forward(params, br, X, ratio, rng):
    W1, b1 = params[f"W_{br}1"], params[f"b_{br}1"]
    W2, b2 = params[f"W_{br}2"], params[f"b_{br}2"]
    X = np.asarray(X, dtype=DTYPE)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeError(
            f"branch {br}: expected a nonempty (n, {W1.shape[1]}) stack, got {X.shape}")
    if X.shape[1] != W1.shape[1]:
        raise ShapeError(f"branch {br}: input dim {X.shape[1]} != {W1.shape[1]}")
    m_in, m_h = _masks(rng, ratio, X.shape[0], W1.shape[1], W1.shape[0])
    xd = X if m_in is None else X * m_in
    h = np.tanh(xd @ W1.T + b1)
    hd = h if m_h is None else h * m_h
    out = np.tanh(hd @ W2.T + b2)
    cache = dict(br=br, xd=xd, h=h, hd=hd, m_h=m_h, out=out)
    return _set_mean(out), cache


def _chain_backward(params, g, cache) -> dict:
    br = cache["br"]
    out, h, hd, xd, m_h = cache["out"], cache["h"], cache["hd"], cache["xd"], cache["m_h"]
    n = out.shape[0]
    du2 = (np.broadcast_to(g / n, out.shape)) * (1.0 - out * out)
    grads = {f"W_{br}2": du2.T @ hd, f"b_{br}2": du2.sum(axis=0)}
    dh = du2 @ params[f"W_{br}2"]
    if m_h is not None:
        dh = dh * m_h
    du1 = dh * (1.0 - h * h)
    grads[f"W_{br}1"] = du1.T @ xd
    grads[f"b_{br}1"] = du1.sum(axis=0)
    return grads


def _mode_args(mode, ratio, rng):
    if mode == "infer":
        return 0.0, None
    if mode != "train":
        raise ConfigError(f"unknown mode {mode!r}")
    check_dropout_ratio(ratio)
    return ratio, rng


def video_forward(frames, params, mode="infer", ratio=0.5, rng=None):
    """phi_v for one clip; returns ``(embedding, cache)``."""
    ratio, rng = _mode_args(mode, ratio, rng)
    frames = np.asarray(frames, dtype=DTYPE)
    if frames.ndim != 2 or len(frames) == 0:
        raise ShapeError(f"clip must be a nonempty (M, d_v) array, got shape {frames.shape}")
    emb, cache = _chain_forward(params, "v", frames, ratio, rng)
    return emb, {"kind": "video", "v": cache}


def sentence_forward(s_Y, images, params, mode="infer", ratio=0.5, rng=None):
    """phi_s for one sentence and its web images; returns ``(embedding, cache)``.

    With no web images the sentence branch alone is the embedding.
    """
    ratio, rng = _mode_args(mode, ratio, rng)
    s_Y = np.asarray(s_Y, dtype=DTYPE)
    if s_Y.ndim != 1:
        raise ShapeError(f"sentence vector must be 1-D, got {s_Y.shape}")
    e_s, cs = _chain_forward(params, "s", s_Y[None, :], ratio, rng)
    cache = {"kind": "sentence", "s": cs, "z": None}
    images = np.asarray(images, dtype=DTYPE) if images is not None else None
    if images is None or images.size == 0:
        return e_s, cache
    e_z, cz = _chain_forward(params, "z", images.reshape(-1, params["W_z1"].shape[1]), ratio, rng)
    cache["z"] = cz
    return fuse(e_s, e_z), cache


def branch_gradients(adjoint, cache, params) -> dict:
    """Gradients of ``adjoint . embedding`` for the parameters the cache touched."""
    if cache is None:
        raise ValueError("branch_gradients needs the forward cache")
    adjoint = np.asarray(adjoint, dtype=DTYPE)
    if cache["kind"] == "video":
        return _chain_backward(params, adjoint, cache["v"])
    if cache["z"] is None:
        return _chain_backward(params, adjoint, cache["s"])
    grads = _chain_backward(params, 0.5 * adjoint, cache["s"])
    grads.update(_chain_backward(params, 0.5 * adjoint, cache["z"]))
    return grads


def embed_video(X, params, mode="infer", ratio=0.5, rng=None) -> np.ndarray:
    return video_forward(X, params, mode, ratio, rng)[0]


def embed_image_set(Z, params, mode="infer", ratio=0.5, rng=None) -> np.ndarray:
    ratio, rng = _mode_args(mode, ratio, rng)
    return _chain_forward(params, "z", Z, ratio, rng)[0]


def embed_sentence_branch(s_Y, params, mode="infer", ratio=0.5, rng=None) -> np.ndarray:
    ratio, rng = _mode_args(mode, ratio, rng)
    s_Y = np.asarray(s_Y, dtype=DTYPE)
    if s_Y.shape != (params["W_s1"].shape[1],):
        raise ShapeError(f"sentence vector {s_Y.shape} != ({params['W_s1'].shape[1]},)")
    return _chain_forward(params, "s", s_Y[None, :], ratio, rng)[0]


def embed_sentence(s_Y, images, params, mode="infer", ratio=0.5, rng=None) -> np.ndarray:
    return sentence_forward(s_Y, images, params, mode, ratio, rng)[0]


def fuse(e_s, e_z=None) -> np.ndarray:
    e_s = np.asarray(e_s, dtype=DTYPE)
    if e_z is None:
        return e_s.copy()
    e_z = np.asarray(e_z, dtype=DTYPE)
    if e_s.shape != e_z.shape:
        raise ShapeError(f"fuse: e_s{e_s.shape} vs e_z{e_z.shape}")
    return 0.5 * (e_s + e_z)


def pair_distance(a, b) -> float:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise ShapeError(f"pair_distance: {a.shape} vs {b.shape}")
    diff = a - b
    return float(diff @ diff)


# Inference-only batch paths used by evaluation.

def _chain_infer(params, br, X):
    h = np.tanh(X @ params[f"W_{br}1"].T + params[f"b_{br}1"])
    return np.tanh(h @ params[f"W_{br}2"].T + params[f"b_{br}2"])


def _group_mean(rows, counts):
    counts = list(counts)
    if len(set(counts)) == 1:
        m = counts[0]
        grouped = np.sort(rows.reshape(len(counts), m, -1), axis=1)
        return grouped.sum(axis=1) / m
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return np.stack([_set_mean(rows[a:b]) for a, b in zip(offsets[:-1], offsets[1:])])


def embed_clips(clips, params) -> np.ndarray:
    """phi_v for a list of (M_i, d_v) frame arrays, inference mode."""
    if not clips:
        return np.zeros((0, params["W_v2"].shape[0]))
    counts = [len(c) for c in clips]
    if min(counts) == 0:
        raise ShapeError("empty clip")
    return _group_mean(_chain_infer(params, "v", np.concatenate(clips)), counts)


def embed_sentences(vectors, images, params) -> np.ndarray:
    """phi_s for stacked sentence vectors and per-sentence image sets, inference mode."""
    vectors = np.asarray(vectors, dtype=DTYPE)
    e_s = _chain_infer(params, "s", vectors)
    have = [j for j, z in enumerate(images) if len(z)]
    if not have:
        return e_s
    out = e_s.copy()
    e_z = _group_mean(_chain_infer(params, "z", np.concatenate([images[j] for j in have])),
                      [len(images[j]) for j in have])
    out[have] = 0.5 * (e_s[have] + e_z)
    return out
