"""Finite-difference verification of every hand-derived gradient.

Each group draws a random small configuration, evaluates the analytic
gradient once, and compares it per parameter against central differences.
Dropout masks are frozen by re-seeding the RNG on every evaluation.
"""

import numpy as np

from .decoder import build_vocab, init_decoder, sequence_loss
from .embedding import EmbedDims, branch_gradients, init_params, sentence_forward, video_forward
from .numeric import Rng, grad_check
from .trainer import contrastive_loss

# parameter jitter on top of the default init; keeps biases nonzero without
# driving the tanh units into saturation, where gradients fall below the
# resolution of central differences
PERTURB = 0.3
# central differences at h=1e-5 carry ~1e-11 absolute error, so a relative
# test is only meaningful on gradient entries well above that; configurations
# with a nonzero entry below MIN_GRAD are redrawn (exact zeros are kept)
MIN_GRAD = 1e-5
MAX_DRAWS = 200

GROUPS = ("video_branch", "image_branch", "sentence_branch", "fusion",
          "contrastive_loss", "decoder_bptt", "softmax_xent")


def _random_dims(rng) -> EmbedDims:
    d = rng.integers(1, 9, size=4)
    return EmbedDims(d_v=int(d[0]), d_c=int(d[1]), d_h=int(d[2]), d_e=int(d[3]))


def _resolvable(grads, names) -> bool:
    for n in names:
        g = np.abs(grads[n])
        if np.any((g > 0.0) & (g < MIN_GRAD)):
            return False
    return True


def _check_all(f, params, grads, names, h) -> float:
    worst = 0.0
    for n in names:
        worst = max(worst, grad_check(lambda _x: f(), params[n], grads[n], h))
    return worst


def _conditioned(make, rng, h):
    """Draw configurations until every nonzero analytic entry is resolvable, then check it."""
    for _ in range(MAX_DRAWS):
        f, params, grads, names = make(rng)
        if _resolvable(grads, names):
            return _check_all(f, params, grads, names, h)
    raise RuntimeError(f"no well-conditioned configuration in {MAX_DRAWS} draws")


def _branch_case(group, rng, ratio=0.5):
    dims = _random_dims(rng)
    params = init_params(dims, rng)
    for k in params:
        params[k] += rng.normal(params[k].shape, PERTURB if k.startswith("b") else 0.0)
    mseed = int(rng.integers(0, 2**31))
    adj = rng.normal(dims.d_e)
    m, k = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    frames = rng.normal((m, dims.d_v))
    s_Y = rng.normal(dims.d_c)
    images = rng.normal((k, dims.d_v))

    if group == "video_branch":
        def fwd():
            return video_forward(frames, params, "train", ratio, Rng(mseed))
        names = [n for n in params if n.endswith(("v1", "v2"))]
    elif group == "image_branch":
        def fwd():
            return sentence_forward(s_Y, images, params, "train", ratio, Rng(mseed))
        names = [n for n in params if n.endswith(("z1", "z2"))]
    elif group == "sentence_branch":
        def fwd():
            return sentence_forward(s_Y, None, params, "train", ratio, Rng(mseed))
        names = [n for n in params if n.endswith(("s1", "s2"))]
    else:
        def fwd():
            return sentence_forward(s_Y, images, params, "infer")
        names = [n for n in params if not n.endswith(("v1", "v2"))]

    emb, cache = fwd()
    grads = branch_gradients(adj, cache, params)

    def f():
        return float(adj @ fwd()[0])
    return f, params, grads, names


def _loss_case(rng):
    dims = _random_dims(rng)
    params = init_params(dims, rng)
    for k in params:
        params[k] += rng.normal(params[k].shape, PERTURB if k.startswith("b") else 0.0)
    n_neg = int(rng.integers(1, 4))
    ratio = 0.5 if rng.random(1)[0] < 0.5 else 0.0

    def clip():
        return rng.normal((int(rng.integers(1, 4)), dims.d_v))

    def sent():
        k = int(rng.integers(0, 4))
        return rng.normal(dims.d_c), (rng.normal((k, dims.d_v)) if k else None)

    pos_clip = clip()
    pos_s, pos_z = sent()
    negs_s = [sent() for _ in range(n_neg)]
    negs_v = [clip() for _ in range(n_neg)]
    mseed = int(rng.integers(0, 2**31))

    def run(alpha):
        return contrastive_loss(pos_clip, pos_s, pos_z, negs_s, negs_v, alpha, params,
                                "train", ratio, Rng(mseed))

    # margin placed in the widest gap between the distances the loss sees, away from any kink
    r = Rng(mseed)
    phi_v = video_forward(pos_clip, params, "train", ratio, r)[0]
    phi_s = sentence_forward(pos_s, pos_z, params, "train", ratio, r)[0]
    es = [sentence_forward(s, z, params, "train", ratio, r)[0] for s, z in negs_s]
    ev = [video_forward(x, params, "train", ratio, r)[0] for x in negs_v]
    ds = sorted([float(((phi_v - e) ** 2).sum()) for e in es]
                + [float(((e - phi_s) ** 2).sum()) for e in ev])
    ds = [0.0] + ds + [ds[-1] + 2.0]
    alpha = max((b - a, 0.5 * (a + b)) for a, b in zip(ds, ds[1:]))[1]
    _, grads = run(alpha)
    return (lambda: run(alpha)[0]), params, grads, list(params)


def _decoder_case(rng, only_output=False):
    d_e = int(rng.integers(1, 7))
    words = [f"w{i}" for i in range(int(rng.integers(1, 6)))]
    caption = [words[int(i)] for i in rng.integers(0, len(words), size=int(rng.integers(1, 5)))]
    vocab = build_vocab([words])
    d_w = None if rng.random(1)[0] < 0.5 else int(rng.integers(1, 7))
    params = init_decoder(len(vocab), d_e, d_w, rng)
    for k in params:
        params[k] += rng.normal(params[k].shape, PERTURB if k.startswith("b") else 0.0)
    phi = np.tanh(rng.normal(d_e))
    ids = vocab.encode(caption)
    _, grads = sequence_loss(phi, ids, params, vocab)

    def f():
        return sequence_loss(phi, ids, params, vocab, with_grads=False)[0]
    names = ["W_p", "b_p"] if only_output else list(params)
    return f, params, grads, names


# group -> rng -> (objective, params, analytic grads, names checked)
CASES = {g: (lambda r, g=g: _branch_case(g, r))
         for g in ("video_branch", "image_branch", "sentence_branch", "fusion")}
CASES["contrastive_loss"] = _loss_case
CASES["decoder_bptt"] = _decoder_case
CASES["softmax_xent"] = lambda r: _decoder_case(r, only_output=True)


def run_suite(n_configs: int = 20, seed: int = 0, h: float = 1e-5) -> dict:
    """Max relative error per gradient group over ``n_configs`` random configurations."""
    rng = Rng(seed)
    out = {g: 0.0 for g in GROUPS}
    for _ in range(n_configs):
        for g in GROUPS:
            out[g] = max(out[g], _conditioned(CASES[g], rng, h))
    return out
