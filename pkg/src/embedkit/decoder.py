"""LSTM caption decoder conditioned on a video embedding.

Input sequence for a caption y_1..y_T: the video embedding at t=0, then
<bos>, then y_1..y_T.  Outputs from t=1 on are scored against y_1..y_T, <eos>.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .container import load_tensors, require, save_tensors
from .errors import ConfigError, LoadError, ShapeError
from .numeric import AdamState, Rng, adam_step, glorot_uniform, sigmoid, softmax

BOS = "<bos>"
EOS = "<eos>"


class Vocab:
    def __init__(self, tokens):
        tokens = list(tokens)
        if tokens[:2] != [BOS, EOS]:
            raise ConfigError("vocabulary must start with <bos>, <eos>")
        if len(set(tokens)) != len(tokens):
            raise ConfigError("vocabulary has duplicate tokens")
        self.tokens = tokens
        self.index = {t: k for k, t in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    @property
    def bos(self) -> int:
        return 0

    @property
    def eos(self) -> int:
        return 1

    def encode(self, words) -> list:
        try:
            return [self.index[w] for w in words]
        except KeyError as exc:
            raise ConfigError(f"token {exc.args[0]!r} not in decoder vocabulary") from exc

    def decode(self, ids) -> list:
        return [self.tokens[i] for i in ids]


def build_vocab(captions) -> Vocab:
    words = sorted({w for cap in captions for w in cap} - {BOS, EOS})
    if not words:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    return Vocab([BOS, EOS] + words)


@dataclass
class DecoderConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 15
    seed: int = 0
    d_w: int | None = None   # None: equal to the embedding size, no input projection
    max_len: int = 30


def init_decoder(vocab_size: int, d_e: int, d_w: int | None, rng: Rng) -> dict:
    d_w = d_e if d_w is None else d_w
    p = {
        "W_u": glorot_uniform(rng, 4 * d_w, d_w),
        "b_u": np.zeros(4 * d_w),
        "W_l": glorot_uniform(rng, 4 * d_w, d_w),
        "W_p": glorot_uniform(rng, vocab_size, d_w),
        "b_p": np.zeros(vocab_size),
        "E": glorot_uniform(rng, vocab_size, d_w),
    }
    if d_w != d_e:
        p["W_x"] = glorot_uniform(rng, d_w, d_e)
        p["b_x"] = np.zeros(d_w)
    return p


def lstm_step(w_t, h_prev, c_prev, params) -> tuple:
    """One decoder step; returns ``(p_t, h_t, c_t)``.

    Gate blocks of the stacked pre-activation are ordered a, i, f, o.
    """
    d = params["W_l"].shape[1]
    w_t = np.asarray(w_t, dtype=np.float64)
    if w_t.shape != (d,) or np.shape(h_prev) != (d,) or np.shape(c_prev) != (d,):
        raise ShapeError(f"lstm_step: input {w_t.shape}, state {np.shape(h_prev)} vs d_w={d}")
    z = params["W_u"] @ w_t + params["b_u"] + params["W_l"] @ h_prev
    a, i, f, o = z[:d], z[d:2 * d], z[2 * d:3 * d], z[3 * d:]
    c = np.tanh(a) * sigmoid(i) + c_prev * sigmoid(f)
    h = np.tanh(c) * sigmoid(o)
    p = softmax(params["W_p"] @ h + params["b_p"])
    return p, h, c


def _input0(phi, params):
    phi = np.asarray(phi, dtype=np.float64)
    if "W_x" in params:
        return params["W_x"] @ phi + params["b_x"]
    if phi.shape != (params["W_l"].shape[1],):
        raise ShapeError(f"video embedding {phi.shape} does not match d_w={params['W_l'].shape[1]}")
    return phi


def sequence_loss(phi, caption_ids, params, vocab: Vocab, with_grads=True) -> tuple:
    """Teacher-forced mean cross-entropy and, optionally, its gradients."""
    d = params["W_l"].shape[1]
    inputs = [None, vocab.bos] + list(caption_ids)
    targets = list(caption_ids) + [vocab.eos]
    n = len(targets)
    caches = []
    h = np.zeros(d)
    c = np.zeros(d)
    loss = 0.0
    for t, tok in enumerate(inputs):
        x = _input0(phi, params) if t == 0 else params["E"][tok]
        z = params["W_u"] @ x + params["b_u"] + params["W_l"] @ h
        ta, si = np.tanh(z[:d]), sigmoid(z[d:2 * d])
        sf, so = sigmoid(z[2 * d:3 * d]), sigmoid(z[3 * d:])
        c_new = ta * si + c * sf
        tc = np.tanh(c_new)
        h_new = tc * so
        p = None
        if t >= 1:
            p = softmax(params["W_p"] @ h_new + params["b_p"])
            loss -= np.log(p[targets[t - 1]])
        caches.append((x, h, c, ta, si, sf, so, tc, h_new, p))
        h, c = h_new, c_new
    loss /= n
    if not with_grads:
        return loss, None

    g = {k: np.zeros_like(v) for k, v in params.items()}
    dh_next = np.zeros(d)
    dc_next = np.zeros(d)
    for t in range(len(inputs) - 1, -1, -1):
        x, h_prev, c_prev, ta, si, sf, so, tc, h_t, p = caches[t]
        dh = dh_next.copy()
        if p is not None:
            dlogit = p.copy()
            dlogit[targets[t - 1]] -= 1.0
            dlogit /= n
            g["W_p"] += np.outer(dlogit, h_t)
            g["b_p"] += dlogit
            dh += params["W_p"].T @ dlogit
        dc = dh * so * (1.0 - tc * tc) + dc_next
        dz = np.concatenate([
            dc * si * (1.0 - ta * ta),
            dc * ta * si * (1.0 - si),
            dc * c_prev * sf * (1.0 - sf),
            dh * tc * so * (1.0 - so),
        ])
        dc_next = dc * sf
        g["W_u"] += np.outer(dz, x)
        g["b_u"] += dz
        g["W_l"] += np.outer(dz, h_prev)
        dh_next = params["W_l"].T @ dz
        dx = params["W_u"].T @ dz
        if t == 0:
            if "W_x" in params:
                g["W_x"] += np.outer(dx, phi)
                g["b_x"] += dx
        else:
            g["E"][inputs[t]] += dx
    return loss, g


@dataclass
class DecoderModel:
    params: dict
    vocab: Vocab
    config: DecoderConfig
    embed_fingerprint: str = ""

    def save(self, path) -> None:
        meta = {"kind": "decoder_checkpoint", "vocab": self.vocab.tokens,
                "config": asdict(self.config), "embed_fingerprint": self.embed_fingerprint}
        save_tensors(path, {f"dec.{k}": v for k, v in self.params.items()}, meta)


def load_decoder(path) -> DecoderModel:
    tensors, meta = load_tensors(path)
    if meta.get("kind") != "decoder_checkpoint":
        raise LoadError(f"{path}: not a decoder checkpoint")
    require(tensors, [f"dec.{k}" for k in ("W_u", "b_u", "W_l", "W_p", "b_p", "E")], path)
    params = {k[4:]: v.copy() for k, v in tensors.items() if k.startswith("dec.")}
    return DecoderModel(params, Vocab(meta["vocab"]), DecoderConfig(**meta["config"]),
                        meta.get("embed_fingerprint", ""))


def corpus_loss(model: DecoderModel, embeddings, captions) -> float:
    """Per-token cross-entropy over a caption set."""
    total, count = 0.0, 0
    for phi, cap in zip(embeddings, captions):
        ids = model.vocab.encode(cap)
        loss, _ = sequence_loss(phi, ids, model.params, model.vocab, with_grads=False)
        total += loss * (len(ids) + 1)
        count += len(ids) + 1
    return total / count


def train_decoder(embeddings, captions, config: DecoderConfig, vocab: Vocab | None = None,
                  embed_fingerprint: str = "", callback=None) -> tuple:
    """Fit the decoder on (video embedding, caption tokens) pairs, one caption per update.

    ``embeddings`` are read only.  Returns ``(model, log)`` where ``log`` holds
    the mean training loss of each epoch.
    """
    embeddings = [np.asarray(e, dtype=np.float64) for e in embeddings]
    if len(embeddings) != len(captions) or not captions:
        raise ConfigError("need one caption per embedding and at least one pair")
    vocab = vocab or build_vocab(captions)
    rng = Rng(config.seed)
    params = init_decoder(len(vocab), embeddings[0].shape[0], config.d_w, rng)
    adam = AdamState.fresh(params, config.lr, config.beta1, config.beta2, config.eps)
    encoded = [vocab.encode(c) for c in captions]
    model = DecoderModel(params, vocab, config, embed_fingerprint)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(encoded))
        total = 0.0
        for k in order:
            loss, grads = sequence_loss(embeddings[k], encoded[k], params, vocab)
            adam_step(params, grads, adam)
            total += loss
            if callback is not None:
                callback(model, adam.step)
        history.append({"epoch": epoch + 1, "mean_loss": total / len(encoded)})
    return model, history


def generate_greedy(phi, model: DecoderModel, max_len: int = 30) -> list:
    """Greedy decoding; stops at <eos> or after ``max_len`` words."""
    if max_len < 1:
        raise ConfigError("max_len must be >= 1")
    params, vocab = model.params, model.vocab
    d = params["W_l"].shape[1]
    h = np.zeros(d)
    c = np.zeros(d)
    _, h, c = lstm_step(_input0(phi, params), h, c, params)
    tok = vocab.bos
    words = []
    for _ in range(max_len):
        p, h, c = lstm_step(params["E"][tok], h, c, params)
        tok = int(np.argmax(p))
        if tok == vocab.eos:
            break
        if tok != vocab.bos:
            words.append(vocab.tokens[tok])
    return words
