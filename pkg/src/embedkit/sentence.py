"""Frozen recurrent sentence encoding.

Two GRU encoders run over the same word sequence and their final hidden states
are concatenated (combine-skip).  Weights are only ever loaded or randomly
drawn; nothing here is trained.
"""

import string
from dataclasses import dataclass

import numpy as np

from .container import load_tensors, require, save_tensors
from .errors import ConfigError, ShapeError
from .numeric import DTYPE, Rng, sigmoid

UNK = "<unk>"
_PUNCT = str.maketrans("", "", string.punctuation)


def normalize_text(raw: str) -> list:
    """Lowercase, drop punctuation, split on whitespace."""
    tokens = raw.lower().translate(_PUNCT).split()
    if not tokens:
        raise ValueError(f"empty sentence after normalization: {raw!r}")
    return tokens


@dataclass
class GruWeights:
    W_r: np.ndarray
    W_i: np.ndarray
    W_a: np.ndarray
    U_r: np.ndarray
    U_i: np.ndarray
    U_a: np.ndarray

    NAMES = ("W_r", "W_i", "W_a", "U_r", "U_i", "U_a")

    def __post_init__(self):
        d_s, d_w = self.W_r.shape
        for name in ("W_i", "W_a"):
            if getattr(self, name).shape != (d_s, d_w):
                raise ShapeError(
                    f"GRU {name} is {getattr(self, name).shape}, expected {(d_s, d_w)}")
        for name in ("U_r", "U_i", "U_a"):
            if getattr(self, name).shape != (d_s, d_s):
                raise ShapeError(
                    f"GRU {name} is {getattr(self, name).shape}, expected {(d_s, d_s)}")

    @property
    def d_s(self) -> int:
        return self.W_r.shape[0]

    @property
    def d_w(self) -> int:
        return self.W_r.shape[1]

    @classmethod
    def zeros(cls, d_s, d_w):
        return cls(*(np.zeros((d_s, d_w)) for _ in range(3)),
                   *(np.zeros((d_s, d_s)) for _ in range(3)))

    @classmethod
    def random(cls, rng: Rng, d_s, d_w, scale=None):
        scale = scale if scale is not None else 1.0 / np.sqrt(d_w + d_s)
        return cls(*(rng.normal((d_s, d_w), scale) for _ in range(3)),
                   *(rng.normal((d_s, d_s), scale) for _ in range(3)))


def gru_step(w_t, h_prev, weights: GruWeights) -> np.ndarray:
    w_t = np.asarray(w_t, dtype=DTYPE)
    h_prev = np.asarray(h_prev, dtype=DTYPE)
    if w_t.shape != (weights.d_w,) or h_prev.shape != (weights.d_s,):
        raise ShapeError(
            f"gru_step: w_t{w_t.shape} / h_prev{h_prev.shape} "
            f"vs d_w={weights.d_w}, d_s={weights.d_s}")
    # reset gate reads the previous hidden state (standard GRU)
    r = sigmoid(weights.W_r @ w_t + weights.U_r @ h_prev)
    i = sigmoid(weights.W_i @ w_t + weights.U_i @ h_prev)
    a = np.tanh(weights.W_a @ w_t + weights.U_a @ (r * h_prev))
    return (1.0 - i) * h_prev + i * a


@dataclass
class WordTable:
    vocab: dict          # token -> row; row 0 is UNK
    vectors: np.ndarray  # (|V|, d_w)

    def __post_init__(self):
        if self.vocab.get(UNK) != 0:
            raise ConfigError("word table must map <unk> to row 0")
        if self.vectors.shape[0] != len(self.vocab):
            raise ShapeError(f"word table has {len(self.vocab)} tokens but "
                             f"{self.vectors.shape[0]} vectors")

    @property
    def d_w(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, token: str) -> np.ndarray:
        return self.vectors[self.vocab.get(token, 0)]

    def tokens(self) -> list:
        return sorted(self.vocab, key=self.vocab.get)

    @classmethod
    def from_tokens(cls, tokens, vectors):
        words = [UNK] + [t for t in tokens if t != UNK]
        return cls({t: k for k, t in enumerate(words)}, np.asarray(vectors, dtype=DTYPE))

    @classmethod
    def random(cls, rng: Rng, tokens, d_w):
        words = [UNK] + sorted(set(tokens) - {UNK})
        return cls({t: k for k, t in enumerate(words)}, rng.normal((len(words), d_w)))


def encode_tokens(tokens, table: WordTable, weights: GruWeights) -> np.ndarray:
    if len(tokens) == 0:
        raise ValueError("cannot encode an empty token list")
    if table.d_w != weights.d_w:
        raise ShapeError(f"word vectors are {table.d_w}-d, GRU expects {weights.d_w}")
    h = np.zeros(weights.d_s)
    for tok in tokens:
        h = gru_step(table.lookup(tok), h, weights)
    return h


def combine_skip(tokens, table_a, weights_a, table_b, weights_b, d_c=None) -> np.ndarray:
    if d_c is not None and d_c != weights_a.d_s + weights_b.d_s:
        raise ConfigError(
            f"d_c={d_c} but encoders produce {weights_a.d_s} + {weights_b.d_s}")
    return np.concatenate([encode_tokens(tokens, table_a, weights_a),
                           encode_tokens(tokens, table_b, weights_b)])


class SentenceEncoder:
    """Callable ``tokens -> s_Y`` bundling both frozen encoders."""

    def __init__(self, table_a, weights_a, table_b, weights_b):
        self.table_a, self.weights_a = table_a, weights_a
        self.table_b, self.weights_b = table_b, weights_b

    @property
    def d_c(self) -> int:
        return self.weights_a.d_s + self.weights_b.d_s

    def __call__(self, tokens) -> np.ndarray:
        return combine_skip(tokens, self.table_a, self.weights_a, self.table_b, self.weights_b)

    @classmethod
    def random(cls, rng: Rng, tokens, d_w: int, d_s_a: int, d_s_b: int):
        # 1/sqrt(d_w) keeps the gates decisive enough that early words survive
        scale = 1.0 / np.sqrt(d_w)
        ta = WordTable.random(rng, tokens, d_w)
        wa = GruWeights.random(rng, d_s_a, d_w, scale)
        tb = WordTable.random(rng, tokens, d_w)
        wb = GruWeights.random(rng, d_s_b, d_w, scale)
        return cls(ta, wa, tb, wb)

    def save(self, path) -> None:
        tensors = {}
        for side, table, weights in (("a", self.table_a, self.weights_a),
                                     ("b", self.table_b, self.weights_b)):
            tensors[f"{side}.words"] = table.vectors
            for n in GruWeights.NAMES:
                tensors[f"{side}.{n}"] = getattr(weights, n)
        meta = {"kind": "sentence_encoder",
                "a_vocab": self.table_a.tokens(), "b_vocab": self.table_b.tokens()}
        save_tensors(path, tensors, meta)


def load_encoder(path) -> SentenceEncoder:
    tensors, meta = load_tensors(path)
    names = [f"{s}.{n}" for s in "ab" for n in ("words",) + GruWeights.NAMES]
    require(tensors, names, path)
    parts = []
    for side in "ab":
        vocab = meta.get(f"{side}_vocab")
        if vocab is None:
            raise ConfigError(f"{path}: missing {side}_vocab metadata")
        parts.append(WordTable({t: k for k, t in enumerate(vocab)}, tensors[f"{side}.words"]))
        parts.append(GruWeights(*(tensors[f"{side}.{n}"] for n in GruWeights.NAMES)))
    return SentenceEncoder(*parts)
