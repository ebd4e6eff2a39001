"""Numeric substrate: activations, Adam, inverted dropout, seeded RNG and a
central-difference gradient checker.

Vectors and matrices are plain float64 numpy arrays.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GradCheckError, NonFiniteError, ShapeError

DTYPE = np.float64


class Rng:
    """Seeded random stream.

    Every stochastic step in the package draws from one of these, in the order
    init -> shuffling -> dropout masks -> negative sampling.  The full bit
    generator state can be captured and restored for exact resumption.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def random(self, shape) -> np.ndarray:
        return self._gen.random(shape)

    def uniform(self, low, high, shape) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def normal(self, shape, scale=1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        return self._gen.choice(n, size=k, replace=False)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {name}")


def sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=DTYPE)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def affine_tanh(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Return ``tanh(W @ x + b)``.

    ``x`` may also be a stack of row vectors with shape (n, cols); the layer is
    then applied to each row.
    """
    W = np.asarray(W, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    x = np.asarray(x, dtype=DTYPE)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise ShapeError(
            f"affine_tanh: W{W.shape}, b{b.shape} incompatible with x{x.shape}")
    return np.tanh(x @ W.T + b)


def glorot_uniform(rng: Rng, rows: int, cols: int) -> np.ndarray:
    s = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-s, s, (rows, cols))


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, params: dict, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
                   m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState):
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    Returns ``(params, state)`` for convenience.
    """
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ShapeError(
            f"adam_step: parameter names {sorted(params)} do not match "
            f"gradients {sorted(grads)} / state {sorted(state.m)}")
    for name, g in grads.items():
        if g.shape != params[name].shape or state.m[name].shape != g.shape:
            raise ShapeError(
                f"adam_step: {name} param{params[name].shape} grad{g.shape} "
                f"moment{state.m[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name}")

    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name in sorted(params):
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def check_dropout_ratio(ratio: float) -> None:
    if not (0.0 <= ratio < 1.0):
        raise ConfigError(f"dropout ratio must lie in [0, 1), got {ratio}")


def dropout_mask(shape, ratio: float, rng: Rng | None) -> np.ndarray | None:
    """Scaled keep-mask for inverted dropout, or None when nothing is dropped."""
    check_dropout_ratio(ratio)
    if ratio == 0.0 or rng is None:
        return None
    keep = rng.random(shape) >= ratio
    return keep.astype(DTYPE) / (1.0 - ratio)


def dropout(x: np.ndarray, ratio: float, mode: str = "train",
            rng: Rng | None = None) -> np.ndarray:
    check_dropout_ratio(ratio)
    x = np.asarray(x, dtype=DTYPE)
    if mode == "infer":
        return x.copy()
    if mode != "train":
        raise ConfigError(f"unknown mode {mode!r}")
    mask = dropout_mask(x.shape, ratio, rng)
    return x.copy() if mask is None else x * mask


def grad_check(f, x: np.ndarray, analytic_grad: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error between ``analytic_grad`` and central differences of ``f``.

    ``x`` is perturbed in place and restored, so callers can pass a live
    parameter array and a closure that reads it.
    """
    x = np.asarray(x)
    g_an = np.asarray(analytic_grad, dtype=DTYPE).reshape(-1)
    flat = x.reshape(-1)
    if g_an.shape != flat.shape:
        raise ShapeError(f"grad_check: x{x.shape} vs gradient{analytic_grad.shape}")
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise GradCheckError(f"non-finite objective at coordinate {i}")
        g_fd = (fp - fm) / (2.0 * h)
        err = abs(g_fd - g_an[i]) / max(abs(g_fd) + abs(g_an[i]), 1e-12)
        worst = max(worst, err)
    return worst
