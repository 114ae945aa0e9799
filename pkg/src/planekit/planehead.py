"""A minimal differentiable per-pixel plane decoder.

Two affine layers with a tanh between them, applied independently at every
pixel: features (H, W, C) -> plane vectors (H, W, 3). Small enough that all
gradients are hand-verifiable against finite differences, with an Adam
optimizer for the toy training loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass
class PlaneHead:
    w1: np.ndarray  # (hidden, in_channels)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (3, hidden)
    b2: np.ndarray  # (3,)

    @classmethod
    def create(cls, in_channels: int, hidden: int, seed: int = 0) -> "PlaneHead":
        rng = np.random.default_rng(seed)
        return cls(
            w1=rng.normal(0.0, 1.0 / np.sqrt(in_channels), (hidden, in_channels)),
            b1=np.zeros(hidden),
            w2=rng.normal(0.0, 1.0 / np.sqrt(hidden), (3, hidden)),
            b2=np.zeros(3))

    @property
    def in_channels(self) -> int:
        return self.w1.shape[1]

    @property
    def n_params(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def copy(self) -> "PlaneHead":
        return PlaneHead(self.w1.copy(), self.b1.copy(),
                         self.w2.copy(), self.b2.copy())


@dataclass
class HeadGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def __iadd__(self, other: "HeadGrads") -> "HeadGrads":
        self.w1 += other.w1
        self.b1 += other.b1
        self.w2 += other.w2
        self.b2 += other.b2
        return self

    @classmethod
    def zeros_like(cls, head: PlaneHead) -> "HeadGrads":
        return cls(*[np.zeros_like(p) for p in head.params()])


def head_forward(head: PlaneHead, features: np.ndarray) -> np.ndarray:
    """Decode features (H, W, C) to plane vectors (H, W, 3), pixel by pixel."""
    if features.ndim != 3 or features.shape[2] != head.in_channels:
        raise InvalidInputError(
            f"expected (H, W, {head.in_channels}) features, got {features.shape}")
    h, w, c = features.shape
    x = features.reshape(-1, c)
    hidden = np.tanh(x @ head.w1.T + head.b1)
    out = hidden @ head.w2.T + head.b2
    return out.reshape(h, w, 3)


def head_backward(head: PlaneHead, features: np.ndarray,
                  d_out: np.ndarray) -> tuple[HeadGrads, np.ndarray]:
    """Reverse-mode gradients of ``head_forward``.

    Returns (parameter gradients, feature gradients) for upstream d_out of
    shape (H, W, 3).
    """
    if d_out.shape != features.shape[:2] + (3,):
        raise InvalidInputError("upstream gradient shape mismatch")
    h, w, c = features.shape
    x = features.reshape(-1, c)
    g = d_out.reshape(-1, 3)
    pre = x @ head.w1.T + head.b1
    hidden = np.tanh(pre)
    d_hidden = (g @ head.w2) * (1.0 - hidden ** 2)
    grads = HeadGrads(
        w1=d_hidden.T @ x,
        b1=d_hidden.sum(axis=0),
        w2=g.T @ hidden,
        b2=g.sum(axis=0))
    d_features = (d_hidden @ head.w1).reshape(h, w, c)
    return grads, d_features


@dataclass
class AdamState:
    """Adam moments; created lazily to match the head's parameter shapes."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None


def optimizer_step(head: PlaneHead, grads: HeadGrads,
                   state: AdamState) -> tuple[PlaneHead, AdamState]:
    """One Adam update; returns the updated head and state (inputs untouched)."""
    params = head.params()
    if state.m is None:
        state = AdamState(lr=state.lr, beta1=state.beta1, beta2=state.beta2,
                          eps=state.eps, step=state.step,
                          m=[np.zeros_like(p) for p in params],
                          v=[np.zeros_like(p) for p in params])
    new_params, new_m, new_v = [], [], []
    t = state.step + 1
    for p, g, m, v in zip(params, grads.params(), state.m, state.v):
        if g.shape != p.shape:
            raise InvalidInputError("gradient and parameter shapes differ")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        new_params.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_head = PlaneHead(*new_params)
    new_state = AdamState(lr=state.lr, beta1=state.beta1, beta2=state.beta2,
                          eps=state.eps, step=t, m=new_m, v=new_v)
    return new_head, new_state
