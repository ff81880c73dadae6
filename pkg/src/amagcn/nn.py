"""Minimal neural-network core for Chebyshev graph convolutional models.

Forward operations are plain numpy functions. ``Tape`` strings them together and
records one closure per operation so that ``Tape.backward`` can replay them in
reverse and accumulate exact gradients into the named parameter nodes.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import NumericError
from .spectral import ChebBasis

logger = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


@dataclass
class LayerParams:
    """Weights of one layer: ``K+1`` matrices for a graph convolution, one for dense."""

    weights: list[np.ndarray]
    bias: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[0].shape[1]

    @classmethod
    def glorot(cls, in_dim: int, out_dim: int, n_terms: int, rng: np.random.Generator):
        limit = math.sqrt(6.0 / (in_dim + out_dim))
        weights = [rng.uniform(-limit, limit, size=(in_dim, out_dim)) for _ in range(n_terms)]
        return cls(weights, np.zeros(out_dim))


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class LossTerms:
    semi: float
    sim: float
    total: float
    lam: float
    xi: float
    sigma: float

    def to_dict(self) -> dict:
        return {"semi": self.semi, "sim": self.sim, "total": self.total}


# ---------------------------------------------------------------- forward ops


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def cheb_filter(h: np.ndarray, basis: ChebBasis) -> np.ndarray:
    """``T_k @ h`` for every basis term, shape ``(K+1, n, d)``."""
    return basis.stacked @ h


def cheb_conv_forward(
    h: np.ndarray, basis: ChebBasis, params: LayerParams, activation: str | None = "relu"
) -> np.ndarray:
    """``sum_k T_k h W_k + b`` followed by the optional activation."""
    if len(params.weights) != len(basis.terms):
        raise ValueError(
            f"layer has {len(params.weights)} weight matrices for {len(basis.terms)} basis terms"
        )
    if h.shape[1] != params.in_dim:
        raise ValueError(f"input width {h.shape[1]} != layer input width {params.in_dim}")
    out = _combine(cheb_filter(h, basis), np.stack(params.weights)) + params.bias
    return relu(out) if activation == "relu" else out


def _combine(filtered: np.ndarray, w: np.ndarray) -> np.ndarray:
    k, n, d = filtered.shape
    return filtered.transpose(1, 0, 2).reshape(n, k * d) @ w.reshape(k * d, -1)


def dense_forward(h: np.ndarray, params: LayerParams) -> np.ndarray:
    return h @ params.weights[0] + params.bias


def maxpool_aggregate(layer_outputs: Sequence[np.ndarray]) -> np.ndarray:
    if not layer_outputs:
        raise ValueError("max-pool aggregation needs at least one input")
    shape = layer_outputs[0].shape
    if any(x.shape != shape for x in layer_outputs):
        raise ValueError("max-pool inputs must share one shape")
    return np.max(np.stack(layer_outputs), axis=0)


def concat_aggregate(layer_outputs: Sequence[np.ndarray]) -> np.ndarray:
    if not layer_outputs:
        raise ValueError("concat aggregation needs at least one input")
    rows = layer_outputs[0].shape[0]
    if any(x.shape[0] != rows for x in layer_outputs):
        raise ValueError("concat inputs must share a row count")
    return np.concatenate(layer_outputs, axis=1)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def dropout(
    h: np.ndarray, p: float, rng: np.random.Generator | None, training: bool = True
) -> np.ndarray:
    return h * dropout_mask(h.shape, p, rng, training)


def dropout_mask(shape, p: float, rng, training: bool) -> np.ndarray | float:
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0:
        return 1.0
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def _clamped_log(z: np.ndarray) -> np.ndarray:
    if np.any(z < LOG_CLAMP):
        warnings.warn("softmax output below 1e-12 on a labeled row; log clamped", RuntimeWarning)
    return np.log(np.maximum(z, LOG_CLAMP))


def cross_entropy_masked(z: np.ndarray, y: np.ndarray, mask: np.ndarray) -> float:
    """``-sum_{i in mask} sum_j Y_ij ln Z_ij`` (a sum, not a mean)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return 0.0
    zm, ym = z[mask], y[mask]
    return float(-(ym * _clamped_log(np.where(ym > 0, zm, 1.0))).sum())


def similarity_loss(
    t: np.ndarray, y: np.ndarray, mask: np.ndarray, xi: float = 1e-6, sigma: float = 1.0
) -> float:
    """``tanh((sum of squared residuals on labeled rows + xi) / (2 sigma^2))``."""
    mask = np.asarray(mask, dtype=bool)
    resid = float(((y[mask] - t[mask]) ** 2).sum())
    return float(np.tanh((resid + xi) / (2.0 * sigma**2)))


def total_loss(semi: float, sim: float, lam: float = 1.0) -> float:
    if lam < 0:
        raise ValueError("tradeoff lambda must be nonnegative")
    return semi + lam * sim


# -------------------------------------------------------------------- tape


class Node:
    __slots__ = ("value", "grad", "name", "requires_grad")

    def __init__(self, value, name: str | None = None, requires_grad: bool = True):
        self.value = value
        self.grad = None
        self.name = name
        self.requires_grad = requires_grad

    def accumulate(self, g) -> None:
        self.grad = g if self.grad is None else self.grad + g


class Tape:
    """Records operations on ``Node`` values for one forward pass."""

    def __init__(self):
        self._ops: list[Callable[[], None]] = []
        self.params: dict[str, Node] = {}

    @staticmethod
    def constant(value: np.ndarray) -> Node:
        return Node(value, requires_grad=False)

    def param(self, name: str, value: np.ndarray) -> Node:
        node = Node(value, name)
        self.params[name] = node
        return node

    def layer(self, prefix: str, params: LayerParams) -> tuple[list[Node], Node]:
        ws = [self.param(f"{prefix}.w{k}", w) for k, w in enumerate(params.weights)]
        return ws, self.param(f"{prefix}.b", params.bias)

    def cheb_conv(self, x: Node, basis: ChebBasis, ws: list[Node], b: Node, activation=None) -> Node:
        if len(ws) != len(basis.terms):
            raise ValueError(f"{len(ws)} weight matrices for {len(basis.terms)} basis terms")
        filtered = cheb_filter(x.value, basis)
        w = np.stack([wk.value for wk in ws])
        pre = _combine(filtered, w) + b.value
        out = Node(relu(pre) if activation == "relu" else pre)

        def backward():
            g = out.grad
            if g is None:
                return
            if activation == "relu":
                g = g * (pre > 0)
            for k, wk in enumerate(ws):
                wk.accumulate(filtered[k].T @ g)
            b.accumulate(g.sum(axis=0))
            if x.requires_grad:
                gw = g @ w.transpose(0, 2, 1)
                x.accumulate((basis.stacked.transpose(0, 2, 1) @ gw).sum(axis=0))

        self._ops.append(backward)
        return out

    def dense(self, x: Node, w: Node, b: Node) -> Node:
        out = Node(x.value @ w.value + b.value)

        def backward():
            g = out.grad
            if g is None:
                return
            w.accumulate(x.value.T @ g)
            b.accumulate(g.sum(axis=0))
            if x.requires_grad:
                x.accumulate(g @ w.value.T)

        self._ops.append(backward)
        return out

    def dropout(self, x: Node, p: float, rng, training: bool) -> Node:
        mask = dropout_mask(x.value.shape, p, rng, training)
        if np.isscalar(mask):
            return x
        out = Node(x.value * mask, requires_grad=x.requires_grad)

        def backward():
            if out.grad is not None and x.requires_grad:
                x.accumulate(out.grad * mask)

        self._ops.append(backward)
        return out

    def maxpool(self, xs: Sequence[Node]) -> Node:
        stacked = np.stack([x.value for x in xs])
        # argmax returns the first maximum, so ties go to the earliest input
        winner = np.argmax(stacked, axis=0)
        out = Node(np.take_along_axis(stacked, winner[None], axis=0)[0])

        def backward():
            if out.grad is None:
                return
            for i, x in enumerate(xs):
                x.accumulate(np.where(winner == i, out.grad, 0.0))

        self._ops.append(backward)
        return out

    def concat(self, xs: Sequence[Node]) -> Node:
        out = Node(concat_aggregate([x.value for x in xs]))
        bounds = np.cumsum([0] + [x.value.shape[1] for x in xs])

        def backward():
            if out.grad is None:
                return
            for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
                x.accumulate(out.grad[:, lo:hi])

        self._ops.append(backward)
        return out

    def softmax(self, x: Node) -> Node:
        out = Node(softmax(x.value))

        def backward():
            g = out.grad
            if g is None:
                return
            s = out.value
            x.accumulate(s * (g - (g * s).sum(axis=1, keepdims=True)))

        self._ops.append(backward)
        return out

    def cross_entropy(self, z: Node, y: np.ndarray, mask: np.ndarray) -> Node:
        mask = np.asarray(mask, dtype=bool)
        out = Node(cross_entropy_masked(z.value, y, mask))

        def backward():
            if out.grad is None:
                return
            safe = np.maximum(z.value, LOG_CLAMP)
            g = np.where(mask[:, None], -y / safe, 0.0)
            z.accumulate(out.grad * g)

        self._ops.append(backward)
        return out

    def similarity(self, t: Node, y: np.ndarray, mask: np.ndarray, xi: float, sigma: float) -> Node:
        mask = np.asarray(mask, dtype=bool)
        out = Node(similarity_loss(t.value, y, mask, xi, sigma))

        def backward():
            if out.grad is None:
                return
            dtanh = (1.0 - out.value**2) / (2.0 * sigma**2)
            g = np.where(mask[:, None], -2.0 * (y - t.value), 0.0)
            t.accumulate(out.grad * dtanh * g)

        self._ops.append(backward)
        return out

    def fuse(self, semi: Node, sim: Node, lam: float) -> Node:
        out = Node(total_loss(semi.value, sim.value, lam))

        def backward():
            semi.accumulate(out.grad)
            sim.accumulate(out.grad * lam)

        self._ops.append(backward)
        return out

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Gradients of ``loss`` for every registered parameter."""
        if not self._ops:
            raise RuntimeError("backward called before any forward operation was recorded")
        loss.grad = 1.0
        for op in reversed(self._ops):
            op()
        self._ops = []
        return {
            name: np.zeros_like(node.value) if node.grad is None else np.asarray(node.grad)
            for name, node in self.params.items()
        }


# --------------------------------------------------------------- optimizer


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    weight_decay: float = 0.0,
    decay: Callable[[str], bool] = lambda name: not name.endswith(".b"),
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update.

    ``weight_decay * w`` is added to the gradient of every parameter for which
    ``decay(name)`` holds (by default every weight matrix but not biases).
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    out = {}
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {w.shape} for {name!r}")
        if weight_decay and decay(name):
            g = g + weight_decay * w
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(w)
            v = np.zeros_like(w)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        out[name] = w - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out, state
