"""Minimal neural toolkit: dense nets, an Elman recurrent regressor,
hand-written reverse-mode gradients, RMSProp, and a shared parameter store.

Everything computes in float64 on (batch, dim) arrays; checkpoints are stored
as little-endian float32 with a shape-table header (see save_checkpoint).
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np


def relu6(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 6.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def entropy(probs: np.ndarray) -> np.ndarray:
    """-sum p ln p with 0 ln 0 = 0; rowwise for batched input."""
    p = np.asarray(probs, dtype=np.float64)
    logp = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -(p * logp).sum(axis=-1)


@dataclass(frozen=True)
class NetworkSpec:
    """Dense network layout: input width, hidden widths, and head type."""

    input_dim: int
    hidden: Tuple[int, ...] = (256, 128)
    head: str = "policy"  # "policy" (3-way softmax), "value" (1 scalar), "q" (3 linear)

    def __post_init__(self):
        if self.input_dim <= 0 or any(w <= 0 for w in self.hidden):
            raise ValueError("widths must be positive")
        if self.head not in ("policy", "value", "q"):
            raise ValueError(f"unknown head {self.head!r}")

    @property
    def output_dim(self) -> int:
        return 1 if self.head == "value" else 3


def _dense_shapes(dims: Sequence[int]) -> List[Tuple[int, ...]]:
    shapes: List[Tuple[int, ...]] = []
    for a, b in zip(dims[:-1], dims[1:]):
        shapes.append((a, b))
        shapes.append((b,))
    return shapes


def flat_size(shapes: Sequence[Tuple[int, ...]]) -> int:
    return int(sum(int(np.prod(s)) for s in shapes))


def flat_views(flat: np.ndarray, shapes: Sequence[Tuple[int, ...]]) -> List[np.ndarray]:
    views = []
    offset = 0
    for s in shapes:
        n = int(np.prod(s))
        views.append(flat[offset:offset + n].reshape(s))
        offset += n
    if offset != flat.size:
        raise ValueError("flat vector length does not match the shape table")
    return views


def init_dense(shapes: Sequence[Tuple[int, ...]], rng: np.random.Generator) -> np.ndarray:
    """Scaled-Gaussian weights, zero biases."""
    flat = np.zeros(flat_size(shapes), dtype=np.float64)
    for view, shape in zip(flat_views(flat, shapes), shapes):
        if len(shape) == 2:
            view[:] = rng.standard_normal(shape) / np.sqrt(shape[0])
    return flat


class MLP:
    """Fully connected net with relu6 hidden layers and a policy or value head."""

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator | None = None,
                 flat: np.ndarray | None = None):
        self.spec = spec
        dims = (spec.input_dim, *spec.hidden, spec.output_dim)
        self.shapes = _dense_shapes(dims)
        self.n_params = flat_size(self.shapes)
        if flat is None:
            flat = init_dense(self.shapes, rng or np.random.default_rng(0))
        self.flat = np.array(flat, dtype=np.float64)
        if self.flat.size != self.n_params:
            raise ValueError("weight vector length mismatch")
        self.views = flat_views(self.flat, self.shapes)

    def set_flat(self, w: np.ndarray) -> None:
        if w.size != self.n_params:
            raise ValueError("weight vector length mismatch")
        self.flat[:] = w

    def forward(self, x: np.ndarray):
        """Returns (output, cache). Policy head: probabilities over 3 actions;
        value head: scalar per row."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.spec.input_dim:
            raise ValueError(f"input dim {x.shape[1]} != spec {self.spec.input_dim}")
        acts = [x]
        pre: List[np.ndarray] = []
        h = x
        n_hidden = len(self.spec.hidden)
        for i in range(n_hidden):
            w, b = self.views[2 * i], self.views[2 * i + 1]
            z = h @ w + b
            pre.append(z)
            h = relu6(z)
            acts.append(h)
        w, b = self.views[2 * n_hidden], self.views[2 * n_hidden + 1]
        logits = h @ w + b
        if self.spec.head == "policy":
            out = softmax(logits)
        elif self.spec.head == "value":
            out = logits[:, 0]
        else:
            out = logits
        cache = (acts, pre, logits)
        return out, cache

    def backward(self, cache, dlogits: np.ndarray) -> np.ndarray:
        """Exact reverse-mode gradient wrt all weights, given d(loss)/d(logits)
        for the policy head or d(loss)/d(value) for the value head."""
        acts, pre, _ = cache
        dlogits = np.asarray(dlogits, dtype=np.float64)
        if self.spec.head == "value" and dlogits.ndim == 1:
            dlogits = dlogits[:, None]
        grad = np.zeros_like(self.flat)
        gviews = flat_views(grad, self.shapes)
        n_hidden = len(self.spec.hidden)
        d = dlogits
        gviews[2 * n_hidden][:] = acts[-1].T @ d
        gviews[2 * n_hidden + 1][:] = d.sum(axis=0)
        dh = d @ self.views[2 * n_hidden].T
        for i in range(n_hidden - 1, -1, -1):
            z = pre[i]
            dz = dh * ((z > 0.0) & (z < 6.0))
            gviews[2 * i][:] = acts[i].T @ dz
            gviews[2 * i + 1][:] = dz.sum(axis=0)
            if i > 0:
                dh = dz @ self.views[2 * i].T
        return grad


class ElmanRegressor:
    """tanh Elman recurrence over a chunked window, sigmoid dense stack,
    one linear output. Used by the digital twin's predictors."""

    def __init__(self, window_len: int, rnn_width: int, dense: Tuple[int, ...],
                 chunk: int = 1, rng: np.random.Generator | None = None,
                 flat: np.ndarray | None = None):
        if window_len % chunk != 0:
            raise ValueError("window length must be a multiple of the chunk size")
        self.window_len = window_len
        self.chunk = chunk
        self.steps = window_len // chunk
        self.rnn_width = rnn_width
        self.dense = tuple(dense)
        self.shapes = [(chunk, rnn_width), (rnn_width, rnn_width), (rnn_width,)]
        self.shapes += _dense_shapes((rnn_width, *dense, 1))
        self.n_params = flat_size(self.shapes)
        if flat is None:
            flat = init_dense(self.shapes, rng or np.random.default_rng(0))
        self.flat = np.array(flat, dtype=np.float64)
        self.views = flat_views(self.flat, self.shapes)

    def set_flat(self, w: np.ndarray) -> None:
        self.flat[:] = w

    def forward(self, windows: np.ndarray):
        x = np.atleast_2d(np.asarray(windows, dtype=np.float64))
        if x.shape[1] != self.window_len:
            raise ValueError(f"window length {x.shape[1]} != {self.window_len}")
        b = x.shape[0]
        xs = x.reshape(b, self.steps, self.chunk)
        wx, wh, bh = self.views[:3]
        h = np.zeros((b, self.rnn_width))
        hs = [h]
        for t in range(self.steps):
            h = np.tanh(xs[:, t, :] @ wx + h @ wh + bh)
            hs.append(h)
        acts = [h]
        pre: List[np.ndarray] = []
        n_dense = len(self.dense)
        for i in range(n_dense):
            w, bias = self.views[3 + 2 * i], self.views[4 + 2 * i]
            z = acts[-1] @ w + bias
            pre.append(z)
            acts.append(1.0 / (1.0 + np.exp(-z)))
        w, bias = self.views[3 + 2 * n_dense], self.views[4 + 2 * n_dense]
        y = (acts[-1] @ w + bias)[:, 0]
        cache = (xs, hs, acts, pre)
        return y, cache

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        xs, hs, acts, pre = cache
        dy = np.asarray(dy, dtype=np.float64)[:, None]
        grad = np.zeros_like(self.flat)
        gviews = flat_views(grad, self.shapes)
        n_dense = len(self.dense)
        gviews[3 + 2 * n_dense][:] = acts[-1].T @ dy
        gviews[4 + 2 * n_dense][:] = dy.sum(axis=0)
        dh = dy @ self.views[3 + 2 * n_dense].T
        for i in range(n_dense - 1, -1, -1):
            s = acts[i + 1]
            dz = dh * s * (1.0 - s)
            gviews[3 + 2 * i][:] = acts[i].T @ dz
            gviews[4 + 2 * i][:] = dz.sum(axis=0)
            dh = dz @ self.views[3 + 2 * i].T
        wx, wh, _ = self.views[:3]
        gwx, gwh, gbh = gviews[:3]
        for t in range(self.steps - 1, -1, -1):
            h = hs[t + 1]
            dz = dh * (1.0 - h * h)
            gwx += xs[:, t, :].T @ dz
            gwh += hs[t].T @ dz
            gbh += dz.sum(axis=0)
            dh = dz @ wh.T
        return grad


class ParameterStore:
    """Flat weight vector shared between trainer workers.

    Readers snapshot under the lock; gradients are applied atomically with an
    RMSProp accumulator living alongside the weights. The version counter
    increases by exactly one per applied gradient.
    """

    def __init__(self, flat: np.ndarray, shapes: Sequence[Tuple[int, ...]],
                 rms_decay: float = 0.99, rms_eps: float = 1e-8):
        self._flat = np.array(flat, dtype=np.float64)
        self.shapes = list(shapes)
        if self._flat.size != flat_size(self.shapes):
            raise ValueError("flat vector length does not match the shape table")
        self._acc = np.zeros_like(self._flat)
        self._version = 0
        self._lock = threading.Lock()
        self.rms_decay = rms_decay
        self.rms_eps = rms_eps

    @property
    def n_params(self) -> int:
        return self._flat.size

    @property
    def version(self) -> int:
        return self._version

    def snapshot(self) -> tuple[np.ndarray, int]:
        with self._lock:
            return self._flat.copy(), self._version

    def apply_gradient(self, grad: np.ndarray, lr: float) -> int:
        if grad.size != self._flat.size:
            raise ValueError("gradient length does not match the store")
        with self._lock:
            self._acc *= self.rms_decay
            self._acc += (1.0 - self.rms_decay) * grad * grad
            self._flat -= lr * grad / (np.sqrt(self._acc) + self.rms_eps)
            self._version += 1
            return self._version


def optimizer_step(store: ParameterStore, gradient: np.ndarray, lr: float) -> int:
    """RMSProp update on the store; returns the new version."""
    return store.apply_gradient(gradient, lr)


_MAGIC = b"DTW1"


def save_checkpoint(path: str, arrays: Sequence[np.ndarray]) -> None:
    """Checkpoint byte layout (all integers little-endian uint32):

    magic 'DTW1' | n_arrays | per array: ndim, dim_0..dim_{ndim-1} |
    concatenated float32 little-endian C-order payloads.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        for a in arrays:
            a = np.asarray(a)
            fh.write(struct.pack("<I", a.ndim))
            for d in a.shape:
                fh.write(struct.pack("<I", d))
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path: str) -> List[np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a dtoffload checkpoint")
        (n,) = struct.unpack("<I", fh.read(4))
        shapes = []
        for _ in range(n):
            (ndim,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
            shapes.append(tuple(dims))
        arrays = []
        for s in shapes:
            count = int(np.prod(s)) if s else 1
            buf = fh.read(4 * count)
            arrays.append(np.frombuffer(buf, dtype="<f4").astype(np.float64).reshape(s))
        return arrays
