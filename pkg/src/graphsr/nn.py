"""Dense numerical stack with hand-derived gradients.

The architecture set is closed (two graph layers, small MLPs), so every layer
carries its own backward pass instead of relying on an autodiff engine.
Layers cache what they need during ``forward``; ``backward`` accumulates into
``grads`` and returns the gradient with respect to the layer input.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp

Params = dict[str, np.ndarray]


class NonFiniteError(FloatingPointError):
    """A forward or backward pass produced NaN or Inf."""


def check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {what}")
    return x


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Layer:
    """Base class: named parameters plus same-shaped gradient accumulators."""

    def __init__(self) -> None:
        self.params: Params = {}
        self.grads: Params = {}
        self._cache = None

    def zero_grad(self) -> None:
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a forward pass")
        return self._cache


def _matmul_t(h, dz: np.ndarray) -> np.ndarray:
    """h^T @ dz for dense or sparse h."""
    if sp.issparse(h):
        return np.asarray(h.T @ dz)
    return h.T @ dz


class Linear(Layer):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True) -> None:
        super().__init__()
        self.params["weight"] = glorot(rng, in_dim, out_dim)
        if bias:
            self.params["bias"] = np.zeros(out_dim)
        self.zero_grad()

    def forward(self, x) -> np.ndarray:
        self._cache = x
        y = np.asarray(x @ self.params["weight"])
        if "bias" in self.params:
            y = y + self.params["bias"]
        return y

    def backward(self, dy: np.ndarray, input_grad: bool = True) -> np.ndarray | None:
        x = self._need_cache()
        self.grads["weight"] += _matmul_t(x, dy)
        if "bias" in self.params:
            self.grads["bias"] += dy.sum(axis=0)
        return dy @ self.params["weight"].T if input_grad else None


class GCNLayer(Layer):
    """``P @ (h @ W) + b`` with ``P = D^-1/2 (A + I) D^-1/2`` (symmetric)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True) -> None:
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.params["weight"] = glorot(rng, in_dim, out_dim)
        if bias:
            self.params["bias"] = np.zeros(out_dim)
        self.zero_grad()

    def forward(self, h, prop: sp.csr_matrix) -> np.ndarray:
        if h.shape != (prop.shape[0], self.in_dim):
            raise ValueError(f"GCN input shape {h.shape}, expected ({prop.shape[0]}, {self.in_dim})")
        self._cache = (h, prop)
        y = prop @ np.asarray(h @ self.params["weight"])
        if "bias" in self.params:
            y = y + self.params["bias"]
        return y

    def backward(self, dy: np.ndarray, input_grad: bool = True) -> np.ndarray | None:
        h, prop = self._need_cache()
        dz = prop.T @ dy
        self.grads["weight"] += _matmul_t(h, dz)
        if "bias" in self.params:
            self.grads["bias"] += dy.sum(axis=0)
        return dz @ self.params["weight"].T if input_grad else None


class SAGELayer(Layer):
    """``[h_v ; mean_{u in N(v)} h_u] @ W + b`` with ``W`` of shape (2*in, out).

    The concatenation is never materialized: the weight is split into a self
    block (first ``in`` rows) and a neighbour block.
    """

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True) -> None:
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.params["weight"] = glorot(rng, 2 * in_dim, out_dim)
        if bias:
            self.params["bias"] = np.zeros(out_dim)
        self.zero_grad()

    def forward(self, h, mean_agg: sp.csr_matrix) -> np.ndarray:
        if h.shape != (mean_agg.shape[0], self.in_dim):
            raise ValueError(f"SAGE input shape {h.shape}, expected ({mean_agg.shape[0]}, {self.in_dim})")
        self._cache = (h, mean_agg)
        w = self.params["weight"]
        y = np.asarray(h @ w[: self.in_dim]) + mean_agg @ np.asarray(h @ w[self.in_dim:])
        if "bias" in self.params:
            y = y + self.params["bias"]
        return y

    def backward(self, dy: np.ndarray, input_grad: bool = True) -> np.ndarray | None:
        h, mean_agg = self._need_cache()
        w = self.params["weight"]
        dnbr = mean_agg.T @ dy
        self.grads["weight"][: self.in_dim] += _matmul_t(h, dy)
        self.grads["weight"][self.in_dim:] += _matmul_t(h, dnbr)
        if "bias" in self.params:
            self.grads["bias"] += dy.sum(axis=0)
        if not input_grad:
            return None
        return dy @ w[: self.in_dim].T + dnbr @ w[self.in_dim:].T


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


def dropout_mask(shape: tuple[int, ...], rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    if rate <= 0.0:
        return np.ones(shape)
    if rate >= 1.0:
        return np.zeros(shape)
    return (rng.random(shape) >= rate) / (1.0 - rate)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def cross_entropy_weighted(
    logits: np.ndarray,
    labels: np.ndarray,
    class_weights: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Mean over examples of ``w[y] * -log softmax(logits)[y]`` and its gradient."""
    n, m = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape}, expected ({n},)")
    if n and (labels.min() < 0 or labels.max() >= m):
        raise ValueError("label out of range")
    if class_weights is None:
        w = np.ones(n)
    else:
        class_weights = np.asarray(class_weights, dtype=np.float64)
        if class_weights.shape != (m,) or np.any(class_weights < 0):
            raise ValueError("class_weights must be a nonnegative vector of length m")
        w = class_weights[labels]
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = float(np.sum(w * -logp[rows, labels]) / n)
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad *= (w / n)[:, None]
    return loss, grad


class MLP:
    """Linear layers with ReLU between them and an identity output."""

    def __init__(self, sizes: list[int], rng: np.random.Generator) -> None:
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self._pre: list[np.ndarray] = []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._pre = []
        h = x
        for i, layer in enumerate(self.layers):
            h = layer.forward(h)
            if i < len(self.layers) - 1:
                self._pre.append(h)
                h = relu(h)
        return h

    def backward(self, dout: np.ndarray) -> np.ndarray:
        d = dout
        for i in range(len(self.layers) - 1, -1, -1):
            if i < len(self.layers) - 1:
                d = relu_backward(d, self._pre[i])
            d = self.layers[i].backward(d)
        return d

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()

    def named_params(self, prefix: str = "") -> Params:
        return {f"{prefix}{i}.{k}": v for i, l in enumerate(self.layers) for k, v in l.params.items()}

    def named_grads(self, prefix: str = "") -> Params:
        return {f"{prefix}{i}.{k}": v for i, l in enumerate(self.layers) for k, v in l.grads.items()}


class Optimizer:
    """Updates a dict of parameter arrays in place."""

    def __init__(self, params: Params, lr: float, weight_decay: float = 0.0) -> None:
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.steps = 0

    def _grad(self, name: str, grads: Params) -> np.ndarray:
        g = grads[name]
        if self.weight_decay and name.endswith("weight"):
            g = g + self.weight_decay * self.params[name]
        return g

    def step(self, grads: Params) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    kind = "sgd"

    def step(self, grads: Params) -> None:
        self.steps += 1
        for k, p in self.params.items():
            p -= self.lr * self._grad(k, grads)


class Adam(Optimizer):
    kind = "adam"

    def __init__(
        self,
        params: Params,
        lr: float,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        super().__init__(params, lr, weight_decay)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: Params) -> None:
        self.steps += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.steps
        c2 = 1.0 - b2**self.steps
        for k, p in self.params.items():
            g = self._grad(k, grads)
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def make_optimizer(kind: str, params: Params, lr: float, weight_decay: float = 0.0) -> Optimizer:
    if kind == "sgd":
        return SGD(params, lr, weight_decay)
    if kind == "adam":
        return Adam(params, lr, weight_decay)
    raise ValueError(f"unknown optimizer {kind!r}")


def save_params(params: Params, path: str | Path, extra: dict | None = None) -> Path:
    """Write ``<path>.npy`` (all parameters flattened, float64) and ``<path>.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest, offset, chunks = [], 0, []
    for name in sorted(params):
        a = np.asarray(params[name], dtype=np.float64)
        manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
        chunks.append(a.ravel())
    flat = np.concatenate(chunks) if chunks else np.zeros(0)
    np.save(path.with_suffix(".npy"), flat)
    doc = {"size": int(offset), "params": manifest}
    if extra:
        doc["meta"] = extra
    path.with_suffix(".json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_params(path: str | Path) -> tuple[Params, dict]:
    path = Path(path)
    doc = json.loads(path.with_suffix(".json").read_text())
    flat = np.load(path.with_suffix(".npy"))
    if flat.size != doc["size"]:
        raise ValueError(f"{path}: checkpoint holds {flat.size} values, manifest says {doc['size']}")
    out = {}
    for e in doc["params"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        out[e["name"]] = flat[e["offset"]:e["offset"] + n].reshape(e["shape"]).copy()
    return out, doc.get("meta", {})
