"""Two-layer GCN / GraphSAGE node classifier trained full-batch."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import Graph
from .metrics import EvalReport, classification_report
from .nn import (
    GCNLayer,
    NonFiniteError,
    Optimizer,
    Params,
    SAGELayer,
    check_finite,
    cross_entropy_weighted,
    dropout_mask,
    load_params,
    make_optimizer,
    relu,
    relu_backward,
    save_params,
    softmax,
)

log = logging.getLogger(__name__)

ARCHS = ("gcn", "sage")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    dropout: float = 0.5
    max_epochs: int = 2000
    patience: int = 100
    optimizer: str = "adam"
    weight_decay: float = 5e-4
    hidden_dim: int = 128
    seed: int = 0

    def __post_init__(self) -> None:
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


class GnnModel:
    """Graph layer -> ReLU -> dropout -> graph layer -> logits."""

    def __init__(self, arch: str, in_dim: int, hidden_dim: int, num_classes: int, seed: int = 0) -> None:
        if arch not in ARCHS:
            raise ValueError(f"unknown architecture {arch!r}")
        self.arch = arch
        self.hidden_dim = hidden_dim
        self.num_classes = num_classes
        rng = np.random.default_rng([seed, 11])
        cls = GCNLayer if arch == "gcn" else SAGELayer
        self.layer1 = cls(in_dim, hidden_dim, rng)
        self.layer2 = cls(hidden_dim, num_classes, rng)
        self._cache = None
        self.optimizer: Optimizer | None = None

    @staticmethod
    def _operator(arch: str, g: Graph):
        return g.gcn_propagation if arch == "gcn" else g.mean_aggregation

    @staticmethod
    def _inputs(g: Graph):
        return g.sparse_features

    def forward(self, g: Graph, dropout: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
        op = self._operator(self.arch, g)
        pre = self.layer1.forward(self._inputs(g), op)
        hidden = relu(pre)
        mask = None
        if dropout > 0.0:
            mask = dropout_mask(hidden.shape, dropout, rng)
            hidden = hidden * mask
        logits = self.layer2.forward(hidden, op)
        self._cache = (pre, mask)
        return check_finite(logits, "logits")

    def backward(self, dlogits: np.ndarray) -> None:
        if self._cache is None:
            raise RuntimeError("backward called without a forward pass")
        pre, mask = self._cache
        dh = self.layer2.backward(dlogits)
        if mask is not None:
            dh = dh * mask
        self.layer1.backward(relu_backward(dh, pre), input_grad=False)

    def embed(self, g: Graph) -> np.ndarray:
        """Post-ReLU hidden representation with dropout disabled."""
        return relu(self.layer1.forward(self._inputs(g), self._operator(self.arch, g)))

    def predict_proba(self, g: Graph) -> np.ndarray:
        return softmax(self.forward(g))

    def params(self) -> Params:
        return {
            **{f"layer1.{k}": v for k, v in self.layer1.params.items()},
            **{f"layer2.{k}": v for k, v in self.layer2.params.items()},
        }

    def grads(self) -> Params:
        return {
            **{f"layer1.{k}": v for k, v in self.layer1.grads.items()},
            **{f"layer2.{k}": v for k, v in self.layer2.grads.items()},
        }

    def zero_grad(self) -> None:
        self.layer1.zero_grad()
        self.layer2.zero_grad()

    def set_params(self, params: Params) -> None:
        for name, value in params.items():
            layer, key = name.split(".")
            getattr(self, layer).params[key][...] = value

    def copy(self) -> GnnModel:
        new = copy.deepcopy(self)
        new._cache = None
        new.layer1._cache = new.layer2._cache = None
        return new

    def save(self, path: str | Path) -> Path:
        meta = {"arch": self.arch, "hidden_dim": self.hidden_dim, "num_classes": self.num_classes,
                "in_dim": self.layer1.in_dim}
        return save_params(self.params(), path, meta)

    @classmethod
    def load(cls, path: str | Path) -> GnnModel:
        params, meta = load_params(path)
        model = cls(meta["arch"], meta["in_dim"], meta["hidden_dim"], meta["num_classes"])
        model.set_params(params)
        return model


@dataclass
class TrainHistory:
    best_epoch: int = 0
    epochs_run: int = 0
    best_val_acc: float = 0.0
    val_acc: list[float] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)


def _val_stats(model: GnnModel, g: Graph, val_nodes: np.ndarray) -> tuple[float, float]:
    logits = model.forward(g)
    labels = g.labels[val_nodes]
    loss, _ = cross_entropy_weighted(logits[val_nodes], labels)
    return float(np.mean(np.argmax(logits[val_nodes], axis=1) == labels)), loss


def fit(
    model: GnnModel,
    g: Graph,
    train_nodes: np.ndarray,
    train_labels: np.ndarray,
    val_nodes: np.ndarray | None,
    cfg: TrainConfig,
    class_weights: np.ndarray | None = None,
    epochs: int | None = None,
    patience: int | None = None,
    rng: np.random.Generator | None = None,
    optimizer: Optimizer | None = None,
) -> TrainHistory:
    """Optimize ``model`` in place.

    With ``patience`` set and validation nodes given, the parameters of the
    best epoch (highest val accuracy, ties broken by lower val loss) are
    restored at the end. Without patience the last epoch is kept.
    ``train_nodes`` may repeat; each occurrence counts as one example.
    The optimizer (and its moment estimates) is kept on ``model.optimizer``
    so later calls continue from it unless one is passed explicitly.
    """
    train_nodes = np.asarray(train_nodes, dtype=np.int64)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    epochs = cfg.max_epochs if epochs is None else epochs
    rng = np.random.default_rng([cfg.seed, 13]) if rng is None else rng
    opt = optimizer or getattr(model, "optimizer", None)
    if opt is None:
        opt = make_optimizer(cfg.optimizer, model.params(), cfg.lr, cfg.weight_decay)
    model.optimizer = opt
    hist = TrainHistory()
    track = val_nodes is not None and len(val_nodes) > 0 and patience is not None
    best_params, best_key = None, None

    for epoch in range(epochs):
        model.zero_grad()
        logits = model.forward(g, cfg.dropout, rng)
        loss, dlogits = cross_entropy_weighted(logits[train_nodes], train_labels, class_weights)
        if not np.isfinite(loss):
            raise NonFiniteError(f"non-finite training loss at epoch {epoch}")
        full = np.zeros_like(logits)
        np.add.at(full, train_nodes, dlogits)
        model.backward(full)
        opt.step(model.grads())
        hist.loss.append(loss)
        hist.epochs_run = epoch + 1
        if not track:
            continue
        acc, vloss = _val_stats(model, g, val_nodes)
        hist.val_acc.append(acc)
        key = (acc, -vloss)
        if best_key is None or key > best_key:
            best_key, hist.best_epoch = key, epoch
            best_params = {k: v.copy() for k, v in model.params().items()}
        if epoch - hist.best_epoch >= patience:
            break

    if track and best_params is not None:
        model.set_params(best_params)
        hist.best_val_acc = best_key[0]
    return hist


def train(
    g: Graph,
    train_nodes: np.ndarray,
    train_labels: np.ndarray,
    val_nodes: np.ndarray,
    cfg: TrainConfig,
    arch: str = "gcn",
    class_weights: np.ndarray | None = None,
) -> GnnModel:
    """Fresh model trained with early stopping on validation accuracy."""
    if len(val_nodes) == 0:
        raise ValueError("validation set must be nonempty")
    model = GnnModel(arch, g.num_features, cfg.hidden_dim, g.num_classes, seed=cfg.seed)
    hist = fit(model, g, train_nodes, train_labels, val_nodes, cfg, class_weights, patience=cfg.patience)
    log.debug("trained %s: best epoch %d of %d, val acc %.4f", arch, hist.best_epoch, hist.epochs_run,
              hist.best_val_acc)
    model.history = hist
    return model


def embed(model: GnnModel, g: Graph) -> np.ndarray:
    return model.embed(g)


def argmax_labels(logits: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class id."""
    return np.argmax(logits, axis=1)


def pseudo_label(model: GnnModel, g: Graph, nodes: np.ndarray | None = None) -> np.ndarray:
    logits = model.forward(g)
    if nodes is not None:
        logits = logits[np.asarray(nodes)]
    return argmax_labels(logits)


def val_accuracy(model: GnnModel, g: Graph, nodes: np.ndarray) -> float:
    return float(np.mean(pseudo_label(model, g, nodes) == g.labels[nodes]))


def evaluate(model: GnnModel, g: Graph, nodes: np.ndarray, labels: np.ndarray | None = None) -> EvalReport:
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.shape[0] == 0:
        raise ValueError("cannot evaluate an empty node set")
    labels = g.labels[nodes] if labels is None else np.asarray(labels)
    return classification_report(labels, model.predict_proba(g)[nodes])
