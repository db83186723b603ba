"""Graph container, dataset ingestion and imbalanced split construction."""

from __future__ import annotations

import json
import math
import pickle
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp


class DatasetError(ValueError):
    """Raised when a dataset file is missing or malformed."""


class SplitError(ValueError):
    """Raised when a split cannot be drawn from the graph."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected attributed graph stored in CSR form.

    ``indptr``/``indices`` hold the symmetric, deduplicated adjacency without
    self-loops. Layers that need self-loops add them analytically.
    """

    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    class_names: tuple[str, ...] = ()
    name: str = ""

    def __post_init__(self) -> None:
        n = self.labels.shape[0]
        if self.indptr.shape != (n + 1,):
            raise DatasetError(f"indptr has shape {self.indptr.shape}, expected ({n + 1},)")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DatasetError(f"features shape {self.features.shape} does not match {n} nodes")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError("label out of range [0, num_classes)")
        if not np.all(np.isfinite(self.features)):
            raise DatasetError("features contain NaN or Inf")
        object.__setattr__(self, "indptr", _frozen(self.indptr.astype(np.int64)))
        object.__setattr__(self, "indices", _frozen(self.indices.astype(np.int64)))
        object.__setattr__(self, "features", _frozen(self.features.astype(np.float64)))
        object.__setattr__(self, "labels", _frozen(self.labels.astype(np.int64)))
        if not self.class_names:
            object.__setattr__(self, "class_names", tuple(str(i) for i in range(self.num_classes)))

    @property
    def num_nodes(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return int(self.indices.shape[0] // 2)

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def edge_list(self) -> np.ndarray:
        """Each undirected edge once as ``(u, v)`` with ``u < v``."""
        rows = np.repeat(np.arange(self.num_nodes), self.degrees())
        keep = rows < self.indices
        return np.stack([rows[keep], self.indices[keep]], axis=1)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(self.indices.shape[0])
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.num_nodes,) * 2)

    @cached_property
    def gcn_propagation(self) -> sp.csr_matrix:
        """D^-1/2 (A + I) D^-1/2 with degrees counted including the self-loop."""
        a = self.adjacency + sp.identity(self.num_nodes, format="csr")
        d = np.asarray(a.sum(axis=1)).ravel()
        inv_sqrt = 1.0 / np.sqrt(d)
        s = sp.diags(inv_sqrt)
        return (s @ a @ s).tocsr()

    @cached_property
    def mean_aggregation(self) -> sp.csr_matrix:
        """Row-normalized adjacency; isolated nodes get an all-zero row."""
        deg = self.degrees().astype(np.float64)
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        return (sp.diags(inv) @ self.adjacency).tocsr()

    @cached_property
    def mean_aggregation_t(self) -> sp.csr_matrix:
        return self.mean_aggregation.T.tocsr()

    @cached_property
    def sparse_features(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.features)

    @cached_property
    def sparse_features_t(self) -> sp.csr_matrix:
        return self.sparse_features.T.tocsr()

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def same_as(self, other: Graph) -> bool:
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


def graph_from_edges(
    num_nodes: int,
    edges: np.ndarray | Sequence[tuple[int, int]],
    features: np.ndarray,
    labels: np.ndarray | Sequence[int],
    num_classes: int | None = None,
    class_names: Sequence[str] = (),
    name: str = "",
) -> Graph:
    """Symmetrize, deduplicate and drop self-loops, then pack into CSR."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
        raise DatasetError("edge endpoint outside [0, num_nodes)")
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    u, v = edges[:, 0], edges[:, 1]
    keep = u != v
    rows = np.concatenate([u[keep], v[keep]])
    cols = np.concatenate([v[keep], u[keep]])
    adj = sp.coo_matrix((np.ones(rows.shape[0]), (rows, cols)), shape=(num_nodes, num_nodes)).tocsr()
    adj.sum_duplicates()
    adj.sort_indices()
    return Graph(
        indptr=adj.indptr.copy(),
        indices=adj.indices.copy(),
        features=np.asarray(features, dtype=np.float64),
        labels=labels,
        num_classes=num_classes,
        class_names=tuple(class_names),
        name=name,
    )


def row_normalize(x: np.ndarray) -> np.ndarray:
    """Divide each nonzero row by its L1 norm."""
    x = np.asarray(x, dtype=np.float64)
    s = np.abs(x).sum(axis=1, keepdims=True)
    return np.divide(x, s, out=np.zeros_like(x), where=s > 0)


# ---------------------------------------------------------------------------
# On-disk formats
# ---------------------------------------------------------------------------

def save_canonical(g: Graph, path: str | Path) -> Path:
    """Write ``edges.tsv``, ``features.csv``, ``labels.csv`` and ``meta.json``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "edges.tsv", "w") as f:
        for u, v in g.edge_list():
            f.write(f"{u}\t{v}\n")
    with open(path / "features.csv", "w") as f:
        for row in g.features:
            f.write(",".join(repr(float(x)) for x in row) + "\n")
    with open(path / "labels.csv", "w") as f:
        f.writelines(f"{int(y)}\n" for y in g.labels)
    meta = {
        "name": g.name,
        "num_nodes": g.num_nodes,
        "d": g.num_features,
        "m": g.num_classes,
        "class_names": list(g.class_names),
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return path


def _require(path: Path) -> Path:
    if not path.exists():
        raise DatasetError(f"{path}: file not found")
    return path


def _load_canonical(path: Path, normalize: bool) -> Graph:
    meta_path = _require(path / "meta.json")
    try:
        meta = json.loads(meta_path.read_text())
        n, d, m = int(meta["num_nodes"]), int(meta["d"]), int(meta["m"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{meta_path}: invalid metadata ({exc})") from exc

    edges = []
    edge_path = _require(path / "edges.tsv")
    with open(edge_path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DatasetError(f"{edge_path}:{lineno}: expected two columns, got {len(parts)}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise DatasetError(f"{edge_path}:{lineno}: non-integer endpoint") from exc
            if not (0 <= u < n and 0 <= v < n):
                raise DatasetError(f"{edge_path}:{lineno}: dangling endpoint ({u}, {v}) with {n} nodes")
            edges.append((u, v))

    feat_path = _require(path / "features.csv")
    features = np.zeros((n, d))
    rows = 0
    with open(feat_path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            vals = line.strip().split(",")
            if len(vals) != d:
                raise DatasetError(f"{feat_path}:{lineno}: expected {d} features, got {len(vals)}")
            if rows >= n:
                raise DatasetError(f"{feat_path}:{lineno}: more than {n} feature rows")
            try:
                features[rows] = [float(x) for x in vals]
            except ValueError as exc:
                raise DatasetError(f"{feat_path}:{lineno}: non-numeric feature") from exc
            rows += 1
    if rows != n:
        raise DatasetError(f"{feat_path}: {rows} feature rows, expected {n}")

    label_path = _require(path / "labels.csv")
    labels = []
    with open(label_path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                y = int(line)
            except ValueError as exc:
                raise DatasetError(f"{label_path}:{lineno}: non-integer label") from exc
            if not 0 <= y < m:
                raise DatasetError(f"{label_path}:{lineno}: label {y} out of range [0, {m})")
            labels.append(y)
    if len(labels) != n:
        raise DatasetError(f"{label_path}: {len(labels)} labels, expected {n}")

    if normalize:
        features = row_normalize(features)
    return graph_from_edges(
        n, np.array(edges, dtype=np.int64).reshape(-1, 2), features, labels, m,
        class_names=meta.get("class_names", ()), name=meta.get("name", path.name),
    )


def _load_linqs(path: Path, name: str, skip_dangling: bool, normalize: bool) -> Graph:
    """LINQS ``<name>.content`` / ``<name>.cites`` files.

    Classes are numbered in order of first appearance in the content file.
    """
    content = _require(path / f"{name}.content")
    cites = _require(path / f"{name}.cites")
    ids: dict[str, int] = {}
    rows, label_names = [], []
    d = None
    with open(content) as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if d is None:
                d = len(parts) - 2
            elif len(parts) - 2 != d:
                raise DatasetError(f"{content}:{lineno}: expected {d} features, got {len(parts) - 2}")
            if parts[0] in ids:
                raise DatasetError(f"{content}:{lineno}: duplicate paper id {parts[0]}")
            ids[parts[0]] = len(ids)
            rows.append(np.array(parts[1:-1], dtype=np.float64))
            label_names.append(parts[-1])
    classes = list(dict.fromkeys(label_names))
    cls_index = {c: i for i, c in enumerate(classes)}
    labels = np.array([cls_index[c] for c in label_names])
    edges = []
    with open(cites) as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise DatasetError(f"{cites}:{lineno}: expected two columns")
            if parts[0] not in ids or parts[1] not in ids:
                if skip_dangling:
                    continue
                missing = parts[0] if parts[0] not in ids else parts[1]
                raise DatasetError(f"{cites}:{lineno}: dangling endpoint {missing}")
            edges.append((ids[parts[1]], ids[parts[0]]))
    features = np.vstack(rows)
    return graph_from_edges(
        len(ids), np.array(edges, dtype=np.int64).reshape(-1, 2),
        row_normalize(features) if normalize else features,
        labels, len(classes), class_names=classes, name=name,
    )


def _load_pickle(p: Path):
    with open(_require(p), "rb") as f:
        try:
            return pickle.load(f, encoding="latin1")
        except Exception as exc:
            raise DatasetError(f"{p}: cannot unpickle ({exc})") from exc


def _load_planetoid_ind(path: Path, name: str, normalize: bool) -> Graph:
    """Kipf/Yang ``ind.<name>.{x,tx,allx,y,ty,ally,graph,test.index}`` files."""
    parts = {k: _load_pickle(path / f"ind.{name}.{k}") for k in ("x", "tx", "allx", "y", "ty", "ally", "graph")}
    index_path = _require(path / f"ind.{name}.test.index")
    test_idx = []
    with open(index_path) as f:
        for lineno, line in enumerate(f, 1):
            if line.strip():
                try:
                    test_idx.append(int(line))
                except ValueError as exc:
                    raise DatasetError(f"{index_path}:{lineno}: non-integer index") from exc
    test_idx = np.array(test_idx)
    test_sorted = np.sort(test_idx)

    tx, ty = sp.csr_matrix(parts["tx"]), np.asarray(parts["ty"])
    if name == "citeseer":
        # isolated test nodes are missing from tx/ty; pad with zero rows
        full = np.arange(test_sorted.min(), test_sorted.max() + 1)
        tx_ext = sp.lil_matrix((len(full), tx.shape[1]))
        tx_ext[test_sorted - test_sorted.min(), :] = tx
        ty_ext = np.zeros((len(full), ty.shape[1]))
        ty_ext[test_sorted - test_sorted.min(), :] = ty
        tx, ty = tx_ext.tocsr(), ty_ext
    allx = sp.csr_matrix(parts["allx"])
    if allx.shape[1] != tx.shape[1]:
        raise DatasetError(f"{path}: allx has {allx.shape[1]} columns, tx has {tx.shape[1]}")
    features = sp.vstack([allx, tx]).tolil()
    features[test_idx, :] = features[test_sorted, :]
    onehot = np.vstack([np.asarray(parts["ally"]), ty])
    onehot[test_idx, :] = onehot[test_sorted, :]
    n = features.shape[0]
    labels = onehot.argmax(axis=1)
    labels[onehot.sum(axis=1) == 0] = 0

    edges = []
    for u, nbrs in parts["graph"].items():
        for v in nbrs:
            if not (0 <= u < n and 0 <= v < n):
                raise DatasetError(f"{path / f'ind.{name}.graph'}: dangling endpoint ({u}, {v}) with {n} nodes")
            edges.append((u, v))
    return graph_from_edges(
        n, np.array(edges, dtype=np.int64).reshape(-1, 2),
        row_normalize(features.toarray()) if normalize else features.toarray(),
        labels, onehot.shape[1], name=name,
    )


def load_dataset(
    path: str | Path,
    format: str = "canonical",
    name: str | None = None,
    normalize: bool = True,
    skip_dangling: bool = False,
) -> Graph:
    """Load a graph.

    ``format`` is ``canonical`` (directory written by :func:`save_canonical`)
    or ``planetoid-raw``, which accepts either the ``ind.<name>.*`` pickles or
    the LINQS ``<name>.content``/``<name>.cites`` pair found in ``path``.
    Features are L1 row-normalized unless ``normalize=False``.
    """
    path = Path(path)
    if not path.is_dir():
        raise DatasetError(f"{path}: dataset directory not found")
    if format == "canonical":
        return _load_canonical(path, normalize)
    if format != "planetoid-raw":
        raise DatasetError(f"unknown dataset format {format!r}")
    if name is None:
        found = sorted(path.glob("ind.*.graph")) or sorted(path.glob("*.content"))
        if not found:
            raise DatasetError(f"{path}: no ind.<name>.graph or <name>.content file")
        fname = found[0].name
        name = fname.split(".")[1] if fname.startswith("ind.") else fname[: -len(".content")]
    if (path / f"ind.{name}.graph").exists():
        return _load_planetoid_ind(path, name, normalize)
    return _load_linqs(path, name, skip_dangling, normalize)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class SplitSpec:
    minority_classes: tuple[int, ...]
    majority_count: int = 20
    imbalance_ratio: float = 1.0
    val_per_class: int = 30
    test_per_class: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.imbalance_ratio <= 1.0:
            raise SplitError(f"imbalance ratio {self.imbalance_ratio} outside (0, 1]")
        object.__setattr__(self, "minority_classes", tuple(sorted(int(c) for c in self.minority_classes)))
        if self.minority_count < 1:
            raise SplitError("minority training count rounds to zero")

    @property
    def minority_count(self) -> int:
        return round_half_up(self.majority_count * self.imbalance_ratio)

    def train_count(self, c: int) -> int:
        return self.minority_count if c in self.minority_classes else self.majority_count


@dataclass(frozen=True, eq=False)
class Split:
    train: np.ndarray
    train_labels: np.ndarray
    val: np.ndarray
    test: np.ndarray
    unlabelled: np.ndarray
    minority_classes: tuple[int, ...]
    num_classes: int

    def __post_init__(self) -> None:
        for f in ("train", "train_labels", "val", "test", "unlabelled"):
            object.__setattr__(self, f, _frozen(np.asarray(getattr(self, f), dtype=np.int64)))

    @property
    def majority_classes(self) -> tuple[int, ...]:
        return tuple(c for c in range(self.num_classes) if c not in self.minority_classes)

    def train_counts(self) -> np.ndarray:
        return np.bincount(self.train_labels, minlength=self.num_classes)

    def to_json(self) -> dict:
        return {
            "train": self.train.tolist(),
            "train_labels": self.train_labels.tolist(),
            "val": self.val.tolist(),
            "test": self.test.tolist(),
            "minority_classes": list(self.minority_classes),
            "num_classes": self.num_classes,
            "num_unlabelled": int(self.unlabelled.shape[0]),
        }


def draw_minority_classes(num_classes: int, count: int, seed: int) -> tuple[int, ...]:
    if not 0 < count < num_classes:
        raise SplitError(f"cannot choose {count} minority classes out of {num_classes}")
    rng = np.random.default_rng([seed, 7])
    return tuple(sorted(int(c) for c in rng.choice(num_classes, size=count, replace=False)))


def make_imbalanced_split(g: Graph, spec: SplitSpec) -> Split:
    """Draw the imbalanced train / balanced val / balanced test partition.

    Per class, nodes are shuffled with a seeded generator and the first
    ``train + val + test`` of them are taken; every other node is unlabelled.
    """
    bad = [c for c in spec.minority_classes if not 0 <= c < g.num_classes]
    if bad:
        raise SplitError(f"minority classes {bad} outside [0, {g.num_classes})")
    rng = np.random.default_rng(spec.seed)
    train, train_y, val, test = [], [], [], []
    for c in range(g.num_classes):
        members = np.flatnonzero(g.labels == c)
        n_train = spec.train_count(c)
        need = n_train + spec.val_per_class + spec.test_per_class
        if members.shape[0] < need:
            raise SplitError(f"class {c} has {members.shape[0]} nodes, needs {need}")
        perm = rng.permutation(members)
        train.append(perm[:n_train])
        train_y.append(np.full(n_train, c))
        val.append(perm[n_train:n_train + spec.val_per_class])
        test.append(perm[n_train + spec.val_per_class:need])
    train_a, val_a, test_a = np.concatenate(train), np.concatenate(val), np.concatenate(test)
    taken = np.zeros(g.num_nodes, dtype=bool)
    taken[train_a] = taken[val_a] = taken[test_a] = True
    return Split(
        train=train_a,
        train_labels=np.concatenate(train_y),
        val=np.sort(val_a),
        test=np.sort(test_a),
        unlabelled=np.flatnonzero(~taken),
        minority_classes=spec.minority_classes,
        num_classes=g.num_classes,
    )


def make_synthetic_graph(
    num_nodes: int,
    m: int,
    intra_p: float,
    inter_p: float,
    d: int,
    seed: int,
    feature_noise: float = 0.5,
) -> Graph:
    """Planted-partition graph with class-indicator-plus-noise features.

    Node ``v`` belongs to block ``v // (num_nodes // m)``. Feature column
    ``label % d`` carries a 1, and every entry gets uniform noise in
    ``[0, feature_noise)``.
    """
    for p in (intra_p, inter_p):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"edge probability {p} outside [0, 1]")
    if m < 1 or num_nodes % m:
        raise ValueError(f"num_nodes={num_nodes} not divisible by m={m}")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(m), num_nodes // m)
    iu, ju = np.triu_indices(num_nodes, k=1)
    prob = np.where(labels[iu] == labels[ju], intra_p, inter_p)
    hit = rng.random(iu.shape[0]) < prob
    features = rng.random((num_nodes, d)) * feature_noise
    features[np.arange(num_nodes), labels % d] += 1.0
    return graph_from_edges(
        num_nodes, np.stack([iu[hit], ju[hit]], axis=1), features, labels, m, name="synthetic",
    )
