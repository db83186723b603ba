"""Candidate pool of unlabelled nodes closest to each minority-class center."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import Split


@dataclass(frozen=True)
class ClassCenter:
    class_id: int
    center: np.ndarray


@dataclass(frozen=True)
class Candidate:
    node: int
    pseudo_label: int
    distance: float


@dataclass
class CandidateSet:
    """Candidates ordered by class id, then distance, then node id."""

    entries: list[Candidate]
    k: int
    phi: dict[int, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i: int) -> Candidate:
        return self.entries[i]

    @property
    def nodes(self) -> np.ndarray:
        return np.array([c.node for c in self.entries], dtype=np.int64)

    @property
    def labels(self) -> np.ndarray:
        return np.array([c.pseudo_label for c in self.entries], dtype=np.int64)

    def for_class(self, c: int) -> list[Candidate]:
        return [e for e in self.entries if e.pseudo_label == c]

    def class_sizes(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for e in self.entries:
            out[e.pseudo_label] = out.get(e.pseudo_label, 0) + 1
        return out

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["node_id", "class", "distance"])
            for e in self.entries:
                w.writerow([e.node, e.pseudo_label, repr(e.distance)])


def compute_centers(embeddings: np.ndarray, split: Split, classes=None) -> list[ClassCenter]:
    """Mean embedding of the labelled training nodes of each class.

    ``classes`` defaults to the split's minority classes.
    """
    classes = split.minority_classes if classes is None else classes
    out = []
    for c in sorted(classes):
        members = split.train[split.train_labels == c]
        if members.shape[0] == 0:
            raise ValueError(f"class {c} has no labelled training nodes")
        out.append(ClassCenter(int(c), embeddings[members].mean(axis=0)))
    return out


def rank_by_distance(embeddings: np.ndarray, nodes: np.ndarray, center: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``nodes`` sorted by Euclidean distance to ``center`` (ties: lower id first)."""
    nodes = np.asarray(nodes, dtype=np.int64)
    dist = np.linalg.norm(embeddings[nodes] - center, axis=1)
    order = np.lexsort((nodes, dist))
    return nodes[order], dist[order]


def build_candidates(
    embeddings: np.ndarray,
    pseudo_labels: np.ndarray,
    centers: list[ClassCenter],
    k: int,
    unlabelled: np.ndarray,
) -> CandidateSet:
    """Top-``k`` nearest pseudo-labelled unlabelled nodes per minority class.

    ``pseudo_labels`` is indexed by node id (length ``num_nodes``).
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    unlabelled = np.asarray(unlabelled, dtype=np.int64)
    entries, phi = [], {}
    for cen in sorted(centers, key=lambda c: c.class_id):
        pool = unlabelled[pseudo_labels[unlabelled] == cen.class_id]
        nodes, dist = rank_by_distance(embeddings, pool, cen.center)
        nodes, dist = nodes[:k], dist[:k]
        entries.extend(Candidate(int(v), cen.class_id, float(d)) for v, d in zip(nodes, dist))
        if nodes.shape[0]:
            phi[cen.class_id] = float(dist[-1])
    return CandidateSet(entries, k, phi)
