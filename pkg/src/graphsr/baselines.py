"""Reference imbalance-handling methods: loss re-weighting, resampling, naive pseudo-label selection."""

from __future__ import annotations

from enum import Enum

import numpy as np

from .graph import Split
from .similarity import compute_centers, rank_by_distance


class BaselineKind(str, Enum):
    VANILLA = "vanilla"
    RE_WEIGHTING = "re_weighting"
    EN_WEIGHTING = "en_weighting"
    OVER_SAMPLING = "over_sampling"
    CB_SAMPLING = "cb_sampling"
    RU_SELECTION = "ru_selection"
    SU_SELECTION = "su_selection"


WEIGHTING = (BaselineKind.RE_WEIGHTING, BaselineKind.EN_WEIGHTING)
SAMPLING = (BaselineKind.OVER_SAMPLING, BaselineKind.CB_SAMPLING)
SELECTION = (BaselineKind.RU_SELECTION, BaselineKind.SU_SELECTION)


def class_weights(kind: BaselineKind | str, class_counts, beta: float = 0.9999) -> np.ndarray:
    """Per-class loss weights normalized to sum to the number of classes.

    re_weighting uses 1/n; en_weighting uses the inverse effective number
    (1 - beta) / (1 - beta**n).
    """
    kind = BaselineKind(kind)
    n = np.asarray(class_counts, dtype=np.float64)
    if np.any(n < 1):
        raise ValueError("class counts must be at least 1")
    if kind is BaselineKind.RE_WEIGHTING:
        w = 1.0 / n
    elif kind is BaselineKind.EN_WEIGHTING:
        if not 0.0 <= beta < 1.0:
            raise ValueError("beta must be in [0, 1)")
        w = (1.0 - beta) / (1.0 - np.power(beta, n))
    else:
        raise ValueError(f"{kind.value} is not a weighting baseline")
    return w * (n.shape[0] / w.sum())


def resample(kind: BaselineKind | str, split: Split, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Training multiset (nodes, labels) for the sampling baselines.

    over_sampling tops each class up to the largest class count by drawing
    its own nodes with replacement. cb_sampling draws ``|V_L|`` examples,
    each by picking a class uniformly and then one of its nodes.
    """
    kind = BaselineKind(kind)
    rng = np.random.default_rng([seed, 31])
    by_class = {int(c): split.train[split.train_labels == c] for c in np.unique(split.train_labels)}
    classes = sorted(by_class)
    if kind is BaselineKind.OVER_SAMPLING:
        target = max(v.shape[0] for v in by_class.values())
        nodes, labels = [split.train], [split.train_labels]
        for c in classes:
            extra = target - by_class[c].shape[0]
            if extra > 0:
                nodes.append(rng.choice(by_class[c], size=extra, replace=True))
                labels.append(np.full(extra, c))
        return np.concatenate(nodes).astype(np.int64), np.concatenate(labels).astype(np.int64)
    if kind is BaselineKind.CB_SAMPLING:
        total = split.train.shape[0]
        picked = rng.integers(len(classes), size=total)
        nodes = np.array([rng.choice(by_class[classes[i]]) for i in picked], dtype=np.int64)
        return nodes, np.asarray(classes, dtype=np.int64)[picked]
    raise ValueError(f"{kind.value} is not a sampling baseline")


def unlabeled_selection(
    kind: BaselineKind | str,
    embeddings: np.ndarray,
    pseudo_labels: np.ndarray,
    split: Split,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Pseudo-labelled supplement that fills each minority class up to the majority count.

    ``pseudo_labels`` is indexed by node id. ru_selection samples uniformly
    from the pool of unlabelled nodes predicted as the class; su_selection
    takes the pool in order of distance to the class center. A pool smaller
    than the gap is used whole.
    """
    kind = BaselineKind(kind)
    if kind not in SELECTION:
        raise ValueError(f"{kind.value} is not a selection baseline")
    rng = np.random.default_rng([seed, 37])
    counts = split.train_counts()
    target = int(counts.max())
    centers = {c.class_id: c.center for c in compute_centers(embeddings, split)} if kind is BaselineKind.SU_SELECTION else {}
    nodes, labels = [], []
    for c in split.minority_classes:
        gap = max(target - int(counts[c]), 0)
        pool = split.unlabelled[pseudo_labels[split.unlabelled] == c]
        take = min(gap, pool.shape[0])
        if take == 0:
            continue
        if kind is BaselineKind.RU_SELECTION:
            chosen = rng.choice(pool, size=take, replace=False)
        else:
            chosen = rank_by_distance(embeddings, pool, centers[c])[0][:take]
        nodes.append(chosen)
        labels.append(np.full(take, c))
    if not nodes:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(nodes).astype(np.int64), np.concatenate(labels).astype(np.int64)
