from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphsr.baselines import BaselineKind, class_weights, resample, unlabeled_selection
from graphsr.graph import Split
from graphsr.similarity import ClassCenter, build_candidates


def make_split(counts, unlabelled, minority, seed=0):
    """Train nodes are laid out class by class starting at id 0."""
    train, labels = [], []
    nxt = 0
    for c, n in enumerate(counts):
        train.extend(range(nxt, nxt + n))
        labels.extend([c] * n)
        nxt += n
    empty = np.zeros(0, dtype=np.int64)
    return Split(np.array(train), np.array(labels), empty, empty, np.asarray(unlabelled, dtype=np.int64),
                 tuple(minority), len(counts))


def test_balanced_counts_give_unit_weights():
    for kind in ("re_weighting", "en_weighting"):
        assert np.allclose(class_weights(kind, [7, 7, 7]), 1.0)


def test_re_weighting_ratio():
    w = class_weights("re_weighting", [20, 6])
    assert w[1] / w[0] == pytest.approx(20 / 6)
    assert w.sum() == pytest.approx(2.0)


def test_en_weighting_closed_form():
    beta = 0.9999
    n = np.array([20.0, 6.0, 6.0])
    raw = [(1 - beta) / (1 - beta**k) for k in n]
    expected = np.array(raw) * 3 / sum(raw)
    assert np.allclose(class_weights("en_weighting", n, beta), expected, rtol=1e-12)
    # beta -> 0 makes every class count as one effective sample
    assert np.allclose(class_weights("en_weighting", n, 0.0), 1.0)


@given(st.lists(st.integers(1, 500), min_size=2, max_size=8))
@settings(max_examples=60, deadline=None)
def test_weights_positive_and_antitone(counts):
    for kind in ("re_weighting", "en_weighting"):
        w = class_weights(kind, counts)
        assert np.all(w > 0) and w.sum() == pytest.approx(len(counts))
        order = np.argsort(counts, kind="stable")
        assert np.all(np.diff(w[order]) <= 1e-12)


def test_weight_errors():
    with pytest.raises(ValueError):
        class_weights("re_weighting", [3, 0])
    with pytest.raises(ValueError):
        class_weights("over_sampling", [3, 3])
    with pytest.raises(ValueError):
        class_weights("en_weighting", [3, 3], beta=1.0)


def test_over_sampling_tops_up_to_majority():
    split = make_split([20, 6], [], (1,))
    nodes, labels = resample("over_sampling", split, seed=3)
    assert np.bincount(labels).tolist() == [20, 20]
    assert set(nodes[labels == 1].tolist()) <= set(range(20, 26))
    assert np.array_equal(nodes[:26], split.train)


def test_over_sampling_balanced_is_unchanged():
    split = make_split([5, 5, 5], [], (2,))
    nodes, labels = resample("over_sampling", split)
    assert np.array_equal(nodes, split.train) and np.array_equal(labels, split.train_labels)


def test_cb_sampling_class_uniform():
    split = make_split([300, 10, 10, 10], [], (1, 2, 3))
    n = split.train.shape[0]
    draws = []
    for seed in range(int(np.ceil(10_000 / n))):
        _, labels = resample("cb_sampling", split, seed)
        draws.append(labels)
    labels = np.concatenate(draws)
    total = labels.shape[0]
    sigma = np.sqrt(total * 0.25 * 0.75)
    for c in range(4):
        assert abs(np.sum(labels == c) - total / 4) < 3 * sigma
    nodes, labels = resample("cb_sampling", split, 0)
    assert nodes.shape[0] == n
    assert np.array_equal(split.train_labels[np.searchsorted(split.train, nodes)], labels)


def test_resample_deterministic_and_errors():
    split = make_split([20, 6], [], (1,))
    a, b = resample("cb_sampling", split, 5), resample("cb_sampling", split, 5)
    assert np.array_equal(a[0], b[0])
    with pytest.raises(ValueError):
        resample("ru_selection", split)


def selection_instance(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, 5))
    minority = tuple(sorted(rng.choice(m, size=int(rng.integers(1, m)), replace=False).tolist()))
    counts = [int(rng.integers(1, 5)) if c in minority else 12 for c in range(m)]
    n_train = sum(counts)
    n_unl = int(rng.integers(0, 60))
    n = n_train + n_unl
    z = rng.normal(size=(n, 3))
    pseudo = rng.integers(m, size=n)
    split = make_split(counts, np.arange(n_train, n), minority)
    return z, pseudo, split


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_selection_sizes_are_min_gap_pool(seed):
    z, pseudo, split = selection_instance(seed)
    counts = split.train_counts()
    for kind in ("ru_selection", "su_selection"):
        nodes, labels = unlabeled_selection(kind, z, pseudo, split, seed)
        assert set(nodes.tolist()) <= set(split.unlabelled.tolist())
        assert len(set(nodes.tolist())) == nodes.shape[0]
        assert np.all(pseudo[nodes] == labels)
        for c in split.minority_classes:
            pool = int(np.sum(pseudo[split.unlabelled] == c))
            gap = int(counts.max() - counts[c])
            assert int(np.sum(labels == c)) == min(gap, pool)
        assert set(labels.tolist()) <= set(split.minority_classes)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_su_is_prefix_of_similarity_order(seed):
    z, pseudo, split = selection_instance(seed)
    counts = split.train_counts()
    nodes, labels = unlabeled_selection("su_selection", z, pseudo, split)
    for c in split.minority_classes:
        center = z[split.train[split.train_labels == c]].mean(axis=0)
        full = build_candidates(z, pseudo, [ClassCenter(c, center)], len(z), split.unlabelled)
        gap = int(counts.max() - counts[c])
        assert nodes[labels == c].tolist() == full.nodes[:gap].tolist()


def test_empty_pool_gives_no_supplement():
    z = np.zeros((25, 2))
    split = make_split([20, 3], np.arange(23, 25), (1,))
    nodes, labels = unlabeled_selection("ru_selection", z, np.zeros(25, dtype=int), split)
    assert nodes.shape == (0,) and labels.shape == (0,)
    with pytest.raises(ValueError):
        unlabeled_selection("vanilla", z, np.zeros(25, dtype=int), split)


def test_kind_values():
    assert BaselineKind("su_selection") is BaselineKind.SU_SELECTION
    with pytest.raises(ValueError):
        BaselineKind("graphsmote")
