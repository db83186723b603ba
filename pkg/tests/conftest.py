from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from graphsr.graph import Graph, graph_from_edges

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


def random_graph(rng: np.random.Generator, n: int, d: int, m: int = 2, p: float = 0.3) -> Graph:
    iu, ju = np.triu_indices(n, k=1)
    hit = rng.random(iu.shape[0]) < p
    labels = np.arange(n) % m
    return graph_from_edges(n, np.stack([iu[hit], ju[hit]], axis=1), rng.normal(size=(n, d)), labels, m)


def central_diff(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Gradient of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max elementwise |a-b| / max(|a|+|b|, 1e-6)."""
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-6)))


def cora_dir() -> Path | None:
    p = os.environ.get("GRAPHSR_CORA_DIR")
    return Path(p) if p else None


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
