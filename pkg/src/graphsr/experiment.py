"""Multi-seed experiment runner, per-seed artifacts and report tables."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from .baselines import SAMPLING, SELECTION, WEIGHTING, BaselineKind, class_weights, resample, unlabeled_selection
from .gnn import ARCHS, TrainConfig, evaluate, pseudo_label, train
from .graph import Graph, Split, SplitSpec, draw_minority_classes, load_dataset, make_imbalanced_split
from .metrics import EvalReport, confusion_counts
from .rl import PolicyAgent, RLConfig, SelectionEnv, select_supplement
from .similarity import build_candidates, compute_centers

log = logging.getLogger(__name__)

METHODS = ("graphsr",) + tuple(k.value for k in BaselineKind)
METRICS = ("acc", "macro_f1", "auc_roc")


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = ""
    dataset_format: str = "canonical"
    dataset_name: str | None = None
    arch: str = "gcn"
    method: str = "graphsr"
    imbalance_ratio: float = 0.3
    minority_classes: tuple[int, ...] | None = None
    num_minority: int | None = None
    majority_count: int = 20
    val_per_class: int = 30
    test_per_class: int = 100
    k: int = 20
    beta: float = 0.9999
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    out_dir: str = "out"
    run_id: str | None = None
    workers: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    rl: RLConfig = field(default_factory=RLConfig)

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if not 0.0 < self.imbalance_ratio <= 1.0:
            raise ValueError(f"imbalance_ratio {self.imbalance_ratio} outside (0, 1]")
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.minority_classes is not None:
            object.__setattr__(self, "minority_classes", tuple(sorted(int(c) for c in self.minority_classes)))

    @property
    def resolved_run_id(self) -> str:
        if self.run_id:
            return self.run_id
        name = self.dataset_name or Path(self.dataset).name or "dataset"
        return f"{name}-{self.arch}-{self.method}-rho{self.imbalance_ratio:g}"

    def minority_for(self, num_classes: int, seed: int) -> tuple[int, ...]:
        """Explicit minority classes, else ``num_minority`` (default m // 2) classes drawn with ``seed``."""
        if self.minority_classes is not None:
            bad = [c for c in self.minority_classes if not 0 <= c < num_classes]
            if bad:
                raise ValueError(f"minority classes {bad} out of range for {num_classes} classes")
            return self.minority_classes
        count = num_classes // 2 if self.num_minority is None else self.num_minority
        return draw_minority_classes(num_classes, count, seed)

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        if self.minority_classes is not None:
            d["minority_classes"] = list(self.minority_classes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        d = dict(d)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key, sub in (("train", TrainConfig), ("rl", RLConfig)):
            if isinstance(d.get(key), dict):
                sub_names = {f.name for f in dataclasses.fields(sub)}
                bad = set(d[key]) - sub_names
                if bad:
                    raise ValueError(f"unknown {key} keys: {sorted(bad)}")
                d[key] = sub(**d[key])
        for key in ("seeds", "minority_classes"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: list[str] | None = None) -> ExperimentConfig:
        """TOML file (top-level keys plus ``[train]`` / ``[rl]`` tables) and ``key=value`` overrides.

        Override keys may be dotted, e.g. ``rl.epochs=5``; values are parsed
        as TOML, falling back to a bare string.
        """
        d: dict = {}
        if path is not None:
            with open(path, "rb") as f:
                d = tomli.load(f)
        for item in overrides or []:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ValueError(f"override {item!r} is not key=value")
            try:
                value = tomli.loads(f"v = {raw}")["v"]
            except tomli.TOMLDecodeError:
                value = raw
            *parents, leaf = key.strip().split(".")
            node = d
            for p in parents:
                node = node.setdefault(p, {})
            node[leaf] = value
        return cls.from_dict(d)


@dataclass
class SeedResult:
    seed: int
    report: EvalReport
    train_size: int
    labelled_counts: dict[int, int]
    supplement_counts: dict[int, int] = field(default_factory=dict)
    candidate_counts: dict[int, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "report": self.report.to_json(),
            "train_size": self.train_size,
            "labelled_counts": {str(k): v for k, v in sorted(self.labelled_counts.items())},
            "supplement_counts": {str(k): v for k, v in sorted(self.supplement_counts.items())},
            "candidate_counts": {str(k): v for k, v in sorted(self.candidate_counts.items())},
        }

    @classmethod
    def from_json(cls, d: dict) -> SeedResult:
        def ints(m):
            return {int(k): int(v) for k, v in m.items()}
        return cls(d["seed"], EvalReport.from_json(d["report"]), d["train_size"], ints(d["labelled_counts"]),
                   ints(d.get("supplement_counts", {})), ints(d.get("candidate_counts", {})))


def _mean_std(values: list[float]) -> tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    std = float(np.std(a, ddof=1)) if a.shape[0] > 1 else 0.0
    return float(np.mean(a)), std


@dataclass
class RunResult:
    """Aggregate over seeds. ``seconds`` is kept out of the JSON so reruns compare byte for byte.

    ``minority_classes`` is empty when the classes were drawn per seed; each
    seed's ``labelled_counts`` is keyed by its own minority classes.
    """

    dataset: str
    arch: str
    method: str
    imbalance_ratio: float
    minority_classes: list[int]
    seeds: list[SeedResult]
    failures: dict[int, str] = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def mean(self) -> dict[str, float]:
        return {m: _mean_std([getattr(s.report, m) for s in self.seeds])[0] for m in METRICS}

    @property
    def std(self) -> dict[str, float]:
        return {m: _mean_std([getattr(s.report, m) for s in self.seeds])[1] for m in METRICS}

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "arch": self.arch,
            "method": self.method,
            "imbalance_ratio": self.imbalance_ratio,
            "minority_classes": list(self.minority_classes),
            "seeds": [s.to_json() for s in self.seeds],
            "failures": {str(k): v for k, v in sorted(self.failures.items())},
            "mean": self.mean,
            "std": self.std,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, d: dict) -> RunResult:
        return cls(d["dataset"], d["arch"], d["method"], d["imbalance_ratio"], list(d["minority_classes"]),
                   [SeedResult.from_json(s) for s in d["seeds"]],
                   {int(k): v for k, v in d.get("failures", {}).items()})

    @classmethod
    def load(cls, path: str | Path) -> RunResult:
        with open(path) as f:
            return cls.from_json(json.load(f))


def load_graph(cfg: ExperimentConfig) -> Graph:
    return load_dataset(cfg.dataset, cfg.dataset_format, cfg.dataset_name)


def make_split(cfg: ExperimentConfig, g: Graph, seed: int) -> Split:
    spec = SplitSpec(cfg.minority_for(g.num_classes, seed), cfg.majority_count, cfg.imbalance_ratio,
                     cfg.val_per_class, cfg.test_per_class, seed)
    return make_imbalanced_split(g, spec)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_seed(cfg: ExperimentConfig, g: Graph, seed: int, out: Path | None = None) -> SeedResult:
    """One seed of the configured method, from split to test-set report."""
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    split = make_split(cfg, g, seed)
    tcfg = dataclasses.replace(cfg.train, seed=seed)
    counts = split.train_counts()
    labelled = {int(c): int(counts[c]) for c in split.minority_classes}
    if out is not None:
        _write_json(out / "split.json", split.to_json())
    kind = cfg.method
    nodes, labels = split.train, split.train_labels
    supplement: dict[int, int] = {}
    cand_counts: dict[int, int] = {}
    weights = None

    if kind in {k.value for k in WEIGHTING}:
        weights = class_weights(kind, counts, cfg.beta)
    elif kind in {k.value for k in SAMPLING}:
        nodes, labels = resample(kind, split, seed)
    elif kind in {k.value for k in SELECTION} or kind == "graphsr":
        g_model = train(g, split.train, split.train_labels, split.val, tcfg, cfg.arch)
        if out is not None:
            g_model.save(out / "initial_model")
        z = g_model.embed(g)
        pl = pseudo_label(g_model, g)
        if kind == "graphsr":
            cands = build_candidates(z, pl, compute_centers(z, split), cfg.k, split.unlabelled)
            cand_counts = {c: cands.class_sizes().get(c, 0) for c in split.minority_classes}
            if out is not None:
                cands.to_csv(out / "candidates.csv")
            supplement = {int(c): 0 for c in split.minority_classes}
            if len(cands):
                env = SelectionEnv(g, split, g_model, cands, z, tcfg, cfg.rl, seed=seed)
                agent = PolicyAgent.for_env(env, cfg.rl, seed=seed)
                sup = select_supplement(agent, env, cfg.rl.epochs, log_dir=out)
                supplement = sup.counts
                extra_nodes, extra_labels = np.array(sup.nodes, dtype=np.int64), np.array(sup.labels, dtype=np.int64)
            else:
                log.warning("seed %d: candidate set is empty, no supplement", seed)
                extra_nodes = extra_labels = np.zeros(0, dtype=np.int64)
        else:
            extra_nodes, extra_labels = unlabeled_selection(kind, z, pl, split, seed)
            supplement = {int(c): int(np.sum(extra_labels == c)) for c in split.minority_classes}
        nodes = np.concatenate([split.train, extra_nodes])
        labels = np.concatenate([split.train_labels, extra_labels])
        if out is not None:
            _write_json(out / "supplement.json", {"nodes": extra_nodes.tolist(), "labels": extra_labels.tolist()})

    model = train(g, nodes, labels, split.val, tcfg, cfg.arch, class_weights=weights)
    report = evaluate(model, g, split.test)
    if out is not None:
        model.save(out / "final_model")
        _write_json(out / "report.json", report.to_json())
    return SeedResult(seed, report, int(len(nodes)), labelled, supplement, cand_counts)


def _seed_job(args) -> tuple[int, SeedResult | None, str | None]:
    cfg, g, seed, out = args
    try:
        return seed, run_seed(cfg, g, seed, out), None
    except Exception as e:  # one bad seed should not sink the run
        log.exception("seed %d failed", seed)
        return seed, None, f"{type(e).__name__}: {e}"


def run_method(cfg: ExperimentConfig, g: Graph | None = None, write: bool = True) -> RunResult:
    """All seeds of ``cfg``; per-seed artifacts go to ``out_dir/<run-id>/<seed>/``."""
    t0 = time.perf_counter()
    g = load_graph(cfg) if g is None else g
    minority = list(cfg.minority_classes or ())
    run_dir = Path(cfg.out_dir) / cfg.resolved_run_id if write else None
    jobs = [(cfg, g, s, None if run_dir is None else run_dir / str(s)) for s in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
            outcomes = list(pool.map(_seed_job, jobs))
    else:
        outcomes = [_seed_job(j) for j in jobs]
    seeds = [r for _, r, _ in outcomes if r is not None]
    failures = {s: err for s, _, err in outcomes if err is not None}
    if not seeds:
        raise ExperimentError(f"all seeds failed: {failures}")
    result = RunResult(g.name or cfg.resolved_run_id, cfg.arch, cfg.method, cfg.imbalance_ratio, list(minority),
                       seeds, failures, time.perf_counter() - t0)
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        _write_json(run_dir / "config.json", cfg.to_json())
        (run_dir / "result.json").write_text(result.dumps())
        _write_json(run_dir / "timing.json", {"seconds": result.seconds})
    return result


def run_graphsr(cfg: ExperimentConfig, g: Graph | None = None, write: bool = True) -> RunResult:
    return run_method(dataclasses.replace(cfg, method="graphsr"), g, write)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

SCALE_COLUMNS = ("dataset", "arch", "seed", "minority_class", "labelled_count", "supplement_count")


def report_scales(results: list[RunResult]) -> str:
    """CSV of per-seed, per-minority-class supplement sizes (graphsr runs only)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCALE_COLUMNS)
    for r in results:
        if r.method != "graphsr":
            continue
        for s in r.seeds:
            for c in sorted(s.labelled_counts):
                w.writerow([r.dataset, r.arch, s.seed, c, s.labelled_counts[c], s.supplement_counts.get(c, 0)])
    return buf.getvalue()


@dataclass
class ClassDiagnosis:
    class_id: int
    minority: bool
    precision: float
    recall: float
    predicted: int
    support: int
    flags: list[str]


def precision_recall_rows(y_true: np.ndarray, y_pred: np.ndarray, m: int, minority) -> list[ClassDiagnosis]:
    """Per-class precision/recall with flags.

    ``never_predicted``: the class is absent from predictions (precision 0).
    ``unreliable``: a minority class whose precision is below that of some
    majority class.
    """
    tp, fp, fn = confusion_counts(np.asarray(y_true), np.asarray(y_pred), m)
    pred = tp + fp
    prec = np.divide(tp, pred, out=np.zeros(m), where=pred > 0)
    rec = np.divide(tp, tp + fn, out=np.zeros(m), where=(tp + fn) > 0)
    minority = set(int(c) for c in minority)
    best_major = max((prec[c] for c in range(m) if c not in minority), default=0.0)
    rows = []
    for c in range(m):
        flags = []
        if pred[c] == 0:
            flags.append("never_predicted")
        if c in minority and prec[c] < best_major:
            flags.append("unreliable")
        rows.append(ClassDiagnosis(c, c in minority, float(prec[c]), float(rec[c]), int(pred[c]),
                                   int(tp[c] + fn[c]), flags))
    return rows


def diagnose_precision_recall(cfg: ExperimentConfig, g: Graph | None = None) -> dict[int, list[ClassDiagnosis]]:
    """Vanilla classifier per seed, per-class precision/recall on the test set."""
    g = load_graph(cfg) if g is None else g
    out = {}
    for seed in cfg.seeds:
        split = make_split(cfg, g, seed)
        model = train(g, split.train, split.train_labels, split.val, dataclasses.replace(cfg.train, seed=seed),
                      cfg.arch)
        y_pred = pseudo_label(model, g, split.test)
        out[seed] = precision_recall_rows(g.labels[split.test], y_pred, g.num_classes, split.minority_classes)
    return out


TABLE_COLUMNS = ("method", "arch", "dataset", "imbalance_ratio", "n_seeds") + tuple(
    f"{m}_{s}" for m in METRICS for s in ("mean", "std"))


def emit_table(results: list[RunResult]) -> tuple[str, str]:
    """(CSV, aligned text) with one row per result; text shows mean±std in percent."""
    if not results:
        raise ValueError("need at least one result")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    text_rows = [["method", "arch", "dataset", "rho", "ACC", "F1", "AUC"]]
    for r in results:
        mean, std = r.mean, r.std
        w.writerow([r.method, r.arch, r.dataset, repr(r.imbalance_ratio), len(r.seeds)]
                   + [repr(v) for m in METRICS for v in (mean[m], std[m])])
        text_rows.append([r.method, r.arch, r.dataset, f"{r.imbalance_ratio:g}"]
                         + [f"{100 * mean[m]:.2f}±{100 * std[m]:.2f}" for m in METRICS])
    widths = [max(len(row[i]) for row in text_rows) for i in range(len(text_rows[0]))]
    text = "\n".join("  ".join(c.ljust(wd) for c, wd in zip(row, widths)).rstrip() for row in text_rows) + "\n"
    return buf.getvalue(), text


def parse_table_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    for row in rows:
        row["imbalance_ratio"] = float(row["imbalance_ratio"])
        row["n_seeds"] = int(row["n_seeds"])
        for k in TABLE_COLUMNS[5:]:
            row[k] = float(row[k])
    return rows
