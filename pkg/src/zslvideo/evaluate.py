"""Nearest-neighbour zero-shot inference and the evaluation protocols."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .curation import ClassSet
from .encoder import LinearEncoder, forward
from .features import LabeledDataset, pool_inference_features
from .wordvec import pairwise_cosine_distance, unit_rows


def classify(z, class_embeddings) -> np.ndarray:
    """Class indices sorted by cosine distance to ``z``; ties go to the lower index."""
    emb = class_embeddings.embeddings if isinstance(class_embeddings, ClassSet) else class_embeddings
    emb = np.atleast_2d(np.asarray(emb, dtype=np.float64))
    if emb.shape[0] == 0:
        raise ValueError("no candidate classes")
    d = pairwise_cosine_distance(np.asarray(z, dtype=np.float64)[None, :], emb)[0]
    return np.argsort(d, kind="stable")


def predict_embeddings(dataset: LabeledDataset, enc: LinearEncoder, t_eval: int = 25) -> np.ndarray:
    """Encoder outputs for every video after multi-snippet pooling."""
    if len(dataset) == 0:
        return np.zeros((0, enc.d_out))
    pooled = np.vstack([pool_inference_features(v, t_eval) for v in dataset.videos])
    return forward(enc, pooled)


def _true_class_ranks(z: np.ndarray, labels: np.ndarray, emb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """0-based rank of the true class for each row of ``z``, plus the rank-1 prediction."""
    unit_rows(z)  # zero-norm outputs are an error, not a silent miss
    d = pairwise_cosine_distance(z, emb)
    order = np.argsort(d, axis=1, kind="stable")
    ranks = np.argmax(order == labels[:, None], axis=1)
    return ranks, order[:, 0]


@dataclass
class SplitRecord:
    classes: list[str]
    top1: float
    top5: float
    n_videos: int


@dataclass
class EvalReport:
    protocol: str
    top1: float
    top5: float
    n_videos: int
    n_classes: int
    top5_k: int
    per_class_accuracy: dict[str, float] = field(default_factory=dict)
    splits: list[SplitRecord] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    curve: "GeneralizationCurve | None" = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "protocol": self.protocol,
            "top1": self.top1,
            "top5": self.top5,
            "top5_k": self.top5_k,
            "n_videos": self.n_videos,
            "n_classes": self.n_classes,
            "per_class_accuracy": dict(self.per_class_accuracy),
            "splits": [vars(s) for s in self.splits],
            "flags": list(self.flags),
        }
        if self.curve is not None:
            d["generalization_curve"] = self.curve.to_dict()
        d["config"] = self.config
        return d

    def to_json(self) -> str:
        return dumps(self.to_dict())


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _topk(ranks: np.ndarray, n_classes: int) -> tuple[float, float, int]:
    k5 = min(5, n_classes)
    return float(np.mean(ranks == 0)), float(np.mean(ranks < k5)), k5


def _score(dataset: LabeledDataset, z: np.ndarray, protocol: str) -> EvalReport:
    emb = dataset.require_embeddings()
    if len(dataset) == 0:
        raise ValueError("no videos to evaluate")
    ranks, _ = _true_class_ranks(z, dataset.labels, emb)
    top1, top5, k5 = _topk(ranks, len(dataset.classes))
    per_class = {}
    for c in range(len(dataset.classes)):
        mask = dataset.labels == c
        if mask.any():
            per_class[dataset.classes[c]] = float(np.mean(ranks[mask] == 0))
    flags = [f"top5 computed over {k5} classes"] if k5 < 5 else []
    return EvalReport(protocol, top1, top5, len(dataset), len(dataset.classes), k5, per_class, flags=flags)


def evaluate_full(dataset: LabeledDataset, enc: LinearEncoder, t_eval: int = 25) -> EvalReport:
    """Every video classified against all of the dataset's classes."""
    return _score(dataset, predict_embeddings(dataset, enc, t_eval), "P2")


def evaluate_protocol1(dataset: LabeledDataset, enc: LinearEncoder, t_eval: int = 25,
                       repeats: int = 10, seed: int = 0) -> EvalReport:
    """Mean accuracy over random half-class splits.

    Each repeat draws ``floor(C/2)`` classes without replacement and
    restricts both the videos and the candidate set to them.
    """
    n_cls = len(dataset.classes)
    if n_cls < 2:
        raise ValueError("protocol 1 needs at least two classes")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    emb = dataset.require_embeddings()
    z_all = predict_embeddings(dataset, enc, t_eval)
    rng = np.random.default_rng(seed)
    half = n_cls // 2
    splits = []
    hits = np.zeros(n_cls)
    seen = np.zeros(n_cls)
    for _ in range(repeats):
        chosen = np.sort(rng.choice(n_cls, size=half, replace=False))
        record, labels, ranks = _split_record(dataset, z_all, emb, chosen)
        splits.append(record)
        np.add.at(hits, labels, ranks == 0)
        np.add.at(seen, labels, 1)
    top1 = float(np.mean([s.top1 for s in splits]))
    top5 = float(np.mean([s.top5 for s in splits]))
    # per-class accuracy pooled over the splits that contained the class
    per_class = {dataset.classes[c]: float(hits[c] / seen[c]) for c in range(n_cls) if seen[c]}
    k5 = min(5, half)
    flags = [f"top5 computed over {k5} classes"] if k5 < 5 else []
    return EvalReport("P1", top1, top5, len(dataset), n_cls, k5, per_class, splits, flags)


def _split_record(dataset, z_all, emb, chosen):
    remap = -np.ones(len(dataset.classes), dtype=np.int64)
    remap[chosen] = np.arange(len(chosen))
    mask = remap[dataset.labels] >= 0
    if not mask.any():
        raise ValueError("a protocol-1 split contains no videos")
    ranks, _ = _true_class_ranks(z_all[mask], remap[dataset.labels[mask]], emb[chosen])
    top1, top5, _ = _topk(ranks, len(chosen))
    record = SplitRecord([dataset.classes[i] for i in chosen], top1, top5, int(mask.sum()))
    return record, dataset.labels[mask], ranks


def evaluate_split(dataset: LabeledDataset, enc: LinearEncoder, class_names: Sequence[str],
                   t_eval: int = 25) -> SplitRecord:
    """Recompute one protocol-1 split from its recorded class list."""
    chosen = np.array(sorted(dataset.classes.index(c) for c in class_names))
    z = predict_embeddings(dataset, enc, t_eval)
    return _split_record(dataset, z, dataset.require_embeddings(), chosen)[0]


@dataclass
class GeneralizationCurve:
    thresholds: list[float]
    accuracies: list[float | None]
    surviving_class_counts: list[int]
    class_scores: dict[str, float]
    k_nn: int
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "k_nn": self.k_nn,
            "thresholds": list(self.thresholds),
            "accuracies": list(self.accuracies),
            "surviving_class_counts": list(self.surviving_class_counts),
            "class_scores": dict(self.class_scores),
            "flags": list(self.flags),
        }


def novelty_scores(train_classes: ClassSet, test_embeddings: np.ndarray, k_nn: int = 10) -> np.ndarray:
    """Mean cosine distance of each test class to its ``k_nn`` nearest training classes."""
    if len(train_classes) < k_nn:
        raise ValueError(f"need at least k_nn={k_nn} training classes, have {len(train_classes)}")
    d = pairwise_cosine_distance(test_embeddings, train_classes.embeddings)
    return np.sort(d, axis=1)[:, :k_nn].mean(axis=1)


def _accuracy_on_surviving(z, labels, emb, surviving: np.ndarray) -> float | None:
    remap = -np.ones(len(surviving), dtype=np.int64)
    idx = np.flatnonzero(surviving)
    remap[idx] = np.arange(len(idx))
    mask = remap[labels] >= 0
    if not mask.any():
        return None
    ranks, _ = _true_class_ranks(z[mask], remap[labels[mask]], emb[idx])
    return float(np.mean(ranks == 0))


def thresholded_accuracy(train_classes: ClassSet, dataset: LabeledDataset, enc: LinearEncoder,
                         tau: float, t_eval: int = 25, k_nn: int = 10) -> float | None:
    """Top-1 over test classes whose novelty score exceeds ``tau``; None if none do."""
    emb = dataset.require_embeddings()
    scores = novelty_scores(train_classes, emb, k_nn)
    z = predict_embeddings(dataset, enc, t_eval)
    return _accuracy_on_surviving(z, dataset.labels, emb, scores > tau)


def generalization_curve(train_classes: ClassSet, dataset: LabeledDataset, enc: LinearEncoder,
                         t_eval: int = 25, k_nn: int = 10) -> GeneralizationCurve:
    """Accuracy on progressively more novel test classes.

    Thresholds are the distinct novelty scores in ascending order. At each
    threshold only classes scoring strictly above it remain, both as videos
    and as candidates. Points with nothing left report ``None``.
    """
    emb = dataset.require_embeddings()
    scores = novelty_scores(train_classes, emb, k_nn)
    z = predict_embeddings(dataset, enc, t_eval)
    thresholds = sorted(set(float(s) for s in scores))
    accs, counts, flags = [], [], []
    for tau in thresholds:
        surviving = scores > tau
        acc = _accuracy_on_surviving(z, dataset.labels, emb, surviving)
        if acc is None:
            flags.append(f"no videos left above threshold {tau!r}")
        accs.append(acc)
        counts.append(int(surviving.sum()))
    class_scores = {c: float(s) for c, s in zip(dataset.classes, scores)}
    return GeneralizationCurve(thresholds, accs, counts, class_scores, k_nn, flags)


@dataclass
class ConfusionMatrix:
    classes: list[str]
    counts: np.ndarray

    @property
    def n_videos(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.counts.sum())

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "counts": self.counts.tolist()}


def confusion_matrix(dataset: LabeledDataset, enc: LinearEncoder, t_eval: int = 25) -> ConfusionMatrix:
    """``counts[i, j]``: videos of class ``i`` whose rank-1 prediction is ``j``."""
    emb = dataset.require_embeddings()
    z = predict_embeddings(dataset, enc, t_eval)
    n = len(dataset.classes)
    counts = np.zeros((n, n), dtype=np.int64)
    if len(dataset):
        _, pred = _true_class_ranks(z, dataset.labels, emb)
        np.add.at(counts, (dataset.labels, pred), 1)
    return ConfusionMatrix(list(dataset.classes), counts)


def confusion_distance(a: ConfusionMatrix, b: ConfusionMatrix, normalize: bool = True) -> float:
    """L2 (Frobenius) distance between two confusion matrices over the same classes.

    With ``normalize`` each row is divided by its total first, so matrices
    from datasets with different class sizes compare per-class rates.
    """
    if a.classes != b.classes:
        raise ValueError("confusion matrices are over different class lists")
    ma, mb = a.counts.astype(np.float64), b.counts.astype(np.float64)
    if normalize:
        ma = ma / np.maximum(ma.sum(axis=1, keepdims=True), 1)
        mb = mb / np.maximum(mb.sum(axis=1, keepdims=True), 1)
    return float(np.sqrt(np.sum((ma - mb) ** 2)))


def format_table(headers: Sequence[str], rows: Sequence[Sequence], sep: str = "  ") -> str:
    cells = [[str(h) for h in headers]] + [[_fmt(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for j, row in enumerate(cells):
        lines.append(sep.join(c.rjust(w) if j and _numeric(c) else c.ljust(w)
                              for c, w in zip(row, widths)).rstrip())
        if j == 0:
            lines.append(sep.join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.4f}"
    return str(x)


def _numeric(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return s == "-"


def render_report(report: EvalReport) -> str:
    out = [format_table(["protocol", "top1", "top5", "videos", "classes"],
                        [[report.protocol, report.top1, report.top5, report.n_videos, report.n_classes]])]
    if report.splits:
        out.append(format_table(["split", "classes", "videos", "top1", "top5"],
                                [[i, len(s.classes), s.n_videos, s.top1, s.top5]
                                 for i, s in enumerate(report.splits)]))
    if report.curve is not None:
        c = report.curve
        out.append(format_table(["threshold", "classes", "top1"],
                                list(zip(c.thresholds, c.surviving_class_counts, c.accuracies))))
    for flag in report.flags:
        out.append(f"note: {flag}\n")
    return "\n".join(out)
