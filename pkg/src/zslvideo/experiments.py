"""Ablation drivers: dataset subsampling and the class-diversity study."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .encoder import TrainConfig, train
from .evaluate import evaluate_full
from .features import LabeledDataset
from .seeds import derive_seed

log = logging.getLogger(__name__)


def subsample_by_videos(dataset: LabeledDataset, fraction: float, rng: np.random.Generator) -> LabeledDataset:
    """Keep ``ceil(fraction * n)`` videos chosen uniformly without replacement."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    n_keep = math.ceil(fraction * len(dataset))
    if n_keep == 0:
        raise ValueError("subsample would be empty")
    if n_keep == len(dataset):
        return dataset
    return dataset.select_videos(rng.choice(len(dataset), size=n_keep, replace=False))


def subsample_by_classes(dataset: LabeledDataset, n_classes: int, rng: np.random.Generator) -> LabeledDataset:
    """All videos of ``n_classes`` classes chosen uniformly; kept classes stay in original order."""
    if not 1 <= n_classes <= len(dataset.classes):
        raise ValueError(f"n_classes must be in [1, {len(dataset.classes)}]")
    if n_classes == len(dataset.classes):
        return dataset
    return dataset.restrict_classes(np.sort(rng.choice(len(dataset.classes), size=n_classes, replace=False)))


@dataclass
class ClusterAssignment:
    k: int
    assignment: np.ndarray
    centroids: np.ndarray
    wcss: float
    wcss_history: list[float] = field(default_factory=list)

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == cluster)


def _wcss(x, centroids, labels) -> float:
    diff = x - centroids[labels]
    return float(np.sum(diff * diff))


def _sq_dists(x, centroids):
    return ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _kmeanspp(x, k, rng):
    n = len(x)
    centroids = [x[rng.integers(n)]]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total == 0:
            # fewer distinct points than k; take the first unused index
            idx = len(centroids) % n
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centroids, dtype=np.float64)


def _lloyd(x, centroids, max_iter):
    k = len(centroids)
    labels = np.argmin(_sq_dists(x, centroids), axis=1)
    history = []
    for _ in range(max_iter):
        new = centroids.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new[c] = x[members].mean(axis=0)
        for c in range(k):
            if not np.any(labels == c):
                # empty cluster: reseed at the point farthest from its centroid
                far = int(np.argmax(((x - new[labels]) ** 2).sum(axis=1)))
                new[c] = x[far]
                labels = labels.copy()
                labels[far] = c
        centroids = new
        history.append(_wcss(x, centroids, labels))
        new_labels = np.argmin(_sq_dists(x, centroids), axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        history.append(_wcss(x, centroids, labels))
    return labels, centroids, history


def kmeans_classes(class_embeddings, k: int, rng: np.random.Generator, restarts: int = 8,
                   max_iter: int = 100) -> ClusterAssignment:
    """Lloyd's k-means with k-means++ seeding on raw (Euclidean) embeddings.

    Keeps the restart with the lowest within-cluster sum of squares.
    ``wcss_history`` alternates update and assignment steps of that restart
    and is non-increasing.
    """
    x = np.asarray(getattr(class_embeddings, "embeddings", class_embeddings), dtype=np.float64)
    if not 1 <= k <= len(x):
        raise ValueError(f"k must be in [1, {len(x)}]")
    best = None
    for _ in range(max(1, restarts)):
        labels, centroids, history = _lloyd(x, _kmeanspp(x, k, rng), max_iter)
        score = _wcss(x, centroids, labels)
        if best is None or score < best.wcss:
            best = ClusterAssignment(k, labels, centroids, score, history)
    return best


@dataclass
class ExperimentResult:
    variant: str
    params: dict
    seeds: list[int]
    class_lists: list[list[str]]
    accuracies: list[float]
    top5: list[float]
    skipped: list[str] = field(default_factory=list)

    @property
    def errors(self) -> list[float]:
        return [1.0 - a for a in self.accuracies]

    @property
    def mean_error(self) -> float:
        return float(np.mean(self.errors))

    @property
    def std_error(self) -> float:
        return float(np.std(self.errors, ddof=1)) if len(self.errors) > 1 else 0.0

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "params": self.params,
            "seeds": list(self.seeds),
            "class_lists": self.class_lists,
            "accuracies": list(self.accuracies),
            "top5": list(self.top5),
            "errors": self.errors,
            "mean_error": self.mean_error,
            "std_error": self.std_error,
            "mean_accuracy": float(np.mean(self.accuracies)),
            "skipped": list(self.skipped),
        }


def _train_and_eval(train_set, train_config, seed, eval_dataset, t_eval):
    enc, _ = train(train_set, None, replace(train_config, seed=seed))
    report = evaluate_full(eval_dataset, enc, t_eval)
    return report.top1, report.top5


def subsample_experiment(dataset: LabeledDataset, variant: str, amount, repeats: int, train_config: TrainConfig,
                         eval_dataset: LabeledDataset, seed: int = 0, t_eval: int = 25) -> ExperimentResult:
    """Train on ``repeats`` random subsamples and evaluate each on ``eval_dataset``.

    ``variant`` is ``"by_videos"`` (``amount`` is a fraction) or
    ``"by_classes"`` (``amount`` is a class count). Repeat ``r`` uses the
    seed ``derive_seed(seed, variant, r)`` for both sampling and training.
    """
    seeds, lists, accs, top5 = [], [], [], []
    for r in range(repeats):
        s = derive_seed(seed, variant, r)
        rng = np.random.default_rng(s)
        if variant == "by_videos":
            sub = subsample_by_videos(dataset, float(amount), rng)
        elif variant == "by_classes":
            sub = subsample_by_classes(dataset, int(amount), rng)
        else:
            raise ValueError(f"unknown subsampling variant {variant!r}")
        a1, a5 = _train_and_eval(sub, train_config, s, eval_dataset, t_eval)
        seeds.append(s)
        lists.append(list(sub.classes))
        accs.append(a1)
        top5.append(a5)
    key = "fraction" if variant == "by_videos" else "n_classes"
    return ExperimentResult(variant, {key: amount, "repeats": repeats, "seed": seed, "t_eval": t_eval},
                            seeds, lists, accs, top5)


def diversity_experiment(dataset: LabeledDataset, k_clusters: int, n_select: int = 50, repeats: int = 10,
                         train_config: TrainConfig = TrainConfig(), eval_dataset: LabeledDataset | None = None,
                         seed: int = 0, t_eval: int = 25, restarts: int = 8) -> ExperimentResult:
    """Train on ``n_select`` classes drawn from one semantic cluster at a time.

    With ``k_clusters == 1`` classes are drawn from the whole set, which is
    exactly :func:`subsample_by_classes` with the per-repeat seed. Otherwise
    the class embeddings are clustered once and repeat ``r`` draws from the
    ``r mod m``-th of the ``m`` clusters large enough to supply ``n_select``
    classes. Every repeat is evaluated on all classes of ``eval_dataset``.
    """
    if eval_dataset is None:
        raise ValueError("an evaluation dataset is required")
    emb = dataset.require_embeddings()
    skipped: list[str] = []
    if k_clusters == 1:
        pools = [np.arange(len(dataset.classes))]
    else:
        clusters = kmeans_classes(emb, k_clusters, np.random.default_rng(derive_seed(seed, "kmeans")), restarts)
        pools = []
        for c in range(k_clusters):
            members = clusters.members(c)
            if len(members) >= n_select:
                pools.append(members)
            else:
                log.warning("cluster %d has %d classes < n_select=%d, skipped", c, len(members), n_select)
                skipped.append(f"cluster {c} ({len(members)} classes)")
    if not pools or len(pools[0]) < n_select:
        raise ValueError(f"no cluster has at least n_select={n_select} classes")
    seeds, lists, accs, top5 = [], [], [], []
    for r in range(repeats):
        s = derive_seed(seed, "diversity", r)
        rng = np.random.default_rng(s)
        pool = pools[r % len(pools)]
        if k_clusters == 1:
            sub = subsample_by_classes(dataset, n_select, rng)
        else:
            sub = dataset.restrict_classes(np.sort(rng.choice(pool, size=n_select, replace=False)))
        a1, a5 = _train_and_eval(sub, train_config, s, eval_dataset, t_eval)
        seeds.append(s)
        lists.append(list(sub.classes))
        accs.append(a1)
        top5.append(a5)
    params = {"k_clusters": k_clusters, "n_select": n_select, "repeats": repeats, "seed": seed,
              "t_eval": t_eval, "restarts": restarts}
    return ExperimentResult("diversity", params, seeds, lists, accs, top5, skipped)
