"""Removal of training classes that overlap semantically with test classes.

A training class survives only if its cosine distance to every test class is
strictly greater than ``tau``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .wordvec import ClassName, WordVectorTable, cosine_distance, embed_class, pairwise_cosine_distance

DEFAULT_TAU = 0.05


@dataclass(frozen=True)
class ClassSet:
    name: str
    classes: tuple[str, ...]
    embeddings: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        emb = np.atleast_2d(np.asarray(self.embeddings, dtype=np.float64))
        object.__setattr__(self, "embeddings", emb)
        if len(set(self.classes)) != len(self.classes):
            dup = sorted({c for c in self.classes if self.classes.count(c) > 1})
            raise ValueError(f"duplicate class names in {self.name!r}: {dup}")
        if emb.shape[0] != len(self.classes):
            raise ValueError(f"{self.name!r}: {len(self.classes)} names but {emb.shape[0]} embeddings")

    def __len__(self):
        return len(self.classes)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def index(self, name: str) -> int:
        return self.classes.index(name)

    def subset(self, indices: Sequence[int], name: str | None = None) -> "ClassSet":
        idx = list(indices)
        return ClassSet(name or self.name, [self.classes[i] for i in idx], self.embeddings[idx])

    def rescaled(self, factor: float) -> "ClassSet":
        return ClassSet(self.name, self.classes, self.embeddings * factor)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {c: self.embeddings[i] for i, c in enumerate(self.classes)}

    @classmethod
    def from_names(cls, name: str, names: Iterable[str], table: WordVectorTable,
                   subs: Mapping | None = None, reduce: str = "mean") -> "ClassSet":
        names = list(names)
        vecs = [embed_class(ClassName(n), table, subs, reduce=reduce) for n in names]
        return cls(name, names, np.vstack(vecs) if vecs else np.zeros((0, table.dim)))


def union(*sets: ClassSet, name: str = "union") -> ClassSet:
    """Concatenate class sets, dropping later repeats of an already seen name."""
    names: list[str] = []
    rows = []
    for cs in sets:
        for i, c in enumerate(cs.classes):
            if c not in names:
                names.append(c)
                rows.append(cs.embeddings[i])
    if len({cs.dim for cs in sets}) > 1:
        raise ValueError("class sets have different embedding dimensions")
    return ClassSet(name, names, np.vstack(rows))


def read_class_list(path) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    return [ln.strip() for ln in lines if ln.strip()]


def class_distance(c1, c2) -> float:
    return cosine_distance(c1, c2)


@dataclass(frozen=True)
class RemovedClass:
    train_class: str
    nearest_test_class: str
    distance: float


@dataclass(frozen=True)
class CurationResult:
    kept: ClassSet
    removed: tuple[RemovedClass, ...]
    tau: float
    nearest: tuple[RemovedClass, ...]  # every input class, input order

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "n_input": len(self.kept) + len(self.removed),
            "n_kept": len(self.kept),
            "n_removed": len(self.removed),
            "kept": list(self.kept.classes),
            "removed": [
                {"train_class": r.train_class, "nearest_test_class": r.nearest_test_class,
                 "distance": r.distance}
                for r in self.removed
            ],
        }


def _nearest(train: ClassSet, test: ClassSet) -> list[RemovedClass]:
    if len(train) == 0 or len(test) == 0:
        raise ValueError("train and test class sets must be non-empty")
    if train.dim != test.dim:
        raise ValueError(f"embedding dimension mismatch: {train.dim} vs {test.dim}")
    d = pairwise_cosine_distance(train.embeddings, test.embeddings)
    j = np.argmin(d, axis=1)  # first minimum: lowest test index wins ties
    return [RemovedClass(train.classes[i], test.classes[j[i]], float(d[i, j[i]]))
            for i in range(len(train))]


def filter_training_classes(train: ClassSet, test_union: ClassSet, tau: float = DEFAULT_TAU) -> CurationResult:
    if tau < 0:
        raise ValueError("tau must be non-negative")
    nearest = _nearest(train, test_union)
    keep = [i for i, r in enumerate(nearest) if r.distance > tau]
    removed = sorted((r for r in nearest if not r.distance > tau), key=lambda r: r.distance)
    return CurationResult(train.subset(keep), tuple(removed), float(tau), tuple(nearest))


def nearest_test_class_report(train: ClassSet, test: ClassSet, top_n: int = 20) -> list[RemovedClass]:
    """The ``top_n`` training classes closest to any test class, closest first."""
    nearest = sorted(_nearest(train, test), key=lambda r: r.distance)
    return nearest[:max(0, min(top_n, len(nearest)))]
