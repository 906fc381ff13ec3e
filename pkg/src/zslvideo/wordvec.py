"""Pretrained word vectors, class-name embedding and cosine distance."""

from __future__ import annotations

import re
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np


class WordVectorError(ValueError):
    pass


class VectorParseError(WordVectorError):
    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class OutOfVocabularyError(WordVectorError):
    def __init__(self, tokens: Iterable[str], class_name: str | None = None):
        self.tokens = sorted(set(tokens))
        where = f" in class {class_name!r}" if class_name else ""
        super().__init__(f"out-of-vocabulary token(s){where}: {', '.join(self.tokens)}")


class DegenerateEmbeddingError(WordVectorError):
    pass


class ZeroNormError(ValueError):
    pass


_PUNCT = re.compile("[" + re.escape(string.punctuation.replace("_", "").replace("-", "")) + "]")
_SPLIT = re.compile(r"[\s_\-]+")


def normalize_tokens(raw: str) -> tuple[str, ...]:
    """Lowercase ``raw``, split on whitespace/underscores/hyphens, strip ASCII punctuation."""
    out = []
    for piece in _SPLIT.split(raw.lower()):
        piece = _PUNCT.sub("", piece)
        if piece:
            out.append(piece)
    return tuple(out)


@dataclass(frozen=True)
class ClassName:
    raw: str
    tokens: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.tokens:
            object.__setattr__(self, "tokens", normalize_tokens(self.raw))
        if not self.tokens:
            raise WordVectorError(f"class name {self.raw!r} has no tokens after normalization")

    def __str__(self):
        return self.raw


@dataclass(frozen=True)
class WordVectorTable:
    dim: int
    entries: Mapping[str, np.ndarray]

    def __post_init__(self):
        if self.dim <= 0:
            raise WordVectorError("dim must be positive")
        for tok, vec in self.entries.items():
            if not tok or tok != tok.lower() or any(c.isspace() for c in tok):
                raise WordVectorError(f"invalid token {tok!r}")
            if vec.shape != (self.dim,) or not np.all(np.isfinite(vec)):
                raise WordVectorError(f"vector for {tok!r} is not {self.dim} finite values")

    def __contains__(self, token):
        return token in self.entries

    def __getitem__(self, token) -> np.ndarray:
        return self.entries[token]

    def __len__(self):
        return len(self.entries)


def load_word_vectors(path, restrict_vocab: Iterable[str] | None = None) -> WordVectorTable:
    """Read the ``<count> <dim>`` header text format.

    Tokens are lowercased on read; when two spellings fold to the same token
    the first one in the file wins. With ``restrict_vocab`` only those tokens
    are kept; skipped lines are still checked for arity and duplicates.
    """
    path = Path(path)
    wanted = None if restrict_vocab is None else {t.lower() for t in restrict_vocab}
    entries: dict[str, np.ndarray] = {}
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise VectorParseError(path, 1, "header must be '<count> <dim>'")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise VectorParseError(path, 1, "non-integer header") from None
        if dim <= 0 or count < 0:
            raise VectorParseError(path, 1, "count/dim out of range")
        n_rows = 0
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n").rstrip("\r").strip(" ")
            if not line:
                continue
            first, _, rest = line.partition(" ")
            # separator count is a cheap arity check; split fully only when it is off
            n_fields = rest.count(" ") + 1 if rest else 0
            parts = None
            if n_fields != dim:
                parts = [p for p in line.split(" ") if p]
                first, n_fields = parts[0], len(parts) - 1
            if n_fields != dim:
                raise VectorParseError(path, lineno, f"expected {dim} components, got {n_fields}")
            if first in seen:
                raise VectorParseError(path, lineno, f"duplicate token {first!r}")
            seen.add(first)
            n_rows += 1
            token = first.lower()
            # case-folded collisions keep the first (most frequent) spelling
            if token in entries or (wanted is not None and token not in wanted):
                continue
            if parts is None:
                parts = [first, *rest.split(" ")]
            try:
                vec = np.array([float(p) for p in parts[1:]], dtype=np.float64)
            except ValueError:
                raise VectorParseError(path, lineno, "non-numeric component") from None
            if not np.all(np.isfinite(vec)):
                raise VectorParseError(path, lineno, "non-finite component")
            entries[token] = vec
    if n_rows != count:
        raise VectorParseError(path, 1, f"header announces {count} rows, file has {n_rows}")
    return WordVectorTable(dim=dim, entries=entries)


def write_word_vectors(path, table: WordVectorTable) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(table)} {table.dim}\n")
        for tok, vec in table.entries.items():
            fh.write(tok + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def load_substitutions(path) -> dict[str, tuple[str, ...]]:
    """Parse ``<oov_token> -> <replacement tokens...>`` lines; ``#`` starts a comment."""
    subs: dict[str, tuple[str, ...]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "->" not in line:
                raise VectorParseError(path, lineno, "expected '<token> -> <replacement>'")
            lhs, rhs = (s.strip() for s in line.split("->", 1))
            repl = normalize_tokens(rhs)
            if not lhs or " " in lhs or not repl:
                raise VectorParseError(path, lineno, "empty or multi-word source token")
            subs[lhs.lower()] = repl
    return subs


def resolve_tokens(name: ClassName, subs: Mapping[str, Iterable[str]] | None = None) -> list[str]:
    subs = subs or {}
    out: list[str] = []
    for tok in name.tokens:
        if tok in subs:
            repl = subs[tok]
            out.extend([repl] if isinstance(repl, str) else repl)
        else:
            out.append(tok)
    return out


def embed_class(name: ClassName | str, table: WordVectorTable,
                subs: Mapping[str, Iterable[str]] | None = None,
                reduce: str = "mean") -> np.ndarray:
    """Semantic embedding of a class name: mean of its word vectors.

    ``reduce="sum"`` gives the summed variant; under cosine distance the two
    are interchangeable.
    """
    if isinstance(name, str):
        name = ClassName(name)
    tokens = resolve_tokens(name, subs)
    missing = [t for t in tokens if t not in table]
    if missing:
        raise OutOfVocabularyError(missing, name.raw)
    vec = np.zeros(table.dim)
    for t in sorted(tokens):
        vec = vec + table[t]
    if reduce == "mean":
        vec = vec / len(tokens)
    elif reduce != "sum":
        raise ValueError(f"unknown reduction {reduce!r}")
    if not np.any(vec):
        raise DegenerateEmbeddingError(f"class {name.raw!r} embeds to the zero vector")
    return vec


def unit_rows(m: np.ndarray) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise ZeroNormError("cosine distance undefined for zero-norm or non-finite vectors")
    return m / norms[:, None]


def cosine_distance(a, b) -> float:
    """``1 - cos(a, b)``, in [0, 2].

    Computed as half the squared distance between the unit vectors, which
    is algebraically the same quantity and returns exactly 0 for bitwise
    identical inputs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = unit_rows(a)[0] - unit_rows(b)[0]
    return float(min(2.0, 0.5 * np.dot(diff, diff)))


def pairwise_cosine_distance(a: np.ndarray, b: np.ndarray, block: int = 256) -> np.ndarray:
    """Cosine distances between every row of ``a`` and every row of ``b``."""
    ua, ub = unit_rows(a), unit_rows(b)
    if ua.shape[1] != ub.shape[1]:
        raise ValueError(f"dimension mismatch: {ua.shape[1]} vs {ub.shape[1]}")
    out = np.empty((ua.shape[0], ub.shape[0]))
    for start in range(0, ua.shape[0], block):
        diff = ua[start:start + block, None, :] - ub[None, :, :]
        out[start:start + block] = 0.5 * np.einsum("ijk,ijk->ij", diff, diff)
    np.minimum(out, 2.0, out=out)
    return out
