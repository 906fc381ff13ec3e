"""Precomputed per-clip visual features: storage, labels, sampling and pooling.

Binary store layout (all integers unsigned little-endian)::

    b"ZSLF" | u32 version | u32 D_v | u32 video_count
    per video: u16 id_length | id (UTF-8) | u32 T_clips | T_clips*D_v f32 LE, row-major

Version 1 holds clip features. Version 2 is the same container used as a raw
Ken Burns clip dump: each record is one synthetic clip, rows are frames and
D_v is 112*112*3.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

MAGIC = b"ZSLF"
VERSION_FEATURES = 1
VERSION_CLIP_DUMP = 2


class FeatureStoreError(ValueError):
    pass


@dataclass(frozen=True)
class VideoFeatures:
    """Clip features of one video, held as float32 like the on-disk store."""

    video_id: str
    clips: np.ndarray

    def __post_init__(self):
        clips = np.asarray(self.clips, dtype=np.float32)
        if clips.ndim != 2 or clips.shape[0] < 1:
            raise ValueError(f"{self.video_id}: clips must be a non-empty T x D matrix")
        if not np.all(np.isfinite(clips)):
            raise ValueError(f"{self.video_id}: non-finite feature values")
        object.__setattr__(self, "clips", clips)

    @property
    def n_clips(self) -> int:
        return self.clips.shape[0]

    @property
    def dim(self) -> int:
        return self.clips.shape[1]


@dataclass(frozen=True)
class LabeledDataset:
    """Videos with class labels.

    ``classes`` orders the label space; ``embeddings`` (one row per class)
    is attached once semantic embeddings are known.
    """

    classes: tuple[str, ...]
    videos: tuple[VideoFeatures, ...]
    labels: np.ndarray
    embeddings: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "videos", tuple(self.videos))
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "labels", labels)
        if len(labels) != len(self.videos):
            raise ValueError("one label per video required")
        if len(labels) and (labels.min() < 0 or labels.max() >= len(self.classes)):
            raise ValueError("label index out of range")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("duplicate class names")
        ids = [v.video_id for v in self.videos]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate video ids")
        if len({v.dim for v in self.videos}) > 1:
            raise ValueError("videos disagree on feature dimension")
        if self.embeddings is not None:
            emb = np.atleast_2d(np.asarray(self.embeddings, dtype=np.float64))
            if emb.shape[0] != len(self.classes):
                raise ValueError("one embedding row per class required")
            object.__setattr__(self, "embeddings", emb)

    def __len__(self):
        return len(self.videos)

    @property
    def feature_dim(self) -> int:
        if not self.videos:
            raise ValueError("empty dataset has no feature dimension")
        return self.videos[0].dim

    @property
    def class_has_videos(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=len(self.classes)) > 0

    def with_embeddings(self, embeddings: Mapping[str, np.ndarray]) -> "LabeledDataset":
        missing = [c for c in self.classes if c not in embeddings]
        if missing:
            raise KeyError(f"no embedding for class(es): {', '.join(missing)}")
        emb = np.vstack([np.asarray(embeddings[c], dtype=np.float64) for c in self.classes])
        return replace(self, embeddings=emb)

    def require_embeddings(self) -> np.ndarray:
        if self.embeddings is None:
            raise ValueError("dataset has no class embeddings attached")
        return self.embeddings

    def restrict_classes(self, class_indices: Sequence[int]) -> "LabeledDataset":
        """Keep the videos of ``class_indices`` and renumber labels in that order."""
        idx = list(class_indices)
        remap = {old: new for new, old in enumerate(idx)}
        keep = [i for i, lab in enumerate(self.labels) if int(lab) in remap]
        return LabeledDataset(
            [self.classes[i] for i in idx],
            [self.videos[i] for i in keep],
            [remap[int(self.labels[i])] for i in keep],
            None if self.embeddings is None else self.embeddings[idx],
        )

    def select_videos(self, video_indices: Sequence[int]) -> "LabeledDataset":
        """Keep the given videos (original order); drop classes left without videos."""
        keep = sorted(set(int(i) for i in video_indices))
        labels = self.labels[keep]
        used = sorted(set(int(x) for x in labels))
        remap = {old: new for new, old in enumerate(used)}
        return LabeledDataset(
            [self.classes[i] for i in used],
            [self.videos[i] for i in keep],
            [remap[int(x)] for x in labels],
            None if self.embeddings is None else self.embeddings[used],
        )


def _write_store(fh, videos: Sequence[VideoFeatures], dim: int, version: int) -> None:
    fh.write(MAGIC)
    fh.write(struct.pack("<III", version, dim, len(videos)))
    for v in videos:
        vid = v.video_id.encode("utf-8")
        if len(vid) > 0xFFFF:
            raise FeatureStoreError(f"video id too long: {v.video_id[:40]}...")
        if v.dim != dim:
            raise FeatureStoreError(f"{v.video_id}: dimension {v.dim} != {dim}")
        fh.write(struct.pack("<H", len(vid)))
        fh.write(vid)
        fh.write(struct.pack("<I", v.n_clips))
        fh.write(np.ascontiguousarray(v.clips, dtype="<f4").tobytes())


def write_feature_store(path, videos: Sequence[VideoFeatures], dim: int | None = None,
                        version: int = VERSION_FEATURES) -> None:
    if dim is None:
        if not videos:
            raise FeatureStoreError("cannot infer D_v from an empty video list")
        dim = videos[0].dim
    with open(path, "wb") as fh:
        _write_store(fh, videos, dim, version)


def feature_store_bytes(videos: Sequence[VideoFeatures], dim: int | None = None,
                        version: int = VERSION_FEATURES) -> bytes:
    buf = io.BytesIO()
    _write_store(buf, videos, videos[0].dim if dim is None else dim, version)
    return buf.getvalue()


def _take(buf: memoryview, pos: int, n: int, what: str) -> tuple[memoryview, int]:
    if pos + n > len(buf):
        raise FeatureStoreError(f"truncated store while reading {what} at byte {pos}")
    return buf[pos:pos + n], pos + n


def parse_feature_store(data: bytes, version: int = VERSION_FEATURES) -> tuple[int, list[VideoFeatures]]:
    buf = memoryview(data)
    head, pos = _take(buf, 0, 16, "header")
    if bytes(head[:4]) != MAGIC:
        raise FeatureStoreError(f"bad magic {bytes(head[:4])!r}")
    ver, dim, count = struct.unpack("<III", head[4:])
    if ver != version:
        raise FeatureStoreError(f"unsupported version {ver} (expected {version})")
    videos = []
    for k in range(count):
        raw, pos = _take(buf, pos, 2, f"video {k} id length")
        (n,) = struct.unpack("<H", raw)
        raw, pos = _take(buf, pos, n, f"video {k} id")
        vid = bytes(raw).decode("utf-8")
        raw, pos = _take(buf, pos, 4, f"video {vid!r} clip count")
        (t,) = struct.unpack("<I", raw)
        raw, pos = _take(buf, pos, 4 * t * dim, f"video {vid!r} payload")
        clips = np.frombuffer(raw, dtype="<f4").reshape(t, dim)
        try:
            videos.append(VideoFeatures(vid, clips))
        except ValueError as exc:
            raise FeatureStoreError(str(exc)) from None
    if pos != len(buf):
        raise FeatureStoreError(f"{len(buf) - pos} trailing bytes after {count} videos")
    return dim, videos


def read_feature_store(path, version: int = VERSION_FEATURES) -> tuple[int, list[VideoFeatures]]:
    return parse_feature_store(Path(path).read_bytes(), version)


def read_labels(path) -> list[tuple[str, str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1].strip():
                raise FeatureStoreError(f"{path}:{lineno}: expected '<video_id>\\t<class_name>'")
            out.append((parts[0], parts[1].strip()))
    return out


def write_labels(path, pairs: Sequence[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for vid, cls in pairs:
            fh.write(f"{vid}\t{cls}\n")


def load_feature_store(features_path, labels_path, classes: Sequence[str] | None = None) -> LabeledDataset:
    """Join a feature store with its label file.

    Without ``classes`` the label space is the order of first appearance in
    the label file. Every stored video must be labeled exactly once.
    """
    dim, videos = read_feature_store(features_path)
    by_id = {v.video_id: v for v in videos}
    pairs = read_labels(labels_path)
    class_order = list(classes) if classes is not None else []
    class_idx = {c: i for i, c in enumerate(class_order)}
    label_of: dict[str, int] = {}
    for vid, cls in pairs:
        if vid not in by_id:
            raise FeatureStoreError(f"label for unknown video {vid!r}")
        if vid in label_of:
            raise FeatureStoreError(f"video {vid!r} labeled twice")
        if cls not in class_idx:
            if classes is not None:
                raise FeatureStoreError(f"video {vid!r} has unknown class {cls!r}")
            class_idx[cls] = len(class_order)
            class_order.append(cls)
        label_of[vid] = class_idx[cls]
    unlabeled = [v.video_id for v in videos if v.video_id not in label_of]
    if unlabeled:
        raise FeatureStoreError(f"unlabeled video(s): {', '.join(unlabeled[:5])}")
    return LabeledDataset(class_order, videos, [label_of[v.video_id] for v in videos])


def save_dataset(features_path, labels_path, dataset: LabeledDataset) -> None:
    write_feature_store(features_path, dataset.videos, dataset.feature_dim)
    write_labels(labels_path, [(v.video_id, dataset.classes[int(lab)])
                               for v, lab in zip(dataset.videos, dataset.labels)])


def sample_training_snippet(video: VideoFeatures, rng: np.random.Generator) -> np.ndarray:
    """One clip row drawn uniformly at random."""
    return video.clips[rng.integers(video.n_clips)]


def linspace_indices(n_clips: int, t_eval: int) -> np.ndarray:
    if t_eval < 1:
        raise ValueError("t_eval must be >= 1")
    if t_eval == 1:
        return np.zeros(1, dtype=np.int64)
    k = np.arange(t_eval)
    # ties round half to even
    return np.rint(k * (n_clips - 1) / (t_eval - 1)).astype(np.int64)


def pool_inference_features(video: VideoFeatures, t_eval: int = 25) -> np.ndarray:
    """Mean of ``t_eval`` linearly spaced clip rows (endpoints included).

    When ``t_eval`` exceeds the clip count some rows are selected more than
    once, so the result is always a mean of exactly ``t_eval`` rows.
    """
    idx = linspace_indices(video.n_clips, t_eval)
    return video.clips[idx].astype(np.float64).mean(axis=0)
