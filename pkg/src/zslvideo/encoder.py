"""Linear semantic encoder trained by word-vector regression with Adam.

The encoder maps a pooled visual feature ``y`` (length D_v) to ``z = y @ W``
(length D_s). Training minimizes the summed squared error between ``z`` and
the class embedding over each batch of randomly sampled clips.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .features import LabeledDataset, sample_training_snippet

CKPT_MAGIC = b"ZSLW"
CKPT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class LinearEncoder:
    weights: np.ndarray  # D_v x D_s
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=np.float64))
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("encoder weights must be finite")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
            if self.bias.shape != (self.weights.shape[1],):
                raise ValueError("bias length must equal D_s")

    @property
    def d_in(self) -> int:
        return self.weights.shape[0]

    @property
    def d_out(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def init_uniform(cls, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = False):
        bound = 1.0 / np.sqrt(d_in)
        w = rng.uniform(-bound, bound, size=(d_in, d_out))
        return cls(w, np.zeros(d_out) if bias else None)


def forward(enc: LinearEncoder, y) -> np.ndarray:
    """``y @ W`` (plus bias when present); ``y`` may be one vector or a row batch."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != enc.d_in:
        raise ValueError(f"feature dimension {y.shape[-1]} != encoder input {enc.d_in}")
    z = y @ enc.weights
    if enc.bias is not None:
        z = z + enc.bias
    return z


def _stack_batch(batch):
    if len(batch) == 0:
        raise ValueError("empty batch")
    ys = np.vstack([np.asarray(y, dtype=np.float64) for y, _ in batch])
    ts = np.vstack([np.asarray(t, dtype=np.float64) for _, t in batch])
    return ys, ts


def _loss_and_residual(enc, ys, ts):
    r = forward(enc, ys) - ts
    if r.shape != ts.shape:
        raise ValueError("target dimension does not match encoder output")
    return float(np.sum(r * r)), r


def batch_loss(enc: LinearEncoder, batch: Sequence[tuple]) -> float:
    """Sum over ``(feature, target)`` pairs of the squared residual norm."""
    ys, ts = _stack_batch(batch)
    return _loss_and_residual(enc, ys, ts)[0]


def batch_gradient(enc: LinearEncoder, batch: Sequence[tuple]):
    """Gradient of :func:`batch_loss` w.r.t. the weights, ``sum 2 y (z - t)^T``.

    Returns the weight gradient, or ``(dW, db)`` if the encoder has a bias.
    """
    ys, ts = _stack_batch(batch)
    _, r = _loss_and_residual(enc, ys, ts)
    gw = 2.0 * ys.T @ r
    if enc.bias is None:
        return gw
    return gw, 2.0 * r.sum(axis=0)


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, weights: np.ndarray, **kw) -> "AdamState":
        return cls(np.zeros_like(weights, dtype=np.float64), np.zeros_like(weights, dtype=np.float64), **kw)


def adam_step(state: AdamState, weights: np.ndarray, gradient: np.ndarray) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update. Inputs are not modified."""
    g = np.asarray(gradient, dtype=np.float64)
    if g.shape != np.shape(weights) or g.shape != state.first_moment.shape:
        raise ValueError("gradient, weights and moment shapes disagree")
    if not np.all(np.isfinite(g)):
        raise TrainingError("non-finite gradient")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_w = weights - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, t, state.learning_rate, state.beta1, state.beta2, state.epsilon)
    return new_state, new_w


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 22
    base_lr: float = 1e-3
    lr_decay_epochs: tuple[int, ...] = (60, 120)
    lr_decay_factor: float = 10.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    use_bias: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lr_decay_epochs", tuple(sorted(int(e) for e in self.lr_decay_epochs)))
        self.validate()

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.base_lr <= 0 or self.lr_decay_factor <= 0 or self.epsilon <= 0:
            raise ValueError("learning rate, decay factor and epsilon must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        bad = [e for e in self.lr_decay_epochs if not 0 < e < self.epochs]
        if bad:
            raise ValueError(f"decay epoch(s) {bad} not inside (0, epochs={self.epochs})")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def lr_at(self, epoch: int) -> float:
        n = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.base_lr / self.lr_decay_factor ** n

    def to_dict(self) -> dict:
        return {f.name: list(v) if isinstance(v := getattr(self, f.name), tuple) else v for f in fields(self)}

    def to_pairs(self) -> list[tuple[str, str]]:
        out = []
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, tuple):
                val = ",".join(str(x) for x in val)
            elif isinstance(val, bool):
                val = "true" if val else "false"
            elif isinstance(val, float):
                val = repr(val)
            out.append((f.name, str(val)))
        return out

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "TrainConfig":
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in values.items():
            if key not in types:
                raise ValueError(f"unknown training option {key!r}")
            raw = str(raw).strip()
            if key == "lr_decay_epochs":
                kw[key] = tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
            elif key == "use_bias":
                if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(f"use_bias must be boolean, got {raw!r}")
                kw[key] = raw.lower() in ("true", "1", "yes")
            elif key in ("epochs", "batch_size", "seed"):
                kw[key] = int(raw)
            else:
                kw[key] = float(raw)
        return cls(**kw)


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"loss": list(self.loss), "learning_rate": list(self.learning_rate)}


def _targets_matrix(dataset: LabeledDataset, targets) -> np.ndarray:
    if targets is None:
        return dataset.require_embeddings()
    if isinstance(targets, np.ndarray):
        t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        if t.shape[0] != len(dataset.classes):
            raise ValueError("target matrix needs one row per class")
        return t
    missing = [i for i in range(len(dataset.classes)) if i not in targets and dataset.classes[i] not in targets]
    if missing:
        names = ", ".join(dataset.classes[i] for i in missing)
        raise KeyError(f"no target embedding for class(es): {names}")
    return np.vstack([np.asarray(targets[i] if i in targets else targets[dataset.classes[i]], dtype=np.float64)
                      for i in range(len(dataset.classes))])


def train(dataset: LabeledDataset, targets=None, config: TrainConfig = TrainConfig(),
          init: LinearEncoder | None = None) -> tuple[LinearEncoder, TrainHistory]:
    """Fit the encoder with Adam under the step learning-rate schedule.

    ``targets`` maps class index (or name) to embedding, or is a matrix with
    one row per class; by default the dataset's attached embeddings are used.
    Each epoch visits every video once in a seeded random order, taking one
    random clip per video; the final partial batch is kept. History records
    the mean per-video loss and the learning rate of every epoch.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    tmat = _targets_matrix(dataset, targets)
    rng = np.random.default_rng(config.seed)
    if init is None:
        enc = LinearEncoder.init_uniform(dataset.feature_dim, tmat.shape[1], rng, bias=config.use_bias)
    else:
        enc = LinearEncoder(init.weights.copy(), None if init.bias is None else init.bias.copy())
        if enc.d_in != dataset.feature_dim or enc.d_out != tmat.shape[1]:
            raise ValueError("initial encoder shape does not match the data")
        if (enc.bias is not None) != config.use_bias:
            raise ValueError("initial encoder bias does not match config.use_bias")
    adam_kw = dict(beta1=config.beta1, beta2=config.beta2, epsilon=config.epsilon)
    w_state = AdamState.zeros_like(enc.weights, **adam_kw)
    b_state = AdamState.zeros_like(enc.bias, **adam_kw) if enc.bias is not None else None
    history = TrainHistory()
    n = len(dataset)
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        w_state.learning_rate = lr
        if b_state is not None:
            b_state.learning_rate = lr
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = [(sample_training_snippet(dataset.videos[i], rng), tmat[dataset.labels[i]]) for i in idx]
            total += batch_loss(enc, batch)
            grad = batch_gradient(enc, batch)
            if b_state is None:
                w_state, enc.weights = adam_step(w_state, enc.weights, grad)
            else:
                w_state, enc.weights = adam_step(w_state, enc.weights, grad[0])
                b_state, enc.bias = adam_step(b_state, enc.bias, grad[1])
        history.loss.append(total / n)
        history.learning_rate.append(lr)
    return enc, history


def checkpoint_bytes(enc: LinearEncoder, config: TrainConfig | None = None) -> bytes:
    """Serialize weights as f32 followed by a ``key=value`` provenance trailer."""
    parts = [CKPT_MAGIC, struct.pack("<III", CKPT_VERSION, enc.d_in, enc.d_out),
             np.ascontiguousarray(enc.weights, dtype="<f4").tobytes()]
    lines = [f"{k}={v}" for k, v in (config.to_pairs() if config else [])]
    if enc.bias is not None:
        lines.append("bias=" + ",".join(repr(float(x)) for x in enc.bias.astype(np.float32)))
    parts.append("".join(line + "\n" for line in lines).encode("utf-8"))
    return b"".join(parts)


def save_checkpoint(path, enc: LinearEncoder, config: TrainConfig | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(enc, config))


def parse_checkpoint(data: bytes) -> tuple[LinearEncoder, TrainConfig | None]:
    if len(data) < 16 or data[:4] != CKPT_MAGIC:
        raise CheckpointError("not an encoder checkpoint (bad magic)")
    version, d_in, d_out = struct.unpack("<III", data[4:16])
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    end = 16 + 4 * d_in * d_out
    if len(data) < end:
        raise CheckpointError("truncated checkpoint weights")
    w = np.frombuffer(data[16:end], dtype="<f4").reshape(d_in, d_out).astype(np.float64)
    try:
        trailer = data[end:].decode("utf-8")
    except UnicodeDecodeError:
        raise CheckpointError("checkpoint trailer is not UTF-8") from None
    values = {}
    for line in trailer.splitlines():
        if not line:
            continue
        if "=" not in line:
            raise CheckpointError(f"bad trailer line {line!r}")
        k, v = line.split("=", 1)
        values[k] = v
    bias = values.pop("bias", None)
    bias = None if bias is None else np.array([float(x) for x in bias.split(",")])
    config = TrainConfig.from_mapping(values) if values else None
    return LinearEncoder(w, bias), config


def load_checkpoint(path) -> tuple[LinearEncoder, TrainConfig | None]:
    return parse_checkpoint(Path(path).read_bytes())
