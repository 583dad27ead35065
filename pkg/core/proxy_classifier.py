"""Auxiliary frame-level classifier whose scores serve as proxy features.

A standardized L2-regularized logistic regression trained by full-batch
gradient descent from zero weights, so retraining on the same table is
bit-identical.
"""

import json
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from scipy.special import expit

from core.audio_io import AudioBuffer, frame_signal
from core.dsp import cepstral_features
from core.errors import (
    DimensionMismatchError,
    IoError,
    LabelFileError,
    NoFramesError,
    SingleClassDataError,
)


class ProxyConfig(BaseModel):
    l2_lambda: float = Field(default=1e-3, ge=0.0, description="L2 penalty on the weights")
    max_iter: int = Field(default=2000, ge=1, le=1_000_000)
    lr: float = Field(default=0.5, gt=0.0, le=10.0, description="Gradient descent step")
    tol: float = Field(default=1e-6, gt=0.0, description="Gradient norm at which training stops")
    frame_ms: float = Field(default=25.0, gt=0.0)
    hop_ms: float = Field(default=10.0, gt=0.0)
    n_mel: int = Field(default=26, ge=1, le=128)
    n_cep: int = Field(default=13, ge=1, le=128)


@dataclass(frozen=True)
class LinearClassifier:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        if not (self.weights.shape == self.mean.shape == self.scale.shape):
            raise DimensionMismatchError("weights, mean and scale must share one dimension")
        if np.any(self.scale <= 0.0):
            raise ValueError("standardization scales must be positive")
        if not np.all(np.isfinite(self.weights)) or not np.isfinite(self.bias):
            raise ValueError("classifier weights must be finite")

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def zeros(cls, dim: int) -> "LinearClassifier":
        return cls(weights=np.zeros(dim), bias=0.0, mean=np.zeros(dim), scale=np.ones(dim))

    def negated(self) -> "LinearClassifier":
        return LinearClassifier(weights=-self.weights, bias=-self.bias, mean=self.mean, scale=self.scale)

    def to_dict(self) -> Dict:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "LinearClassifier":
        return cls(
            weights=np.asarray(data["weights"], dtype=np.float64),
            bias=float(data["bias"]),
            mean=np.asarray(data["mean"], dtype=np.float64),
            scale=np.asarray(data["scale"], dtype=np.float64),
        )


@dataclass(frozen=True)
class LabeledFrameTable:
    features: np.ndarray
    labels: np.ndarray
    sources: List[str]
    columns: List[str]

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise DimensionMismatchError(f"features must be 2-D, got shape {features.shape}")
        labels = np.asarray(self.labels, dtype=int).reshape(-1)
        if labels.shape[0] != features.shape[0] or len(self.sources) != features.shape[0]:
            raise DimensionMismatchError("features, labels and sources differ in row count")
        if len(self.columns) != features.shape[1]:
            raise DimensionMismatchError(f"{len(self.columns)} column names for {features.shape[1]} features")
        if not np.all(np.isin(labels, (0, 1))):
            raise LabelFileError("labels must be 0 or 1")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "sources", list(self.sources))
        object.__setattr__(self, "columns", list(self.columns))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @classmethod
    def from_arrays(cls, features, labels, source: str = "synthetic") -> "LabeledFrameTable":
        features = np.asarray(features, dtype=np.float64)
        return cls(features=features, labels=labels, sources=[source] * features.shape[0],
                   columns=[f"f{i}" for i in range(features.shape[1])])

    @classmethod
    def concat(cls, tables: Sequence["LabeledFrameTable"]) -> "LabeledFrameTable":
        if not tables:
            raise NoFramesError("Nothing to concatenate")
        dims = {t.dim for t in tables}
        if len(dims) != 1:
            raise DimensionMismatchError(f"Tables disagree on dimension: {sorted(dims)}")
        return cls(
            features=np.vstack([t.features for t in tables]),
            labels=np.concatenate([t.labels for t in tables]),
            sources=[s for t in tables for s in t.sources],
            columns=tables[0].columns,
        )


class ScoreSummary(NamedTuple):
    mean: float
    std: float
    fraction_positive: float


# ---------------------------------------------------------------------------
# Training and scoring
# ---------------------------------------------------------------------------

def _standardization(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    return mean, np.where(scale > 0.0, scale, 1.0)


def train_logistic(data: LabeledFrameTable, cfg: Optional[ProxyConfig] = None) -> LinearClassifier:
    cfg = cfg or ProxyConfig()
    if len(data) < 2:
        raise SingleClassDataError(f"Need at least 2 rows, got {len(data)}")
    if np.unique(data.labels).shape[0] < 2:
        raise SingleClassDataError("Training table holds a single class")

    mean, scale = _standardization(data.features)
    z = (data.features - mean) / scale
    y = data.labels.astype(np.float64)
    n = z.shape[0]

    w = np.zeros(data.dim)
    b = 0.0
    for _ in range(cfg.max_iter):
        residual = expit(z @ w + b) - y
        grad_w = z.T @ residual / n + cfg.l2_lambda * w
        grad_b = float(np.mean(residual))
        if np.sqrt(float(grad_w @ grad_w) + grad_b * grad_b) < cfg.tol:
            break
        w = w - cfg.lr * grad_w
        b = b - cfg.lr * grad_b
    return LinearClassifier(weights=w, bias=b, mean=mean, scale=scale)


def _check_dim(model: LinearClassifier, x: np.ndarray):
    if x.shape[-1] != model.dim:
        raise DimensionMismatchError(f"Feature dimension {x.shape[-1]} != model dimension {model.dim}")


def score(model: LinearClassifier, features: Sequence[float]) -> float:
    """sigmoid(w · standardize(x) + b)"""
    x = np.asarray(features, dtype=np.float64).reshape(-1)
    _check_dim(model, x)
    return float(expit(((x - model.mean) / model.scale) @ model.weights + model.bias))


def score_batch(model: LinearClassifier, features: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    _check_dim(model, x)
    return expit(((x - model.mean) / model.scale) @ model.weights + model.bias)


def accuracy(model: LinearClassifier, data: LabeledFrameTable) -> float:
    predicted = (score_batch(model, data.features) > 0.5).astype(int)
    return float(np.mean(predicted == data.labels))


def frame_features(buf: AudioBuffer, cfg: Optional[ProxyConfig] = None) -> np.ndarray:
    """Cepstra of every 25 ms frame (10 ms hop); shape (n_frames, n_cep)"""
    cfg = cfg or ProxyConfig()
    frame_len = int(round(cfg.frame_ms * buf.sample_rate / 1000.0))
    hop = int(round(cfg.hop_ms * buf.sample_rate / 1000.0))
    frames = frame_signal(buf.samples, frame_len, hop)
    if frames.shape[0] == 0:
        raise NoFramesError(f"Recording of {len(buf)} samples is shorter than one {frame_len}-sample frame")
    return np.array([cepstral_features(f, buf.sample_rate, cfg.n_mel, cfg.n_cep) for f in frames])


def score_recording(model: LinearClassifier, buf: AudioBuffer,
                    cfg: Optional[ProxyConfig] = None) -> ScoreSummary:
    scores = score_batch(model, frame_features(buf, cfg))
    return ScoreSummary(
        mean=float(np.mean(scores)),
        std=float(np.std(scores)),
        fraction_positive=float(np.mean(scores > 0.5)),
    )


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def read_sidecar(path: str) -> List[Tuple[float, float, int]]:
    """Parse `start_sec end_sec label` lines; intervals must ascend without overlap"""
    intervals = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise LabelFileError(f"Cannot read label file {path}: {e}") from e

    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise LabelFileError(f"{path}:{lineno}: expected 'start end label'")
        try:
            start, end, label = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError as e:
            raise LabelFileError(f"{path}:{lineno}: {e}") from e
        if end <= start or label not in (0, 1):
            raise LabelFileError(f"{path}:{lineno}: bad interval or label")
        if intervals and start < intervals[-1][1]:
            raise LabelFileError(f"{path}:{lineno}: intervals overlap or are not ascending")
        intervals.append((start, end, label))
    return intervals


def frames_from_sidecar(buf: AudioBuffer, labels: Sequence[Tuple[float, float, int]], source: str,
                        cfg: Optional[ProxyConfig] = None) -> LabeledFrameTable:
    """Label each frame by the interval containing its centre; unlabeled frames are dropped"""
    cfg = cfg or ProxyConfig()
    feats = frame_features(buf, cfg)
    frame_len = int(round(cfg.frame_ms * buf.sample_rate / 1000.0))
    hop = int(round(cfg.hop_ms * buf.sample_rate / 1000.0))
    centres = (np.arange(feats.shape[0]) * hop + frame_len / 2.0) / buf.sample_rate

    keep, frame_labels = [], []
    for i, c in enumerate(centres):
        for start, end, label in labels:
            if start <= c < end:
                keep.append(i)
                frame_labels.append(label)
                break
    if not keep:
        raise NoFramesError(f"No frame of {source} falls inside a labeled interval")
    return LabeledFrameTable(features=feats[keep], labels=frame_labels, sources=[source] * len(keep),
                             columns=[f"f{i}" for i in range(feats.shape[1])])


def write_table(table: LabeledFrameTable, path: str) -> str:
    df = pd.DataFrame(table.features, columns=table.columns)
    df["label"] = table.labels
    df["source"] = table.sources
    try:
        df.to_csv(path, index=False)
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}") from e
    return path


def read_table(path: str) -> LabeledFrameTable:
    try:
        df = pd.read_csv(path, dtype={"source": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise LabelFileError(f"Cannot read frame table {path}: {e}") from e
    if "label" not in df.columns or "source" not in df.columns:
        raise LabelFileError(f"{path}: missing 'label' or 'source' column")
    columns = [c for c in df.columns if c not in ("label", "source")]
    return LabeledFrameTable(
        features=df[columns].to_numpy(dtype=np.float64),
        labels=df["label"].to_numpy(dtype=int),
        sources=df["source"].fillna("").tolist(),
        columns=columns,
    )


def save_classifier(model: LinearClassifier, path: str) -> str:
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(model.to_dict(), f, indent=2)
    except OSError as e:
        raise IoError(f"Cannot write {path}: {e}") from e
    return path


def load_classifier(path: str) -> LinearClassifier:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return LinearClassifier.from_dict(json.load(f))
    except (OSError, ValueError, KeyError) as e:
        raise LabelFileError(f"Cannot load classifier {path}: {e}") from e
