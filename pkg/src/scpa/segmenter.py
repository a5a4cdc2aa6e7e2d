"""Desk-scale per-pixel land-class segmenters.

Two kinds share one interface:

* ``centroid``: nearest class mean in feature space (one pass, no tuning)
* ``softmax``: multinomial logistic regression trained by SGD with momentum
  under the poly learning-rate schedule

Features are RGB scaled to [0, 1], optionally followed by the per-channel
mean and standard deviation over a ``k x k`` window (edge pixels replicated).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import uniform_filter

from .codec import LandClassSet
from .errors import DataError
from .rasters import LabelRaster

MODEL_FORMAT = "scpa-segmenter"
MODEL_VERSION = 1
KINDS = ("centroid", "softmax")


def extract_features(image: np.ndarray, window: int = 0) -> np.ndarray:
    """``(H*W, d)`` float64 features; ``d = 3`` without a window, 9 with one."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError(f"expected an (H, W, 3) image, got shape {img.shape}")
    rgb = img.astype(np.float64) / 255.0
    feats = [rgb.reshape(-1, 3)]
    if window and window > 1:
        size = (window, window, 1)
        mean = uniform_filter(rgb, size=size, mode="nearest")
        sq = uniform_filter(rgb * rgb, size=size, mode="nearest")
        std = np.sqrt(np.maximum(sq - mean * mean, 0.0))
        feats += [mean.reshape(-1, 3), std.reshape(-1, 3)]
    return np.concatenate(feats, axis=1)


@dataclass
class TrainConfig:
    """Optimiser settings.  ``max_iter=None`` means ``epochs * ceil(n_pixels / batch_size)``."""

    initial_lr: float = 0.01
    power: float = 0.9
    momentum: float = 0.9
    max_iter: Optional[int] = None
    batch_size: int = 256
    epochs: int = 5
    seed: int = 0
    window: int = 0

    def __post_init__(self):
        if not self.initial_lr > 0:
            raise DataError(f"initial_lr must be > 0, got {self.initial_lr}")
        if not 0 <= self.momentum < 1:
            raise DataError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.max_iter is not None and self.max_iter < 1:
            raise DataError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.batch_size < 1 or self.epochs < 1:
            raise DataError("batch_size and epochs must be >= 1")
        if self.power < 0:
            raise DataError(f"power must be >= 0, got {self.power}")


def poly_lr(cfg: TrainConfig, iteration: int, max_iter: Optional[int] = None) -> float:
    """``initial_lr * (1 - iteration / max_iter) ** power``."""
    max_iter = cfg.max_iter if max_iter is None else max_iter
    if max_iter is None:
        raise DataError("max_iter is not set")
    if not 0 <= iteration <= max_iter:
        raise DataError(f"iteration {iteration} outside 0..{max_iter}")
    return cfg.initial_lr * (1.0 - iteration / max_iter) ** cfg.power


@dataclass
class SegmenterModel:
    kind: str
    classes: LandClassSet
    feature_dim: int
    window: int = 0
    centroids: Optional[np.ndarray] = None  # (L, d)
    weights: Optional[np.ndarray] = None  # (L, d)
    bias: Optional[np.ndarray] = None  # (L,)
    history: List[float] = field(default_factory=list)

    def __post_init__(self):
        L, d = self.classes.count, self.feature_dim
        if self.kind not in KINDS:
            raise DataError(f"unknown segmenter kind {self.kind!r}")
        if self.kind == "centroid":
            if self.centroids is None or np.shape(self.centroids) != (L, d):
                raise DataError(f"centroid model needs a ({L}, {d}) centroid array")
            self.centroids = np.asarray(self.centroids, dtype=np.float64)
        else:
            if self.weights is None or np.shape(self.weights) != (L, d):
                raise DataError(f"softmax model needs ({L}, {d}) weights")
            if self.bias is None or np.shape(self.bias) != (L,):
                raise DataError(f"softmax model needs a ({L},) bias")
            self.weights = np.asarray(self.weights, dtype=np.float64)
            self.bias = np.asarray(self.bias, dtype=np.float64)

    @property
    def n_classes(self) -> int:
        return self.classes.count

    def scores(self, features: np.ndarray) -> np.ndarray:
        """Per-class scores, higher is better; shape ``(n, L)``."""
        if self.kind == "centroid":
            out = np.empty((features.shape[0], self.n_classes))
            for k, c in enumerate(self.centroids):
                diff = features - c
                out[:, k] = -np.einsum("ij,ij->i", diff, diff)
            return out
        return features @ self.weights.T + self.bias[None, :]

    def to_dict(self) -> dict:
        d = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": self.kind,
            "n_classes": self.n_classes,
            "class_names": list(self.classes.names),
            "feature_dim": self.feature_dim,
            "window": self.window,
            "history": list(self.history),
        }
        if self.kind == "centroid":
            d["centroids"] = self.centroids.tolist()
        else:
            d["weights"] = self.weights.tolist()
            d["bias"] = self.bias.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SegmenterModel":
        if d.get("format") != MODEL_FORMAT:
            raise DataError("not a segmenter model file")
        if d.get("version") != MODEL_VERSION:
            raise DataError(f"unsupported model version {d.get('version')}")
        return cls(
            kind=d["kind"],
            classes=LandClassSet(d["n_classes"], tuple(d["class_names"])),
            feature_dim=d["feature_dim"],
            window=d.get("window", 0),
            centroids=None if "centroids" not in d else np.array(d["centroids"]),
            weights=None if "weights" not in d else np.array(d["weights"]),
            bias=None if "bias" not in d else np.array(d["bias"]),
            history=d.get("history", []),
        )


def save_model(model: SegmenterModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> SegmenterModel:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not valid JSON ({exc})") from None
    return SegmenterModel.from_dict(d)


def softmax_loss_and_grad(
    weights: np.ndarray, bias: np.ndarray, X: np.ndarray, y: np.ndarray
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy of a linear softmax classifier and its gradient."""
    logits = X @ weights.T + bias
    logits -= logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    log_norm = np.log(expl.sum(axis=1))
    n = X.shape[0]
    loss = float(np.mean(log_norm - logits[np.arange(n), y]))
    probs = expl / expl.sum(axis=1, keepdims=True)
    probs[np.arange(n), y] -= 1.0
    probs /= n
    return loss, probs.T @ X, probs.sum(axis=0)


def _gather(samples: Iterable[Tuple[np.ndarray, LabelRaster]], window: int):
    feats, labels, classes = [], [], None
    for image, lbl in samples:
        if np.shape(image)[:2] != lbl.shape:
            raise DataError(f"image {np.shape(image)[:2]} and labels {lbl.shape} differ in size")
        if classes is None:
            classes = lbl.classes
        elif lbl.classes.count != classes.count:
            raise DataError("training labels use different class sets")
        feats.append(extract_features(image, window))
        labels.append(lbl.data.ravel().astype(np.int64))
    if classes is None:
        raise DataError("no training samples")
    return np.concatenate(feats), np.concatenate(labels), classes


def train(
    samples: Iterable[Tuple[np.ndarray, LabelRaster]],
    kind: str = "centroid",
    cfg: Optional[TrainConfig] = None,
) -> SegmenterModel:
    """Fit a segmenter on ``(image, labels)`` pairs.

    Every class of the label set must have at least one training pixel.
    """
    cfg = cfg or TrainConfig()
    if kind not in KINDS:
        raise DataError(f"unknown segmenter kind {kind!r}; choose from {KINDS}")
    X, y, classes = _gather(samples, cfg.window)
    L, d = classes.count, X.shape[1]
    hist = np.bincount(y, minlength=L)
    missing = [classes.name(c) for c in range(L) if hist[c] == 0]
    if missing:
        raise DataError(f"no training pixels for class(es): {', '.join(missing)}")

    if kind == "centroid":
        sums = np.zeros((L, d))
        np.add.at(sums, y, X)
        return SegmenterModel("centroid", classes, d, cfg.window, centroids=sums / hist[:, None])

    rng = np.random.default_rng(cfg.seed)
    n = X.shape[0]
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    max_iter = cfg.max_iter or cfg.epochs * steps_per_epoch
    W = np.zeros((L, d))
    b = np.zeros(L)
    vW = np.zeros_like(W)
    vb = np.zeros_like(b)
    history, epoch_losses = [], []
    for it in range(max_iter):
        idx = rng.integers(0, n, size=min(cfg.batch_size, n))
        loss, gW, gb = softmax_loss_and_grad(W, b, X[idx], y[idx])
        lr = poly_lr(cfg, it, max_iter)
        vW = cfg.momentum * vW - lr * gW
        vb = cfg.momentum * vb - lr * gb
        W += vW
        b += vb
        epoch_losses.append(loss)
        if len(epoch_losses) == steps_per_epoch or it == max_iter - 1:
            history.append(float(np.mean(epoch_losses)))
            epoch_losses = []
    return SegmenterModel("softmax", classes, d, cfg.window, weights=W, bias=b, history=history)


def predict(model: SegmenterModel, image: np.ndarray) -> LabelRaster:
    """Per-pixel argmax; ties go to the lowest class ID."""
    h, w = np.shape(image)[:2]
    X = extract_features(image, model.window)
    if X.shape[1] != model.feature_dim:
        raise DataError(f"model expects {model.feature_dim} features, image gives {X.shape[1]}")
    labels = np.argmax(model.scores(X), axis=1).reshape(h, w)
    return LabelRaster(labels, model.classes)
