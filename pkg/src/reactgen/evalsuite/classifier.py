"""Motion classifier used as the feature extractor for distribution metrics.

Three strided 1D-conv blocks, global average pooling over time, a linear
projection to a small feature vector, and a classification layer on top.
Those projected features (the input of the final layer) are the metric
space: FID, diversity and multimodality all operate on them, so any two
evaluations sharing an extractor are directly comparable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from reactgen.errors import ConfigError, ContractError, TrainingError
from reactgen.rng import stream
from reactgen.tensor import (AdamW, Linear, Module, Parameter, Tensor, conv1d,
                             log, no_grad, relu, take)


@dataclass(frozen=True)
class ClassifierSettings:
    width: int = 64
    feature_dim: int = 32
    num_classes: int = 4
    kernel: int = 5
    steps: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    holdout_floor: float = 0.70  # below this the dataset or config is broken

    def __post_init__(self):
        if min(self.width, self.feature_dim, self.kernel, self.steps, self.batch_size) < 1:
            raise ConfigError("classifier dimensions and step counts must be positive")
        if self.num_classes < 2:
            raise ConfigError("classifier needs at least two classes")
        if not 0.0 < self.lr:
            raise ConfigError("lr must be positive")


class _Conv(Module):
    def __init__(self, c_in, c_out, kernel, stride, rng):
        super().__init__()
        scale = np.sqrt(2.0 / (c_in * kernel))
        self.weight = Parameter(rng.normal(0.0, scale, (c_out, c_in, kernel)))
        self.bias = Parameter(np.zeros(c_out))
        self.stride = stride
        self.padding = kernel // 2

    def __call__(self, x):
        return conv1d(x, self.weight, self.bias, self.stride, self.padding)


class FeatureExtractor(Module):
    def __init__(self, channels: int, cfg: ClassifierSettings, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.channels = channels
        w = cfg.width
        self.conv1 = _Conv(channels, w, cfg.kernel, 2, rng)
        self.conv2 = _Conv(w, w, cfg.kernel, 2, rng)
        self.conv3 = _Conv(w, w, cfg.kernel, 2, rng)
        self.to_feat = Linear(w, cfg.feature_dim, rng)
        self.to_logits = Linear(cfg.feature_dim, cfg.num_classes, rng)
        # Channel statistics, filled in by training; identity until then.
        self._mu = np.zeros(channels, dtype=np.float32)
        self._sd = np.ones(channels, dtype=np.float32)
        self.holdout_acc = float("nan")

    def set_normalization(self, mu: np.ndarray, sd: np.ndarray) -> None:
        self._mu = np.asarray(mu, dtype=np.float32)
        self._sd = np.maximum(np.asarray(sd, dtype=np.float32), 1e-6)

    def features(self, frames) -> Tensor:
        """(B, N, D) or (N, D) frames -> (B, feature_dim) activations."""
        x = np.asarray(frames.data if isinstance(frames, Tensor) else frames)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[-1] != self.channels:
            raise ContractError(
                f"expected (B, N, {self.channels}) frames, got {x.shape}")
        x = (x - self._mu) / self._sd
        h = Tensor(np.ascontiguousarray(x.swapaxes(1, 2)))
        for conv in (self.conv1, self.conv2, self.conv3):
            h = relu(conv(h))
        return self.to_feat(h.mean(axis=-1))

    def logits(self, frames) -> Tensor:
        return self.to_logits(self.features(frames))

    def featurize(self, frames) -> np.ndarray:
        with no_grad():
            return self.features(frames).data

    def classify(self, frames) -> np.ndarray:
        with no_grad():
            return self.logits(frames).data.argmax(axis=1)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood, stabilized with a constant row max."""
    labels = np.asarray(labels)
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ContractError(f"labels must be ({n},), got {labels.shape}")
    row_max = logits.data.max(axis=1)
    shifted = logits - Tensor(row_max[:, None])
    lse = log(shifted.exp().sum(axis=1)) + Tensor(row_max)
    picked = take(logits, (np.arange(n), labels))
    return (lse - picked).mean()


def _stack_reactions(pairs):
    frames = np.stack([p.reaction.frames for p in pairs]).astype(np.float32)
    labels = np.array([p.class_label for p in pairs], dtype=np.intp)
    return frames, labels


def train_classifier(dataset, cfg: ClassifierSettings,
                     rng: np.random.Generator) -> FeatureExtractor:
    """Fit the extractor on the train-split reactions, check it on the test
    split. Raises TrainingError below the holdout floor — the synthetic
    classes are separable by construction, so a weak classifier means the
    dataset or configuration is wrong, and metrics built on it would be
    meaningless."""
    train = [p for p in dataset if p.split_tag == "train"]
    held = [p for p in dataset if p.split_tag == "test"]
    if not train or not held:
        raise ContractError("dataset needs both train and test pairs")
    labels_seen = {p.class_label for p in dataset}
    if len(labels_seen) < 2:
        raise ContractError("dataset must contain at least two classes")
    if max(labels_seen) >= cfg.num_classes:
        raise ConfigError(
            f"dataset has class {max(labels_seen)} but cfg.num_classes={cfg.num_classes}")

    x_train, y_train = _stack_reactions(train)
    x_held, y_held = _stack_reactions(held)

    model = FeatureExtractor(x_train.shape[-1], cfg, rng)
    flat = x_train.reshape(-1, x_train.shape[-1])
    model.set_normalization(flat.mean(axis=0), flat.std(axis=0))

    opt = AdamW(model.parameters(), lr=cfg.lr, betas=(0.9, 0.999))
    n = len(train)
    b = min(cfg.batch_size, n)
    order = rng.permutation(n)
    cursor = 0
    for _ in range(cfg.steps):
        if cursor + b > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor:cursor + b]
        cursor += b
        opt.zero_grad()
        loss = cross_entropy(model.logits(x_train[idx]), y_train[idx])
        loss.backward()
        opt.step()

    acc = float((model.classify(x_held) == y_held).mean())
    model.holdout_acc = acc
    if acc < cfg.holdout_floor:
        raise TrainingError(
            f"classifier reached only {acc:.3f} held-out accuracy "
            f"(floor {cfg.holdout_floor}); the evaluation would be meaningless")
    return model


def build_classifier(dataset, num_classes: int, seed: int,
                     **overrides) -> FeatureExtractor:
    cfg = ClassifierSettings(num_classes=num_classes, **overrides)
    return train_classifier(dataset, cfg, stream(seed, "classifier"))
