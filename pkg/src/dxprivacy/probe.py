"""Linear utility probe: logistic regression over mean (privatized) token embeddings.

A small stand-in for privacy-constrained fine-tuning.  Training re-privatizes
the inputs every epoch (epoch ``e`` uses trial index ``e``), so an adaptively
trained probe sees fresh noise each pass.  Pair tasks concatenate the two
sentence vectors.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np

from .embeddings import EmbeddingTable
from .mechanism import PrivacyParams, _check_params, perturb_tokens, privatize_tokens
from .tokenizer import tokenize

Privatization = Literal["none", "representation", "text"]


@dataclass
class LabeledDataset:
    """Binary-labelled token sequences; ``second`` holds the other half of pair examples."""

    first: list[list[int]]
    labels: np.ndarray
    second: list[list[int]] | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.first) != self.labels.size:
            raise ValueError("number of sequences and labels differ")
        if self.second is not None and len(self.second) != len(self.first):
            raise ValueError("pair halves differ in length")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be 0 or 1")
        for seqs in (self.first, self.second or []):
            if any(len(s) == 0 for s in seqs):
                raise ValueError("sequences must be non-empty")

    def __len__(self) -> int:
        return self.labels.size

    @property
    def is_pair(self) -> bool:
        return self.second is not None


def load_tsv(path, table: EmbeddingTable, max_len: int = 128) -> LabeledDataset:
    """Read ``label<TAB>text`` or ``label<TAB>text1<TAB>text2`` lines."""
    first, second, labels = [], [], []
    pair = None
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) not in (2, 3):
                raise ValueError(f"{path}: line {lineno}: expected 2 or 3 tab-separated columns")
            if pair is None:
                pair = len(cols) == 3
            elif pair != (len(cols) == 3):
                raise ValueError(f"{path}: line {lineno}: mixes single and pair examples")
            try:
                labels.append(int(cols[0]))
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: label must be 0 or 1") from None
            first.append(tokenize(cols[1], table, max_len) or [table.vocab.id("[UNK]")])
            if pair:
                second.append(tokenize(cols[2], table, max_len) or [table.vocab.id("[UNK]")])
    return LabeledDataset(first, np.asarray(labels), second if pair else None)


@dataclass
class ProbeConfig:
    learning_rate: float = 0.5
    epochs: int = 10
    batch_size: int = 64
    l2: float = 1e-4
    seed: int = 0


@dataclass
class ProbeModel:
    weights: np.ndarray
    bias: float
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    dim: int
    pair: bool
    privatization: str
    config: ProbeConfig = field(default_factory=ProbeConfig)
    train_accuracy: float = float("nan")

    def decision(self, feats: np.ndarray) -> np.ndarray:
        return ((feats - self.feature_mean) / self.feature_scale) @ self.weights + self.bias

    def predict(self, feats: np.ndarray) -> np.ndarray:
        return (self.decision(feats) > 0).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "dim": self.dim,
            "pair": self.pair,
            "privatization": self.privatization,
            "config": asdict(self.config),
        }


def _mean_vectors(seqs, table, privatization, params, context, trial) -> np.ndarray:
    lengths = np.fromiter((len(s) for s in seqs), dtype=np.int64, count=len(seqs))
    flat = np.concatenate([np.asarray(s, dtype=np.int64) for s in seqs])
    if privatization == "none":
        vecs = table.matrix64[flat]
    else:
        if params is None:
            raise ValueError(f"privatization={privatization!r} needs privacy params")
        _check_params(table, params)
        pos = np.nonzero(~table.vocab.special_flags[flat])[0]
        if privatization == "text":
            out = flat.copy()
            out[pos] = privatize_tokens(flat[pos], table, params, context, pos, trial)
            vecs = table.matrix64[out]
        elif privatization == "representation":
            vecs = table.matrix64[flat].copy()
            vecs[pos] = perturb_tokens(flat[pos], table, params, context, pos, trial)
        else:
            raise ValueError(f"unknown privatization {privatization!r}")
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    return np.add.reduceat(vecs, starts, axis=0) / lengths[:, None]


def features(
    data: LabeledDataset,
    table: EmbeddingTable,
    privatization: Privatization = "none",
    params: PrivacyParams | None = None,
    context: str = "probe",
    trial: int = 0,
) -> np.ndarray:
    """Mean embedding per example (two concatenated means for pair data)."""
    f = _mean_vectors(data.first, table, privatization, params, context + "/first", trial)
    if data.is_pair:
        g = _mean_vectors(data.second, table, privatization, params, context + "/second", trial)
        f = np.concatenate([f, g], axis=1)
    return f


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def train_probe(
    data: LabeledDataset,
    table: EmbeddingTable,
    privatization: Privatization = "none",
    params: PrivacyParams | None = None,
    config: ProbeConfig | None = None,
) -> ProbeModel:
    """Mini-batch gradient descent on the logistic loss.

    Features are standardised with statistics of the first epoch's
    (privatized) training features, which become part of the model.
    """
    config = config or ProbeConfig()
    if len(data) == 0:
        raise ValueError("dataset is empty")
    if np.unique(data.labels).size < 2:
        raise ValueError("training data contains a single class")
    rng = np.random.default_rng(config.seed)
    y = data.labels.astype(np.float64)
    w = b = mean = scale = None
    acc = float("nan")
    for epoch in range(config.epochs):
        x = features(data, table, privatization, params, "probe/train", epoch)
        if w is None:
            mean = x.mean(axis=0)
            scale = x.std(axis=0)
            scale[scale < 1e-12] = 1.0
            w = np.zeros(x.shape[1])
            b = 0.0
        xs = (x - mean) / scale
        order = rng.permutation(len(data))
        for s in range(0, order.size, config.batch_size):
            idx = order[s : s + config.batch_size]
            err = _sigmoid(xs[idx] @ w + b) - y[idx]
            w -= config.learning_rate * (xs[idx].T @ err / idx.size + config.l2 * w)
            b -= config.learning_rate * float(err.mean())
        acc = float(np.mean(((xs @ w + b) > 0) == data.labels))
    return ProbeModel(
        weights=w,
        bias=float(b),
        feature_mean=mean,
        feature_scale=scale,
        dim=table.dim,
        pair=data.is_pair,
        privatization=privatization,
        config=config,
        train_accuracy=acc,
    )


def eval_probe(
    model: ProbeModel,
    data: LabeledDataset,
    table: EmbeddingTable,
    privatization: Privatization = "none",
    params: PrivacyParams | None = None,
    trial: int = 0,
) -> float:
    if model.dim != table.dim or model.pair != data.is_pair:
        raise ValueError("model was trained for a different embedding dimension or task shape")
    x = features(data, table, privatization, params, "probe/eval", trial)
    return float(np.mean(model.predict(x) == data.labels))


def random_probe(table: EmbeddingTable, pair: bool = False, seed: int = 0) -> ProbeModel:
    """Untrained probe with Gaussian weights (chance-level baseline)."""
    rng = np.random.default_rng(seed)
    width = table.dim * (2 if pair else 1)
    return ProbeModel(
        weights=rng.standard_normal(width),
        bias=0.0,
        feature_mean=np.zeros(width),
        feature_scale=np.ones(width),
        dim=table.dim,
        pair=pair,
        privatization="none",
    )


