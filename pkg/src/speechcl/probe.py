"""Linear probe: multinomial logistic regression on frozen representations.

Representation quality is scored by mean-pooling each utterance's feature
sequence, fitting the probe on a fixed 80/20 split with full-batch gradient
descent, and reporting train/test accuracy.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


class LabelMismatchError(ValueError):
    """Feature archive ids and label-file ids disagree."""


@dataclass(frozen=True)
class ProbeConfig:
    iterations: int = 500
    l2: float = 1e-4
    learning_rate: float = 1.0
    test_fraction: float = 0.2
    split_seed: int = 0


@dataclass
class ProbeReport:
    train_accuracy: float
    test_accuracy: float
    classes: list[str]
    num_train: int
    num_test: int
    split_seed: int

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")


def read_labels(path) -> dict[str, str]:
    """CSV of `utterance_id,label` rows; a matching header row is skipped."""
    labels: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"label rows must be `utterance_id,label`, got {row}")
            if row[0] == "utterance_id" and not labels:
                continue
            labels[row[0]] = row[1]
    return labels


def mean_pool(features: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """(T, d) entries -> (d,) by time average; (d,) entries pass through."""
    pooled = {}
    for utt, arr in features.items():
        arr = np.asarray(arr, dtype=np.float64)
        pooled[utt] = arr.mean(axis=0) if arr.ndim == 2 else arr
    return pooled


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def train_probe(features: dict[str, np.ndarray], labels: dict[str, str], cfg: ProbeConfig = ProbeConfig()) -> ProbeReport:
    """Fit the probe and score it on the held-out split."""
    missing_labels = sorted(set(features) - set(labels))
    missing_features = sorted(set(labels) - set(features))
    if missing_labels or missing_features:
        raise LabelMismatchError(
            f"ids without labels: {missing_labels[:10]}; labeled ids without features: {missing_features[:10]}"
        )
    pooled = mean_pool(features)
    ids = sorted(pooled)
    classes = sorted(set(labels.values()))
    class_index = {c: i for i, c in enumerate(classes)}
    x = np.stack([pooled[u] for u in ids])
    y = np.array([class_index[labels[u]] for u in ids])

    rng = np.random.default_rng(cfg.split_seed)
    perm = rng.permutation(len(ids))
    n_test = int(round(cfg.test_fraction * len(ids)))
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    if len(train_idx) == 0:
        raise ValueError("empty training split")

    w, b, mu, sd = _fit(x[train_idx], y[train_idx], len(classes), cfg)
    return ProbeReport(
        train_accuracy=_accuracy(x[train_idx], y[train_idx], w, b, mu, sd),
        test_accuracy=_accuracy(x[test_idx], y[test_idx], w, b, mu, sd) if n_test else float("nan"),
        classes=classes,
        num_train=len(train_idx),
        num_test=len(test_idx),
        split_seed=cfg.split_seed,
    )


def _fit(x: np.ndarray, y: np.ndarray, num_classes: int, cfg: ProbeConfig):
    mu = x.mean(axis=0)
    sd = np.maximum(x.std(axis=0), 1e-8)
    xs = (x - mu) / sd
    n, d = xs.shape
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y] = 1.0
    w = np.zeros((d, num_classes))
    b = np.zeros(num_classes)
    for _ in range(cfg.iterations):
        p = _softmax_rows(xs @ w + b)
        err = (p - onehot) / n
        w -= cfg.learning_rate * (xs.T @ err + cfg.l2 * w)
        b -= cfg.learning_rate * err.sum(axis=0)
    return w, b, mu, sd


def _accuracy(x: np.ndarray, y: np.ndarray, w, b, mu, sd) -> float:
    if len(y) == 0:
        return float("nan")
    pred = (((x - mu) / sd) @ w + b).argmax(axis=1)
    return float(np.mean(pred == y))


def cross_validated_accuracy(features: dict[str, np.ndarray], labels: dict[str, str],
                             folds: int = 5, cfg: ProbeConfig = ProbeConfig()) -> float:
    """K-fold CV accuracy of the probe (used by the dataset self-check)."""
    pooled = mean_pool(features)
    ids = sorted(pooled)
    classes = sorted(set(labels.values()))
    class_index = {c: i for i, c in enumerate(classes)}
    x = np.stack([pooled[u] for u in ids])
    y = np.array([class_index[labels[u]] for u in ids])
    perm = np.random.default_rng(cfg.split_seed).permutation(len(ids))
    hits = 0
    for fold in range(folds):
        test_idx = perm[fold::folds]
        train_idx = np.setdiff1d(perm, test_idx)
        w, b, mu, sd = _fit(x[train_idx], y[train_idx], len(classes), cfg)
        pred = (((x[test_idx] - mu) / sd) @ w + b).argmax(axis=1)
        hits += int(np.sum(pred == y[test_idx]))
    return hits / len(ids)


def write_report_csv(path, rows: list[dict]) -> None:
    """Flat CSV report; column order follows the first row's keys."""
    if not rows:
        raise ValueError("no rows to report")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
