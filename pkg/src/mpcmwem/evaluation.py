"""Utility metrics: workload error, total variation, logistic regression AUC."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .data import Schema


class TrainingError(ValueError):
    """The training set cannot fit a classifier (e.g. a single class)."""


def workload_error(real, synth, workload) -> tuple[float, float]:
    """(max, mean) of |q(synth) - q(real)| / n over the workload."""
    real = np.asarray(real, dtype=np.float64)
    synth = np.asarray(synth, dtype=np.float64)
    W = np.asarray(workload, dtype=np.float64)
    if real.shape != synth.shape or W.shape[-1] != real.shape[-1]:
        raise ValueError("histogram / workload dimension mismatch")
    n = real.sum()
    err = np.abs(W @ synth - W @ real) / n
    return float(err.max()), float(err.mean())


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return 0.5 * float(np.abs(p / p.sum() - q / q.sum()).sum())


def one_hot(records, schema: Schema) -> tuple[np.ndarray, np.ndarray]:
    """Features (one-hot of every non-label column) and binary labels.

    The label is 0 for the label column's first category and 1 otherwise.
    """
    records = np.asarray(records, dtype=np.int64)
    li = schema.label_index()
    blocks = []
    for j, col in enumerate(schema.columns):
        if j == li:
            continue
        blocks.append(np.eye(len(col.categories))[records[:, j]])
    X = np.hstack(blocks) if blocks else np.zeros((len(records), 0))
    y = (records[:, li] != 0).astype(np.float64)
    return X, y


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    iterations: int

    def decision(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision(X))


def train_lr(X, y, lr: float = 0.1, tol: float = 1e-6, max_iter: int = 1000, l2: float = 0.0) -> LogisticModel:
    """Full-batch gradient descent on the mean log-loss."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise TrainingError("training labels contain a single class")
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        resid = expit(X @ w + b) - y
        gw = X.T @ resid / n + l2 * w
        gb = resid.mean()
        w -= lr * gw
        b -= lr * gb
        if max(np.abs(gw).max(initial=0.0), abs(gb)) < tol:
            break
    return LogisticModel(w, b, it)


def auc_roc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic (midranks for ties)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def lr_auc(train_records, test_records, schema: Schema, **hyper) -> float:
    """Train on ``train_records``, report AUC on ``test_records``."""
    Xtr, ytr = one_hot(train_records, schema)
    Xte, yte = one_hot(test_records, schema)
    model = train_lr(Xtr, ytr, **hyper)
    return auc_roc(model.decision(Xte), yte)
