from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import loss_forward
from .supernet import LOSS_KIND


class UndefinedMetric(ValueError):
    pass


@dataclass
class TaskMetrics:
    auc: float | None
    loss: float
    n: int


def midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties given their average rank."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    # boundaries of runs of equal values
    starts = np.r_[0, np.flatnonzero(np.diff(xs) != 0) + 1]
    ends = np.r_[starts[1:], xs.size]
    run_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(x.size)
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


def auc(scores, labels) -> float:
    """ROC AUC by the rank-sum statistic; tied pos/neg pairs count one half."""
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC needs both classes")
    r = midranks(s)
    u = r[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def mtl_loss(per_task_losses: Sequence[float]) -> float:
    return float(sum(per_task_losses))


def task_losses(preds, Y: np.ndarray, task_kinds: Sequence[str]) -> list[float]:
    return [loss_forward(preds[t], Y[:, t : t + 1], LOSS_KIND[k]) for t, k in enumerate(task_kinds)]


def predict(model, X: np.ndarray, route=None, batch: int = 4096) -> np.ndarray:
    """Stacked ``n x T`` predictions, computed in batches."""
    if len(X) == 0:
        raise ValueError("empty split")
    outs = []
    for i in range(0, len(X), batch):
        preds, _ = model.forward(X[i : i + batch], route)
        outs.append(np.hstack(preds))
    return np.vstack(outs)


def evaluate(model, split, task_kinds: Sequence[str], route=None, batch: int = 4096):
    """Per-task metrics over a whole split plus the summed MTL loss.

    AUC is computed on the concatenated scores of the full split.
    """
    X, Y = split
    P = predict(model, X, route, batch)
    out = []
    for t, kind in enumerate(task_kinds):
        loss = loss_forward(P[:, t : t + 1], Y[:, t : t + 1], LOSS_KIND[kind])
        a = None
        if kind == "binary":
            try:
                a = auc(P[:, t], Y[:, t])
            except UndefinedMetric:
                a = None
        out.append(TaskMetrics(a, loss, len(X)))
    return out, mtl_loss([m.loss for m in out])
