"""Route distribution and its REINFORCE optimiser.

Each block owns a logit vector; routes are drawn block-by-block from the
softmax of those logits. Updates ascend ``(reward - baseline) * grad log p(u)``
with Adam.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerics import NumericError, Param, adam_step, softmax_rows


@dataclass
class BaselineTracker:
    """Cumulative mean of rewards seen so far, or an EMA when ``decay`` is set."""

    running_sum: float = 0.0
    count: int = 0
    decay: float | None = None
    ema: float = 0.0

    @property
    def value(self) -> float:
        if self.count == 0:
            return 0.0
        if self.decay is not None:
            return self.ema
        return self.running_sum / self.count

    def update(self, reward: float) -> None:
        self.running_sum += reward
        self.count += 1
        if self.decay is not None:
            self.ema = reward if self.count == 1 else self.decay * self.ema + (1 - self.decay) * reward


@dataclass
class SampleRecord:
    u: tuple[int, ...]
    reward: float
    logprob_grad: list[np.ndarray]


@dataclass
class ArchState:
    alpha: list[Param]
    baseline: BaselineTracker = field(default_factory=BaselineTracker)

    @classmethod
    def uniform(cls, sizes: Sequence[int], baseline_decay: float | None = None) -> "ArchState":
        return cls([Param(np.zeros((1, n))) for n in sizes], BaselineTracker(decay=baseline_decay))

    @property
    def sizes(self) -> list[int]:
        return [a.size for a in self.alpha]

    def probs(self) -> list[np.ndarray]:
        return [softmax_rows(a.value)[0] for a in self.alpha]

    def logits(self) -> list[np.ndarray]:
        return [a.value[0].copy() for a in self.alpha]


def sample_route(arch: ArchState, rng: np.random.Generator) -> tuple[int, ...]:
    """One inverse-CDF draw per block."""
    u = []
    for p in arch.probs():
        cdf = np.cumsum(p)
        k = int(np.searchsorted(cdf, rng.random(), side="right"))
        u.append(min(k, p.size - 1))
    return tuple(u)


def logprob_grad(arch: ArchState, u: Sequence[int]) -> list[np.ndarray]:
    grads = []
    for p, k in zip(arch.probs(), u):
        g = -p
        g[k] += 1.0
        grads.append(g)
    return grads


def log_prob(arch: ArchState, u: Sequence[int]) -> float:
    return float(sum(np.log(p[k]) for p, k in zip(arch.probs(), u)))


def reinforce_update(arch: ArchState, record: SampleRecord, lr: float = 0.01) -> float:
    """Ascend the advantage-weighted score; returns the advantage used.

    The advantage is taken against the baseline before this reward joins it.
    A zero advantage leaves the logits (and Adam moments) untouched.
    """
    if not np.isfinite(record.reward):
        raise NumericError(f"non-finite reward {record.reward}")
    advantage = record.reward - arch.baseline.value
    if advantage != 0.0:
        for a, g in zip(arch.alpha, record.logprob_grad):
            a.grad[0] = -advantage * g  # adam descends; negate for ascent
            adam_step(a, lr, weight_decay=0.0)
    arch.baseline.update(record.reward)
    return advantage


def derive_route(arch: ArchState) -> tuple[int, ...]:
    # softmax is monotone, so argmax over logits; np.argmax keeps the lowest index on ties
    return tuple(int(np.argmax(a.value[0])) for a in arch.alpha)


def entropy_report(arch: ArchState) -> np.ndarray:
    out = []
    for p in arch.probs():
        nz = p[p > 0]
        out.append(float(-(nz * np.log(nz)).sum()))
    return np.array(out)
