"""Search loop, fixed-route (re)training and the exhaustive route oracle.

Seeding: the data split and batch order derive from ``seed``, network
initialisation from ``seed + 1`` and route sampling from ``seed + 2``.
"""

from __future__ import annotations

import copy
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import space as sp
from .arch import ArchState, SampleRecord, derive_route, entropy_report, logprob_grad, reinforce_update, sample_route
from .data import EmbeddingTable, Splits
from .metrics import UndefinedMetric, auc, evaluate, mtl_loss, task_losses
from .numerics import DEFAULT_DTYPE, NumericError, adam_step, loss_backward, make_rng
from .supernet import LOSS_KIND, Supernet

log = logging.getLogger(__name__)

REWARD_KINDS = ("sum_auc", "neg_total_loss")
AUC_RESAMPLES = 5


class SearchDiverged(RuntimeError):
    pass


@dataclass
class SearchConfig:
    space: sp.SpaceConfig = field(default_factory=sp.SpaceConfig)
    weight_lr: float = 0.001
    weight_decay: float = 0.0005
    weight_batch: int = 512
    arch_lr: float = 0.01
    arch_batch: int = 1024
    warmup_steps: int | None = None  # None -> 20% of max_steps
    max_steps: int = 2000
    reward_kind: str = "sum_auc"
    seed: int = 0
    baseline_decay: float | None = None
    retrain_steps: int = 2000
    dtype: str = "float64"

    def __post_init__(self):
        if self.weight_batch < 1 or self.arch_batch < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.weight_lr <= 0 or self.arch_lr <= 0:
            raise ValueError("learning rates must be > 0")
        if self.reward_kind not in REWARD_KINDS:
            raise ValueError(f"unknown reward_kind {self.reward_kind!r}")

    @property
    def warmup(self) -> int:
        return int(0.2 * self.max_steps) if self.warmup_steps is None else self.warmup_steps

    @property
    def np_dtype(self):
        return np.dtype(self.dtype).type


@dataclass
class RunArtifacts:
    derived_route: tuple[int, ...]
    arch: ArchState
    net: Supernet
    logs: list[dict]
    metrics: dict = field(default_factory=dict)


def build_supernet(cfg: SearchConfig, d_in: int, task_kinds, embedding=None) -> Supernet:
    return Supernet(cfg.space, d_in, task_kinds, seed=cfg.seed + 1, dtype=cfg.np_dtype, embedding=embedding)


def weight_step(model, u, xb, yb, task_kinds, lr, weight_decay) -> tuple[float, list[float]]:
    """One Adam step on the parameters of route ``u``; returns the MTL loss."""
    preds, tr = model.forward(xb, u)
    losses = task_losses(preds, yb, task_kinds)
    total = mtl_loss(losses)
    if not np.isfinite(total):
        raise SearchDiverged(f"non-finite training loss {losses}")
    dpreds = [loss_backward(preds[t], yb[:, t : t + 1], LOSS_KIND[k]) for t, k in enumerate(task_kinds)]
    model.backward(tr, dpreds)
    for name in model.route_param_names(u):
        adam_step(model.params[name], lr, weight_decay=weight_decay)
    return total, losses


def compute_reward(model, u, batch, reward_kind: str, task_kinds: Sequence[str]) -> float:
    """Validation reward of route ``u``; raises UndefinedMetric for one-class AUC batches."""
    X, Y = batch
    preds, _ = model.forward(X, u)
    if reward_kind == "sum_auc":
        return float(sum(auc(preds[t][:, 0], Y[:, t]) for t in range(len(task_kinds))))
    if reward_kind == "neg_total_loss":
        return -mtl_loss(task_losses(preds, Y, task_kinds))
    raise ValueError(f"unknown reward_kind {reward_kind!r}")


def run_search(cfg: SearchConfig, splits: Splits, embedding=None, d_in: int | None = None, checkpoint=None, checkpoint_every: int = 0) -> RunArtifacts:
    """Alternate route-weight descent and REINFORCE ascent, then take the argmax route.

    ``checkpoint(step, net, arch)`` is called every ``checkpoint_every`` steps when given.
    """
    kinds = splits.task_kinds
    if cfg.space.T != len(kinds):
        raise ValueError(f"space has T={cfg.space.T} but data has {len(kinds)} tasks")
    if d_in is None:
        d_in = embedding.width if embedding is not None else splits.train[0].shape[1]
    net = build_supernet(cfg, d_in, kinds, embedding)
    arch = ArchState.uniform([sp.subspace_size(cfg.space)] * sp.block_count(cfg.space), cfg.baseline_decay)
    sampler = make_rng(cfg.seed + 2)
    train_it = splits.train_batches(cfg.weight_batch)
    valid_it = splits.valid_batches(cfg.arch_batch)
    logs = []
    for step in range(cfg.max_steps):
        u = sample_route(arch, sampler)
        xb, yb = next(train_it)
        try:
            loss, _ = weight_step(net, u, xb, yb, kinds, cfg.weight_lr, cfg.weight_decay)
        except (SearchDiverged, NumericError) as e:
            raise SearchDiverged(f"step {step}, route {u}: {e}") from e
        phase, reward = "warmup", float("nan")
        if step >= cfg.warmup:
            phase = "arch_skipped"
            for _ in range(AUC_RESAMPLES):
                try:
                    reward = compute_reward(net, u, next(valid_it), cfg.reward_kind, kinds)
                except UndefinedMetric:
                    continue
                reinforce_update(arch, SampleRecord(u, reward, logprob_grad(arch, u)), cfg.arch_lr)
                phase = "search"
                break
        logs.append(dict(
            step=step, phase=phase, mtl_train_loss=loss, reward=reward,
            baseline=arch.baseline.value, entropy_mean=float(entropy_report(arch).mean()), sampled_route=u,
        ))
        if checkpoint is not None and checkpoint_every and (step + 1) % checkpoint_every == 0:
            checkpoint(step + 1, net, arch)
    return RunArtifacts(derive_route(arch), arch, net, logs)


def train_fixed(model, route, splits: Splits, steps: int, lr: float, weight_decay: float, batch: int, stream: int = 0) -> list[float]:
    """Train one fixed route (or a baseline, ``route=None``) for ``steps`` mini-batches."""
    it = splits.train_batches(batch, stream)
    losses = []
    for _ in range(steps):
        xb, yb = next(it)
        losses.append(weight_step(model, route, xb, yb, splits.task_kinds, lr, weight_decay)[0])
    return losses


def retrain_fixed(route, cfg: SearchConfig, splits: Splits, init: str = "fresh", supernet: Supernet | None = None,
                  steps: int | None = None, embedding=None):
    """Train only ``route``'s parameters; returns (model, train losses, test metrics, test MTL loss)."""
    route = sp.validate_route(cfg.space, route)
    if init == "fresh":
        d_in = embedding.width if embedding is not None else splits.train[0].shape[1]
        if supernet is not None:
            d_in = supernet.d_in
        net = build_supernet(cfg, d_in, splits.task_kinds, embedding)
    elif init == "inherit":
        if supernet is None:
            raise ValueError("inherit mode needs the searched supernet")
        net = Supernet(cfg.space, supernet.d_in, supernet.task_kinds, dtype=cfg.np_dtype, embedding=_copy_embedding(supernet.embedding))
        net.load_values({k: p.value for k, p in supernet.params.items()})
    else:
        raise ValueError(f"unknown init mode {init!r}")
    n = cfg.retrain_steps if steps is None else steps
    losses = train_fixed(net, route, splits, n, cfg.weight_lr, cfg.weight_decay, cfg.weight_batch)
    metrics, total = evaluate(net, splits.test, splits.task_kinds, route)
    return net, losses, metrics, total


def _copy_embedding(emb):
    return None if emb is None else copy.deepcopy(emb)


# --- exhaustive oracle ----------------------------------------------------


def make_embedding(schema, seed: int, dtype=DEFAULT_DTYPE):
    """Embedding table for hashed-id data; initialised from ``seed`` on its own stream."""
    return None if schema is None else EmbeddingTable(schema, make_rng(seed, 7), dtype)


def _oracle_one(args):
    cfg, splits, route, steps, schema = args
    emb = make_embedding(schema, cfg.seed + 1, cfg.np_dtype)
    d_in = emb.width if emb is not None else splits.train[0].shape[1]
    net = Supernet(cfg.space, d_in, splits.task_kinds, seed=cfg.seed + 1, dtype=cfg.np_dtype, embedding=emb)
    train_fixed(net, route, splits, steps, cfg.weight_lr, cfg.weight_decay, cfg.weight_batch)
    try:
        r = compute_reward(net, route, splits.valid, cfg.reward_kind, splits.task_kinds)
    except UndefinedMetric:
        r = float("nan")
    return route, r


def brute_force_oracle(cfg: SearchConfig, splits: Splits, per_route_steps: int, cap: int = 200, workers: int = 1, schema=None):
    """Train every route of a small space from the same init; rank by validation reward.

    Output order is independent of ``workers``: ties keep canonical route order.
    """
    size, saturated = sp.route_space_size(cfg.space, cap)
    if saturated:
        raise ValueError(f"route space too large for the oracle: > {cap} routes "
                         f"(2^{sp.log2_space_size(cfg.space):.1f})")
    jobs = [(cfg, splits, u, per_route_steps, schema) for u in sp.all_routes(cfg.space)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_oracle_one, jobs))
    else:
        results = [_oracle_one(j) for j in jobs]
    order = sorted(range(len(results)), key=lambda i: (-np.nan_to_num(results[i][1], nan=-np.inf), i))
    return [results[i] for i in order]


def route_rank(ranked, route) -> int:
    """0-based position of ``route`` in an oracle ranking."""
    route = tuple(route)
    for i, (u, _) in enumerate(ranked):
        if tuple(u) == route:
            return i
    raise KeyError(route)
