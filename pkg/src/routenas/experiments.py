"""Synthetic-data experiments shared by the scripts and the acceptance suite."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace

from . import space as sp
from .baselines import BaselineSpec, build, count_params, match_param_budget
from .data import SyntheticSpec, gen_synthetic, split_and_batch
from .driver import SearchConfig, brute_force_oracle, retrain_fixed, route_rank, run_search, train_fixed
from .metrics import evaluate
from .supernet import param_count


@dataclass
class ComparisonConfig:
    """Search, retrain and budget-matched baselines on two-task synthetic data."""

    rho: float = 0.0
    d: int = 100
    n: int = 10_000
    space: sp.SpaceConfig = field(default_factory=lambda: sp.SpaceConfig(L=2, H=4, T=2))
    search_steps: int = 3000
    train_steps: int = 3000
    reward_kind: str = "neg_total_loss"
    baselines: tuple[str, ...] = ("share_bottom", "mmoe")
    dtype: str = "float64"


@dataclass
class ComparisonResult:
    seed: int
    route: tuple[int, ...]
    task_subsets: list[tuple[int, ...]]
    route_params: int
    mtnas_loss: float
    baseline_loss: dict[str, float]
    baseline_params: dict[str, int]
    baseline_hidden: dict[str, int]
    seconds: float

    @property
    def task_overlap(self) -> int:
        """Number of final-layer sub-networks reached by every task block."""
        common = set(self.task_subsets[0])
        for s in self.task_subsets[1:]:
            common &= set(s)
        return len(common)


def synthetic_comparison(seed: int, cfg: ComparisonConfig = ComparisonConfig()) -> ComparisonResult:
    t0 = time.time()
    ds = gen_synthetic(SyntheticSpec(d=cfg.d, n=cfg.n, rho=cfg.rho, seed=seed))
    splits = split_and_batch(ds, seed=seed)
    scfg = SearchConfig(space=cfg.space, max_steps=cfg.search_steps, retrain_steps=cfg.train_steps,
                        reward_kind=cfg.reward_kind, seed=seed, dtype=cfg.dtype)
    art = run_search(scfg, splits)
    u = art.derived_route
    net, _, _, mtnas_loss = retrain_fixed(u, scfg, splits, "fresh")
    target = param_count(net, u)
    losses, counts, widths = {}, {}, {}
    for kind in cfg.baselines:
        spec = match_param_budget(BaselineSpec(kind, tasks=cfg.space.T), target, cfg.d)
        model = build(spec, cfg.d, splits.task_kinds, seed=seed + 1, dtype=scfg.np_dtype)
        train_fixed(model, None, splits, cfg.train_steps, scfg.weight_lr, scfg.weight_decay, scfg.weight_batch)
        losses[kind] = evaluate(model, splits.test, splits.task_kinds)[1]
        counts[kind] = count_params(spec, cfg.d)
        widths[kind] = spec.hidden
    subsets = [lr.value_subset for b, lr in sp.describe(cfg.space, u) if b.kind == "task"]
    return ComparisonResult(seed, u, subsets, target, mtnas_loss, losses, counts, widths, time.time() - t0)


@dataclass
class AgreementConfig:
    """Exhaustive ranking of a small space versus the routes search derives."""

    space: sp.SpaceConfig = field(default_factory=lambda: sp.SpaceConfig(L=2, H=2, T=2, query_policy="root_only"))
    d: int = 100
    n: int = 10_000
    rho: float = 0.0
    data_seed: int = 0
    oracle_seed: int = 0
    per_route_steps: int = 600
    search_steps: int = 4000
    reward_kind: str = "neg_total_loss"
    top_fraction: float = 0.2
    workers: int = 0  # 0 -> min(4, cpu count)


def oracle_agreement(search_seeds=range(5), cfg: AgreementConfig = AgreementConfig()):
    """Returns the oracle ranking and ``(seed, route, rank)`` per search seed."""
    ds = gen_synthetic(SyntheticSpec(d=cfg.d, n=cfg.n, rho=cfg.rho, seed=cfg.data_seed))
    splits = split_and_batch(ds, seed=cfg.data_seed)
    base = SearchConfig(space=cfg.space, max_steps=cfg.search_steps, reward_kind=cfg.reward_kind, seed=cfg.oracle_seed)
    workers = cfg.workers or min(4, os.cpu_count() or 1)
    ranked = brute_force_oracle(base, splits, cfg.per_route_steps, workers=workers)
    found = []
    for s in search_seeds:
        u = run_search(replace(base, seed=s), splits).derived_route
        found.append((s, u, route_rank(ranked, u)))
    return ranked, found
