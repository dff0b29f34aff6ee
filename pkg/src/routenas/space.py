"""Search space: blocks, their local routes, and whole-network route vectors.

A block sits in front of every sub-network of layers 2..L and in front of
every task head. Each block picks a nonempty subset of the previous layer's
H sub-networks as gate values and one query source. Routes inside a block are
enumerated canonically: subset bitmask ascending, then query index ascending.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence

QUERY_POLICIES = ("prev_layer_only", "prev_layer_plus_root", "root_only")
GATE_MODES = ("softmax_gate", "mean_pool")
ROOT = "root"


@dataclass(frozen=True)
class SpaceConfig:
    L: int = 2
    H: int = 4
    T: int = 2
    d_v: int = 64
    d_root: int = 64
    query_policy: str = "prev_layer_plus_root"
    gate_mode: str = "softmax_gate"

    def __post_init__(self):
        if min(self.L, self.H, self.T, self.d_v, self.d_root) < 1:
            raise ValueError(f"L, H, T, d_v, d_root must all be >= 1: {self}")
        if self.query_policy not in QUERY_POLICIES:
            raise ValueError(f"unknown query_policy {self.query_policy!r}")
        if self.gate_mode not in GATE_MODES:
            raise ValueError(f"unknown gate_mode {self.gate_mode!r}")

    @property
    def n_queries(self) -> int:
        return {"prev_layer_only": self.H, "prev_layer_plus_root": self.H + 1, "root_only": 1}[self.query_policy]

    def query_sources(self) -> list[int | str]:
        """Query candidates in index order: previous-layer positions, then ``ROOT``."""
        if self.query_policy == "root_only":
            return [ROOT]
        srcs: list[int | str] = list(range(self.H))
        if self.query_policy == "prev_layer_plus_root":
            srcs.append(ROOT)
        return srcs


@dataclass(frozen=True)
class BlockId:
    kind: str  # "inter_layer" | "task"
    layer: int  # target layer (2..L) for inter_layer; L + 1 for task blocks
    position: int

    @property
    def source_layer(self) -> int:
        return self.layer - 1

    def label(self) -> str:
        if self.kind == "task":
            return f"task/{self.position}"
        return f"layer/{self.layer}/subnet/{self.position}"


@dataclass(frozen=True)
class LocalRoute:
    value_subset: tuple[int, ...]
    query_source: int  # index into SpaceConfig.query_sources()

    @property
    def mask(self) -> int:
        return sum(1 << i for i in self.value_subset)


@dataclass(frozen=True)
class Subspace:
    block: BlockId
    routes: tuple[LocalRoute, ...]

    def __len__(self) -> int:
        return len(self.routes)

    def index(self, route: LocalRoute) -> int:
        return self.routes.index(route)


def iter_blocks(cfg: SpaceConfig) -> Iterator[BlockId]:
    """Canonical block order: inter-layer blocks layer-major, then task blocks."""
    for layer in range(2, cfg.L + 1):
        for j in range(cfg.H):
            yield BlockId("inter_layer", layer, j)
    for t in range(cfg.T):
        yield BlockId("task", cfg.L + 1, t)


@lru_cache(maxsize=None)
def blocks(cfg: SpaceConfig) -> tuple[BlockId, ...]:
    return tuple(iter_blocks(cfg))


def block_count(cfg: SpaceConfig) -> int:
    return (cfg.L - 1) * cfg.H + cfg.T


def subset_from_mask(mask: int) -> tuple[int, ...]:
    return tuple(i for i in range(mask.bit_length()) if mask >> i & 1)


def _validate_block(cfg: SpaceConfig, block: BlockId) -> None:
    ok = (
        block.kind == "inter_layer" and 2 <= block.layer <= cfg.L and 0 <= block.position < cfg.H
    ) or (block.kind == "task" and block.layer == cfg.L + 1 and 0 <= block.position < cfg.T)
    if not ok:
        raise ValueError(f"invalid block {block} for {cfg}")


@lru_cache(maxsize=None)
def enumerate_subspace(cfg: SpaceConfig, block: BlockId) -> Subspace:
    _validate_block(cfg, block)
    nq = cfg.n_queries
    routes = tuple(
        LocalRoute(subset_from_mask(mask), q) for mask in range(1, 2**cfg.H) for q in range(nq)
    )
    return Subspace(block, routes)


def subspace_size(cfg: SpaceConfig) -> int:
    return (2**cfg.H - 1) * cfg.n_queries


def encode_local(route: LocalRoute, n_queries: int) -> int:
    return (route.mask - 1) * n_queries + route.query_source


def decode_local(index: int, cfg: SpaceConfig) -> LocalRoute:
    if not 0 <= index < subspace_size(cfg):
        raise ValueError(f"route index {index} out of range")
    mask, q = divmod(index, cfg.n_queries)
    return LocalRoute(subset_from_mask(mask + 1), q)


def route_space_size(cfg: SpaceConfig, cap: int | None = 2**63 - 1) -> tuple[int, bool]:
    """Number of whole-network routes and whether it exceeded ``cap``.

    When saturated the returned count is ``cap``.
    """
    total = subspace_size(cfg) ** block_count(cfg)
    if cap is not None and total > cap:
        return cap, True
    return total, False


RouteVector = tuple  # one local-route index per block, canonical block order


def validate_route(cfg: SpaceConfig, u: Sequence[int]) -> tuple[int, ...]:
    u = tuple(int(i) for i in u)
    if len(u) != block_count(cfg):
        raise ValueError(f"route has {len(u)} entries, space has {block_count(cfg)} blocks")
    n = subspace_size(cfg)
    for i, k in enumerate(u):
        if not 0 <= k < n:
            raise ValueError(f"block {i}: route index {k} not in [0, {n})")
    return u


def _default_query(cfg: SpaceConfig, position: int) -> int:
    # MMoE-style gates read the shared root feature when it is a candidate
    srcs = cfg.query_sources()
    if ROOT in srcs:
        return srcs.index(ROOT)
    return min(position, len(srcs) - 1)


def reference_route(name: str, cfg: SpaceConfig) -> tuple[int, ...]:
    nq = cfg.n_queries
    u = []
    for b in blocks(cfg):
        if name == "share_bottom_like":
            u.append(encode_local(LocalRoute((0,), 0), nq))
        elif name == "mmoe_like":
            if b.kind == "inter_layer":
                lr = LocalRoute((b.position,), _default_query(cfg, b.position))
            else:
                lr = LocalRoute(tuple(range(cfg.H)), _default_query(cfg, 0))
            u.append(encode_local(lr, nq))
        else:
            raise ValueError(f"unsupported reference route {name!r}")
    return tuple(u)


def all_routes(cfg: SpaceConfig) -> Iterator[tuple[int, ...]]:
    """Every route vector in lexicographic (canonical) order."""
    n = subspace_size(cfg)
    B = block_count(cfg)
    for flat in range(n**B):
        u = []
        for _ in range(B):
            flat, k = divmod(flat, n)
            u.append(k)
        yield tuple(reversed(u))


def describe(cfg: SpaceConfig, u: Sequence[int]) -> list[tuple[BlockId, LocalRoute]]:
    return [(b, decode_local(k, cfg)) for b, k in zip(blocks(cfg), validate_route(cfg, u))]


def log2_space_size(cfg: SpaceConfig) -> float:
    return block_count(cfg) * math.log2(subspace_size(cfg))
