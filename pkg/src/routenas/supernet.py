"""Over-parameterised multi-task network holding every candidate sharing route.

Sub-network weights are shared by all routes; each (block, local route) pair
owns its own gate weight. A forward pass follows one route vector and only
computes the sub-networks that route actually reaches.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import space as sp
from .numerics import (
    DEFAULT_DTYPE,
    DimensionError,
    Param,
    activation_backward,
    activation_forward,
    dense_backward,
    dense_forward,
    glorot,
    make_rng,
    softmax_rows,
    zeros,
)

OUTPUT_ACTIVATION = {"binary": "sigmoid", "real": "identity"}
LOSS_KIND = {"binary": "bce", "real": "mse"}


# --- gate ----------------------------------------------------------------


def gate_forward(
    q_hat: np.ndarray | None,
    V_hat: Sequence[np.ndarray],
    w_k: Param | None,
    mode: str = "softmax_gate",
) -> tuple[np.ndarray, np.ndarray]:
    """Mix ``s`` value tensors with scores ``softmax(q_hat @ w_k.T)`` per row.

    Returns the mixed output and the ``n x s`` score matrix. In ``mean_pool``
    mode every score is ``1/s`` and neither query nor weight is read.
    """
    s = len(V_hat)
    if s < 1:
        raise DimensionError("gate needs at least one value")
    n, d_v = V_hat[0].shape
    if any(v.shape != (n, d_v) for v in V_hat):
        raise DimensionError("gate values must share one shape")
    V = np.stack(V_hat, axis=1)  # n x s x d_v
    if mode == "mean_pool":
        m = np.full((n, s), 1.0 / s, dtype=V.dtype)
    else:
        if w_k.shape != (s, q_hat.shape[1]) or q_hat.shape[0] != n:
            raise DimensionError(f"gate: w{w_k.shape} q{q_hat.shape} s={s}")
        m = softmax_rows(q_hat @ w_k.value.T)
    y = np.einsum("ns,nsd->nd", m, V)
    return y, m


def gate_backward(
    q_hat: np.ndarray | None,
    V_hat: Sequence[np.ndarray],
    w_k: Param | None,
    m: np.ndarray,
    dy: np.ndarray,
    mode: str = "softmax_gate",
) -> tuple[np.ndarray | None, list[np.ndarray]]:
    dV = [m[:, i : i + 1] * dy for i in range(len(V_hat))]
    if mode == "mean_pool":
        return None, dV
    dm = np.stack([(dy * v).sum(axis=1) for v in V_hat], axis=1)
    de = m * (dm - (m * dm).sum(axis=1, keepdims=True))
    w_k.grad += de.T @ q_hat
    return de @ w_k.value, dV


# --- route plan ----------------------------------------------------------


@dataclass(frozen=True)
class RoutePlan:
    """Which nodes and gates a route touches, derived once per route vector."""

    u: tuple[int, ...]
    local: tuple[sp.LocalRoute, ...]  # per block, canonical order
    nodes: tuple[tuple[int, int], ...]  # active (layer, position), layer-ascending
    gated: frozenset[int]  # block indices whose gate weight is actually read


def _block_index(cfg: sp.SpaceConfig, layer: int, position: int) -> int:
    return (layer - 2) * cfg.H + position


def _task_block_index(cfg: sp.SpaceConfig, t: int) -> int:
    return (cfg.L - 1) * cfg.H + t


def make_plan(cfg: sp.SpaceConfig, u: Sequence[int]) -> RoutePlan:
    u = sp.validate_route(cfg, u)
    local = tuple(sp.decode_local(k, cfg) for k in u)
    srcs = cfg.query_sources()
    active: set[tuple[int, int]] = set()
    gated: set[int] = set()

    def visit(bi: int, src_layer: int) -> None:
        lr = local[bi]
        for v in lr.value_subset:
            active.add((src_layer, v))
        if cfg.gate_mode == "softmax_gate" and len(lr.value_subset) > 1:
            gated.add(bi)
            q = srcs[lr.query_source]
            if q != sp.ROOT:
                active.add((src_layer, q))

    for t in range(cfg.T):
        visit(_task_block_index(cfg, t), cfg.L)
    for layer in range(cfg.L, 1, -1):
        for j in range(cfg.H):
            if (layer, j) in active:
                visit(_block_index(cfg, layer, j), layer - 1)
    return RoutePlan(u, local, tuple(sorted(active)), frozenset(gated))


# --- network -------------------------------------------------------------


def subnet_name(layer: int, j: int) -> str:
    return f"layer/{layer}/subnet/{j}"


def gate_name(block: int, route: int) -> str:
    return f"block/{block}/route/{route}/gate"


class Supernet:
    """Root layer, ``L x H`` sub-networks, per-route gates and task heads."""

    def __init__(
        self,
        cfg: sp.SpaceConfig,
        d_in: int,
        task_kinds: Sequence[str] | None = None,
        seed: int = 0,
        dtype=DEFAULT_DTYPE,
        embedding=None,
    ):
        self.cfg = cfg
        self.d_in = d_in
        self.task_kinds = tuple(task_kinds or ["binary"] * cfg.T)
        if len(self.task_kinds) != cfg.T:
            raise ValueError("need one task kind per task")
        self.embedding = embedding
        rng = make_rng(seed)
        p: dict[str, Param] = {}
        if embedding is not None:
            p.update(embedding.params)
        p["root/W"] = glorot(d_in, cfg.d_root, rng, dtype)
        p["root/b"] = zeros(1, cfg.d_root, dtype)
        for layer in range(1, cfg.L + 1):
            din = cfg.d_root if layer == 1 else cfg.d_v
            for j in range(cfg.H):
                p[subnet_name(layer, j) + "/W"] = glorot(din, cfg.d_v, rng, dtype)
                p[subnet_name(layer, j) + "/b"] = zeros(1, cfg.d_v, dtype)
        srcs = cfg.query_sources()
        for bi, block in enumerate(sp.blocks(cfg)):
            for k, lr in enumerate(sp.enumerate_subspace(cfg, block).routes):
                d_q = cfg.d_root if srcs[lr.query_source] == sp.ROOT else cfg.d_v
                p[gate_name(bi, k)] = zeros(len(lr.value_subset), d_q, dtype)
        for t in range(cfg.T):
            p[f"head/{t}/W"] = glorot(cfg.d_v, 1, rng, dtype)
            p[f"head/{t}/b"] = zeros(1, 1, dtype)
        self.params = p
        self._plans: dict[tuple[int, ...], RoutePlan] = {}

    def plan(self, u: Sequence[int]) -> RoutePlan:
        key = tuple(int(i) for i in u)
        if key not in self._plans:
            self._plans[key] = make_plan(self.cfg, key)
        return self._plans[key]

    def route_param_names(self, u: Sequence[int]) -> list[str]:
        plan = self.plan(u)
        names = [n for n in self.params if n.startswith(("embedding/", "root/", "head/"))]
        for layer, j in plan.nodes:
            names += [subnet_name(layer, j) + "/W", subnet_name(layer, j) + "/b"]
        names += [gate_name(bi, plan.u[bi]) for bi in sorted(plan.gated)]
        return names

    def parameters(self, u: Sequence[int] | None = None) -> dict[str, Param]:
        if u is None:
            return dict(self.params)
        return {n: self.params[n] for n in self.route_param_names(u)}

    # forward / backward

    def _gate_in(self, bi, plan, h, r, src_layer):
        lr = plan.local[bi]
        values = [h[(src_layer, v)] for v in lr.value_subset]
        if len(values) == 1:
            return values[0], None
        if bi not in plan.gated:
            y, m = gate_forward(None, values, None, "mean_pool")
            return y, (None, values, None, m)
        q = self.cfg.query_sources()[lr.query_source]
        q_hat = r if q == sp.ROOT else h[(src_layer, q)]
        w = self.params[gate_name(bi, plan.u[bi])]
        y, m = gate_forward(q_hat, values, w, "softmax_gate")
        return y, (q_hat, values, w, m)

    def _gate_back(self, bi, plan, cache, dy, dh, src_layer):
        lr = plan.local[bi]
        if cache is None:
            dh[(src_layer, lr.value_subset[0])] += dy
            return None
        q_hat, values, w, m = cache
        mode = "softmax_gate" if w is not None else "mean_pool"
        dq, dV = gate_backward(q_hat, values, w, m, dy, mode)
        for v, dv in zip(lr.value_subset, dV):
            dh[(src_layer, v)] += dv
        if dq is None:
            return None
        q = self.cfg.query_sources()[lr.query_source]
        if q == sp.ROOT:
            return dq
        dh[(src_layer, q)] += dq
        return None

    def forward(self, x: np.ndarray, u: Sequence[int]):
        """Per-task predictions (``n x 1`` each) and a trace for :meth:`backward`."""
        cfg, P = self.cfg, self.params
        plan = self.plan(u)
        feats = self.embedding.forward(x) if self.embedding is not None else x
        if feats.shape[1] != self.d_in:
            raise DimensionError(f"expected {self.d_in} input features, got {feats.shape[1]}")
        r_pre = dense_forward(feats, P["root/W"], P["root/b"])
        r = activation_forward(r_pre, "relu")
        h, pre, inp, caches = {}, {}, {}, {}
        for layer, j in plan.nodes:
            if layer == 1:
                a = r
            else:
                bi = _block_index(cfg, layer, j)
                a, caches[bi] = self._gate_in(bi, plan, h, r, layer - 1)
            name = subnet_name(layer, j)
            inp[(layer, j)] = a
            pre[(layer, j)] = dense_forward(a, P[name + "/W"], P[name + "/b"])
            h[(layer, j)] = activation_forward(pre[(layer, j)], "relu")
        preds, heads = [], []
        for t in range(cfg.T):
            bi = _task_block_index(cfg, t)
            z, caches[bi] = self._gate_in(bi, plan, h, r, cfg.L)
            logit = dense_forward(z, P[f"head/{t}/W"], P[f"head/{t}/b"])
            out = activation_forward(logit, OUTPUT_ACTIVATION[self.task_kinds[t]])
            heads.append((z, logit, out))
            preds.append(out)
        trace = dict(x=x, feats=feats, r_pre=r_pre, r=r, h=h, pre=pre, inp=inp, caches=caches, heads=heads, plan=plan)
        return preds, trace

    def backward(self, trace, dpreds: Sequence[np.ndarray]) -> None:
        """Accumulate grads of the loss w.r.t. the route's parameters."""
        cfg, P, plan = self.cfg, self.params, trace["plan"]
        if len(dpreds) != cfg.T:
            raise ValueError("need one prediction gradient per task")
        dh = {k: np.zeros_like(v) for k, v in trace["h"].items()}
        dr = np.zeros_like(trace["r"])
        for t in range(cfg.T):
            z, logit, out = trace["heads"][t]
            dlogit = activation_backward(logit, out, dpreds[t], OUTPUT_ACTIVATION[self.task_kinds[t]])
            dz = dense_backward(z, P[f"head/{t}/W"], P[f"head/{t}/b"], dlogit)
            bi = _task_block_index(cfg, t)
            dq = self._gate_back(bi, plan, trace["caches"][bi], dz, dh, cfg.L)
            if dq is not None:
                dr += dq
        for layer, j in reversed(plan.nodes):
            name = subnet_name(layer, j)
            dpre = activation_backward(trace["pre"][(layer, j)], trace["h"][(layer, j)], dh[(layer, j)], "relu")
            da = dense_backward(trace["inp"][(layer, j)], P[name + "/W"], P[name + "/b"], dpre)
            if layer == 1:
                dr += da
            else:
                bi = _block_index(cfg, layer, j)
                dq = self._gate_back(bi, plan, trace["caches"][bi], da, dh, layer - 1)
                if dq is not None:
                    dr += dq
        dr_pre = activation_backward(trace["r_pre"], trace["r"], dr, "relu")
        dfeats = dense_backward(trace["feats"], P["root/W"], P["root/b"], dr_pre)
        if self.embedding is not None:
            self.embedding.backward(trace["x"], dfeats)

    def load_values(self, values: Mapping[str, np.ndarray], strict: bool = False) -> None:
        for name, v in values.items():
            if name not in self.params:
                if strict:
                    raise KeyError(name)
                continue
            if self.params[name].shape != np.shape(v):
                raise DimensionError(f"{name}: {self.params[name].shape} vs {np.shape(v)}")
            self.params[name].value[...] = v


def param_count(net, scope: str | Sequence[int] = "all") -> int:
    """Scalar parameter count of the whole model or of one route."""
    if isinstance(scope, str):
        if scope != "all":
            raise ValueError(f"unknown scope {scope!r}")
        return sum(p.size for p in net.parameters().values())
    return sum(p.size for p in net.parameters(scope).values())
