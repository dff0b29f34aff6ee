"""Reference multi-task models: single-task, Share-Bottom, MMoE and ML-MMoE.

All expose the same ``forward(x, route=None)`` / ``backward(trace, dpreds)`` /
``parameters()`` surface as :class:`~routenas.supernet.Supernet` so the
training loop treats them uniformly (the ``route`` argument is ignored).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import space as sp
from .numerics import (
    DEFAULT_DTYPE,
    Param,
    activation_backward,
    activation_forward,
    dense_backward,
    dense_forward,
    glorot,
    make_rng,
    zeros,
)
from .supernet import OUTPUT_ACTIVATION, Supernet, gate_backward, gate_forward, gate_name, subnet_name

KINDS = ("single", "share_bottom", "mmoe", "ml_mmoe")


@dataclass(frozen=True)
class BaselineSpec:
    kind: str = "share_bottom"
    hidden: int = 64
    experts: int = 4
    expert_layers: int = 2
    tasks: int = 2
    gate_query: str = "shared"  # "shared" (shared-layer output) or "input"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if min(self.hidden, self.experts, self.expert_layers, self.tasks) < 1:
            raise ValueError(f"widths and counts must be >= 1: {self}")
        if self.kind == "single" and self.tasks != 1:
            raise ValueError("a single-task model has exactly one task")
        if self.gate_query not in ("shared", "input"):
            raise ValueError(f"unknown gate_query {self.gate_query!r}")

    @property
    def n_expert_layers(self) -> int:
        return self.expert_layers if self.kind == "ml_mmoe" else 1


class _Model:
    params: dict[str, Param]
    embedding = None

    def parameters(self, u=None) -> dict[str, Param]:
        return dict(self.params)

    def route_param_names(self, u=None) -> list[str]:
        return list(self.params)

    def _features(self, x):
        return self.embedding.forward(x) if self.embedding is not None else x

    def _heads_forward(self, z, T):
        out = []
        for t in range(T):
            logit = dense_forward(z[t], self.params[f"head/{t}/W"], self.params[f"head/{t}/b"])
            out.append((logit, activation_forward(logit, OUTPUT_ACTIVATION[self.task_kinds[t]])))
        return out

    def _heads_backward(self, z, heads, dpreds):
        dz = []
        for t, ((logit, out), dp) in enumerate(zip(heads, dpreds)):
            dl = activation_backward(logit, out, dp, OUTPUT_ACTIVATION[self.task_kinds[t]])
            dz.append(dense_backward(z[t], self.params[f"head/{t}/W"], self.params[f"head/{t}/b"], dl))
        return dz


class MultiTaskMLP(_Model):
    """Two shared ReLU layers feeding one linear head per task."""

    def __init__(self, spec: BaselineSpec, d_in: int, task_kinds=None, seed=0, dtype=DEFAULT_DTYPE, embedding=None):
        self.spec, self.d_in = spec, d_in
        self.task_kinds = tuple(task_kinds or ["binary"] * spec.tasks)
        self.embedding = embedding
        rng = make_rng(seed)
        h = spec.hidden
        p: dict[str, Param] = dict(embedding.params) if embedding is not None else {}
        p["shared/0/W"] = glorot(d_in, h, rng, dtype)
        p["shared/0/b"] = zeros(1, h, dtype)
        p["shared/1/W"] = glorot(h, h, rng, dtype)
        p["shared/1/b"] = zeros(1, h, dtype)
        for t in range(spec.tasks):
            p[f"head/{t}/W"] = glorot(h, 1, rng, dtype)
            p[f"head/{t}/b"] = zeros(1, 1, dtype)
        self.params = p

    def forward(self, x, route=None):
        P = self.params
        feats = self._features(x)
        a0 = dense_forward(feats, P["shared/0/W"], P["shared/0/b"])
        h0 = activation_forward(a0, "relu")
        a1 = dense_forward(h0, P["shared/1/W"], P["shared/1/b"])
        h1 = activation_forward(a1, "relu")
        heads = self._heads_forward([h1] * self.spec.tasks, self.spec.tasks)
        return [o for _, o in heads], dict(x=x, feats=feats, a0=a0, h0=h0, a1=a1, h1=h1, heads=heads)

    def backward(self, tr, dpreds):
        P = self.params
        dz = self._heads_backward([tr["h1"]] * self.spec.tasks, tr["heads"], dpreds)
        dh1 = sum(dz)
        dh0 = dense_backward(tr["h0"], P["shared/1/W"], P["shared/1/b"], activation_backward(tr["a1"], tr["h1"], dh1, "relu"))
        dfeats = dense_backward(tr["feats"], P["shared/0/W"], P["shared/0/b"], activation_backward(tr["a0"], tr["h0"], dh0, "relu"))
        if self.embedding is not None:
            self.embedding.backward(tr["x"], dfeats)


class MMoE(_Model):
    """Shared layer, ``expert_layers`` layers of ``experts`` experts, softmax gates.

    With one expert layer this is MMoE. With more, every expert of layer
    ``k + 1`` mixes all layer-``k`` experts through its own gate, and task
    gates read the last layer.
    """

    def __init__(self, spec: BaselineSpec, d_in: int, task_kinds=None, seed=0, dtype=DEFAULT_DTYPE, embedding=None):
        self.spec, self.d_in = spec, d_in
        self.task_kinds = tuple(task_kinds or ["binary"] * spec.tasks)
        self.embedding = embedding
        rng = make_rng(seed)
        h, E = spec.hidden, spec.experts
        d_q = h if spec.gate_query == "shared" else d_in
        p: dict[str, Param] = dict(embedding.params) if embedding is not None else {}
        p["shared/W"] = glorot(d_in, h, rng, dtype)
        p["shared/b"] = zeros(1, h, dtype)
        for k in range(1, spec.n_expert_layers + 1):
            for e in range(E):
                p[f"expert/{k}/{e}/W"] = glorot(h, h, rng, dtype)
                p[f"expert/{k}/{e}/b"] = zeros(1, h, dtype)
        for k in range(2, spec.n_expert_layers + 1):
            for e in range(E):
                p[f"gate/layer/{k}/{e}"] = zeros(E, d_q, dtype)
        for t in range(spec.tasks):
            p[f"gate/task/{t}"] = zeros(E, d_q, dtype)
        for t in range(spec.tasks):
            p[f"head/{t}/W"] = glorot(h, 1, rng, dtype)
            p[f"head/{t}/b"] = zeros(1, 1, dtype)
        self.params = p

    def forward(self, x, route=None):
        P, spec = self.params, self.spec
        feats = self._features(x)
        a = dense_forward(feats, P["shared/W"], P["shared/b"])
        r = activation_forward(a, "relu")
        q = r if spec.gate_query == "shared" else feats
        layers = []  # per layer: (inputs, pre-acts, outputs, gate caches)
        prev = None
        for k in range(1, spec.n_expert_layers + 1):
            ins, pres, outs, gcs = [], [], [], []
            for e in range(spec.experts):
                if k == 1:
                    inp, gc = r, None
                else:
                    g = P[f"gate/layer/{k}/{e}"]
                    inp, m = gate_forward(q, prev, g)
                    gc = (g, m)
                pre = dense_forward(inp, P[f"expert/{k}/{e}/W"], P[f"expert/{k}/{e}/b"])
                ins.append(inp)
                pres.append(pre)
                outs.append(activation_forward(pre, "relu"))
                gcs.append(gc)
            layers.append((ins, pres, outs, gcs))
            prev = outs
        z, task_m = [], []
        for t in range(spec.tasks):
            zt, m = gate_forward(q, prev, P[f"gate/task/{t}"])
            z.append(zt)
            task_m.append(m)
        heads = self._heads_forward(z, spec.tasks)
        tr = dict(x=x, feats=feats, a=a, r=r, q=q, layers=layers, z=z, task_m=task_m, heads=heads)
        return [o for _, o in heads], tr

    def backward(self, tr, dpreds):
        P, spec = self.params, self.spec
        dz = self._heads_backward(tr["z"], tr["heads"], dpreds)
        q = tr["q"]
        dq = np.zeros_like(q)
        last = tr["layers"][-1][2]
        dprev = [np.zeros_like(o) for o in last]
        for t in range(spec.tasks):
            g = P[f"gate/task/{t}"]
            dqt, dV = gate_backward(q, last, g, tr["task_m"][t], dz[t])
            dq += dqt
            for i, dv in enumerate(dV):
                dprev[i] += dv
        dr = np.zeros_like(tr["r"])
        for k in range(spec.n_expert_layers, 0, -1):
            ins, pres, outs, gcs = tr["layers"][k - 1]
            below = tr["layers"][k - 2][2] if k > 1 else None
            dbelow = [np.zeros_like(o) for o in below] if below is not None else None
            for e in range(spec.experts):
                dpre = activation_backward(pres[e], outs[e], dprev[e], "relu")
                din = dense_backward(ins[e], P[f"expert/{k}/{e}/W"], P[f"expert/{k}/{e}/b"], dpre)
                if k == 1:
                    dr += din
                else:
                    g, m = gcs[e]
                    dqe, dV = gate_backward(q, below, g, m, din)
                    dq += dqe
                    for i, dv in enumerate(dV):
                        dbelow[i] += dv
            dprev = dbelow
        dfeats = None
        if spec.gate_query == "shared":
            dr += dq
        else:
            dfeats = dq
        da = activation_backward(tr["a"], tr["r"], dr, "relu")
        df = dense_backward(tr["feats"], P["shared/W"], P["shared/b"], da)
        if dfeats is not None:
            df = df + dfeats
        if self.embedding is not None:
            self.embedding.backward(tr["x"], df)


def build(spec: BaselineSpec, d_in: int, task_kinds=None, seed: int = 0, dtype=DEFAULT_DTYPE, embedding=None):
    cls = MultiTaskMLP if spec.kind in ("single", "share_bottom") else MMoE
    return cls(spec, d_in, task_kinds, seed, dtype, embedding)


# --- parameter budgets --------------------------------------------------


def count_params(spec: BaselineSpec, d_in: int) -> int:
    """Closed-form scalar parameter count (embedding excluded)."""
    h, E, T = spec.hidden, spec.experts, spec.tasks
    heads = T * (h + 1)
    if spec.kind in ("single", "share_bottom"):
        return d_in * h + h + h * h + h + heads
    d_q = h if spec.gate_query == "shared" else d_in
    K = spec.n_expert_layers
    return d_in * h + h + K * E * (h * h + h) + (K - 1) * E * E * d_q + T * E * d_q + heads


def match_param_budget(spec: BaselineSpec, target_count: int, d_in: int, tol: float = 0.10, max_hidden: int = 1 << 16) -> BaselineSpec:
    """Integer width search for the hidden size whose count is closest to the target."""
    def count(h):
        return count_params(replace(spec, hidden=h), d_in)

    lo, hi = 1, max_hidden
    if count(hi) < target_count:
        raise ValueError(f"budget {target_count} unreachable below hidden={max_hidden}")
    while lo < hi:  # first h with count(h) >= target
        mid = (lo + hi) // 2
        if count(mid) >= target_count:
            hi = mid
        else:
            lo = mid + 1
    best = lo
    if lo > 1 and abs(count(lo - 1) - target_count) <= abs(count(lo) - target_count):
        best = lo - 1
    err = abs(count(best) - target_count) / target_count
    if err > tol:
        raise ValueError(f"no {spec.kind} width within {tol:.0%} of {target_count} params (best {count(best)})")
    return replace(spec, hidden=best)


# --- gate diagnostics ------------------------------------------------------


def gate_scores_report(model: MMoE, X: np.ndarray, batch: int = 4096) -> np.ndarray:
    """``tasks x experts`` matrix of task-gate scores averaged over ``X``."""
    if not isinstance(model, MMoE):
        raise TypeError("gate scores need an MMoE-family model")
    total = np.zeros((model.spec.tasks, model.spec.experts))
    for i in range(0, len(X), batch):
        _, tr = model.forward(X[i : i + batch])
        for t, m in enumerate(tr["task_m"]):
            total[t] += m.sum(axis=0)
    return total / len(X)


# --- embedding baselines into the supernet ---------------------------------


def supernet_from_baseline(model, query_policy: str = "root_only"):
    """A supernet plus route that computes exactly what ``model`` computes.

    Share-Bottom maps onto the single-column route; MMoE / ML-MMoE map onto
    full-subset routes whose gates query the root feature.
    """
    spec = model.spec
    if isinstance(model, MMoE):
        if spec.gate_query != "shared":
            raise ValueError("only shared-feature gate queries have a supernet counterpart")
        cfg = sp.SpaceConfig(L=spec.n_expert_layers, H=spec.experts, T=spec.tasks, d_v=spec.hidden,
                             d_root=spec.hidden, query_policy=query_policy, gate_mode="softmax_gate")
        root_q = cfg.query_sources().index(sp.ROOT)
        full = sp.encode_local(sp.LocalRoute(tuple(range(cfg.H)), root_q), cfg.n_queries)
        u = tuple([full] * sp.block_count(cfg))
        mapping = {"root/W": "shared/W", "root/b": "shared/b"}
        for k in range(1, cfg.L + 1):
            for e in range(cfg.H):
                mapping[subnet_name(k, e) + "/W"] = f"expert/{k}/{e}/W"
                mapping[subnet_name(k, e) + "/b"] = f"expert/{k}/{e}/b"
        for bi, b in enumerate(sp.blocks(cfg)):
            src = f"gate/task/{b.position}" if b.kind == "task" else f"gate/layer/{b.layer}/{b.position}"
            mapping[gate_name(bi, full)] = src
    else:
        cfg = sp.SpaceConfig(L=1, H=1, T=spec.tasks, d_v=spec.hidden, d_root=spec.hidden,
                             query_policy=query_policy, gate_mode="softmax_gate")
        u = sp.reference_route("share_bottom_like", cfg)
        mapping = {"root/W": "shared/0/W", "root/b": "shared/0/b",
                   subnet_name(1, 0) + "/W": "shared/1/W", subnet_name(1, 0) + "/b": "shared/1/b"}
    for t in range(spec.tasks):
        mapping[f"head/{t}/W"] = f"head/{t}/W"
        mapping[f"head/{t}/b"] = f"head/{t}/b"
    dtype = model.params["head/0/W"].value.dtype
    net = Supernet(cfg, model.d_in, model.task_kinds, dtype=dtype, embedding=model.embedding)
    net.load_values({dst: model.params[src].value for dst, src in mapping.items()}, strict=True)
    return net, u
