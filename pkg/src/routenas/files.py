"""On-disk formats: route JSON, checkpoints, step logs, metrics CSV, DOT graphs,
and synthetic dataset directories."""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import jsonschema
import numpy as np

from . import space as sp
from .data import Dataset
from .supernet import make_plan

ROUTE_SCHEMA_VERSION = 1
CHECKPOINT_VERSION = 1

ROUTE_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "space", "derived", "blocks"],
    "properties": {
        "schema_version": {"const": ROUTE_SCHEMA_VERSION},
        "derived": {"type": "boolean"},
        "space": {
            "type": "object",
            "required": ["L", "H", "T", "d_v", "d_root", "query_policy", "gate_mode"],
            "properties": {
                "L": {"type": "integer", "minimum": 1},
                "H": {"type": "integer", "minimum": 1},
                "T": {"type": "integer", "minimum": 1},
                "d_v": {"type": "integer", "minimum": 1},
                "d_root": {"type": "integer", "minimum": 1},
                "query_policy": {"enum": list(sp.QUERY_POLICIES)},
                "gate_mode": {"enum": list(sp.GATE_MODES)},
            },
        },
        "blocks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["index", "kind", "layer", "position", "route_index", "value_subset", "query_source"],
                "properties": {
                    "index": {"type": "integer", "minimum": 0},
                    "kind": {"enum": ["inter_layer", "task"]},
                    "layer": {"type": "integer"},
                    "position": {"type": "integer", "minimum": 0},
                    "route_index": {"type": "integer", "minimum": 0},
                    "value_subset": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                    "query_source": {"type": "integer", "minimum": 0},
                    "query": {"type": "string"},
                    "probability": {"type": ["number", "null"]},
                },
            },
        },
    },
}

SPACE_KEYS = ("L", "H", "T", "d_v", "d_root", "query_policy", "gate_mode")


class SchemaError(ValueError):
    pass


# --- route JSON -------------------------------------------------------------


def _query_label(cfg: sp.SpaceConfig, block: sp.BlockId, q: int) -> str:
    src = cfg.query_sources()[q]
    return "root" if src == sp.ROOT else f"layer/{block.source_layer}/subnet/{src}"


def route_to_json(cfg: sp.SpaceConfig, u: Sequence[int], probs: Sequence[np.ndarray] | None = None, derived: bool = True) -> dict:
    blocks = []
    for i, (b, lr) in enumerate(sp.describe(cfg, u)):
        blocks.append(dict(
            index=i, kind=b.kind, layer=b.layer, position=b.position, route_index=int(u[i]),
            value_subset=list(lr.value_subset), query_source=lr.query_source,
            query=_query_label(cfg, b, lr.query_source),
            probability=None if probs is None else float(probs[i][u[i]]),
        ))
    return dict(schema_version=ROUTE_SCHEMA_VERSION, space={k: getattr(cfg, k) for k in SPACE_KEYS},
                derived=derived, blocks=blocks)


def route_from_json(doc: Mapping) -> tuple[sp.SpaceConfig, tuple[int, ...]]:
    """Validate and decode; subsets and queries must agree with the route indices."""
    try:
        jsonschema.validate(doc, ROUTE_SCHEMA)
    except jsonschema.ValidationError as e:
        raise SchemaError(f"route JSON: {e.message}") from e
    cfg = sp.SpaceConfig(**{k: doc["space"][k] for k in SPACE_KEYS})
    expected = list(sp.blocks(cfg))
    if len(doc["blocks"]) != len(expected):
        raise SchemaError(f"route JSON has {len(doc['blocks'])} blocks, space needs {len(expected)}")
    u = []
    for entry, b in zip(sorted(doc["blocks"], key=lambda e: e["index"]), expected):
        if (entry["kind"], entry["layer"], entry["position"]) != (b.kind, b.layer, b.position):
            raise SchemaError(f"block {entry['index']} does not match canonical block {b}")
        lr = sp.LocalRoute(tuple(entry["value_subset"]), entry["query_source"])
        if any(v >= cfg.H for v in lr.value_subset) or lr.query_source >= cfg.n_queries:
            raise SchemaError(f"block {entry['index']}: subset/query out of range")
        k = sp.encode_local(lr, cfg.n_queries)
        if k != entry["route_index"]:
            raise SchemaError(f"block {entry['index']}: route_index {entry['route_index']} != encoded {k}")
        u.append(k)
    return cfg, tuple(u)


def write_route(path, cfg, u, probs=None, derived=True) -> None:
    Path(path).write_text(json.dumps(route_to_json(cfg, u, probs, derived), indent=2) + "\n")


def read_route(path) -> tuple[sp.SpaceConfig, tuple[int, ...]]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: not JSON ({e})") from e
    return route_from_json(doc)


# --- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, params: Mapping, arch=None, meta: Mapping | None = None) -> None:
    """``.npz`` keyed by parameter path; architecture logits under ``arch/block/<i>/alpha``."""
    arrays = {name: p.value for name, p in params.items()}
    if arch is not None:
        for i, a in enumerate(arch.alpha):
            arrays[f"arch/block/{i}/alpha"] = a.value
        arrays["arch/baseline"] = np.array([arch.baseline.running_sum, arch.baseline.count, arch.baseline.ema])
    info = dict(meta or {}, checkpoint_version=CHECKPOINT_VERSION)
    arrays["__meta__"] = np.frombuffer(json.dumps(info, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path) as z:
        arrays = {k: z[k] for k in z.files}
    meta = json.loads(arrays.pop("__meta__").tobytes().decode())
    if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise SchemaError(f"{path}: unsupported checkpoint version {meta.get('checkpoint_version')}")
    return arrays, meta


# --- CSV ----------------------------------------------------------------------

STEP_LOG_COLUMNS = ("step", "phase", "mtl_train_loss", "reward", "baseline", "entropy_mean", "sampled_route")
METRICS_COLUMNS = ("dataset", "model", "task", "auc", "loss", "n", "seed")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list)):
        return ";".join(str(int(i)) for i in v)
    return str(v)


def timestamp_line() -> str:
    return f"# generated {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}\n"


def write_step_log(path, rows: Iterable[Mapping]) -> None:
    """First line is a ``#`` timestamp comment; everything after is deterministic."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STEP_LOG_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in STEP_LOG_COLUMNS])
    Path(path).write_text(timestamp_line() + buf.getvalue())


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_metrics(path, rows: Iterable[Mapping]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in METRICS_COLUMNS])


def metrics_rows(dataset: str, model: str, task_metrics, total_loss: float, seed: int) -> list[dict]:
    rows = [dict(dataset=dataset, model=model, task=t, auc=m.auc, loss=m.loss, n=m.n, seed=seed)
            for t, m in enumerate(task_metrics)]
    rows.append(dict(dataset=dataset, model=model, task="mtl", auc=None, loss=total_loss,
                     n=task_metrics[0].n if task_metrics else 0, seed=seed))
    return rows


def write_matrix(path, M: np.ndarray, row_label: str = "task", col_prefix: str = "expert") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([row_label] + [f"{col_prefix}_{j}" for j in range(M.shape[1])])
        for i, row in enumerate(M):
            w.writerow([i] + [repr(float(v)) for v in row])


# --- DOT ------------------------------------------------------------------------


def _node(cfg: sp.SpaceConfig, layer: int, j: int) -> str:
    return f"s{(layer - 1) * cfg.H + j + 1}"


def route_to_dot(cfg: sp.SpaceConfig, u: Sequence[int]) -> str:
    """Nodes: input, root, every sub-network ``s1..s(L*H)``, every task head.

    Solid edges carry gate values; a dashed edge marks a gate's query source.
    Sub-networks the route never reaches are drawn dotted.
    """
    plan = make_plan(cfg, u)
    active = set(plan.nodes)
    lines = ["digraph route {", "  rankdir=BT;", '  input [shape=box];', '  root [shape=box];']
    for layer in range(1, cfg.L + 1):
        for j in range(cfg.H):
            style = "solid" if (layer, j) in active else "dotted"
            lines.append(f'  {_node(cfg, layer, j)} [label="{_node(cfg, layer, j)}", style={style}];')
    for t in range(cfg.T):
        lines.append(f'  task{t} [shape=doublecircle, label="task-{t}"];')
    lines.append("  input -> root;")
    for layer, j in plan.nodes:
        if layer == 1:
            lines.append(f"  root -> {_node(cfg, 1, j)};")
    srcs = cfg.query_sources()
    for bi, (b, lr) in enumerate(zip(sp.blocks(cfg), plan.local)):
        if b.kind == "inter_layer" and (b.layer, b.position) not in active:
            continue
        dst = f"task{b.position}" if b.kind == "task" else _node(cfg, b.layer, b.position)
        for v in lr.value_subset:
            lines.append(f"  {_node(cfg, b.source_layer, v)} -> {dst};")
        if bi in plan.gated:
            q = srcs[lr.query_source]
            src = "root" if q == sp.ROOT else _node(cfg, b.source_layer, q)
            lines.append(f"  {src} -> {dst} [style=dashed];")
    lines.append("}")
    return "\n".join(lines) + "\n"


# --- synthetic dataset directories --------------------------------------------


def save_dataset(dirpath, ds: Dataset) -> None:
    """``meta.json`` (generator spec incl. drawn vectors) plus ``data.npy`` = [X | Y]."""
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    meta = dict(ds.meta, task_kinds=list(ds.task_kinds), n_inputs=int(ds.X.shape[1]), n_tasks=int(ds.Y.shape[1]))
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    np.save(d / "data.npy", np.hstack([ds.X, ds.Y]).astype(np.float64), allow_pickle=False)


def load_dataset(dirpath) -> Dataset:
    d = Path(dirpath)
    meta = json.loads((d / "meta.json").read_text())
    arr = np.load(d / "data.npy", allow_pickle=False)
    k = meta["n_inputs"]
    return Dataset(arr[:, :k], arr[:, k:], tuple(meta["task_kinds"]), meta)
