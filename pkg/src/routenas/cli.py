"""Command-line entry point: ``routenas <command> <config.ini>``.

Commands: synth-gen, search, retrain, eval, oracle, baseline, export-dot.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import files
from .baselines import KINDS, MMoE, build, gate_scores_report, match_param_budget
from .config import ConfigError, RunConfig, load_config, load_schema
from .data import Dataset, Splits, gen_synthetic, load_csv, pcc, split_and_batch
from .driver import SearchDiverged, brute_force_oracle, make_embedding, retrain_fixed, run_search, train_fixed
from .metrics import evaluate
from .supernet import Supernet, param_count

log = logging.getLogger("routenas")

ABLATIONS = {
    "mtnas_mean_pool": dict(gate_mode="mean_pool"),
    "mtnas_wo_qs": dict(query_policy="root_only"),
}


# --- shared helpers -------------------------------------------------------


def load_data(cfg: RunConfig):
    """Dataset and, for hashed CSV data, its schema."""
    d = cfg.data
    if d.source == "synthetic":
        return gen_synthetic(cfg.synthetic_spec()), None
    if d.source == "synthetic_dir":
        path = cfg.resolve(d.dir or str(Path(cfg.output_dir) / "dataset"))
        if not (path / "meta.json").exists():
            raise ConfigError(f"no synthetic dataset at {path}; run synth-gen first")
        return files.load_dataset(path), None
    if not d.path or not d.schema or not d.labels:
        raise ConfigError("[data] csv source needs path, schema and labels")
    schema = load_schema(cfg.resolve(d.schema))
    return load_csv(cfg.resolve(d.path), schema, d.labels), schema


def _splits(cfg: RunConfig, ds: Dataset) -> Splits:
    return split_and_batch(ds, cfg.data.split, cfg.seed)


def _route_path(cfg: RunConfig, explicit: str) -> Path:
    return cfg.resolve(explicit) if explicit else cfg.out / "route.json"


def _supernet_for(space, splits, schema, seed, dtype):
    emb = make_embedding(schema, seed + 1, dtype)
    d_in = emb.width if emb is not None else splits.train[0].shape[1]
    return Supernet(space, d_in, splits.task_kinds, seed=seed + 1, dtype=dtype, embedding=emb)


def _write_metrics(path, cfg, model_name, metrics, total):
    rows = files.metrics_rows(cfg.data.label, model_name, metrics, total, cfg.seed)
    files.write_metrics(path, rows)
    for r in rows:
        auc = "" if r["auc"] is None else f" auc={r['auc']:.4f}"
        print(f"{model_name} task={r['task']}{auc} loss={r['loss']:.5f}")


# --- commands ---------------------------------------------------------------


def cmd_synth_gen(cfg: RunConfig) -> int:
    ds = gen_synthetic(cfg.synthetic_spec())
    out = cfg.out / "dataset"
    files.save_dataset(out, ds)
    print(f"wrote {out} (n={len(ds)}, d={ds.X.shape[1]})")
    print(f"label PCC = {pcc(ds.Y[:, 0], ds.Y[:, 1]):.4f}")
    return 0


def _search(cfg: RunConfig, splits, schema, space_overrides=None, prefix=""):
    scfg = cfg.search_config(len(splits.task_kinds))
    if space_overrides:
        scfg = replace(scfg, space=replace(scfg.space, **space_overrides))
    out = cfg.out
    ckdir = out / "checkpoints"

    def checkpoint(step, net, arch):
        ckdir.mkdir(exist_ok=True)
        files.save_checkpoint(ckdir / f"{prefix}step_{step:07d}.npz", net.params, arch, dict(step=step))

    emb = make_embedding(schema, scfg.seed + 1, scfg.np_dtype)
    art = run_search(scfg, splits, embedding=emb, checkpoint=checkpoint, checkpoint_every=cfg.checkpoint_every)
    files.write_route(out / f"{prefix}route.json", scfg.space, art.derived_route, art.arch.probs())
    files.write_step_log(out / f"{prefix}steps.csv", art.logs)
    files.save_checkpoint(out / f"{prefix}supernet.npz", art.net.params, art.arch,
                          dict(step=scfg.max_steps, route=list(art.derived_route)))
    return scfg, art


def cmd_search(cfg: RunConfig) -> int:
    ds, schema = load_data(cfg)
    splits = _splits(cfg, ds)
    cfg.out.mkdir(parents=True, exist_ok=True)
    scfg, art = _search(cfg, splits, schema)
    # re-read to prove the written route round-trips
    _, u = files.read_route(cfg.out / "route.json")
    assert u == art.derived_route
    print(f"derived route {list(u)} ({param_count(art.net, u)} route params)")
    return 0


def cmd_retrain(cfg: RunConfig) -> int:
    ds, schema = load_data(cfg)
    splits = _splits(cfg, ds)
    space, u = files.read_route(_route_path(cfg, cfg.retrain.route))
    scfg = replace(cfg.search_config(len(splits.task_kinds)), space=space)
    supernet = None
    if cfg.retrain.init == "inherit":
        arrays, _ = files.load_checkpoint(cfg.out / "supernet.npz")
        supernet = _supernet_for(space, splits, schema, scfg.seed, scfg.np_dtype)
        supernet.load_values(arrays)
    emb = make_embedding(schema, scfg.seed + 1, scfg.np_dtype)
    net, losses, metrics, total = retrain_fixed(u, scfg, splits, cfg.retrain.init, supernet, embedding=emb)
    cfg.out.mkdir(parents=True, exist_ok=True)
    files.save_checkpoint(cfg.out / "retrain.npz", net.parameters(u), meta=dict(route=list(u), init=cfg.retrain.init))
    _write_metrics(cfg.out / "retrain_metrics.csv", cfg, "mtnas", metrics, total)
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    ds, schema = load_data(cfg)
    splits = _splits(cfg, ds)
    space, u = files.read_route(_route_path(cfg, cfg.eval.route))
    ck = cfg.resolve(cfg.eval.checkpoint) if cfg.eval.checkpoint else cfg.out / "retrain.npz"
    if not ck.exists():
        raise ConfigError(f"checkpoint {ck} not found")
    arrays, _ = files.load_checkpoint(ck)
    net = _supernet_for(space, splits, schema, cfg.seed, cfg.search_config(len(splits.task_kinds)).np_dtype)
    net.load_values(arrays)
    if cfg.eval.split not in ("train", "valid", "test"):
        raise ConfigError("[eval] split must be train, valid or test")
    metrics, total = evaluate(net, getattr(splits, cfg.eval.split), splits.task_kinds, u)
    _write_metrics(cfg.out / "eval_metrics.csv", cfg, "mtnas", metrics, total)
    return 0


def cmd_oracle(cfg: RunConfig, workers: int | None = None) -> int:
    ds, schema = load_data(cfg)
    splits = _splits(cfg, ds)
    scfg = cfg.search_config(len(splits.task_kinds))
    oc = cfg.oracle
    ranked = brute_force_oracle(scfg, splits, oc.per_route_steps, oc.cap, workers or oc.workers, schema)
    cfg.out.mkdir(parents=True, exist_ok=True)
    with open(cfg.out / "oracle.csv", "w") as fh:
        fh.write("rank,route,reward\n")
        for i, (u, r) in enumerate(ranked):
            fh.write(f"{i},{';'.join(map(str, u))},{r!r}\n")
    print(f"ranked {len(ranked)} routes; best {list(ranked[0][0])} reward {ranked[0][1]:.5f}")
    return 0


def _budget_target(cfg: RunConfig, splits, schema, d_in) -> int | None:
    mb = cfg.baseline.match_budget.strip().lower()
    if mb in ("", "none"):
        return None
    if mb == "route":
        space, u = files.read_route(_route_path(cfg, cfg.retrain.route))
        net = _supernet_for(space, splits, schema, cfg.seed, np.float64)
        emb = sum(p.size for n, p in net.params.items() if n.startswith("embedding/"))
        return param_count(net, u) - emb
    return int(mb)


def cmd_baseline(cfg: RunConfig) -> int:
    ds, schema = load_data(cfg)
    splits = _splits(cfg, ds)
    cfg.out.mkdir(parents=True, exist_ok=True)
    kind = cfg.baseline.kind
    T = len(splits.task_kinds)
    if kind in ABLATIONS:
        scfg, art = _search(cfg, splits, schema, ABLATIONS[kind], prefix=f"{kind}_")
        emb = make_embedding(schema, scfg.seed + 1, scfg.np_dtype)
        _, _, metrics, total = retrain_fixed(art.derived_route, scfg, splits, "fresh", embedding=emb)
        _write_metrics(cfg.out / f"baseline_{kind}_metrics.csv", cfg, kind, metrics, total)
        return 0
    if kind not in KINDS:
        raise ConfigError(f"[baseline] kind must be one of {KINDS + tuple(ABLATIONS)}")
    scfg = cfg.search_config(T)
    dtype = scfg.np_dtype
    d_in = (len(schema.fields) * schema.embedding_dim) if schema else splits.train[0].shape[1]
    spec = cfg.baseline_spec(T)
    target = _budget_target(cfg, splits, schema, d_in)
    if target is not None:
        spec = match_param_budget(spec, target, d_in)
        print(f"matched {kind} hidden={spec.hidden} to {target} params")
    steps = cfg.baseline.steps
    if kind == "single":
        rows = []
        for t in range(T):
            sub = Splits(*((X, Y[:, t : t + 1]) for X, Y in (splits.train, splits.valid, splits.test)),
                         task_kinds=(splits.task_kinds[t],), seed=splits.seed)
            emb = make_embedding(schema, scfg.seed + 1, dtype)
            model = build(spec, d_in, sub.task_kinds, seed=scfg.seed + 1, dtype=dtype, embedding=emb)
            train_fixed(model, None, sub, steps, scfg.weight_lr, scfg.weight_decay, scfg.weight_batch)
            (m,), _ = evaluate(model, sub.test, sub.task_kinds)
            rows.append(dict(dataset=cfg.data.label, model="single", task=t, auc=m.auc, loss=m.loss, n=m.n, seed=cfg.seed))
        files.write_metrics(cfg.out / "baseline_single_metrics.csv", rows)
        for r in rows:
            print(f"single task={r['task']} loss={r['loss']:.5f}")
        return 0
    emb = make_embedding(schema, scfg.seed + 1, dtype)
    model = build(spec, d_in, splits.task_kinds, seed=scfg.seed + 1, dtype=dtype, embedding=emb)
    train_fixed(model, None, splits, steps, scfg.weight_lr, scfg.weight_decay, scfg.weight_batch)
    metrics, total = evaluate(model, splits.test, splits.task_kinds)
    _write_metrics(cfg.out / f"baseline_{kind}_metrics.csv", cfg, kind, metrics, total)
    if isinstance(model, MMoE) and cfg.baseline.gate_scores:
        scores = gate_scores_report(model, splits.test[0])
        files.write_matrix(cfg.out / f"baseline_{kind}_gate_scores.csv", scores)
    return 0


def cmd_export_dot(route_path: str, output: str | None) -> int:
    space, u = files.read_route(route_path)
    dot = files.route_to_dot(space, u)
    if output:
        Path(output).write_text(dot)
    else:
        sys.stdout.write(dot)
    return 0


COMMANDS = {
    "synth-gen": cmd_synth_gen,
    "search": cmd_search,
    "retrain": cmd_retrain,
    "eval": cmd_eval,
    "oracle": cmd_oracle,
    "baseline": cmd_baseline,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="routenas", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="INI run configuration")
        if name == "oracle":
            p.add_argument("--workers", type=int, default=None, help="parallel training processes")
    p = sub.add_parser("export-dot")
    p.add_argument("route", help="route JSON written by search")
    p.add_argument("-o", "--output", default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "export-dot":
            return cmd_export_dot(args.route, args.output)
        cfg = load_config(args.config)
        if args.command == "oracle":
            return cmd_oracle(cfg, args.workers)
        return COMMANDS[args.command](cfg)
    except (ConfigError, files.SchemaError, SearchDiverged, OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
