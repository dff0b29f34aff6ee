"""INI run configuration: ``key = value`` pairs grouped in sections.

Every key has a default; see the README for the full list.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import space as sp
from .baselines import BaselineSpec
from .data import HashedFeatureSpec, SyntheticSpec
from .driver import SearchConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _optional(conv):
    def parse(text):
        return None if text.strip().lower() in ("", "none") else conv(text)
    return parse


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _names(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


@dataclass
class DataConfig:
    source: str = "synthetic"  # synthetic | synthetic_dir | csv
    name: str = ""
    dir: str = ""
    split: tuple[float, ...] = (0.8, 0.1, 0.1)
    d: int = 100
    rho: float = 0.0
    m: int = 10
    n: int = 10_000
    noise_std: float = 0.1
    path: str = ""
    schema: str = ""
    labels: tuple[str, ...] = ()

    @property
    def label(self) -> str:
        return self.name or (Path(self.path).stem if self.source == "csv" else self.source)


@dataclass
class RetrainConfig:
    steps: int = 2000
    init: str = "fresh"
    route: str = ""


@dataclass
class BaselineConfig:
    kind: str = "mmoe"
    hidden: int = 64
    experts: int = 4
    expert_layers: int = 2
    gate_query: str = "shared"
    match_budget: str = "none"  # none | route | <integer target>
    steps: int = 2000
    gate_scores: bool = True


@dataclass
class OracleConfig:
    per_route_steps: int = 500
    cap: int = 200
    workers: int = 1


@dataclass
class EvalConfig:
    route: str = ""
    checkpoint: str = ""
    split: str = "test"


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    checkpoint_every: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    space: sp.SpaceConfig = field(default_factory=sp.SpaceConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    retrain: RetrainConfig = field(default_factory=RetrainConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    base_dir: Path = Path(".")

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    @property
    def out(self) -> Path:
        return self.resolve(self.output_dir)

    def synthetic_spec(self) -> SyntheticSpec:
        d = self.data
        return SyntheticSpec(d=d.d, rho=d.rho, m=d.m, n=d.n, noise_std=d.noise_std, seed=self.seed)

    def search_config(self, T: int) -> SearchConfig:
        s = self.search
        space = sp.SpaceConfig(**{**{f.name: getattr(self.space, f.name) for f in fields(self.space)}, "T": T})
        return SearchConfig(**{**{f.name: getattr(s, f.name) for f in fields(s)}, "space": space, "seed": self.seed,
                               "retrain_steps": self.retrain.steps})

    def baseline_spec(self, T: int) -> BaselineSpec:
        b = self.baseline
        return BaselineSpec(kind=b.kind, hidden=b.hidden, experts=b.experts, expert_layers=b.expert_layers,
                            tasks=1 if b.kind == "single" else T, gate_query=b.gate_query)


_TYPES = {
    "data": dict(source=str, name=str, dir=str, split=_floats, d=int, rho=float, m=int, n=int, noise_std=float,
                 path=str, schema=str, labels=_names),
    "space": dict(L=int, H=int, d_v=int, d_root=int, query_policy=str, gate_mode=str),
    "search": dict(weight_lr=float, weight_decay=float, weight_batch=int, arch_lr=float, arch_batch=int,
                   warmup_steps=_optional(int), max_steps=int, reward_kind=str, baseline_decay=_optional(float), dtype=str),
    "retrain": dict(steps=int, init=str, route=str),
    "baseline": dict(kind=str, hidden=int, experts=int, expert_layers=int, gate_query=str, match_budget=str,
                     steps=int, gate_scores=_bool),
    "oracle": dict(per_route_steps=int, cap=int, workers=int),
    "eval": dict(route=str, checkpoint=str, split=str),
    "run": dict(seed=int, output_dir=str, checkpoint_every=int),
}


def _section(cp, name):
    if not cp.has_section(name):
        return {}
    types = _TYPES[name]
    out = {}
    for key, text in cp.items(name):
        if key not in types:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        try:
            out[key] = types[key](text)
        except (ValueError, ConfigError) as e:
            raise ConfigError(f"[{name}] {key}: {e}") from e
    return out


def load_config(path) -> RunConfig:
    path = Path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str  # keys are case sensitive (L, H)
    try:
        with path.open() as fh:
            cp.read_file(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    unknown = set(cp.sections()) - set(_TYPES)
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    try:
        run = _section(cp, "run")
        cfg = RunConfig(
            **run,
            data=DataConfig(**_section(cp, "data")),
            space=sp.SpaceConfig(**_section(cp, "space")),
            search=SearchConfig(**_section(cp, "search")),
            retrain=RetrainConfig(**_section(cp, "retrain")),
            baseline=BaselineConfig(**_section(cp, "baseline")),
            oracle=OracleConfig(**_section(cp, "oracle")),
            eval=EvalConfig(**_section(cp, "eval")),
            base_dir=path.parent,
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    if cfg.data.source not in ("synthetic", "synthetic_dir", "csv"):
        raise ConfigError(f"[data] source must be synthetic, synthetic_dir or csv, got {cfg.data.source!r}")
    if cfg.retrain.init not in ("fresh", "inherit"):
        raise ConfigError(f"[retrain] init must be fresh or inherit, got {cfg.retrain.init!r}")
    return cfg


def load_schema(path) -> HashedFeatureSpec:
    """Schema file: a ``[schema]`` section with ``fields``, ``modulus``, ``embedding_dim``, ``shared``."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as e:
        raise ConfigError(f"cannot read schema {path}: {e}") from e
    if not cp.has_section("schema") or not cp.has_option("schema", "fields"):
        raise ConfigError(f"{path}: needs a [schema] section with fields")
    s = cp["schema"]
    return HashedFeatureSpec(
        fields=_names(s["fields"]),
        modulus=int(s.get("modulus", "1000000")),
        embedding_dim=int(s.get("embedding_dim", "10")),
        shared=_bool(s.get("shared", "true")),
    )
