"""Datasets: the controlled-correlation synthetic benchmark and hashed CSV features."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .numerics import DEFAULT_DTYPE, Param, make_rng

log = logging.getLogger(__name__)

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF

SPLITS = ("train", "valid", "test")


@dataclass
class Dataset:
    X: np.ndarray  # n x d floats, or n x fields integer ids
    Y: np.ndarray  # n x T
    task_kinds: tuple[str, ...]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.X)

    @property
    def n_tasks(self) -> int:
        return self.Y.shape[1]

    @property
    def hashed(self) -> bool:
        return self.X.dtype.kind in "iu"


# --- synthetic ---------------------------------------------------------


@dataclass
class SyntheticSpec:
    d: int = 100
    rho: float = 0.0
    m: int = 10
    n: int = 10_000
    noise_std: float = 0.1
    seed: int = 0
    sine_alphas: list[float] | None = None
    sine_betas: list[float] | None = None

    def __post_init__(self):
        if abs(self.rho) > 1:
            raise ValueError(f"|rho| must be <= 1, got {self.rho}")
        if self.d < 2:
            raise ValueError("need d >= 2 for two orthogonal directions")


def gen_orthonormal_pair(d: int, rng: np.random.Generator | None = None, draws: Iterable[np.ndarray] | None = None):
    """Two orthonormal vectors by Gram-Schmidt on Gaussian draws.

    ``draws`` overrides the random source (used to pin the construction).
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    src = iter(draws) if draws is not None else (rng.standard_normal(d) for _ in iter(int, 1))
    a = np.asarray(next(src), dtype=float)
    while np.linalg.norm(a) < 1e-8:
        a = np.asarray(next(src), dtype=float)
    u1 = a / np.linalg.norm(a)
    while True:
        b = np.asarray(next(src), dtype=float)
        b = b - (b @ u1) * u1
        nb = np.linalg.norm(b)
        if nb > 1e-8:
            break
    u2 = b / nb
    # one re-orthogonalisation pass tightens u1.u2 to ~1e-17
    u2 = u2 - (u2 @ u1) * u1
    u2 /= np.linalg.norm(u2)
    return u1, u2


def make_task_weights(u1: np.ndarray, u2: np.ndarray, rho: float):
    if abs(rho) > 1:
        raise ValueError(f"|rho| must be <= 1, got {rho}")
    return u1.copy(), rho * u1 + np.sqrt(1.0 - rho * rho) * u2


def _synthetic_label(X, w, alphas, betas):
    z = X @ w
    return z + np.sin(np.outer(z, alphas) + betas).sum(axis=1)


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Two regression tasks whose weight vectors have cosine ``rho``.

    Draw order from ``make_rng(seed)``: the orthonormal pair, sine alphas,
    sine betas, inputs, then task-1 and task-2 noise.
    """
    rng = make_rng(spec.seed)
    u1, u2 = gen_orthonormal_pair(spec.d, rng)
    w1, w2 = make_task_weights(u1, u2, spec.rho)
    alphas = np.asarray(spec.sine_alphas if spec.sine_alphas is not None else rng.standard_normal(spec.m), dtype=float)
    betas = np.asarray(spec.sine_betas if spec.sine_betas is not None else rng.standard_normal(spec.m), dtype=float)
    if alphas.shape != (spec.m,) or betas.shape != (spec.m,):
        raise ValueError("need m sine alphas and m sine betas")
    X = rng.standard_normal((spec.n, spec.d))
    e1 = rng.normal(0.0, spec.noise_std, spec.n) if spec.noise_std > 0 else np.zeros(spec.n)
    e2 = rng.normal(0.0, spec.noise_std, spec.n) if spec.noise_std > 0 else np.zeros(spec.n)
    y1 = _synthetic_label(X, w1, alphas, betas) + e1
    y2 = _synthetic_label(X, w2, alphas, betas) + e2
    meta = dict(
        kind="synthetic",
        d=spec.d, rho=spec.rho, m=spec.m, n=spec.n, noise_std=spec.noise_std, seed=spec.seed,
        sine_alphas=alphas.tolist(), sine_betas=betas.tolist(),
        u1=u1.tolist(), u2=u2.tolist(), w1=w1.tolist(), w2=w2.tolist(),
    )
    return Dataset(X, np.column_stack([y1, y2]), ("real", "real"), meta)


def pcc(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("pcc needs two equal-length vectors of length >= 2")
    da, db = a - a.mean(), b - b.mean()
    den = np.sqrt((da @ da) * (db @ db))
    if den == 0:
        raise ValueError("pcc undefined for zero variance")
    return float((da @ db) / den)


# --- hashed categorical features -----------------------------------------


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & MASK64
    return h


def hash_feature(field_name: str, value: str, modulus: int) -> int:
    if modulus < 1:
        raise ValueError("modulus must be >= 1")
    return fnv1a_64(f"{field_name}={value}".encode("utf-8")) % modulus


@dataclass
class HashedFeatureSpec:
    fields: tuple[str, ...]
    modulus: int = 1_000_000
    embedding_dim: int = 10
    shared: bool = True

    def __post_init__(self):
        self.fields = tuple(self.fields)
        if self.modulus < 1:
            raise ValueError("modulus must be >= 1")


class EmbeddingTable:
    """Id lookup; field embeddings are concatenated in field order."""

    def __init__(self, schema: HashedFeatureSpec, rng: np.random.Generator, dtype=DEFAULT_DTYPE, scale: float = 0.05):
        self.schema = schema
        k, dim = schema.modulus, schema.embedding_dim
        if schema.shared:
            self.params = {"embedding/table": Param(rng.uniform(-scale, scale, (k, dim)).astype(dtype))}
        else:
            self.params = {
                f"embedding/{f}/table": Param(rng.uniform(-scale, scale, (k, dim)).astype(dtype)) for f in schema.fields
            }

    @property
    def width(self) -> int:
        return len(self.schema.fields) * self.schema.embedding_dim

    def _tables(self):
        if self.schema.shared:
            t = self.params["embedding/table"]
            return [t] * len(self.schema.fields)
        return [self.params[f"embedding/{f}/table"] for f in self.schema.fields]

    def forward(self, ids: np.ndarray) -> np.ndarray:
        return np.hstack([t.value[ids[:, i]] for i, t in enumerate(self._tables())])

    def backward(self, ids: np.ndarray, dout: np.ndarray) -> None:
        dim = self.schema.embedding_dim
        for i, t in enumerate(self._tables()):
            np.add.at(t.grad, ids[:, i], dout[:, i * dim : (i + 1) * dim])


def _parse_label(text: str) -> float:
    return float(text.strip())


def load_csv(path, schema: HashedFeatureSpec, label_columns: Sequence[str]) -> Dataset:
    """Hash every schema field of every row; rows that fail to parse are skipped."""
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as e:
        raise OSError(f"cannot read {path}: {e}") from e
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path} has no header row") from None
        header = [h.strip() for h in header]
        missing = [c for c in (*schema.fields, *label_columns) if c not in header]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        f_idx = [header.index(f) for f in schema.fields]
        l_idx = [header.index(c) for c in label_columns]
        ids, labels, skipped = [], [], 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                skipped += 1
                log.warning("%s:%d: expected %d columns, got %d", path, lineno, len(header), len(row))
                continue
            try:
                lab = [_parse_label(row[i]) for i in l_idx]
            except ValueError:
                skipped += 1
                log.warning("%s:%d: unparsable label", path, lineno)
                continue
            ids.append([hash_feature(f, row[i], schema.modulus) for f, i in zip(schema.fields, f_idx)])
            labels.append(lab)
    X = np.asarray(ids, dtype=np.int64).reshape(-1, len(schema.fields))
    Y = np.asarray(labels, dtype=float).reshape(-1, len(label_columns))
    kinds = tuple("binary" if np.isin(Y[:, t], (0.0, 1.0)).all() else "real" for t in range(Y.shape[1]))
    meta = dict(kind="csv", path=str(path), fields=list(schema.fields), modulus=schema.modulus,
                label_columns=list(label_columns), skipped_rows=skipped)
    if skipped:
        log.info("%s: skipped %d malformed rows", path, skipped)
    return Dataset(X, Y, kinds, meta)


# --- splits and batches ----------------------------------------------------


def split_indices(n: int, fractions: Sequence[float], seed: int) -> dict[str, np.ndarray]:
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"split fractions must be three nonnegatives summing to 1, got {fractions}")
    perm = make_rng(seed, 1).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_valid = int(round(fractions[1] * n))
    return {
        "train": perm[:n_train],
        "valid": perm[n_train : n_train + n_valid],
        "test": perm[n_train + n_valid :],
    }


class BatchIterator:
    """Endless mini-batches; reshuffles at every epoch when ``shuffle``."""

    def __init__(self, X, Y, batch: int, rng: np.random.Generator | None = None, shuffle: bool = True):
        if batch < 1:
            raise ValueError("batch must be >= 1")
        self.X, self.Y, self.batch = X, Y, batch
        self.rng, self.shuffle = rng, shuffle
        self.epoch = 0
        self._order = self._new_order()
        self._pos = 0

    def _new_order(self):
        n = len(self.X)
        return self.rng.permutation(n) if self.shuffle else np.arange(n)

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        return self

    def __next__(self):
        n = len(self.X)
        b = min(self.batch, n)
        if self._pos + b > n:
            self.epoch += 1
            self._order = self._new_order()
            self._pos = 0
        idx = self._order[self._pos : self._pos + b]
        self._pos += b
        return self.X[idx], self.Y[idx]


@dataclass
class Splits:
    train: tuple[np.ndarray, np.ndarray]
    valid: tuple[np.ndarray, np.ndarray]
    test: tuple[np.ndarray, np.ndarray]
    task_kinds: tuple[str, ...]
    seed: int
    indices: dict[str, np.ndarray] = field(default_factory=dict)

    def train_batches(self, batch: int, stream: int = 0) -> BatchIterator:
        return BatchIterator(*self.train, batch, make_rng(self.seed, 2, stream))

    def valid_batches(self, batch: int, stream: int = 0) -> BatchIterator:
        return BatchIterator(*self.valid, batch, make_rng(self.seed, 3, stream))


def split_and_batch(ds: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> Splits:
    idx = split_indices(len(ds), fractions, seed)
    parts = {k: (ds.X[v], ds.Y[v]) for k, v in idx.items()}
    return Splits(parts["train"], parts["valid"], parts["test"], ds.task_kinds, seed, idx)
