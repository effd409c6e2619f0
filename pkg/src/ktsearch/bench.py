"""Scaling benchmark: populations of shuffled lists swept over (len, N, r)."""
from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .kendall import RankListError
from .mtree import CascadingMetricTree, UserRecord

FULL_GRID_LENS = [10, 15, 20, 30]
FULL_GRID_NS = [5_000, 10_000, 30_000, 60_000, 100_000, 200_000, 400_000, 1_200_000, 1_900_000, 2_500_000]
FULL_GRID_RS = [0.0] + [round(0.05 + 0.01 * i, 2) for i in range(13)]
DESK_NS = [5_000, 10_000, 30_000, 100_000]

CSV_HEADER = ["len", "N", "r", "query_index", "n_found", "dist_calls", "relative_calls", "elapsed_ns"]

# stream tags; one independent RNG per (purpose, len, N)
_POPULATION, _QUERIES, _BUILD = 0, 1, 2


def _rng(seed: int, purpose: int, length: int, n: int) -> np.random.Generator:
    return np.random.default_rng([seed, purpose, length, n])


@dataclass
class GridConfig:
    lens: list[int] = field(default_factory=lambda: list(FULL_GRID_LENS))
    Ns: list[int] = field(default_factory=lambda: list(DESK_NS))
    rs: list[float] = field(default_factory=lambda: list(FULL_GRID_RS))
    queries_per_cell: int = 5
    seed: int = 0
    leaf_size: int = 16
    cascade_depth: int = 8

    def __post_init__(self):
        if not self.lens or not self.Ns or not self.rs:
            raise ValueError("lens, Ns and rs must all be non-empty")
        if any(n < 2 for n in self.lens):
            raise ValueError(f"every len must be >= 2: {self.lens}")
        if any(n < 1 for n in self.Ns):
            raise ValueError(f"every N must be >= 1: {self.Ns}")
        if any(not 0.0 <= r <= 1.0 for r in self.rs):
            raise ValueError(f"every r must be in [0, 1]: {self.rs}")
        if self.queries_per_cell < 1:
            raise ValueError("queries_per_cell must be >= 1")

    @classmethod
    def full_grid(cls, **kw) -> "GridConfig":
        return cls(lens=list(FULL_GRID_LENS), Ns=list(FULL_GRID_NS), rs=list(FULL_GRID_RS), **kw)

    @classmethod
    def from_text(cls, text: str) -> "GridConfig":
        """Parse ``key=value`` lines; lists are comma separated, ``#`` starts a comment."""
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            kw[key] = value
        return cls(**parse_overrides(kw))

    @classmethod
    def from_file(cls, path) -> "GridConfig":
        return cls.from_text(Path(path).read_text())


def _as_int(tok: str) -> int:
    v = float(tok)
    if v != int(v):
        raise ValueError(f"expected an integer, got {tok!r}")
    return int(v)


def parse_overrides(kw: dict[str, str]) -> dict:
    """Convert string values (from a config file or flags) to GridConfig fields."""
    known = {f.name for f in fields(GridConfig)}
    out = {}
    for key, value in kw.items():
        if key not in known:
            raise ValueError(f"unknown grid key {key!r}")
        if key in ("lens", "Ns"):
            out[key] = [_as_int(t) for t in value.split(",") if t.strip()]
        elif key == "rs":
            out[key] = [float(t) for t in value.split(",") if t.strip()]
        else:
            out[key] = _as_int(value)
    return out


@dataclass
class Population:
    perms: np.ndarray  # (N, len) int16, row i belongs to user_id i

    def __len__(self) -> int:
        return self.perms.shape[0]

    @property
    def length(self) -> int:
        return self.perms.shape[1]

    def __getitem__(self, i: int) -> UserRecord:
        return UserRecord(i, self.perms[i])

    def records(self) -> list[UserRecord]:
        return [self[i] for i in range(len(self))]


def generate_population(N: int, length: int, seed: int) -> Population:
    """``N`` independently shuffled copies of ``0..length-1``."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    if length < 2:
        raise ValueError(f"list length must be >= 2, got {length}")
    base = np.tile(np.arange(length, dtype=np.int16), (N, 1))
    return Population(_rng(seed, _POPULATION, length, N).permuted(base, axis=1))


def pick_query_ids(population: Population, k: int, seed: int) -> np.ndarray:
    N = len(population)
    if not 1 <= k <= N:
        raise ValueError(f"cannot pick {k} distinct queries from {N} records")
    rng = _rng(seed, _QUERIES, population.length, N)
    return np.sort(rng.choice(N, size=k, replace=False))


def pick_queries(population: Population, k: int, seed: int) -> np.ndarray:
    """``k`` distinct members of the population, as a ``(k, len)`` array."""
    return population.perms[pick_query_ids(population, k, seed)]


@dataclass
class CellResult:
    len: int
    N: int
    r: float
    query_index: int
    n_found: int
    dist_calls: int
    relative_calls: float
    elapsed_ns: int
    build_ns: int = 0

    def key(self) -> tuple:
        """All fields that must be reproducible for a fixed config."""
        return (self.len, self.N, self.r, self.query_index, self.n_found, self.dist_calls, self.relative_calls)


class GridCellError(RuntimeError):
    pass


def run_block(config: GridConfig, length: int, N: int) -> list[CellResult]:
    """All rows for one (len, N): one population, one tree, every r and query."""
    try:
        pop = generate_population(N, length, config.seed)
        build_seed = int(_rng(config.seed, _BUILD, length, N).integers(2**31))
        t0 = time.perf_counter_ns()
        tree = CascadingMetricTree.from_arrays(
            pop.perms,
            seed=build_seed,
            leaf_size=config.leaf_size,
            cascade_depth=config.cascade_depth,
            validate=False,
        )
        build_ns = time.perf_counter_ns() - t0
        queries = pick_queries(pop, min(config.queries_per_cell, N), config.seed)
        rows = []
        for r in config.rs:
            for qi, q in enumerate(queries):
                _, st = tree.ball_query(q, r)
                rows.append(
                    CellResult(length, N, float(r), qi, st.n_found, st.dist_calls,
                               st.dist_calls / N, st.elapsed_ns, build_ns)
                )
        return rows
    except (ValueError, RankListError) as exc:
        raise GridCellError(f"cell len={length} N={N} failed: {exc}") from exc


def run_grid(config: GridConfig, jobs: int = 1) -> list[CellResult]:
    blocks = [(length, N) for length in config.lens for N in config.Ns]
    if jobs <= 1:
        out = []
        for length, N in blocks:
            out.extend(run_block(config, length, N))
        return out
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = pool.map(run_block, [config] * len(blocks), *zip(*blocks))
        return [row for part in parts for row in part]


def _fmt_row(res: CellResult) -> list[str]:
    return [
        str(res.len), str(res.N), repr(float(res.r)), str(res.query_index),
        str(res.n_found), str(res.dist_calls), repr(float(res.relative_calls)), str(res.elapsed_ns),
    ]


def emit_csv(results: Sequence[CellResult], destination) -> None:
    if not results:
        raise ValueError("no results to write")
    with open(destination, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for res in results:
            w.writerow(_fmt_row(res))


def read_csv(source) -> list[CellResult]:
    with open(source, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        return [
            CellResult(int(a), int(b), float(c), int(d), int(e), int(f), float(g), int(h))
            for a, b, c, d, e, f, g, h in reader
        ]


def write_population(perms: np.ndarray | Iterable[Sequence[int]], destination) -> None:
    """One permutation per line, space separated."""
    with open(destination, "w") as fh:
        for row in perms:
            fh.write(" ".join(str(int(v)) for v in row))
            fh.write("\n")


def read_population(source) -> np.ndarray:
    rows = []
    with open(source) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append([int(t) for t in line.split()])
            except ValueError:
                raise RankListError(f"line {lineno}: not a list of integers") from None
    if not rows:
        raise RankListError("population file is empty")
    n = len(rows[0])
    for lineno, row in enumerate(rows, 1):
        if len(row) != n:
            raise RankListError(f"row {lineno} has {len(row)} items, expected {n}")
    arr = np.asarray(rows, dtype=np.int64)
    ok = (np.sort(arr, axis=1) == np.arange(n)).all(axis=1)
    if n < 2 or not ok.all():
        bad = 1 if n < 2 else int(np.flatnonzero(~ok)[0]) + 1
        raise RankListError(f"row {bad} is not a permutation of 0..{n - 1}")
    return arr.astype(np.int16)
