"""Sample pools, selection bookkeeping, seeded random streams and priors."""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

RNG_NAME = "PCG64/SeedSequence"


class PoolError(ValueError):
    """Raised for malformed sample matrices or sample files."""


class PriorError(ValueError):
    """Raised for unknown prior families or invalid prior parameters."""


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


class RandomStream:
    """Seeded PCG64 stream addressable by a key path.

    ``RandomStream(seed).child(r, t)`` depends only on ``(seed, r, t)``; two
    streams built from the same seed and key produce the same draws.
    """

    def __init__(self, seed: int, key: Sequence[int] = ()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, *key: int) -> "RandomStream":
        return RandomStream(self.seed, self.key + tuple(key))

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, key={self.key})"


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

PRIOR_FAMILIES = {
    "uniform": ("lo", "hi"),
    "normal": ("mu", "sigma"),
    "truncnormal": ("mu", "sigma", "lo", "hi"),
    "loguniform": ("lo", "hi"),
}


@dataclass(frozen=True)
class PriorSpec:
    family: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.family not in PRIOR_FAMILIES:
            raise PriorError(f"unknown prior family {self.family!r}")
        names = PRIOR_FAMILIES[self.family]
        if len(self.params) != len(names):
            raise PriorError(f"{self.family} takes parameters {names}, got {list(self.params)}")
        p = dict(zip(names, self.params))
        if not all(np.isfinite(v) for v in self.params):
            raise PriorError(f"{self.family}: non-finite parameter")
        if "sigma" in p and not p["sigma"] > 0:
            raise PriorError(f"{self.family}: sigma must be > 0")
        if "lo" in p and not p["lo"] < p["hi"]:
            raise PriorError(f"{self.family}: lo must be < hi")
        if self.family == "loguniform" and not p["lo"] > 0:
            raise PriorError("loguniform: lo must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        try:
            family = d["family"]
            params = d["params"]
        except (KeyError, TypeError) as exc:
            raise PriorError(f"prior must be an object with 'family' and 'params': {d!r}") from exc
        if isinstance(params, dict):
            names = PRIOR_FAMILIES.get(family)
            if names is None:
                raise PriorError(f"unknown prior family {family!r}")
            try:
                params = [params[n] for n in names]
            except KeyError as exc:
                raise PriorError(f"{family}: missing parameter {exc}") from exc
        return cls(family, tuple(float(v) for v in params))

    def to_dict(self) -> dict:
        return {"family": self.family, "params": list(self.params)}

    def draw(self, n: int, gen: np.random.Generator) -> np.ndarray:
        p = self.params
        if self.family == "uniform":
            return gen.uniform(p[0], p[1], size=n)
        if self.family == "normal":
            return gen.normal(p[0], p[1], size=n)
        if self.family == "truncnormal":
            mu, sigma, lo, hi = p
            a, b = (lo - mu) / sigma, (hi - mu) / sigma
            x = stats.truncnorm.rvs(a, b, loc=mu, scale=sigma, size=n, random_state=gen)
            # inverse-cdf rounding can land a hair outside the support
            return np.clip(x, lo, hi)
        lo, hi = np.log(p[0]), np.log(p[1])
        return np.exp(gen.uniform(lo, hi, size=n))


# Documented stand-ins for the [c*, W, kappa, M] priors of the demo model.
DEMO_PRIORS = (
    PriorSpec("truncnormal", (0.5, 0.05, 0.4, 0.6)),
    PriorSpec("uniform", (0.5, 2.0)),
    PriorSpec("uniform", (0.5, 2.0)),
    PriorSpec("loguniform", (0.5, 2.0)),
)


def parse_priors(items: Iterable[dict]) -> list[PriorSpec]:
    priors = [PriorSpec.from_dict(d) for d in items]
    if not priors:
        raise PriorError("at least one prior is required")
    return priors


# ---------------------------------------------------------------------------
# Sample pool
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SamplePool:
    """Immutable n x d sample matrix with per-dimension sorted views.

    ``order[j]`` lists original indices in ascending order of column j (ties
    by original index), ``sorted_values[j]`` the matching values and
    ``ranks[j, i]`` the position of sample i in that view.
    """

    data: np.ndarray
    order: np.ndarray
    sorted_values: np.ndarray
    ranks: np.ndarray
    # per view position: number of pool values <= the value there
    cum_counts: np.ndarray
    gaps: np.ndarray

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def sorted_view(self, j: int) -> np.ndarray:
        return self.sorted_values[j]

    def digest(self) -> str:
        return pool_hash(self.data)


def pool_hash(data: np.ndarray) -> str:
    arr = np.ascontiguousarray(data, dtype="<f8")
    h = hashlib.sha256()
    h.update(f"{arr.shape[0]}x{arr.shape[1]}:".encode())
    h.update(arr.tobytes())
    return h.hexdigest()[:16]


def load_pool(rows) -> SamplePool:
    """Validate a rectangular matrix of finite reals and build its sorted views."""
    if isinstance(rows, np.ndarray):
        if rows.ndim != 2:
            raise PoolError(f"sample matrix must be 2-D, got shape {rows.shape}")
        data = np.array(rows, dtype=np.float64)
    else:
        rows = [list(r) for r in rows]
        if not rows:
            raise PoolError("sample matrix has no rows")
        width = len(rows[0])
        for i, r in enumerate(rows):
            if len(r) != width:
                raise PoolError(f"row {i} has {len(r)} columns, expected {width}")
        try:
            data = np.array(rows, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise PoolError(f"non-numeric sample value: {exc}") from exc
    n, d = data.shape
    if n < 1 or d < 1:
        raise PoolError(f"sample matrix must have n >= 1 and d >= 1, got {n}x{d}")
    bad = ~np.isfinite(data)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise PoolError(f"non-finite value {data[i, j]!r} at row {i}, column {j}")
    data.setflags(write=False)

    order = np.argsort(data.T, axis=1, kind="stable")
    sorted_values = np.take_along_axis(data.T, order, axis=1)
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(n)[None, :].repeat(d, axis=0), axis=1)
    cum_counts = np.empty((d, n), dtype=np.int64)
    for j in range(d):
        cum_counts[j] = np.searchsorted(sorted_values[j], sorted_values[j], side="right")
    gaps = np.diff(sorted_values, axis=1)
    for a in (order, sorted_values, ranks, cum_counts, gaps):
        a.setflags(write=False)
    return SamplePool(data, order, sorted_values, ranks, cum_counts, gaps)


def generate_pool(priors: Sequence[PriorSpec], n: int, rng: RandomStream) -> SamplePool:
    """Draw n i.i.d. rows, one column per prior, column j from ``rng.child(j)``."""
    if n < 1:
        raise PoolError(f"n must be >= 1, got {n}")
    if not priors:
        raise PriorError("at least one prior is required")
    cols = [p.draw(n, rng.child(j).generator) for j, p in enumerate(priors)]
    return load_pool(np.column_stack(cols))


def read_pool_csv(path: str | Path) -> SamplePool:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PoolError(f"{path}: empty file") from None
        expected = [f"x{j}" for j in range(len(header))]
        if header != expected:
            raise PoolError(f"{path}: header must be {','.join(expected)}, got {','.join(header)}")
        rows = []
        for lineno, r in enumerate(reader, start=2):
            try:
                rows.append([float(v) for v in r])
            except ValueError as exc:
                raise PoolError(f"{path}:{lineno}: {exc}") from exc
    return load_pool(rows)


def format_pool_csv(data: np.ndarray) -> str:
    buf = io.StringIO()
    buf.write(",".join(f"x{j}" for j in range(data.shape[1])) + "\n")
    for row in data:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def write_pool_csv(pool: SamplePool, path: str | Path) -> None:
    Path(path).write_text(format_pool_csv(pool.data), encoding="utf-8", newline="\n")


# ---------------------------------------------------------------------------
# Selection state
# ---------------------------------------------------------------------------


@dataclass
class SelectionState:
    """The picked set P (in pick order) and remaining set R over one pool.

    ``mask[j]`` flags picked samples in sorted-view coordinates of dimension
    j; ``picked_sorted`` is kept as ascending arrays and updated by binary
    search insertion, never re-sorted.
    """

    pool: SamplePool
    picked: list[int] = field(default_factory=list)
    remaining: list[int] = field(init=False)
    mask: np.ndarray = field(init=False)
    picked_sorted: list[np.ndarray] = field(init=False)

    def __post_init__(self):
        initial = list(self.picked)
        self.picked = []
        self.remaining = list(range(self.pool.n))
        self._is_picked = np.zeros(self.pool.n, dtype=bool)
        self.mask = np.zeros((self.pool.d, self.pool.n), dtype=bool)
        self.picked_sorted = [np.empty(0) for _ in range(self.pool.d)]
        if initial:
            self.add(initial)

    @property
    def m(self) -> int:
        return len(self.picked)

    def is_picked(self, i: int) -> bool:
        return bool(self._is_picked[i])

    def remaining_array(self) -> np.ndarray:
        return np.flatnonzero(~self._is_picked)

    def add(self, indices: Iterable[int]) -> None:
        indices = [int(i) for i in indices]
        if len(set(indices)) != len(indices):
            raise ValueError(f"duplicate index in {indices}")
        for i in indices:
            if not 0 <= i < self.pool.n:
                raise IndexError(f"sample index {i} out of range for n={self.pool.n}")
            if self._is_picked[i]:
                raise ValueError(f"sample {i} already picked")
        idx = np.asarray(indices, dtype=np.int64)
        for j in range(self.pool.d):
            ranks = self.pool.ranks[j, idx]
            # values sharing an insertion point must go in ascending order
            vals = self.pool.sorted_values[j, np.sort(ranks)] if len(idx) > 1 else self.pool.data[idx, j]
            pos = np.searchsorted(self.picked_sorted[j], vals, side="right")
            self.picked_sorted[j] = np.insert(self.picked_sorted[j], pos, vals)
            self.mask[j, ranks] = True
        self._is_picked[idx] = True
        self.picked.extend(indices)
        gone = set(indices)
        self.remaining = [i for i in self.remaining if i not in gone]
