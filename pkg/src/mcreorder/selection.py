"""Reordering policies and the replicate harness.

Three policies produce a permutation of the pool:

* ``greedy``  - one sample per iteration, the exact argmin of the objective
                over all remaining samples (smallest index wins ties);
* ``batch``   - k random size-b subsets of the remaining samples per
                iteration, the best one is appended (first drawn wins ties);
* ``random``  - a seeded uniform permutation, the baseline.
"""

from __future__ import annotations

import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .samples import RNG_NAME, RandomStream, SamplePool, SelectionState
from .wasserstein import (
    L1,
    Objective,
    WassersteinVector,
    batch_w,
    prefix_w,
    screen_singletons,
    wass_vector,
)

POLICIES = ("greedy", "batch", "random")
# cap on enumerated subsets in exhaustive batch mode
MAX_EXHAUSTIVE = 1_000_000


@dataclass
class PickEvent:
    iter: int
    picked: list[int]
    w: WassersteinVector
    cumulative: int
    elapsed_ms: float

    def to_dict(self, timing: bool = True) -> dict:
        return {
            "iter": self.iter,
            "picked": self.picked,
            "w": self.w.to_list(),
            "manhattan": self.w.manhattan,
            "elapsed_ms": round(self.elapsed_ms, 3) if timing else None,
        }


@dataclass
class SelectionTrace:
    policy: str
    events: list[PickEvent] = field(default_factory=list)
    evaluations: int = 0

    @property
    def order(self) -> list[int]:
        return [i for e in self.events for i in e.picked]

    @property
    def iterations(self) -> int:
        return len(self.events)

    @property
    def wall_time_s(self) -> float:
        return sum(e.elapsed_ms for e in self.events) / 1000.0

    def _record(self, pool: SamplePool, state: SelectionState, picked, t0: float) -> None:
        state.add(picked)
        self.events.append(
            PickEvent(
                iter=len(self.events),
                picked=[int(i) for i in picked],
                w=wass_vector(pool, state),
                cumulative=state.m,
                elapsed_ms=(time.perf_counter() - t0) * 1000.0,
            )
        )


@dataclass(frozen=True)
class BatchConfig:
    b: int
    k: int
    seed: int = 0
    # enumerate every size-b subset of R, in lexicographic order, instead of
    # drawing k at random
    exhaustive: bool = False

    def validate(self, n: int) -> None:
        if self.b < 1:
            raise ValueError(f"batch size b must be >= 1, got {self.b}")
        if self.b > n:
            raise ValueError(f"batch size b={self.b} exceeds pool size n={n}")
        if self.k < 1:
            raise ValueError(f"number of batches k must be >= 1, got {self.k}")


def greedy_reorder(pool: SamplePool, objective: Objective = L1, screen: bool = True) -> SelectionTrace:
    """Append, one at a time, the remaining sample minimizing the objective.

    With ``screen`` the O(d n) running-sum estimate shortlists candidates
    whose value lies within rounding distance of the estimated minimum, and
    only those are scored exactly; the argmin is taken over exact values, so
    the result matches ``screen=False`` (exhaustive exact scoring) bit for bit.
    ``trace.evaluations`` counts candidate evaluations of the algorithm,
    n(n+1)/2 - 1 in total.
    """
    trace = SelectionTrace("greedy")
    state = SelectionState(pool)
    rel = 64.0 * (pool.n + pool.d + 2) * np.finfo(float).eps
    while state.remaining:
        t0 = time.perf_counter()
        rem = state.remaining_array()
        if rem.size == 1:
            trace._record(pool, state, [int(rem[0])], t0)
            break
        trace.evaluations += rem.size
        if screen:
            approx = screen_singletons(pool, state, objective)[rem]
            lo = approx.min()
            cands = rem[approx <= lo + lo * rel]
        else:
            cands = rem
        exact = objective(batch_w(pool, state, cands[:, None]))
        # np.argmin returns the first minimum; cands is ascending
        trace._record(pool, state, [int(cands[np.argmin(exact)])], t0)
    return trace


def _draw_batches(gen: np.random.Generator, rem: np.ndarray, b: int, k: int) -> np.ndarray:
    """k independent uniform size-b subsets of ``rem`` (rows may overlap)."""
    keys = gen.random((k, rem.size))
    if b < rem.size:
        part = np.argpartition(keys, b - 1, axis=1)[:, :b]
    else:
        part = np.broadcast_to(np.arange(rem.size), (k, rem.size))
    # order each batch by its random keys so the within-batch order is a
    # uniform random arrangement that does not depend on partition internals
    within = np.argsort(np.take_along_axis(keys, part, axis=1), axis=1, kind="stable")
    return rem[np.take_along_axis(part, within, axis=1)]


def _enumerate_batches(rem: np.ndarray, b: int) -> np.ndarray:
    count = math.comb(rem.size, b)
    if count > MAX_EXHAUSTIVE:
        raise ValueError(f"exhaustive mode would enumerate {count} batches (limit {MAX_EXHAUSTIVE})")
    if b == 1:
        return rem[:, None]
    return np.array(list(itertools.combinations(rem.tolist(), b)), dtype=np.int64)


def batch_reorder(
    pool: SamplePool,
    cfg: BatchConfig,
    rng: RandomStream | None = None,
    objective: Objective = L1,
) -> SelectionTrace:
    """Append, per iteration, the best of k random size-b batches of R.

    Iteration t draws from ``rng.child(t)``.  Once at most b samples remain
    they are appended in index order without evaluation.
    """
    cfg.validate(pool.n)
    if rng is None:
        rng = RandomStream(cfg.seed)
    trace = SelectionTrace("batch")
    state = SelectionState(pool)
    t = 0
    while state.remaining:
        t0 = time.perf_counter()
        rem = state.remaining_array()
        if rem.size <= cfg.b:
            trace._record(pool, state, rem.tolist(), t0)
            break
        if cfg.exhaustive:
            batches = _enumerate_batches(rem, cfg.b)
        else:
            batches = _draw_batches(rng.child(t).generator, rem, cfg.b, cfg.k)
        trace.evaluations += batches.shape[0]
        values = objective(batch_w(pool, state, batches))
        trace._record(pool, state, batches[np.argmin(values)].tolist(), t0)
        t += 1
    return trace


def random_reorder(pool: SamplePool, rng: RandomStream, checkpoints: Sequence[int] | None = None) -> SelectionTrace:
    """Seeded uniform permutation (numpy's Fisher-Yates ``permutation``).

    One trace event is recorded per checkpoint, or per sample by default.
    """
    t0 = time.perf_counter()
    perm = rng.generator.permutation(pool.n)
    stops = sorted(set(checkpoints)) if checkpoints else list(range(1, pool.n + 1))
    if stops[-1] != pool.n:
        stops.append(pool.n)
    ws = prefix_w(pool, perm, stops)
    elapsed = (time.perf_counter() - t0) * 1000.0 / len(stops)
    trace = SelectionTrace("random")
    start = 0
    for t, m in enumerate(stops):
        trace.events.append(PickEvent(t, perm[start:m].tolist(), WassersteinVector.from_w(ws[t]), m, elapsed))
        start = m
    return trace


# ---------------------------------------------------------------------------
# Replicates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolicySpec:
    policy: str
    b: int | None = None
    k: int | None = None
    exhaustive: bool = False
    norm: str = "l1"
    normalize: bool = False

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; choose from {POLICIES}")
        if self.policy == "batch" and (self.b is None or self.k is None):
            raise ValueError("batch policy requires b and k")

    @property
    def label(self) -> str:
        return f"batch_b{self.b}" if self.policy == "batch" else self.policy

    def objective(self, pool: SamplePool) -> Objective:
        return Objective.for_pool(pool, self.norm, self.normalize)


def run_policy(pool: SamplePool, spec: PolicySpec, rng: RandomStream) -> SelectionTrace:
    objective = spec.objective(pool)
    if spec.policy == "greedy":
        return greedy_reorder(pool, objective)
    if spec.policy == "batch":
        return batch_reorder(pool, BatchConfig(spec.b, spec.k, rng.seed, spec.exhaustive), rng, objective)
    return random_reorder(pool, rng)


@dataclass
class PolicyCurve:
    label: str
    policy: str
    b: int | None
    k: int | None
    values: np.ndarray  # replicates x checkpoints
    iterations: list[int]
    wall_time_s: list[float]

    @property
    def replicates(self) -> int:
        return self.values.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    @property
    def lo(self) -> np.ndarray:
        return np.percentile(self.values, 2.5, axis=0)

    @property
    def hi(self) -> np.ndarray:
        return np.percentile(self.values, 97.5, axis=0)

    @property
    def stderr(self) -> np.ndarray:
        if self.replicates < 2:
            return np.zeros(self.values.shape[1])
        return self.values.std(axis=0, ddof=1) / np.sqrt(self.replicates)

    def to_dict(self, timing: bool = False) -> dict:
        se = self.stderr
        out = {
            "policy": self.policy,
            "b": self.b,
            "k": self.k,
            "replicates": self.replicates,
            "mean": self.mean.tolist(),
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "mean_minus_2se": (self.mean - 2 * se).tolist(),
            "mean_plus_2se": (self.mean + 2 * se).tolist(),
            "values": self.values.tolist(),
            "iterations": self.iterations,
        }
        if timing:
            out["wall_time_s"] = self.wall_time_s
        return out


@dataclass
class ConvergenceReport:
    checkpoints: list[int]
    curves: dict[str, PolicyCurve] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def add(self, curve: PolicyCurve) -> None:
        self.curves[curve.label] = curve

    def to_dict(self, timing: bool = False) -> dict:
        meta = {"rng": RNG_NAME, "numpy": np.__version__, **self.meta}
        return {
            "meta": meta,
            "checkpoints": list(self.checkpoints),
            "policies": {k: c.to_dict(timing) for k, c in self.curves.items()},
        }

    def csv_rows(self) -> list[tuple]:
        rows = []
        for i, m in enumerate(self.checkpoints):
            for label, c in self.curves.items():
                rows.append((label, c.b, m, float(c.mean[i]), float(c.lo[i]), float(c.hi[i])))
        return rows


def default_checkpoints(n: int) -> list[int]:
    return list(range(1, n + 1))


def check_checkpoints(checkpoints: Sequence[int], n: int) -> list[int]:
    cps = [int(m) for m in checkpoints]
    if not cps:
        raise ValueError("no checkpoints given")
    bad = [m for m in cps if not 1 <= m <= n]
    if bad:
        raise ValueError(f"checkpoints {bad} outside [1, {n}]")
    return cps


def curve_values(pool: SamplePool, order: Sequence[int], checkpoints: Sequence[int], objective: Objective = L1):
    return np.asarray(objective(prefix_w(pool, order, checkpoints)), dtype=float)


def replicate_harness(
    pool: SamplePool,
    spec: PolicySpec,
    replicates: int,
    checkpoints: Sequence[int],
    seed: int = 0,
    threads: int = 1,
    keep_traces: bool = False,
):
    """Run ``spec`` for each replicate r on ``RandomStream(seed).child(r)``.

    Returns the curve, plus the traces when ``keep_traces`` is set.  Results
    do not depend on ``threads``; replicates are collected in index order.
    """
    if replicates < 1:
        raise ValueError(f"replicates must be >= 1, got {replicates}")
    cps = check_checkpoints(checkpoints, pool.n)
    objective = spec.objective(pool)
    root = RandomStream(seed)

    def one(r: int):
        trace = run_policy(pool, spec, root.child(r))
        return trace, curve_values(pool, trace.order, cps, objective)

    if threads > 1 and replicates > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, range(replicates)))
    else:
        results = [one(r) for r in range(replicates)]
    traces = [t for t, _ in results]
    curve = PolicyCurve(
        label=spec.label,
        policy=spec.policy,
        b=spec.b,
        k=spec.k,
        values=np.vstack([v for _, v in results]),
        iterations=[t.iterations for t in traces],
        wall_time_s=[t.wall_time_s for t in traces],
    )
    return (curve, traces) if keep_traces else curve
