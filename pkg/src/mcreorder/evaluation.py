"""Propagating reordered samples through a model and measuring convergence."""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .phasefield import QOI_NAMES, PhaseFieldParams, run, extract_qoi
from .samples import RandomStream, SamplePool, load_pool
from .selection import (
    ConvergenceReport,
    PolicyCurve,
    PolicySpec,
    SelectionTrace,
    check_checkpoints,
    replicate_harness,
)
from .wasserstein import L1, Objective, prefix_w


@dataclass(frozen=True)
class Model:
    """A model mapping one input row (and its sample id) to q outputs.

    ``fn`` returns either the output vector or ``(outputs, flags)``.  With
    ``deterministic`` set, the same (row, id) always gives the same outputs.
    """

    name: str
    fn: Callable
    q: int
    output_names: tuple[str, ...]
    deterministic: bool = True

    def evaluate(self, x: np.ndarray, sample_id: int) -> tuple[np.ndarray, tuple[str, ...]]:
        out = self.fn(x, sample_id)
        flags: tuple[str, ...] = ()
        if isinstance(out, tuple):
            out, flags = out
        y = np.asarray(out, dtype=np.float64).reshape(-1)
        if y.size != self.q:
            raise ValueError(f"model {self.name} returned {y.size} outputs, declared {self.q}")
        return y, tuple(flags)


def identity_model(d: int) -> Model:
    return Model("identity", lambda x, i: np.array(x, dtype=np.float64), d, tuple(f"x{j}" for j in range(d)))


def surrogate_model(d: int) -> Model:
    """Cheap smooth nonlinear stand-in for an expensive simulator."""

    def fn(x, i):
        x = np.asarray(x, dtype=np.float64)
        s = x.sum()
        return np.array([np.sin(x[0]) + 0.5 * x[-1] ** 2, np.exp(0.3 * np.tanh(s)) * x[d // 2], np.tanh(x @ x / d)])

    return Model("surrogate", fn, 3, ("y0", "y1", "y2"))


def phasefield_model(base: PhaseFieldParams | None = None, seed: int = 0) -> Model:
    """Sample row [c*, W, kappa, M] -> the five microstructure QoIs.

    The initial noise of sample i is drawn from ``RandomStream(seed).child(i)``
    so outputs are keyed by sample id, not by evaluation order.
    """
    base = base or PhaseFieldParams()
    root = RandomStream(seed)

    def fn(x, i):
        p = base.with_sample(x)
        rec = extract_qoi(run(p, root.child(int(i)), snapshot_every=0).final, p)
        return np.array(rec.values()), rec.flags

    return Model("phasefield", fn, len(QOI_NAMES), QOI_NAMES)


# ---------------------------------------------------------------------------
# Output pools
# ---------------------------------------------------------------------------


@dataclass
class OutputPool:
    """Model outputs for a subset of an n-sample pool, rows keyed by sample id."""

    n: int
    names: tuple[str, ...]
    values: np.ndarray = field(default=None)
    evaluated: np.ndarray = field(default=None)
    failed: np.ndarray = field(default=None)
    flags: list[tuple[str, ...]] = field(default=None)
    elapsed_ms: np.ndarray = field(default=None)

    def __post_init__(self):
        q = len(self.names)
        if self.values is None:
            self.values = np.full((self.n, q), np.nan)
        if self.evaluated is None:
            self.evaluated = np.zeros(self.n, dtype=bool)
        if self.failed is None:
            self.failed = np.zeros(self.n, dtype=bool)
        if self.flags is None:
            self.flags = [() for _ in range(self.n)]
        if self.elapsed_ms is None:
            self.elapsed_ms = np.zeros(self.n)

    @property
    def q(self) -> int:
        return len(self.names)

    @property
    def size(self) -> int:
        return int(self.evaluated.sum())

    @property
    def complete(self) -> bool:
        return bool(self.evaluated.all())

    def valid(self) -> np.ndarray:
        return np.flatnonzero(self.evaluated & ~self.failed)

    def copy(self) -> "OutputPool":
        return OutputPool(
            self.n, self.names, self.values.copy(), self.evaluated.copy(), self.failed.copy(),
            list(self.flags), self.elapsed_ms.copy(),
        )

    def as_pool(self) -> SamplePool:
        """The valid rows as a SamplePool (sorted views per output)."""
        return load_pool(self.values[self.valid()])

    def equals(self, other: "OutputPool") -> bool:
        return (
            self.n == other.n
            and self.names == other.names
            and np.array_equal(self.evaluated, other.evaluated)
            and np.array_equal(self.failed, other.failed)
            and np.array_equal(self.values, other.values, equal_nan=True)
            and self.flags == other.flags
        )


def _order_of(order) -> list[int]:
    return order.order if isinstance(order, SelectionTrace) else [int(i) for i in order]


def propagate(
    pool: SamplePool,
    order,
    model: Model,
    budget: int,
    previous: OutputPool | None = None,
    threads: int = 1,
) -> OutputPool:
    """Evaluate ``model`` on the first ``budget`` samples of ``order``.

    Samples already present in ``previous`` are reused, so extending a budget
    only runs the new samples.  A model exception marks the row as failed
    with the message in its flags.
    """
    seq = _order_of(order)
    if not 0 <= budget <= len(seq):
        raise ValueError(f"budget must lie in [0, {len(seq)}], got {budget}")
    if previous is not None:
        if previous.n != pool.n or previous.names != model.output_names:
            raise ValueError("previous output pool does not match this pool/model")
        out = previous.copy()
    else:
        out = OutputPool(pool.n, model.output_names)
    todo = [i for i in seq[:budget] if not out.evaluated[i]]

    def one(i: int):
        t0 = time.perf_counter()
        try:
            y, flags = model.evaluate(pool.data[i], i)
            ok = bool(np.all(np.isfinite(y)))
            if not ok:
                flags = flags + ("failed: non-finite output",)
        except Exception as exc:  # noqa: BLE001 - any model failure is recorded, not raised
            y, flags, ok = np.full(model.q, np.nan), (f"failed: {exc}",), False
        return i, y, flags, ok, (time.perf_counter() - t0) * 1000.0

    if threads > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, todo))
    else:
        results = [one(i) for i in todo]
    for i, y, flags, ok, ms in results:
        out.values[i] = y if ok else np.nan
        out.evaluated[i] = True
        out.failed[i] = not ok
        out.flags[i] = flags
        out.elapsed_ms[i] = ms
    return out


def output_distances(full: OutputPool, order, checkpoints: Sequence[int], objective: Objective = L1) -> np.ndarray:
    """Objective between the outputs of each prefix ``order[:m]`` and all outputs.

    Failed rows are dropped from both sides; a prefix with no valid row gives
    NaN.
    """
    if not full.complete:
        raise ValueError("output pool must cover every sample")
    seq = np.asarray(_order_of(order), dtype=np.int64)
    cps = check_checkpoints(checkpoints, full.n)
    valid = full.valid()
    if valid.size == 0:
        return np.full(len(cps), np.nan)
    remap = np.full(full.n, -1, dtype=np.int64)
    remap[valid] = np.arange(valid.size)
    mapped = remap[seq]
    keep = mapped >= 0
    counts = np.cumsum(keep)
    vorder = mapped[keep]
    ms = np.array([counts[m - 1] for m in cps])
    out = np.full(len(cps), np.nan)
    live = ms > 0
    if live.any():
        ws = prefix_w(full.as_pool(), vorder, ms[live])
        out[live] = objective(ws)
    return out


def output_convergence(
    full: OutputPool,
    orders: Sequence,
    checkpoints: Sequence[int],
    label: str = "policy",
    objective: Objective = L1,
) -> PolicyCurve:
    """Output-space curve over replicate orders, aggregated like the input space."""
    if not orders:
        raise ValueError("no orders given")
    values = np.vstack([output_distances(full, o, checkpoints, objective) for o in orders])
    its = [o.iterations if isinstance(o, SelectionTrace) else 0 for o in orders]
    policy = orders[0].policy if isinstance(orders[0], SelectionTrace) else label
    return PolicyCurve(label, policy, None, None, values, its, [0.0] * len(orders))


def default_sweep_checkpoints(n: int, sizes: Sequence[int]) -> list[int]:
    cps = {n}
    for b in sizes:
        cps.update(range(b, n, b))
    return sorted(cps)


def batch_size_sweep(
    pool: SamplePool,
    sizes: Sequence[int],
    k: int,
    replicates: int,
    checkpoints: Sequence[int] | None = None,
    seed: int = 0,
    threads: int = 1,
    norm: str = "l1",
    normalize: bool = False,
) -> ConvergenceReport:
    """One adaptive-batch curve per batch size, shared pool and checkpoints."""
    for b in sizes:
        if not 1 <= b <= pool.n:
            raise ValueError(f"batch size {b} outside [1, {pool.n}]")
    cps = list(checkpoints) if checkpoints is not None else default_sweep_checkpoints(pool.n, sizes)
    report = ConvergenceReport(cps, meta={"seed": seed, "k": k, "sizes": list(sizes), "pool_hash": pool.digest()})
    for b in sizes:
        spec = PolicySpec("batch", b=b, k=k, norm=norm, normalize=normalize)
        report.add(replicate_harness(pool, spec, replicates, cps, seed=seed, threads=threads))
    return report


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------


def format_output_csv(out: OutputPool) -> str:
    """Evaluated rows in sample-id order: ``sample_id,<names>,flags``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", *out.names, "flags"])
    for i in np.flatnonzero(out.evaluated):
        vals = ["" if out.failed[i] else repr(float(v)) for v in out.values[i]]
        w.writerow([int(i), *vals, "|".join(out.flags[i])])
    return buf.getvalue()


def write_output_csv(out: OutputPool, path: str | Path) -> None:
    Path(path).write_text(format_output_csv(out), encoding="utf-8", newline="\n")


def read_output_csv(path: str | Path, n: int) -> OutputPool:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "sample_id" or header[-1] != "flags":
            raise ValueError(f"{path}: unexpected header {header}")
        out = OutputPool(n, tuple(header[1:-1]))
        for r in reader:
            i = int(r[0])
            if not 0 <= i < n:
                raise ValueError(f"{path}: sample_id {i} outside pool of {n}")
            flags = tuple(f for f in r[-1].split("|") if f)
            failed = any(f.startswith("failed") for f in flags)
            out.values[i] = np.nan if failed else [float(v) for v in r[1:-1]]
            out.evaluated[i] = True
            out.failed[i] = failed
            out.flags[i] = flags
    return out
