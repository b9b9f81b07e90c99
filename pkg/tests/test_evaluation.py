import math

import numpy as np
import pytest

from mcreorder.evaluation import (
    Model,
    OutputPool,
    batch_size_sweep,
    identity_model,
    output_convergence,
    output_distances,
    phasefield_model,
    propagate,
    read_output_csv,
    surrogate_model,
    write_output_csv,
)
from mcreorder.phasefield import QOI_NAMES, PhaseFieldParams
from mcreorder.samples import DEMO_PRIORS, RandomStream, SelectionState, generate_pool, load_pool
from mcreorder.selection import BatchConfig, batch_reorder, greedy_reorder, random_reorder
from mcreorder.wasserstein import wass_vector

from oracles import manhattan_oracle


@pytest.fixture
def pool():
    return load_pool(np.random.default_rng(0).normal(size=(60, 3)))


def test_budget_zero_is_empty(pool):
    out = propagate(pool, range(pool.n), identity_model(3), 0)
    assert out.size == 0 and not out.evaluated.any()


def test_identity_full_budget_equals_pool(pool):
    order = random_reorder(pool, RandomStream(2))
    out = propagate(pool, order, identity_model(3), pool.n)
    assert out.complete
    assert out.values.tobytes() == pool.data.tobytes()
    assert out.as_pool().digest() == pool.digest()


def test_budget_bounds(pool):
    with pytest.raises(ValueError):
        propagate(pool, range(pool.n), identity_model(3), pool.n + 1)


def test_propagate_only_first_budget(pool):
    order = list(reversed(range(pool.n)))
    out = propagate(pool, order, identity_model(3), 5)
    assert set(np.flatnonzero(out.evaluated)) == set(order[:5])


def test_resumable_extension(pool):
    calls = []
    base = surrogate_model(3)
    model = Model("counted", lambda x, i: calls.append(i) or base.fn(x, i), 3, base.output_names)
    order = batch_reorder(pool, BatchConfig(6, 10), RandomStream(1))
    part = propagate(pool, order, model, 20)
    ext = propagate(pool, order, model, 45, previous=part)
    direct = propagate(pool, order, surrogate_model(3), 45)
    assert ext.equals(direct)
    assert len(calls) == 45 and len(set(calls)) == 45


def test_index_keyed_independent_of_order(pool):
    m = surrogate_model(3)
    a = propagate(pool, range(pool.n), m, pool.n)
    b = propagate(pool, np.random.default_rng(3).permutation(pool.n), m, pool.n, threads=4)
    assert a.equals(b)


def test_output_convergence_identity_bit_identical(pool):
    cps = [1, 5, 10, 30, 60]
    traces = [batch_reorder(pool, BatchConfig(5, 8), RandomStream(0).child(r)) for r in range(3)]
    full = propagate(pool, range(pool.n), identity_model(3), pool.n)
    curve = output_convergence(full, traces, cps)
    for r, tr in enumerate(traces):
        for c, m in enumerate(cps):
            want = wass_vector(pool, SelectionState(pool, tr.order[:m])).manhattan
            assert curve.values[r, c] == want
    assert np.all(curve.values[:, -1] == 0.0)


def test_output_distances_match_oracle(pool):
    full = propagate(pool, range(pool.n), surrogate_model(3), pool.n)
    order = greedy_reorder(pool).order
    got = output_distances(full, order, [3, 17])
    for v, m in zip(got, [3, 17]):
        assert v == pytest.approx(manhattan_oracle(full.values, order[:m]), abs=1e-12)


def test_failures_flagged_and_excluded(pool):
    def fn(x, i):
        if i % 7 == 0:
            raise RuntimeError("diverged")
        return x

    model = Model("flaky", fn, 3, ("a", "b", "c"))
    out = propagate(pool, range(pool.n), model, pool.n)
    bad = np.flatnonzero(out.failed)
    assert list(bad) == list(range(0, pool.n, 7))
    assert all(out.flags[i] == ("failed: diverged",) for i in bad)
    order = list(range(pool.n))
    d = output_distances(out, order, [1, 2, pool.n])
    assert math.isnan(d[0])  # only sample 0 picked and it failed
    valid = [i for i in order if i % 7]
    assert d[1] == pytest.approx(manhattan_oracle(pool.data[valid], [0]), abs=1e-12)
    assert d[2] == 0.0


def test_non_finite_output_is_failure(pool):
    model = Model("nan", lambda x, i: np.full(3, np.nan) if i == 2 else x, 3, ("a", "b", "c"))
    out = propagate(pool, range(pool.n), model, 5)
    assert out.failed[2] and not out.failed[1]


def test_output_csv_roundtrip(pool, tmp_path):
    model = Model("flaky", lambda x, i: (x, ("note",)) if i == 1 else x, 3, ("a", "b", "c"))
    out = propagate(pool, range(pool.n), model, 10)
    path = tmp_path / "q.csv"
    write_output_csv(out, path)
    text = path.read_text()
    assert text.splitlines()[0] == "sample_id,a,b,c,flags"
    back = read_output_csv(path, pool.n)
    assert back.equals(out)


def test_sweep_single_full_batch(pool):
    rep = batch_size_sweep(pool, [pool.n], k=5, replicates=3)
    (curve,) = rep.curves.values()
    assert rep.checkpoints == [pool.n]
    assert np.all(curve.values == 0.0)
    assert curve.iterations == [1, 1, 1]


def test_sweep_iteration_counts(pool):
    sizes = [7, 13, 25]
    rep = batch_size_sweep(pool, sizes, k=4, replicates=2, seed=9)
    for b in sizes:
        curve = rep.curves[f"batch_b{b}"]
        assert curve.iterations == [math.ceil(pool.n / b)] * 2
        assert curve.b == b
    assert rep.to_dict()["meta"]["pool_hash"] == pool.digest()


def test_sweep_rejects_oversized_batch(pool):
    with pytest.raises(ValueError):
        batch_size_sweep(pool, [pool.n + 1], k=2, replicates=1)


def test_phasefield_model_small_run():
    base = PhaseFieldParams(steps=800)
    pool = generate_pool(DEMO_PRIORS, 8, RandomStream(3))
    model = phasefield_model(base, seed=1)
    out = propagate(pool, range(8), model, 8, threads=4)
    assert out.values.shape == (8, len(QOI_NAMES))
    assert out.complete and not out.failed.any()
    assert np.all(out.values[:, 0] + out.values[:, 1] == 1.0)
    # sample-keyed noise: re-evaluating one sample alone reproduces its row
    again = propagate(pool, [5], model, 1)
    assert np.array_equal(again.values[5], out.values[5])


def test_empty_output_pool_defaults():
    out = OutputPool(3, ("a",))
    assert out.values.shape == (3, 1) and out.size == 0 and not out.complete
