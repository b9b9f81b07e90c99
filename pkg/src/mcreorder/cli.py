"""Command-line front end.

    mcreorder gen       draw a sample pool from the configured priors
    mcreorder reorder   run a reordering policy, write the trace (and report)
    mcreorder simulate  propagate (trace-ordered) samples through a model
    mcreorder evaluate  input- and output-space convergence of given traces
    mcreorder compare   batch-size sweep plus baselines on one pool

Exit codes: 0 ok, 2 configuration, 3 input I/O, 4 simulation failure,
5 consistency (pool/trace hash mismatch).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config_file, merge
from .evaluation import (
    OutputPool,
    format_output_csv,
    identity_model,
    output_convergence,
    phasefield_model,
    propagate,
    read_output_csv,
    surrogate_model,
    batch_size_sweep,
)
from .phasefield import run as run_phasefield, write_snapshot
from .samples import RNG_NAME, PoolError, RandomStream, SamplePool, format_pool_csv, generate_pool, read_pool_csv
from .selection import (
    ConvergenceReport,
    PickEvent,
    PolicyCurve,
    PolicySpec,
    SelectionTrace,
    check_checkpoints,
    curve_values,
    replicate_harness,
)
from .wasserstein import Objective, WassersteinVector

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_SIM, EXIT_CONSISTENCY = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# I/O helpers
# ---------------------------------------------------------------------------


def _write(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    try:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc.strerror}") from exc


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _read_pool(path: str | None) -> SamplePool:
    if path is None:
        raise CliError(EXIT_CONFIG, "a pool CSV is required (--pool)")
    try:
        return read_pool_csv(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read pool {path}: {exc.strerror}") from exc
    except PoolError as exc:
        raise CliError(EXIT_IO, f"cannot read pool {path}: {exc}") from exc


def _meta(cfg: RunConfig, pool: SamplePool | None, **extra) -> dict:
    meta = {"tool": f"mcreorder {__version__}", "rng": RNG_NAME, "numpy": np.__version__}
    if pool is not None:
        meta["pool_hash"] = pool.digest()
        meta["pool_shape"] = [pool.n, pool.d]
    meta.update(extra)
    meta["config"] = cfg.semantic()
    return meta


def format_trace_jsonl(traces: list[SelectionTrace], meta: dict, timing: bool) -> str:
    """Header line ``{"meta": ...}`` then one object per iteration."""
    lines = [json.dumps({"meta": meta})]
    many = len(traces) > 1
    for r, tr in enumerate(traces):
        for e in tr.events:
            obj = e.to_dict(timing)
            if many:
                obj = {"rep": r, **obj}
            lines.append(json.dumps(obj))
    return "\n".join(lines) + "\n"


def read_trace_jsonl(path: str) -> tuple[dict, list[SelectionTrace]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read trace {path}: {exc.strerror}") from exc
    meta: dict = {}
    traces: dict[int, SelectionTrace] = {}
    try:
        for line in text.splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            if "meta" in obj:
                meta = obj["meta"]
                continue
            policy = meta.get("policy", "unknown")
            tr = traces.setdefault(int(obj.get("rep", 0)), SelectionTrace(policy))
            w = WassersteinVector(np.asarray(obj["w"], dtype=float), float(obj["manhattan"]))
            cum = (tr.events[-1].cumulative if tr.events else 0) + len(obj["picked"])
            tr.events.append(PickEvent(obj["iter"], obj["picked"], w, cum, obj.get("elapsed_ms") or 0.0))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CliError(EXIT_IO, f"malformed trace {path}: {exc}") from exc
    return meta, [traces[r] for r in sorted(traces)]


def _report_csv(report: ConvergenceReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "b", "m", "mean", "lo", "hi"])
    for label, b, m, mean, lo, hi in report.csv_rows():
        w.writerow([label, "" if b is None else b, m, repr(mean), repr(lo), repr(hi)])
    return buf.getvalue()


def _model(cfg: RunConfig, d: int):
    if cfg.model == "identity":
        return identity_model(d)
    if cfg.model == "surrogate":
        return surrogate_model(d)
    if d != 4:
        raise CliError(EXIT_CONFIG, f"the phasefield model needs 4 input columns, pool has {d}")
    return phasefield_model(cfg.phasefield_params(), cfg.seed)


def _checkpoints(cfg: RunConfig, n: int, default: list[int]) -> list[int]:
    try:
        return check_checkpoints(cfg.checkpoints if cfg.checkpoints else default, n)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen(cfg: RunConfig) -> int:
    pool = generate_pool(cfg.prior_specs(), cfg.n, RandomStream(cfg.seed))
    _write(cfg.output, format_pool_csv(pool.data))
    print(f"pool_hash {pool.digest()} n={pool.n} d={pool.d}", file=sys.stderr if cfg.output is None else sys.stdout)
    return EXIT_OK


def _spec(cfg: RunConfig) -> PolicySpec:
    try:
        return PolicySpec(cfg.policy, cfg.b if cfg.policy == "batch" else None,
                          cfg.k if cfg.policy == "batch" else None, norm=cfg.norm, normalize=cfg.normalize)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc


def cmd_reorder(cfg: RunConfig) -> int:
    pool = _read_pool(cfg.pool)
    spec = _spec(cfg)
    if spec.policy == "batch" and spec.b > pool.n:
        raise CliError(EXIT_CONFIG, f"batch size b={spec.b} exceeds pool size n={pool.n}")
    cps = _checkpoints(cfg, pool.n, list(range(1, pool.n + 1)))
    curve, traces = replicate_harness(pool, spec, cfg.replicates, cps, seed=cfg.seed,
                                      threads=cfg.threads, keep_traces=True)
    meta = _meta(cfg, pool, policy=spec.policy, label=spec.label)
    _write(cfg.output, format_trace_jsonl(traces, meta, cfg.timing))
    if cfg.replicates > 1 or cfg.report:
        report = ConvergenceReport(cps, meta=meta)
        report.add(curve)
        path = cfg.report or _sibling(cfg.output, ".report.json")
        if path:
            _write(path, _dumps(report.to_dict(cfg.timing)))
    if cfg.plot:
        report = ConvergenceReport(cps, meta=meta)
        report.add(curve)
        _write(cfg.plot, _report_csv(report))
    final = traces[0].events[-1].w.manhattan
    print(f"{spec.label}: {len(traces)} replicate(s), {traces[0].iterations} iterations, final manhattan {final:g}",
          file=sys.stderr)
    return EXIT_OK


def _sibling(path: str | None, suffix: str) -> str | None:
    return None if path is None else str(Path(path).with_suffix(suffix))


def _check_hash(meta: dict, pool: SamplePool, what: str) -> None:
    h = meta.get("pool_hash")
    if h is not None and h != pool.digest():
        raise CliError(EXIT_CONSISTENCY, f"{what} was produced for pool {h}, but the pool is {pool.digest()}")


def cmd_simulate(cfg: RunConfig) -> int:
    pool = _read_pool(cfg.pool)
    model = _model(cfg, pool.d)
    if cfg.traces:
        meta, traces = read_trace_jsonl(cfg.traces[0])
        _check_hash(meta, pool, cfg.traces[0])
        order = traces[0].order
    else:
        order = list(range(pool.n))
    budget = len(order) if cfg.budget is None else cfg.budget
    if not 0 <= budget <= len(order):
        raise CliError(EXIT_CONFIG, f"budget must lie in [0, {len(order)}]")
    previous = None
    if cfg.resume and cfg.output and Path(cfg.output).exists():
        side = _load_sidecar(cfg.output)
        _check_hash(side, pool, cfg.output)
        try:
            previous = read_output_csv(cfg.output, pool.n)
        except (ValueError, IndexError) as exc:
            raise CliError(EXIT_IO, f"cannot resume from {cfg.output}: {exc}") from exc
    out = propagate(pool, order, model, budget, previous=previous, threads=cfg.threads)
    _write(cfg.output, format_output_csv(out))
    if cfg.output:
        meta = _meta(cfg, pool, model=model.name, outputs=list(model.output_names))
        meta["config"].pop("budget", None)
        meta["config"].pop("resume", None)
        _write(cfg.output + ".meta.json", _dumps(meta))
    if cfg.snapshots and cfg.model == "phasefield":
        base = cfg.phasefield_params()
        root = RandomStream(cfg.seed)
        for i in order[:budget]:
            if out.failed[i]:
                continue
            p = base.with_sample(pool.data[i])
            traj = run_phasefield(p, root.child(int(i)))
            write_snapshot(Path(cfg.snapshots) / f"sample_{i:06d}", traj.snapshots[-1], p, {"sample_id": int(i)})
    failed = [int(i) for i in np.flatnonzero(out.failed)]
    if failed:
        for i in failed:
            print(f"sample {i}: {'; '.join(out.flags[i])}", file=sys.stderr)
        return EXIT_SIM
    return EXIT_OK


def _load_sidecar(path: str) -> dict:
    side = Path(path + ".meta.json")
    if not side.exists():
        return {}
    try:
        return json.loads(side.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_IO, f"cannot read {side}: {exc}") from exc


def cmd_evaluate(cfg: RunConfig) -> int:
    pool = _read_pool(cfg.pool)
    if not cfg.traces:
        raise CliError(EXIT_CONFIG, "evaluate needs at least one --trace")
    loaded = []
    for path in cfg.traces:
        meta, traces = read_trace_jsonl(path)
        _check_hash(meta, pool, path)
        for tr in traces:
            if sorted(tr.order) != list(range(pool.n)):
                raise CliError(EXIT_CONSISTENCY, f"{path}: trace is not a permutation of the pool")
        loaded.append((meta.get("label", traces[0].policy), traces))
    cps = _checkpoints(cfg, pool.n, list(range(1, pool.n + 1)))
    if cfg.qoi:
        _check_hash(_load_sidecar(cfg.qoi), pool, cfg.qoi)
        try:
            full = read_output_csv(cfg.qoi, pool.n)
        except (OSError, ValueError) as exc:
            raise CliError(EXIT_IO, f"cannot read outputs {cfg.qoi}: {exc}") from exc
        if not full.complete:
            raise CliError(EXIT_CONSISTENCY, f"{cfg.qoi} covers {full.size} of {pool.n} samples")
        model_name = "file"
    else:
        model = _model(cfg, pool.d)
        full = propagate(pool, range(pool.n), model, pool.n, threads=cfg.threads)
        model_name = model.name
    objective = Objective.for_pool(pool, cfg.norm, cfg.normalize)
    out_objective = Objective(cfg.norm)
    report = ConvergenceReport(cps, meta=_meta(cfg, pool, model=model_name))
    for label, traces in loaded:
        values = np.vstack([curve_values(pool, tr.order, cps, objective) for tr in traces])
        its = [tr.iterations for tr in traces]
        report.add(PolicyCurve(f"{label}/input", traces[0].policy, None, None, values, its, [0.0] * len(traces)))
        oc = output_convergence(full, traces, cps, f"{label}/output", out_objective)
        report.add(oc)
    _write(cfg.report or cfg.output, _dumps(report.to_dict()))
    if cfg.plot:
        _write(cfg.plot, _report_csv(report))
    return EXIT_OK


def cmd_compare(cfg: RunConfig) -> int:
    pool = _read_pool(cfg.pool)
    bad = [b for b in cfg.sizes if b > pool.n]
    if bad:
        raise CliError(EXIT_CONFIG, f"batch sizes {bad} exceed pool size n={pool.n}")
    default = sorted({pool.n, *[m for b in cfg.sizes for m in range(b, pool.n, b)]})
    cps = _checkpoints(cfg, pool.n, default)
    k = cfg.k if cfg.k is not None else 500
    report = batch_size_sweep(pool, cfg.sizes, k, cfg.replicates, cps, seed=cfg.seed, threads=cfg.threads,
                              norm=cfg.norm, normalize=cfg.normalize)
    if cfg.include_random:
        report.add(replicate_harness(pool, PolicySpec("random", norm=cfg.norm, normalize=cfg.normalize),
                                     cfg.replicates, cps, seed=cfg.seed, threads=cfg.threads))
    if cfg.include_greedy:
        report.add(replicate_harness(pool, PolicySpec("greedy", norm=cfg.norm, normalize=cfg.normalize),
                                     1, cps, seed=cfg.seed))
    report.meta = _meta(cfg, pool, k=k, sizes=list(cfg.sizes))
    _write(cfg.report or cfg.output, _dumps(report.to_dict(cfg.timing)))
    if cfg.plot:
        _write(cfg.plot, _report_csv(report))
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "reorder": cmd_reorder,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=100, max_help_position=32)


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("common")
    g.add_argument("--config", help="JSON config file; flags override its values")
    g.add_argument("--check-config", action="store_true", help="validate the merged config and exit")
    g.add_argument("--seed", type=int, help="64-bit root seed")
    g.add_argument("--threads", type=int, help="worker threads (default: all cores); results do not depend on it")
    g.add_argument("-o", "--output", help="main output file (default: stdout)")


def _pool_arg(p):
    p.add_argument("--pool", help="pool CSV (header x0,...,x{d-1})")


def _policy_args(p):
    p.add_argument("--policy", choices=["greedy", "batch", "random"], help="reordering policy")
    p.add_argument("--b", type=int, help="batch size")
    p.add_argument("--k", type=int, help="candidate batches per iteration")


def _report_args(p):
    p.add_argument("--replicates", type=int, help="number of replicates")
    p.add_argument("--checkpoints", type=int, nargs="+", help="picked counts m at which to report")
    p.add_argument("--report", help="report JSON path")
    p.add_argument("--plot", help="tidy CSV policy,b,m,mean,lo,hi")
    p.add_argument("--norm", choices=["l1", "l2", "linf"], help="aggregation of per-dimension distances")
    p.add_argument("--normalize", action="store_true", default=None,
                   help="divide each dimension's distance by the pool standard deviation")


def _model_arg(p):
    p.add_argument("--model", choices=["identity", "surrogate", "phasefield"], help="model to propagate through")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcreorder",
        description="Reorder Monte Carlo samples so that prefixes match the full pool's distribution early.",
        formatter_class=_formatter,
    )
    parser.add_argument("--version", action="version", version=f"mcreorder {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("gen", help="draw a sample pool from priors", formatter_class=_formatter)
    p.add_argument("--priors", help="JSON file with a 'priors' list (default: demo [c*, W, kappa, M] priors)")
    p.add_argument("--n", type=int, help="number of samples")
    _common(p)

    p = sub.add_parser("reorder", help="reorder a pool with a policy", formatter_class=_formatter)
    _pool_arg(p)
    _policy_args(p)
    _report_args(p)
    p.add_argument("--timing", action="store_true", default=None, help="record wall-clock times in outputs")
    _common(p)

    p = sub.add_parser("simulate", help="propagate samples through a model", formatter_class=_formatter)
    _pool_arg(p)
    _model_arg(p)
    p.add_argument("--trace", dest="traces", action="append", help="trace JSONL giving the propagation order")
    p.add_argument("--budget", type=int, help="propagate only the first BUDGET samples of the order")
    p.add_argument("--resume", action="store_true", default=None, help="reuse rows already in the output CSV")
    p.add_argument("--snapshots", help="directory for final phase-field fields (CSV + JSON sidecar)")
    _common(p)

    p = sub.add_parser("evaluate", help="input/output-space convergence of traces", formatter_class=_formatter)
    _pool_arg(p)
    _model_arg(p)
    p.add_argument("--trace", dest="traces", action="append", help="trace JSONL (repeatable)")
    p.add_argument("--qoi", help="complete output CSV from 'simulate' (instead of running --model)")
    _report_args(p)
    _common(p)

    p = sub.add_parser("compare", help="batch-size sweep and baselines", formatter_class=_formatter)
    _pool_arg(p)
    p.add_argument("--sizes", type=int, nargs="+", help="batch sizes to sweep")
    p.add_argument("--k", type=int, help="candidate batches per iteration")
    p.add_argument("--no-random", dest="include_random", action="store_false", default=None,
                   help="skip the random baseline")
    p.add_argument("--greedy", dest="include_greedy", action="store_true", default=None,
                   help="add the one-at-a-time greedy policy")
    p.add_argument("--timing", action="store_true", default=None, help="record wall-clock times in outputs")
    _report_args(p)
    _common(p)
    return parser


def _resolve(args: argparse.Namespace) -> RunConfig:
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "check_config", "priors")}
    file_values: dict = {}
    if args.config:
        file_values = load_config_file(args.config)
    if getattr(args, "priors", None):
        pri = load_config_file(args.priors)
        if "priors" not in pri:
            raise ConfigError(f"{args.priors}: no 'priors' key")
        file_values = {**file_values, "priors": pri["priors"]}
    return merge(file_values, flags)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args)
        if args.check_config:
            print(json.dumps(cfg.to_dict(), indent=2))
            return EXIT_OK
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"mcreorder: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(f"mcreorder: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
