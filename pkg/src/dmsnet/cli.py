"""Command-line interface.

Exit codes: 0 success, 2 usage or validation error, 3 I/O error, 4 numeric
failure (an invariant breach detected at run time).

Every command writes ``<output>.manifest.json`` next to its main output.
Relative ``--out`` paths resolve against ``$DMSNET_OUTPUT_DIR`` when set.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from . import analysis, propagator, simulator, steady
from .distribution import DegreeDistribution, SchemaError, atomic_write, fmt, read_csv
from .model import DomainError, ModelParams

OUTPUT_DIR_ENV = "DMSNET_OUTPUT_DIR"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class InvariantError(RuntimeError):
    """A conservation law or other runtime invariant failed."""


class UsageError(ValueError):
    pass


def _out_path(value: str | None, default: str) -> Path:
    base = Path(os.environ.get(OUTPUT_DIR_ENV, "."))
    path = Path(value) if value else Path(default)
    return path if path.is_absolute() else base / path


def _sibling(path: Path, tag: str, suffix: str | None = None) -> Path:
    suffix = path.suffix if suffix is None else suffix
    return path.with_name(f"{path.stem}.{tag}{suffix}")


def _versions() -> dict:
    out = {"python": platform.python_version(), "numpy": np.__version__}
    for pkg in ("artifact", "scipy", "numba", "matplotlib"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            pass
    return out


def _write_manifest(main_output: Path, command: str, argv: list[str], started: float,
                    outputs: list[Path], **extra) -> Path:
    finished = time.time()
    manifest = {
        "command": command,
        "argv": list(argv),
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "finished": datetime.fromtimestamp(finished, timezone.utc).isoformat(),
        "elapsed_seconds": finished - started,
        "versions": _versions(),
        "outputs": [str(p) for p in outputs],
        **extra,
    }
    path = _sibling(main_output, "manifest", ".json")
    atomic_write(path, json.dumps(manifest, indent=1, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    raise TypeError(type(obj).__name__)


def _params(args) -> ModelParams:
    if args.m < 1:
        raise UsageError(f"--m must be >= 1, got {args.m}")
    if getattr(args, "A_rational", None) is not None:
        if args.A is not None:
            raise UsageError("give either --A or --A-rational, not both")
        return ModelParams.from_rational(args.m, args.A_rational)
    if args.A is None:
        raise UsageError("--A is required")
    return ModelParams(args.m, args.A)


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# -- commands -----------------------------------------------------------------

def cmd_simulate(args, argv) -> int:
    started = time.time()
    p = _params(args)
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    if args.replicas < 1:
        raise UsageError("--replicas must be >= 1")
    if not 0 <= args.seed < 2**64:
        raise UsageError("--seed must fit in 64 unsigned bits")
    cfg = simulator.GrowthConfig(p, args.steps, args.seed, args.edges, args.replicas)
    out = _out_path(args.out, "simulate.csv")
    outputs = [out]

    counts = np.zeros(1, dtype=np.int64)
    totals = []
    if args.edges:
        for r in range(cfg.replicas):
            net = simulator.grow(cfg, replica=r)
            c = net.counts()
            _check_counts(c, p, cfg.steps)
            totals.append(int(net.in_degree.sum()))
            counts = _add_counts(counts, c)
            epath = _sibling(out, "edges" if cfg.replicas == 1 else f"edges.r{r}")
            atomic_write(epath, net.edges_csv())
            outputs.append(epath)
    else:
        res = simulator.replicate(cfg, workers=args.workers)
        for c in res.counts:
            _check_counts(c, p, cfg.steps)
            totals.append(int((np.arange(c.size) * c).sum()))
            counts = _add_counts(counts, c)

    q = np.flatnonzero(counts)
    n_total = int(counts.sum())
    dist = DegreeDistribution(q, counts[q] / n_total, 0.0, p.to_dict())
    atomic_write(out, dist.to_csv(counts=counts[q]))
    _write_manifest(out, "simulate", argv, started, outputs,
                    config=cfg.to_dict(),
                    seeds={"base": cfg.seed, "replica_spawn_keys": list(range(cfg.replicas))},
                    totals={"nodes": n_total, "in_links_per_replica": totals})
    return EXIT_OK


def _add_counts(acc: np.ndarray, c: np.ndarray) -> np.ndarray:
    if c.size > acc.size:
        acc = np.pad(acc, (0, c.size - acc.size))
    acc[:c.size] += c
    return acc


def _check_counts(c: np.ndarray, p: ModelParams, steps: int) -> None:
    if int(c.sum()) != steps or int((np.arange(c.size) * c).sum()) != p.m * steps:
        raise InvariantError("link conservation violated: sum of in-degrees != m T")


def _check_mass(total: float, truncated: float, where: str) -> None:
    if abs(total + truncated - 1.0) > 1e-9:
        raise InvariantError(f"mass balance violated at {where}: {total + truncated!r}")


def cmd_propagate(args, argv) -> int:
    started = time.time()
    p = _params(args)
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    cps = args.checkpoints or [args.steps]
    if min(cps) < 1 or max(cps) > args.steps:
        raise UsageError(f"--checkpoints must lie in [1, {args.steps}]")
    out = _out_path(args.out, "propagate.csv")
    outputs = []
    many = args.checkpoints is not None and len(cps) > 1

    def target(t):
        return _sibling(out, f"t{t}") if many else out

    summary = []
    if args.mode == "aggregate":
        if args.node is not None:
            raise UsageError("--node applies to --mode per-node only")
        for st in propagator.iter_aggregate(p, args.steps, args.eps, cps):
            _check_mass(st.total, st.truncated_mass, f"t={st.t}")
            path = target(st.t)
            atomic_write(path, st.distribution(p).to_csv())
            outputs.append(path)
            summary.append({"t": st.t, "truncated_mass": st.truncated_mass,
                            "support_max": int(st.probs.size - 1)})
    else:
        if args.node is None:
            raise UsageError("--mode per-node requires --node")
        if not 1 <= args.node <= args.steps:
            raise UsageError(f"--node must lie in [1, {args.steps}]")
        wanted = set(cps)
        if min(cps) < args.node:
            raise UsageError("checkpoints must not precede the node's birth")
        for st in propagator.iter_per_node(p, args.node, args.steps):
            if st.t in wanted:
                _check_mass(math.fsum(st.probs), 0.0, f"t={st.t}")
                path = target(st.t)
                atomic_write(path, st.distribution().to_csv())
                outputs.append(path)
                summary.append({"t": st.t, "node": args.node})
    _write_manifest(out, "propagate", argv, started, outputs,
                    params=p.to_dict(), mode=args.mode, eps=args.eps, checkpoints=summary)
    return EXIT_OK


def cmd_steady(args, argv) -> int:
    started = time.time()
    p = _params(args)
    if p.A <= 0:
        raise UsageError("steady-state formulas require A > 0")
    if args.qmax < 0:
        raise UsageError("--qmax must be >= 0")
    if args.form == "recurrence":
        dist = steady.steady_recurrence(p, args.qmax)
    elif args.form == "gamma":
        dist = steady.steady_gamma_distribution(p, args.qmax)
    else:
        if p.A != p.m:
            raise UsageError(f"--form ba requires A = m (got m={p.m}, A={p.A})")
        dist = steady.steady_ba_distribution(p.m, args.qmax)
    out = _out_path(args.out, "steady.csv")
    atomic_write(out, dist.to_csv())
    _write_manifest(out, "steady", argv, started, [out], params=p.to_dict(), form=args.form,
                    tail_mass=dist.tail_mass, tail_exponent=steady.tail_exponent(p))
    return EXIT_OK


def cmd_compare(args, argv) -> int:
    started = time.time()
    left, left_counts = read_csv(args.left)
    right, _ = read_csv(args.right)
    labels = tuple(args.labels) if args.labels else (Path(args.left).name, Path(args.right).name)
    q_range = None
    if args.qmin is not None or args.qmax is not None:
        lo = args.qmin if args.qmin is not None else 0
        hi = args.qmax if args.qmax is not None else max(left.q_max, right.q_max)
        if lo > hi:
            raise UsageError("--qmin must not exceed --qmax")
        q_range = (lo, hi)
    counts = None
    if left_counts is not None:
        counts = {int(q): int(c) for q, c in zip(left.support, left_counts)}
    report = analysis.compare_report(left, right, labels, q_range, counts, args.min_expected)
    text = report.to_json()
    out = _out_path(args.out, "compare.json")
    atomic_write(out, text + "\n")
    print(text)
    _write_manifest(out, "compare", argv, started, [out])
    return EXIT_OK


def cmd_convergence(args, argv) -> int:
    started = time.time()
    p = _params(args)
    series = propagator.convergence_diagnostic(p, args.q, args.checkpoints, args.eps)
    out = _out_path(args.out, "convergence.csv")
    atomic_write(out, series.to_csv())
    _write_manifest(out, "convergence", argv, started, [out], params=p.to_dict(),
                    q=args.q, scaled_increment_decreasing=series.decreasing)
    sys.stdout.write(series.to_csv())
    return EXIT_OK


def cmd_firstpassage(args, argv) -> int:
    started = time.time()
    p = _params(args)
    if args.q < 1:
        raise UsageError("--q must be >= 1")
    if not 1 <= args.node <= args.t:
        raise UsageError("--node must lie in [1, --t]")
    table = propagator.first_passage(p, args.node, args.q, args.t)
    t0 = table.t0
    residual = propagator.verify_passage_identity(p, args.node, args.q, args.t) if args.t >= t0 else None
    direct = propagator.propagate_per_node(p, args.node, args.t)[args.q]
    out = _out_path(args.out, "firstpassage.csv")
    lines = ["q,i,s,f"] + [f"{args.q},{args.node},{s},{fmt(table[s])}"
                           for s in range(args.node, args.t + 1)]
    atomic_write(out, "\n".join(lines) + "\n")
    result = {"f": table[args.t], "t0": t0, "P_direct": direct, "identity_residual": residual}
    _write_manifest(out, "firstpassage", argv, started, [out], params=p.to_dict(), result=result)
    print(json.dumps(result))
    if residual is not None and residual > 1e-9:
        raise InvariantError(f"first-passage identity residual {residual!r} too large")
    return EXIT_OK


def cmd_plot(args, argv) -> int:
    started = time.time()
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    dist, _ = read_csv(args.input)
    q, pm = dist.support, dist.mass
    matplotlib.rcParams["svg.hashsalt"] = "dmsnet"
    fig, ax = plt.subplots(figsize=(6, 4.5))
    keep = pm > 0
    if args.loglog:
        keep &= q > 0
    ax.plot(q[keep], pm[keep], "o", ms=3, label=Path(args.input).name)
    if args.overlay_m is not None:
        op = ModelParams(args.overlay_m, args.overlay_A)
        qq = np.arange(max(int(q[keep].min()) if keep.any() else 0, 1 if args.loglog else 0),
                       max(int(q.max()), 1) + 1)
        ax.plot(qq, steady.steady_gamma(op, qq), "-", lw=1.2,
                label=f"steady state m={op.m}, A={op.A:g}")
    if args.loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
        try:
            fit = analysis.fit_tail(dist, args.fit_qmin, args.fit_qmax, "loglog-ls",
                                    m=args.overlay_m or 1)
            ax.set_title(f"tail slope {fit.slope:.3f} on q in [{fit.q_range[0]}, {fit.q_range[1]}]")
        except DomainError as exc:
            ax.set_title(f"no tail fit: {exc}")
    ax.set_xlabel("in-degree q")
    ax.set_ylabel("P(q)")
    ax.legend()
    out = _out_path(args.out, "plot.svg")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(f".{out.name}.tmp")
    fig.savefig(tmp, format="svg", metadata={"Date": None})
    plt.close(fig)
    os.replace(tmp, out)
    _write_manifest(out, "plot", argv, started, [out])
    return EXIT_OK


def cmd_replay(args, argv) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text())
        inner = manifest["argv"]
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{args.manifest}: not a run manifest ({exc})") from None
    if inner and inner[0] == "replay":
        raise UsageError("refusing to replay a replay")
    return main(inner)


# -- parser -------------------------------------------------------------------

def _model_flags(sp, rational=False):
    sp.add_argument("--m", type=int, required=True, help="links added per step")
    sp.add_argument("--A", type=float, default=None, help="initial attractiveness")
    if rational:
        sp.add_argument("--A-rational", dest="A_rational", default=None,
                        help="exact rational A such as 1/2 (integer-weight simulation)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dmsnet", allow_abbrev=False,
                                 description="Attractiveness-model growing networks: "
                                             "simulation, exact propagation, closed forms.")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", allow_abbrev=False, help="Monte Carlo growth")
    _model_flags(sp, rational=True)
    sp.add_argument("--steps", type=int, required=True, help="final node count T")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--replicas", type=int, default=1)
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--edges", action="store_true", help="also write the edge list")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("propagate", allow_abbrev=False, help="exact Markov-chain propagation")
    _model_flags(sp)
    sp.add_argument("--steps", type=int, required=True)
    sp.add_argument("--mode", choices=("aggregate", "per-node"), default="aggregate")
    sp.add_argument("--node", type=int, default=None, help="birth time of the node (per-node mode)")
    sp.add_argument("--checkpoints", type=_int_list, default=None)
    sp.add_argument("--eps", type=float, default=propagator.DEFAULT_EPS)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_propagate)

    sp = sub.add_parser("steady", allow_abbrev=False, help="closed-form steady state")
    _model_flags(sp)
    sp.add_argument("--qmax", type=int, default=1000)
    sp.add_argument("--form", choices=("recurrence", "gamma", "ba"), default="recurrence")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_steady)

    sp = sub.add_parser("compare", allow_abbrev=False, help="TV / KS / chi-square between two CSVs")
    sp.add_argument("left")
    sp.add_argument("right")
    sp.add_argument("--labels", nargs=2, default=None)
    sp.add_argument("--qmin", type=int, default=None)
    sp.add_argument("--qmax", type=int, default=None)
    sp.add_argument("--min-expected", type=float, default=analysis.DEFAULT_MIN_EXPECTED)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("convergence", allow_abbrev=False, help="P(q,t) convergence diagnostic")
    _model_flags(sp)
    sp.add_argument("--q", type=int, required=True)
    sp.add_argument("--checkpoints", type=_int_list, required=True)
    sp.add_argument("--eps", type=float, default=propagator.DEFAULT_EPS)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_convergence)

    sp = sub.add_parser("firstpassage", allow_abbrev=False, help="first-passage table and identity check")
    _model_flags(sp)
    sp.add_argument("--node", type=int, required=True)
    sp.add_argument("--q", type=int, required=True)
    sp.add_argument("--t", type=int, required=True)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_firstpassage)

    sp = sub.add_parser("plot", allow_abbrev=False, help="static SVG of a distribution CSV")
    sp.add_argument("input")
    sp.add_argument("--loglog", action="store_true")
    sp.add_argument("--overlay-m", type=int, default=None)
    sp.add_argument("--overlay-A", type=float, default=None)
    sp.add_argument("--fit-qmin", type=int, default=None)
    sp.add_argument("--fit-qmax", type=int, default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("replay", allow_abbrev=False, help="rerun the command recorded in a manifest")
    sp.add_argument("manifest")
    sp.set_defaults(func=cmd_replay)
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "overlay_m", None) is not None and args.overlay_A is None:
        parser.print_usage(sys.stderr)
        print("dmsnet: error: --overlay-m needs --overlay-A", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args, argv)
    except (UsageError, DomainError, SchemaError) as exc:
        print(f"dmsnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvariantError, propagator.SupportLimitError, FloatingPointError) as exc:
        print(f"dmsnet {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"dmsnet {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
