"""
Permutation-test p-values for spatial autocorrelation on graphs.

Exit codes: 0 success, 2 input error, 3 infeasible request, 4 numeric
degeneracy that prevented every requested method.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .graph import ConnectivityClass, GraphError, classify_vertex, knn_weights, load_edge_list
from .inference import (
    ZERO_SCALE,
    NON_POSITIVE_VARIANCE,
    attach_empirical_beta,
    empirical_beta_transform,
    global_test,
    local_log_pvalue_beta,
    local_log_pvalue_subgauss,
    local_log_pvalue_zscore,
    local_threshold,
)
from .permutation import (
    InfeasibleRequest,
    PermutationMode,
    PermutationPlan,
    exhaustive_global_pvalue,
    exhaustive_local_pvalue,
    mc_global_pvalue,
    mc_local_pvalue,
)
from .report import build_manifest, dumps
from .simulation import (
    NotPositiveDefinite,
    NullStudyConfig,
    PowerStudyConfig,
    make_graph,
    power_csv,
    qq_csv,
    run_null_study,
    run_power_study,
)
from .special import reg_inc_beta, reg_upper_inc_gamma
from .stats import (
    DegenerateData,
    ObservationError,
    Statistic,
    Tail,
    global_statistic,
    lisa_moments,
    load_observations,
    local_gamma,
    local_statistic,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_DEGENERATE = 4

LOCAL_DEFAULT_PERMS = 10_000
GLOBAL_DEFAULT_PERMS = 500
SEEDED_METHODS = {"mc", "mc-product", "emp-beta"}


class InputError(Exception):
    """Bad command-line input; maps to exit code 2."""


class AllMethodsDegenerate(Exception):
    """No requested method produced a value; maps to exit code 4."""


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None


def _load_graph(path: str):
    try:
        return load_edge_list(_read(path))
    except GraphError as exc:
        raise InputError(f"{path}: {exc}") from None


def _load_obs(path: str, graph):
    try:
        return load_observations(_read(path), graph)
    except ObservationError as exc:
        raise InputError(f"{path}: {exc}") from None


def _weights(graph, k: int, threads: int):
    try:
        return knn_weights(graph, k, threads=threads)
    except GraphError as exc:
        raise InputError(str(exc)) from None


def _need_seed(args, methods: Sequence[str]) -> None:
    if args.seed is None and SEEDED_METHODS.intersection(methods):
        raise InputError("--seed is required for Monte Carlo methods")


def _emit(args, text: str) -> None:
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text, encoding="utf-8")


def _flags(args) -> dict[str, Any]:
    return {k: v for k, v in vars(args).items()}


def _exp(lp: float | None) -> float | None:
    return None if lp is None else math.exp(lp)


# ---------------------------------------------------------------------------
# lisa
# ---------------------------------------------------------------------------


def cmd_lisa(args) -> int:
    methods = list(dict.fromkeys(args.method or ["beta"]))
    _need_seed(args, methods)
    graph = _load_graph(args.edges)
    y = _load_obs(args.obs, graph)
    w = _weights(graph, args.k, args.threads)
    if args.weights_out:
        Path(args.weights_out).write_text(w.to_csv(), encoding="utf-8")
    if "exhaustive" in methods and w.n > 9:
        raise InfeasibleRequest(f"exhaustive enumeration needs n <= 9, got n = {w.n}")
    stat = Statistic(args.stat)
    tail = Tail(args.tail)
    perms = args.perms or LOCAL_DEFAULT_PERMS

    vertices, excluded = [], []
    produced = 0
    for i, vid in enumerate(graph.vertices):
        cls = classify_vertex(w, i)
        if cls is ConnectivityClass.DEGENERATE:
            excluded.append({"id": vid, "index": i, "reason": "degenerate-connectivity"})
            continue
        row = local_gamma(w, y, stat.kind, i)
        flags: list[str] = []
        if not row.s2 > 0:
            flags.append(ZERO_SCALE)
        try:
            value = local_statistic(w, y, stat, i)
        except DegenerateData:
            value = None
            flags.append("DegenerateData")
        rec: dict[str, Any] = {
            "id": vid,
            "index": i,
            "m": row.m,
            "connectivity": cls.value,
            "statistic": value,
            "gamma": row.gamma,
            "centre": row.centre,
            "threshold": local_threshold(row, args.literal_threshold),
            "s2": row.s2,
        }
        for m in methods:
            lp = p = None
            if m == "subgauss":
                lp = local_log_pvalue_subgauss(row, args.literal_threshold)
            elif m == "beta":
                lp = local_log_pvalue_beta(row, args.literal_threshold)
            elif m == "zscore" and value is not None:
                try:
                    lp = local_log_pvalue_zscore(value, lisa_moments(w, y, stat, i), tail)
                except DegenerateData:
                    lp = None
                if lp is None:
                    flags.append(NON_POSITIVE_VARIANCE)
            elif m == "mc" and value is not None:
                plan = PermutationPlan(
                    PermutationMode.RESTRICTED_LOCAL, perms, args.seed, tail, fixed=i, threads=args.threads
                )
                p = mc_local_pvalue(w, y, stat, i, plan)
            elif m == "exhaustive" and value is not None:
                p = exhaustive_local_pvalue(w, y, stat, i, tail)
            if lp is not None:
                rec[f"log_p_{m}"] = lp
                p = math.exp(lp)
            rec[f"p_{m}"] = p
            produced += p is not None
        rec["flags"] = flags
        vertices.append(rec)
    if produced == 0:
        raise AllMethodsDegenerate("no requested method produced a p-value")

    report = {
        "report": "lisa",
        "manifest": build_manifest("lisa", _flags(args), [("edges", args.edges), ("obs", args.obs)], args.seed),
        "statistic": stat.value,
        "proximity": stat.kind.value,
        "n": w.n,
        "k": w.k,
        "tail": tail.value,
        "threshold_mode": "literal" if args.literal_threshold else "centred",
        "methods": methods,
        "perms": perms if "mc" in methods else None,
        "vertices": vertices,
        "excluded": excluded,
    }
    _emit(args, dumps(report))
    return EXIT_OK


# ---------------------------------------------------------------------------
# gisa
# ---------------------------------------------------------------------------


def cmd_gisa(args) -> int:
    methods = list(dict.fromkeys(args.method or ["analytic"]))
    if args.empirical_beta is not None and "emp-beta" not in methods:
        methods.append("emp-beta")
    _need_seed(args, methods)
    graph = _load_graph(args.edges)
    y = _load_obs(args.obs, graph)
    w = _weights(graph, args.k, args.threads)
    if "exhaustive" in methods and w.n > 9:
        raise InfeasibleRequest(f"exhaustive enumeration needs n <= 9, got n = {w.n}")
    stat = Statistic(args.stat)
    kind = stat.kind
    tail = Tail(args.tail)
    perms = args.perms or GLOBAL_DEFAULT_PERMS
    r = args.empirical_beta or 10

    res = global_test(w, y, kind)
    try:
        gv = global_statistic(w, y, stat)
        value, excluded_idx = gv.value, gv.excluded
    except DegenerateData:
        value = None
        excluded_idx = {
            i: "degenerate-connectivity"
            for i in range(w.n)
            if classify_vertex(w, i) is ConnectivityClass.DEGENERATE
        }
        res.flags.append("DegenerateData")
    out: dict[str, Any] = {
        "statistic_value": value,
        "gamma": res.gamma,
        "centre": res.centre,
        "threshold": res.threshold,
        "eta": res.eta,
        "upsilon2": res.upsilon2,
        "varpi2": res.varpi2,
    }
    for m in methods:
        if m == "analytic":
            out["p_analytic"] = res.p_analytic
            out["log_p_analytic"] = res.log_p_analytic
        elif m == "emp-beta":
            eb = empirical_beta_transform(w, y, kind, r, args.seed, res)
            attach_empirical_beta(res, eb, r)
            out["p_emp_beta"] = eb.p_adjusted
            out["r"] = r
            out["emp_beta_samples"] = list(eb.samples)
            out["beta_params"] = None if eb.params is None else {"alpha": eb.params.alpha, "beta": eb.params.beta}
        elif m in ("mc", "mc-product"):
            mode = PermutationMode.SINGLE_GLOBAL if m == "mc" else PermutationMode.PRODUCT_GROUP_GLOBAL
            plan = PermutationPlan(mode, perms, args.seed, tail, threads=args.threads)
            out["p_" + m.replace("-", "_")] = mc_global_pvalue(w, y, kind, plan)
        elif m == "exhaustive":
            out["p_exhaustive"] = exhaustive_global_pvalue(w, y, kind, tail)
    out["flags"] = list(res.flags)

    report = {
        "report": "gisa",
        "manifest": build_manifest("gisa", _flags(args), [("edges", args.edges), ("obs", args.obs)], args.seed),
        "statistic": stat.value,
        "proximity": kind.value,
        "n": w.n,
        "k": w.k,
        "tail": tail.value,
        "methods": methods,
        "perms": perms if {"mc", "mc-product"}.intersection(methods) else None,
        "result": out,
        "excluded": [
            {"id": graph.vertices[i], "index": i, "reason": why} for i, why in sorted(excluded_idx.items())
        ],
    }
    _emit(args, dumps(report))
    return EXIT_OK


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------


def _study_graph(args):
    if args.edges:
        return _load_graph(args.edges), f"file:{Path(args.edges).name}", [("edges", args.edges)]
    name = args.graph or f"planar:{args.n}"
    try:
        return make_graph(name, args.seed), name, []
    except GraphError as exc:
        raise InputError(str(exc)) from None


def cmd_simulate_null(args) -> int:
    graph, name, inputs = _study_graph(args)
    try:
        cfg = NullStudyConfig(
            graph=name,
            distribution=args.dist,
            replicates=args.reps,
            statistics=tuple(args.stat or ["moran"]),
            methods=tuple(dict.fromkeys(args.method or ["beta"])),
            seed=args.seed,
            k=args.k,
            perms=args.perms or 999,
            scope=args.scope,
            empirical_beta=args.empirical_beta,
            literal_threshold=args.literal_threshold,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None
    try:
        study = run_null_study(cfg, graph=graph, threads=args.threads)
    except GraphError as exc:
        raise InputError(str(exc)) from None
    report = {"report": "null-study", "manifest": build_manifest("simulate-null", _flags(args), inputs, args.seed)}
    report.update(study.to_dict())
    _emit(args, dumps(report))
    if args.qq_csv:
        Path(args.qq_csv).write_text(qq_csv(study), encoding="utf-8")
    return EXIT_OK


def _parse_grid(text: str) -> tuple[float, ...]:
    try:
        grid = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise InputError(f"--c-grid: cannot parse {text!r}") from None
    if not grid or not all(math.isfinite(c) for c in grid):
        raise InputError("--c-grid must list finite numbers")
    return grid


def cmd_power_study(args) -> int:
    graph, name, inputs = _study_graph(args)
    methods = list(dict.fromkeys(args.method or ["analytic", "mc"]))
    if args.empirical_beta is not None or (args.stat == "geary" and args.dist == "exponential"):
        if "emp-beta" not in methods:
            methods.append("emp-beta")
    try:
        cfg = PowerStudyConfig(
            graph=name,
            distribution=args.dist,
            statistic=args.stat,
            c_grid=_parse_grid(args.c_grid),
            replicates=args.reps,
            perms=args.perms or GLOBAL_DEFAULT_PERMS,
            alpha=args.alpha,
            seed=args.seed,
            k=args.k,
            methods=tuple(methods),
            empirical_beta=args.empirical_beta or 10,
        )
        study = run_power_study(cfg, graph=graph, threads=args.threads)
    except NotPositiveDefinite as exc:
        raise InputError(str(exc)) from None
    except (ValueError, GraphError) as exc:
        raise InputError(str(exc)) from None
    report = {"report": "power-study", "manifest": build_manifest("power-study", _flags(args), inputs, args.seed)}
    report.update(study.to_dict())
    _emit(args, dumps(report))
    if args.power_csv:
        Path(args.power_csv).write_text(power_csv(study), encoding="utf-8")
    return EXIT_OK


def cmd_specfun_table(args) -> int:
    """Reference values of the special functions for cross-checking other builds."""
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["function", "x", "a", "b", "value"])
    for x in (0.0, 0.25, 1.0, 4.0, 16.0, 64.0):
        out.writerow(["Q", repr(x), "0.5", "", repr(reg_upper_inc_gamma(x, 0.5))])
    for a in (0.5, 2.0, 30.0, 1e3, 1e6):
        for x in (1e-6, 0.01, 0.5, 0.99):
            out.writerow(["I", repr(x), repr(a), "0.5", repr(reg_inc_beta(x, a, 0.5))])
    _emit(args, buf.getvalue())
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2**64)")
    return v


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--threads", type=_positive_int, default=1, help="worker threads (output does not depend on it)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spatperm", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--version", action="version", version=f"spatperm {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    stats = [s.value for s in Statistic]
    tails = [t.value for t in Tail]

    p = sub.add_parser("lisa", help="local tests at every vertex")
    p.add_argument("--edges", required=True, help="CSV edge list with header src,dst")
    p.add_argument("--obs", required=True, help="CSV observations with header id,value")
    p.add_argument("--stat", choices=stats, default="moran")
    p.add_argument("--k", type=_positive_int, default=1, help="neighbourhood order")
    p.add_argument(
        "--method", action="append", choices=["beta", "subgauss", "zscore", "mc", "exhaustive"],
        help="repeatable; default beta",
    )
    p.add_argument("--tail", choices=tails, default="two-sided", help="tail for zscore, mc and exhaustive")
    p.add_argument("--seed", type=_seed)
    p.add_argument("--perms", type=_positive_int, help=f"Monte Carlo permutations (default {LOCAL_DEFAULT_PERMS})")
    p.add_argument("--literal-threshold", action="store_true", help="use the uncentred gamma as threshold")
    p.add_argument("--weights-out", help="also write the dense weight matrix as CSV")
    _common(p)
    p.set_defaults(func=cmd_lisa)

    p = sub.add_parser("gisa", help="global test")
    p.add_argument("--edges", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--stat", choices=stats, default="moran")
    p.add_argument("--k", type=_positive_int, default=1)
    p.add_argument(
        "--method", action="append", choices=["analytic", "emp-beta", "mc", "mc-product", "exhaustive"],
        help="repeatable; default analytic",
    )
    p.add_argument("--empirical-beta", type=int, metavar="R", help="add the empirical beta adjustment with R draws")
    p.add_argument("--tail", choices=tails, default="two-sided")
    p.add_argument("--seed", type=_seed)
    p.add_argument("--perms", type=_positive_int, help=f"Monte Carlo permutations (default {GLOBAL_DEFAULT_PERMS})")
    _common(p)
    p.set_defaults(func=cmd_gisa)

    def study_args(p: argparse.ArgumentParser) -> None:
        src = p.add_mutually_exclusive_group()
        src.add_argument("--n", type=_positive_int, default=None, help="vertices of a seeded planar triangulation")
        src.add_argument("--graph", help="synthetic graph: planar:N, ring:N or grid:RxC")
        src.add_argument("--edges", help="CSV edge list")
        p.add_argument("--dist", choices=["gaussian", "exponential"], default="gaussian")
        p.add_argument("--reps", type=_positive_int, default=30)
        p.add_argument("--seed", type=_seed, required=True)
        p.add_argument("--k", type=_positive_int, default=1)
        p.add_argument("--perms", type=_positive_int)
        p.add_argument("--empirical-beta", type=int, metavar="R")
        _common(p)

    p = sub.add_parser("simulate-null", help="null uniformity study")
    study_args(p)
    p.set_defaults(n=338)
    p.add_argument("--stat", action="append", choices=stats, help="repeatable; default moran")
    p.add_argument(
        "--method", action="append", choices=["beta", "subgauss", "zscore", "mc", "analytic", "emp-beta", "mc-product"],
        help="repeatable; default beta",
    )
    p.add_argument("--scope", choices=["local", "global"], default="local")
    p.add_argument("--literal-threshold", action="store_true")
    p.add_argument("--qq-csv", help="write QQ plot data")
    p.set_defaults(func=cmd_simulate_null, empirical_beta=10)

    p = sub.add_parser("power-study", help="power of global tests against correlated data")
    study_args(p)
    p.set_defaults(n=100)
    p.add_argument("--stat", choices=["moran", "geary"], default="moran")
    p.add_argument("--c-grid", default="0,0.05,0.10,0.15", help="comma-separated correlation coefficients")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--method", action="append", choices=["analytic", "emp-beta", "mc", "mc-product"])
    p.add_argument("--power-csv", help="write power curve data")
    p.set_defaults(func=cmd_power_study)

    p = sub.add_parser("specfun-table", help=argparse.SUPPRESS)
    p.add_argument("--out")
    p.set_defaults(func=cmd_specfun_table)
    # keep the hidden command out of the usage listing
    sub._choices_actions = [a for a in sub._choices_actions if a.dest != "specfun-table"]
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, GraphError, ObservationError) as exc:
        print(f"spatperm: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleRequest as exc:
        print(f"spatperm: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except AllMethodsDegenerate as exc:
        print(f"spatperm: degenerate: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
