"""
Simulation studies: null uniformity of local and global p-values, and power
of global tests under Gaussian-correlated alternatives.

Every replicate draws from its own random stream keyed by the study seed and
replicate index, so reports are reproducible and independent of the number
of worker threads.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.spatial import Delaunay
from scipy.special import kolmogorov, log_ndtr

from .graph import ConnectivityClass, Graph, GraphError, WeightMatrix, classify_vertex, knn_weights
from .inference import (
    empirical_beta_transform,
    global_test,
    local_pvalue_beta,
    local_pvalue_subgauss,
    local_pvalue_zscore,
)
from .permutation import (
    PermutationMode,
    PermutationPlan,
    _map,
    derive_seed,
    mc_global_pvalue,
    mc_local_pvalue,
    stream,
)
from .stats import (
    DegenerateData,
    ObservationVector,
    Statistic,
    Tail,
    lisa_moments,
    local_gamma,
    local_statistic,
)

__all__ = [
    "AD_CRITICAL_1PCT",
    "KS_CRITICAL_LEVEL",
    "Distribution",
    "NotPositiveDefinite",
    "planar_triangulation",
    "ring_graph",
    "grid_graph",
    "make_graph",
    "simulate_iid",
    "correlation_factor",
    "simulate_correlated_gaussian",
    "simulate_correlated_exponential",
    "ADResult",
    "KSResult",
    "anderson_darling_uniform",
    "ks_uniform",
    "NullStudyConfig",
    "PowerStudyConfig",
    "StudyReport",
    "run_null_study",
    "run_power_study",
    "qq_csv",
    "power_csv",
]

# Asymptotic 99th percentile of A^2 for a fully specified null distribution.
AD_CRITICAL_1PCT = 3.857
KS_CRITICAL_LEVEL = 0.01
P_CLAMP = 1e-12

LOCAL_METHODS = ("beta", "subgauss", "zscore", "mc")
GLOBAL_METHODS = ("analytic", "emp-beta", "mc", "mc-product")


class Distribution(str, enum.Enum):
    GAUSSIAN = "gaussian"
    EXPONENTIAL = "exponential"


class NotPositiveDefinite(ValueError):
    """I + cA has a non-positive pivot."""


# ---------------------------------------------------------------------------
# Graph generators
# ---------------------------------------------------------------------------


def _ids(n: int) -> list[str]:
    width = len(str(n - 1))
    return [f"v{i:0{width}d}" for i in range(n)]


def planar_triangulation(n: int, seed: int) -> Graph:
    """Delaunay triangulation of ``n`` uniform points in the unit square."""
    if n < 3:
        raise GraphError("a triangulation needs at least 3 points")
    pts = stream(seed, "planar-points").random((n, 2))
    tri = Delaunay(pts)
    adj = np.zeros((n, n), dtype=np.int8)
    for simplex in tri.simplices:
        for a in simplex:
            adj[a, simplex] = 1
    np.fill_diagonal(adj, 0)
    return Graph.from_adjacency(adj, _ids(n))


def ring_graph(n: int) -> Graph:
    if n < 3:
        raise GraphError("a ring needs at least 3 vertices")
    idx = np.arange(n)
    adj = np.zeros((n, n), dtype=np.int8)
    adj[idx, (idx + 1) % n] = adj[(idx + 1) % n, idx] = 1
    return Graph.from_adjacency(adj, _ids(n))


def grid_graph(rows: int, cols: int) -> Graph:
    n = rows * cols
    if n < 2:
        raise GraphError("a grid needs at least 2 cells")
    adj = np.zeros((n, n), dtype=np.int8)
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                adj[i, i + 1] = adj[i + 1, i] = 1
            if r + 1 < rows:
                adj[i, i + cols] = adj[i + cols, i] = 1
    return Graph.from_adjacency(adj, _ids(n))


def make_graph(name: str, seed: int = 0) -> Graph:
    """Build a synthetic graph from ``planar:N``, ``ring:N`` or ``grid:RxC``."""
    kind, _, arg = name.partition(":")
    try:
        if kind == "planar":
            return planar_triangulation(int(arg), seed)
        if kind == "ring":
            return ring_graph(int(arg))
        if kind == "grid":
            r, c = arg.lower().split("x")
            return grid_graph(int(r), int(c))
    except ValueError as exc:
        if isinstance(exc, GraphError):
            raise
        raise GraphError(f"bad graph size in {name!r}") from None
    raise GraphError(f"unknown graph generator {name!r}")


# ---------------------------------------------------------------------------
# Data generators
# ---------------------------------------------------------------------------


def simulate_iid(dist: Distribution, n: int, rng: np.random.Generator) -> ObservationVector:
    """iid standard normal or unit-rate exponential observations."""
    if n < 1:
        raise ValueError("n must be positive")
    dist = Distribution(dist)
    if dist is Distribution.GAUSSIAN:
        return ObservationVector(rng.standard_normal(n))
    return ObservationVector(-np.log1p(-rng.random(n)))


def _first_bad_pivot(m: np.ndarray) -> tuple[int, float]:
    """Index and value of the smallest pivot of unpivoted elimination."""
    a = np.array(m, dtype=float)
    n = a.shape[0]
    best = (0, math.inf)
    for j in range(n):
        d = a[j, j]
        if d < best[1]:
            best = (j, d)
        if d <= 0:
            break
        col = a[j + 1 :, j]
        a[j + 1 :, j + 1 :] -= np.outer(col, col) / d
    return best


def correlation_factor(adjacency: np.ndarray, c: float) -> np.ndarray:
    """Lower Cholesky factor of ``I + c A``.

    Raises
    ------
    NotPositiveDefinite
        Naming the smallest elimination pivot when the matrix is not
        positive definite.
    """
    a = np.asarray(adjacency, dtype=float)
    m = np.eye(a.shape[0]) + c * a
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        j, d = _first_bad_pivot(m)
        raise NotPositiveDefinite(
            f"I + cA is not positive definite for c = {c!r}: pivot {j} is {d:.6g}"
        ) from None


def simulate_correlated_gaussian(
    adjacency: np.ndarray, c: float, rng: np.random.Generator, factor: np.ndarray | None = None
) -> ObservationVector:
    """Gaussian vector with covariance ``I + c A``."""
    L = correlation_factor(adjacency, c) if factor is None else factor
    return ObservationVector(L @ rng.standard_normal(L.shape[0]))


def simulate_correlated_exponential(
    adjacency: np.ndarray, c: float, rng: np.random.Generator, factor: np.ndarray | None = None
) -> ObservationVector:
    """Unit-rate exponential marginals joined by a Gaussian copula.

    ``I + c A`` is the correlation of the latent Gaussian, not of the
    exponential variables themselves.
    """
    L = correlation_factor(adjacency, c) if factor is None else factor
    g = L @ rng.standard_normal(L.shape[0])
    # -ln(1 - Phi(g)) evaluated as -ln Phi(-g) to keep the upper tail exact
    return ObservationVector(-log_ndtr(-g))


# ---------------------------------------------------------------------------
# Uniformity tests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ADResult:
    a2: float
    reject: bool


@dataclass(frozen=True)
class KSResult:
    d: float
    pvalue: float
    reject: bool


def _clamped_sorted(p) -> np.ndarray:
    u = np.sort(np.asarray(p, dtype=float))
    return np.clip(u, P_CLAMP, 1.0 - P_CLAMP)


def anderson_darling_uniform(p) -> ADResult:
    """Anderson-Darling test of U(0, 1) with a 1% rejection threshold."""
    u = _clamped_sorted(p)
    n = u.size
    if n < 8:
        raise ValueError(f"Anderson-Darling needs at least 8 values, got {n}")
    i = np.arange(1, n + 1)
    s = math.fsum((2 * i - 1) * (np.log(u) + np.log1p(-u[::-1])))
    a2 = -n - s / n
    return ADResult(a2, a2 > AD_CRITICAL_1PCT)


def ks_uniform(p) -> KSResult:
    """Kolmogorov-Smirnov test of U(0, 1) using the asymptotic distribution."""
    u = _clamped_sorted(p)
    n = u.size
    if n < 1:
        raise ValueError("need at least one value")
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - u), np.max(u - (i - 1) / n)))
    pv = float(kolmogorov(math.sqrt(n) * d))
    return KSResult(d, pv, pv < KS_CRITICAL_LEVEL)


# ---------------------------------------------------------------------------
# Study configuration and reports
# ---------------------------------------------------------------------------


def _plain(value: Any) -> Any:
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, np.generic):
        return value.item()
    return value


@dataclass(frozen=True)
class NullStudyConfig:
    """Null uniformity study.

    ``scope="local"`` tests every vertex in each replicate and runs the
    uniformity tests per replicate; ``scope="global"`` produces one global
    p-value per replicate and runs the uniformity tests across replicates.
    """

    graph: str = "planar:338"
    distribution: Distribution = Distribution.GAUSSIAN
    replicates: int = 30
    statistics: tuple[str, ...] = ("moran",)
    methods: tuple[str, ...] = ("beta",)
    seed: int = 0
    k: int = 1
    perms: int = 999
    scope: str = "local"
    empirical_beta: int = 10
    literal_threshold: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "distribution", Distribution(self.distribution))
        object.__setattr__(self, "statistics", tuple(Statistic(s).value for s in self.statistics))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.scope not in ("local", "global"):
            raise ValueError(f"scope must be 'local' or 'global', got {self.scope!r}")
        allowed = LOCAL_METHODS if self.scope == "local" else GLOBAL_METHODS
        for m in self.methods:
            if m not in allowed:
                raise ValueError(f"method {m!r} is not available for {self.scope} studies")
        if self.empirical_beta < 2:
            raise ValueError("empirical_beta must be at least 2")

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


@dataclass(frozen=True)
class PowerStudyConfig:
    """Power of global tests on data with covariance ``I + cA``.

    The latent covariance uses the graph adjacency; the tests use the
    order-``k`` weight matrix.
    """

    graph: str = "planar:100"
    distribution: Distribution = Distribution.GAUSSIAN
    statistic: str = "moran"
    c_grid: tuple[float, ...] = (0.0, 0.05, 0.10, 0.15)
    replicates: int = 200
    perms: int = 500
    alpha: float = 0.05
    seed: int = 0
    k: int = 1
    methods: tuple[str, ...] = ("analytic", "mc")
    empirical_beta: int = 10

    def __post_init__(self) -> None:
        object.__setattr__(self, "distribution", Distribution(self.distribution))
        object.__setattr__(self, "statistic", Statistic(self.statistic).value)
        object.__setattr__(self, "c_grid", tuple(float(c) for c in self.c_grid))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.c_grid:
            raise ValueError("c grid is empty")
        for m in self.methods:
            if m not in GLOBAL_METHODS:
                raise ValueError(f"method {m!r} is not a global method")
        if self.empirical_beta < 2:
            raise ValueError("empirical_beta must be at least 2")

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


@dataclass
class StudyReport:
    """Serializable study output: config echo, per-replicate results and summary."""

    study: str
    config: dict
    seed: int
    graph: dict
    replicates: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "study": self.study,
            "config": self.config,
            "seed": self.seed,
            "graph": self.graph,
            "replicates": self.replicates,
            "summary": self.summary,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StudyReport":
        return cls(d["study"], d["config"], d["seed"], d["graph"], d["replicates"], d["summary"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "StudyReport":
        return cls.from_dict(json.loads(text))


def _graph_info(g: Graph, w: WeightMatrix, source: str) -> dict:
    classes = [classify_vertex(w, i) for i in range(w.n)]
    return {
        "source": source,
        "n": g.n,
        "edges": len(g.edges),
        "k": w.k,
        "degenerate": sum(c is ConnectivityClass.DEGENERATE for c in classes),
        "high_connected": sum(c is ConnectivityClass.HIGH for c in classes),
    }


# ---------------------------------------------------------------------------
# Null study
# ---------------------------------------------------------------------------


def _local_pvalues(
    w: WeightMatrix, y: ObservationVector, stat: Statistic, method: str, cfg: NullStudyConfig, rep: int
) -> tuple[list[float], int]:
    """p-values over testable vertices and the number of unavailable vertices."""
    out: list[float] = []
    unavailable = 0
    for i in range(w.n):
        if classify_vertex(w, i) is ConnectivityClass.DEGENERATE:
            continue
        try:
            if method in ("beta", "subgauss"):
                row = local_gamma(w, y, stat.kind, i)
                fn = local_pvalue_beta if method == "beta" else local_pvalue_subgauss
                p = fn(row, literal=cfg.literal_threshold)
            elif method == "zscore":
                p = local_pvalue_zscore(local_statistic(w, y, stat, i), lisa_moments(w, y, stat, i))
            else:
                plan = PermutationPlan(
                    PermutationMode.RESTRICTED_LOCAL,
                    cfg.perms,
                    derive_seed(cfg.seed, "null-mc", rep),
                    fixed=i,
                )
                p = mc_local_pvalue(w, y, stat, i, plan)
        except DegenerateData:
            p = None
        if p is None:
            unavailable += 1
        else:
            out.append(p)
    return out, unavailable


def _global_pvalue(w, y, stat: Statistic, method: str, perms: int, seed: int, r: int, cache: dict) -> float:
    kind = stat.kind
    if "res" not in cache:
        cache["res"] = global_test(w, y, kind)
    res = cache["res"]
    if method == "analytic":
        return res.p_analytic
    if method == "emp-beta":
        return empirical_beta_transform(w, y, kind, r, derive_seed(seed, "alg1"), res).p_adjusted
    mode = PermutationMode.SINGLE_GLOBAL if method == "mc" else PermutationMode.PRODUCT_GROUP_GLOBAL
    return mc_global_pvalue(w, y, kind, PermutationPlan(mode, perms, derive_seed(seed, "global-mc")))


def _uniformity(p: list[float]) -> dict:
    out: dict[str, Any] = {"n": len(p)}
    if len(p) >= 8:
        ad = anderson_darling_uniform(p)
        out["ad_a2"] = ad.a2
        out["ad_reject"] = ad.reject
    else:
        out["ad_a2"] = None
        out["ad_reject"] = None
    if p:
        ks = ks_uniform(p)
        out["ks_d"] = ks.d
        out["ks_pvalue"] = ks.pvalue
        out["ks_reject"] = ks.reject
    return out


def run_null_study(cfg: NullStudyConfig, graph: Graph | None = None, threads: int = 1) -> StudyReport:
    """Simulate iid data and test p-value uniformity for each (statistic, method)."""
    g = graph if graph is not None else make_graph(cfg.graph, cfg.seed)
    w = knn_weights(g, cfg.k, threads=threads)
    stats = [Statistic(s) for s in cfg.statistics]
    keys = [(s, m) for s in stats for m in cfg.methods]

    def replicate(r: int) -> dict:
        y = simulate_iid(cfg.distribution, g.n, stream(cfg.seed, "null-data", r))
        results = []
        if cfg.scope == "local":
            for s, m in keys:
                p, unavailable = _local_pvalues(w, y, s, m, cfg, r)
                entry = {"statistic": s.value, "method": m, "pvalues": p, "unavailable": unavailable}
                entry.update(_uniformity(p))
                results.append(entry)
        else:
            seed = derive_seed(cfg.seed, "null-global", r)
            for s in stats:
                cache: dict = {}
                for m in cfg.methods:
                    p = _global_pvalue(w, y, s, m, cfg.perms, seed, cfg.empirical_beta, cache)
                    results.append({"statistic": s.value, "method": m, "pvalue": p})
        return {"replicate": r, "results": results}

    reps = _map(replicate, range(cfg.replicates), threads)
    summary = []
    for idx, (s, m) in enumerate(keys):
        row: dict[str, Any] = {"statistic": s.value, "method": m}
        if cfg.scope == "local":
            ad = [rep["results"][idx]["ad_reject"] for rep in reps]
            ks = [rep["results"][idx].get("ks_reject") for rep in reps]
            row["ad_rejections"] = sum(bool(x) for x in ad)
            row["ks_rejections"] = sum(bool(x) for x in ks)
            row["replicates"] = cfg.replicates
        else:
            row.update(_uniformity([rep["results"][idx]["pvalue"] for rep in reps]))
        summary.append(row)
    return StudyReport(
        study="null",
        config=cfg.to_dict(),
        seed=cfg.seed,
        graph=_graph_info(g, w, cfg.graph),
        replicates=reps,
        summary={"ad_critical_1pct": AD_CRITICAL_1PCT, "cells": summary},
    )


# ---------------------------------------------------------------------------
# Power study
# ---------------------------------------------------------------------------


def run_power_study(cfg: PowerStudyConfig, graph: Graph | None = None, threads: int = 1) -> StudyReport:
    """Rejection rates of global tests at level ``alpha`` across the c grid."""
    g = graph if graph is not None else make_graph(cfg.graph, cfg.seed)
    w = knn_weights(g, cfg.k, threads=threads)
    adj = g.adjacency()
    stat = Statistic(cfg.statistic)
    factors = []
    for c in cfg.c_grid:
        try:
            factors.append(correlation_factor(adj, c))
        except NotPositiveDefinite as exc:
            raise NotPositiveDefinite(f"c = {c!r} is invalid: {exc}") from None
    simulate = (
        simulate_correlated_gaussian
        if cfg.distribution is Distribution.GAUSSIAN
        else simulate_correlated_exponential
    )
    jobs = [(ci, r) for ci in range(len(cfg.c_grid)) for r in range(cfg.replicates)]

    def replicate(job: tuple[int, int]) -> dict:
        ci, r = job
        c = cfg.c_grid[ci]
        y = simulate(adj, c, stream(cfg.seed, "power-data", ci, r), factors[ci])
        seed = derive_seed(cfg.seed, "power-tests", ci, r)
        cache: dict = {}
        p = {m: _global_pvalue(w, y, stat, m, cfg.perms, seed, cfg.empirical_beta, cache) for m in cfg.methods}
        return {"c_index": ci, "replicate": r, "pvalues": p}

    reps = _map(replicate, jobs, threads)
    curves = []
    for ci, c in enumerate(cfg.c_grid):
        rows = [rep for rep in reps if rep["c_index"] == ci]
        for m in cfg.methods:
            rejections = sum(rep["pvalues"][m] <= cfg.alpha for rep in rows)
            power = rejections / len(rows)
            curves.append(
                {
                    "c": c,
                    "method": m,
                    "rejections": rejections,
                    "replicates": len(rows),
                    "power": power,
                    "se": math.sqrt(power * (1 - power) / len(rows)),
                }
            )
    return StudyReport(
        study="power",
        config=cfg.to_dict(),
        seed=cfg.seed,
        graph=_graph_info(g, w, cfg.graph),
        replicates=reps,
        summary={"alpha": cfg.alpha, "curves": curves},
    )


# ---------------------------------------------------------------------------
# Plot data
# ---------------------------------------------------------------------------


def qq_csv(report: StudyReport) -> str:
    """QQ source data: sorted p-values against plotting positions (i - 0.5) / n."""
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["statistic", "method", "replicate", "rank", "expected", "observed"])
    if report.study != "null":
        raise ValueError("QQ data comes from null studies")
    if report.config["scope"] == "local":
        for rep in report.replicates:
            for res in rep["results"]:
                for rank, (e, o) in enumerate(_qq_pairs(res["pvalues"]), start=1):
                    out.writerow([res["statistic"], res["method"], rep["replicate"], rank, repr(e), repr(o)])
    else:
        for cell in report.summary["cells"]:
            p = [
                res["pvalue"]
                for rep in report.replicates
                for res in rep["results"]
                if res["statistic"] == cell["statistic"] and res["method"] == cell["method"]
            ]
            for rank, (e, o) in enumerate(_qq_pairs(p), start=1):
                out.writerow([cell["statistic"], cell["method"], "", rank, repr(e), repr(o)])
    return buf.getvalue()


def _qq_pairs(p: list[float]) -> list[tuple[float, float]]:
    n = len(p)
    return [((i + 0.5) / n, float(v)) for i, v in enumerate(sorted(p))]


def power_csv(report: StudyReport) -> str:
    if report.study != "power":
        raise ValueError("power curves come from power studies")
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["statistic", "method", "c", "power", "se", "rejections", "replicates"])
    stat = report.config["statistic"]
    for row in report.summary["curves"]:
        out.writerow(
            [stat, row["method"], repr(row["c"]), repr(row["power"]), repr(row["se"]), row["rejections"], row["replicates"]]
        )
    return buf.getvalue()
