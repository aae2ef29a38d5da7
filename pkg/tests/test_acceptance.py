"""Acceptance criteria, each run at its stated tolerance.

Every test records a one-line PASS/FAIL verdict; the lines are echoed as they
happen and collected again in the pytest terminal summary.
"""

import json
import math
import time

import numpy as np
import pytest

from conftest import random_connected_adjacency, weights_from_adjacency
from oracles import beta_cdf_quadrature
from spatperm.cli import main
from spatperm.graph import ConnectivityClass, classify_vertex
from spatperm.inference import local_pvalue_beta, local_pvalue_subgauss
from spatperm.permutation import (
    PermutationMode,
    PermutationPlan,
    exhaustive_local_pvalue,
    mc_local_pvalue,
)
from spatperm.special import check_composition_bound, check_half_binomial, reg_inc_beta, reg_upper_inc_gamma
from spatperm.stats import ObservationVector, ProximityKind, Statistic, local_gamma

RESULTS: list[str] = []


def verdict(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def _testable(w):
    return [i for i in range(w.n) if classify_vertex(w, i) is not ConnectivityClass.DEGENERATE]


def _random_instance(rng):
    n = int(rng.integers(5, 9))
    w = weights_from_adjacency(random_connected_adjacency(rng, n, 0.3))
    if rng.random() < 0.5:
        y = rng.standard_normal(n)
    else:
        y = rng.exponential(size=n)
    return w, ObservationVector(y)


def test_criterion_1_bound_dominance():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    instances = checks = 0
    violations = {"subgauss": 0, "beta": 0}
    worst = (0.0, None)
    while instances < 1000:
        w, y = _random_instance(rng)
        if not _testable(w):
            continue
        instances += 1
        for kind in ProximityKind:
            for i in _testable(w):
                exact = exhaustive_local_pvalue(w, y, kind, i)
                row = local_gamma(w, y, kind, i)
                checks += 1
                for name, p in (("subgauss", local_pvalue_subgauss(row)), ("beta", local_pvalue_beta(row))):
                    if exact > p + 1e-12:
                        violations[name] += 1
                        if exact - p > worst[0]:
                            worst = (exact - p, (name, kind.value, w.n, i, exact, p))
    elapsed = time.perf_counter() - start
    ok = violations["subgauss"] == 0 and violations["beta"] == 0 and elapsed < 120
    detail = (
        f"{instances} instances, {checks} vertex tests, violations subgauss={violations['subgauss']} "
        f"beta={violations['beta']}, {elapsed:.1f}s"
    )
    if worst[1] is not None:
        name, kind, n, i, exact, p = worst[1]
        detail += f"; worst {name}/{kind} n={n} vertex {i}: exact {exact:.4g} > bound {p:.4g}"
    assert verdict(1, ok, detail), detail


def _cli_json(tmp_path_factory, name, argv):
    out = tmp_path_factory.mktemp(name) / "report.json"
    start = time.perf_counter()
    assert main([*map(str, argv), "--out", str(out)]) == 0
    return out.read_bytes(), time.perf_counter() - start


NULL_ARGS = {
    dist: [
        "simulate-null", "--n", 338, "--dist", dist, "--stat", "moran", "--stat", "geary",
        "--method", "beta", "--method", "zscore", "--reps", 30, "--seed", 42,
    ]
    for dist in ("gaussian", "exponential")
}
POWER_ARGS = [
    "power-study", "--n", 100, "--dist", "gaussian", "--stat", "moran", "--c-grid", "0,0.05,0.10,0.15",
    "--reps", 200, "--perms", 500, "--alpha", 0.05, "--method", "analytic", "--method", "mc", "--seed", 3,
]


@pytest.fixture(scope="module")
def null_runs(tmp_path_factory):
    return {d: _cli_json(tmp_path_factory, f"null-{d}", [*a, "--threads", 4]) for d, a in NULL_ARGS.items()}


@pytest.fixture(scope="module")
def power_run(tmp_path_factory):
    return _cli_json(tmp_path_factory, "power", [*POWER_ARGS, "--threads", 4])


def test_criterion_2_null_uniformity(null_runs):
    parts, ok = [], True
    elapsed = sum(t for _, t in null_runs.values())
    for dist, (raw, _) in null_runs.items():
        for cell in json.loads(raw)["summary"]["cells"]:
            count = cell["ad_rejections"]
            if cell["method"] == "beta":
                good = count <= 6
            elif dist == "exponential":
                good = count >= 28
            else:
                good = True
            ok &= good
            parts.append(f"{cell['method']}/{cell['statistic']}/{dist}={count}/30{'' if good else '!'}")
    ok &= elapsed < 600
    detail = "AD rejections " + ", ".join(parts) + f"; {elapsed:.1f}s"
    assert verdict(2, ok, detail), detail


def test_criterion_3_power_parity(power_run):
    raw, elapsed = power_run
    curves = json.loads(raw)["summary"]["curves"]
    by_c: dict[float, dict[str, float]] = {}
    for row in curves:
        by_c.setdefault(row["c"], {})[row["method"]] = row["power"]
    gaps = {c: abs(v["analytic"] - v["mc"]) for c, v in by_c.items()}
    ok = sorted(by_c) == [0.0, 0.05, 0.10, 0.15] and all(g <= 0.10 for g in gaps.values()) and elapsed < 600
    detail = ", ".join(
        f"c={c}: analytic {v['analytic']:.3f} mc {v['mc']:.3f}" for c, v in sorted(by_c.items())
    ) + f"; max gap {max(gaps.values()):.3f}; {elapsed:.1f}s"
    assert verdict(3, ok, detail), detail


def test_criterion_4_getis_ord_equivalence():
    rng = np.random.default_rng(404)
    compared = mismatches = 0
    for inst in range(50):
        n = int(rng.integers(6, 30))
        w = weights_from_adjacency(random_connected_adjacency(rng, n, 0.15))
        y = ObservationVector(rng.exponential(size=n))
        for i in _testable(w):
            if not y.values[i] > y.mean:
                continue
            plan = PermutationPlan(PermutationMode.RESTRICTED_LOCAL, 999, 1000 + inst, "upper", fixed=i)
            compared += 1
            mismatches += mc_local_pvalue(w, y, Statistic.MORAN, i, plan) != mc_local_pvalue(
                w, y, Statistic.GETIS_G_STAR, i, plan
            )
    ok = mismatches == 0 and compared > 0
    detail = f"{compared} vertices over 50 instances, {mismatches} unequal p-value pairs"
    assert verdict(4, ok, detail), detail


def test_criterion_5_mc_calibration():
    rng = np.random.default_rng(505)
    B = 5000
    cases = within = 0
    while cases < 500:
        w, y = _random_instance(rng)
        testable = _testable(w)
        if not testable:
            continue
        i = int(rng.choice(testable))
        kind = ProximityKind.MORAN_CROSS if rng.random() < 0.5 else ProximityKind.GEARY_SQUARE
        exact = exhaustive_local_pvalue(w, y, kind, i)
        plan = PermutationPlan(PermutationMode.RESTRICTED_LOCAL, B, 5000 + cases, fixed=i)
        p = mc_local_pvalue(w, y, kind, i, plan)
        within += abs(p - exact) <= 3 * math.sqrt(exact * (1 - exact) / B)
        cases += 1
    ok = within >= 0.99 * cases
    detail = f"{within}/{cases} within 3 binomial SE ({100 * within / cases:.1f}%, need 99%)"
    assert verdict(5, ok, detail), detail


def _beta_grid():
    grid = []
    for a in np.geomspace(0.5, 1e6, 10):
        for b in (0.5, 1.0, 3.7, 20.0):
            mean = a / (a + b)
            sd = math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))
            xs = list(np.linspace(0.02, 0.98, 12))
            xs += [x for x in mean + sd * np.linspace(-4, 4, 13)]
            for x in xs:
                grid.append((float(min(max(x, 1e-9), 1 - 1e-9)), float(a), b))
    return grid


def test_criterion_6_special_functions():
    grid = _beta_grid()
    beta_err = max(abs(reg_inc_beta(x, a, b) - beta_cdf_quadrature(x, a, b)) for x, a, b in grid)
    xs = np.linspace(0.0, 100.0, 10_001)
    q_err = max(abs(reg_upper_inc_gamma(float(x), 0.5) - math.erfc(math.sqrt(x))) for x in xs)
    ok = len(grid) >= 1000 and beta_err <= 1e-10 and q_err <= 1e-12
    detail = (
        f"reg_inc_beta max |err| {beta_err:.2e} over {len(grid)} points (a up to 1e6); "
        f"Q(x;1/2) vs erfc max |err| {q_err:.2e} on [0, 100]"
    )
    assert verdict(6, ok, detail), detail


def test_criterion_7_summation_inequalities():
    cs = [0.01] + [round(0.1 * k, 1) for k in range(1, 10)] + [0.99]
    half_fail = [(q, c) for q in range(1, 26) for c in cs if not check_half_binomial(q, c)]
    rng = np.random.default_rng(707)
    comp_total = comp_fail = 0
    for n in range(1, 6):
        for p in range(1, 7):
            for _ in range(100):
                comp_total += 1
                comp_fail += not check_composition_bound(n, p, list(rng.exponential(size=n)))
    ok = not half_fail and comp_fail == 0
    detail = (
        f"half-binomial {25 * len(cs) - len(half_fail)}/{25 * len(cs)} true; "
        f"composition bound {comp_total - comp_fail}/{comp_total} true"
    )
    assert verdict(7, ok, detail), detail


def test_criterion_8_determinism(tmp_path_factory, null_runs, power_run):
    same = []
    for dist, args in NULL_ARGS.items():
        again, _ = _cli_json(tmp_path_factory, f"null-{dist}-t1", [*args, "--threads", 1])
        same.append(again == null_runs[dist][0])
    again, _ = _cli_json(tmp_path_factory, "power-t1", [*POWER_ARGS, "--threads", 1])
    same.append(again == power_run[0])
    again, _ = _cli_json(tmp_path_factory, "power-t4", [*POWER_ARGS, "--threads", 4])
    same.append(again == power_run[0])
    ok = all(same)
    detail = f"{sum(same)}/{len(same)} reruns byte-identical (threads 4 vs 1 and 4 vs 4)"
    assert verdict(8, ok, detail), detail
