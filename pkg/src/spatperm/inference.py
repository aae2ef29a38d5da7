"""
Analytic p-values for restricted-permutation tests of gamma indices.

Local tests use a sub-Gaussian tail bound on the permutation distribution of
``gamma_i`` and its beta-corrected refinement; for vertices connected to more
than half the graph the roles of ``m_i`` and ``n - m_i - 1`` are swapped.
Global tests use a half-order upper incomplete gamma tail, optionally
recalibrated by a beta distribution fitted to a few product-group
permutations.  All bounds are evaluated in log space and then clamped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy.special import log_ndtr

from .graph import ConnectivityClass, WeightMatrix
from .permutation import product_group_gammas
from .special import (
    BetaParams,
    DegenerateFit,
    beta_mom_fit,
    ln_gamma_ratio,
    log_reg_inc_beta,
    log_reg_upper_inc_gamma,
    reg_inc_beta,
)
from .stats import (
    LocalRowSummary,
    MomentSummary,
    ProximityKind,
    Tail,
    as_observations,
    global_gamma,
)

__all__ = [
    "ZERO_SCALE",
    "NON_POSITIVE_VARIANCE",
    "DEGENERATE_FIT",
    "SMALL_N",
    "BoundShape",
    "bound_shape",
    "local_threshold",
    "local_log_pvalue_subgauss",
    "local_pvalue_subgauss",
    "local_log_pvalue_beta",
    "local_pvalue_beta",
    "local_log_pvalue_zscore",
    "local_pvalue_zscore",
    "GlobalTestResult",
    "global_test",
    "global_log_pvalue",
    "global_pvalue",
    "EmpiricalBetaResult",
    "beta_adjust",
    "empirical_beta_transform",
]

ZERO_SCALE = "ZeroScale"
NON_POSITIVE_VARIANCE = "NonPositiveVariance"
DEGENERATE_FIT = "DegenerateFit"
SMALL_N = "SmallNRemainder"


def _clamp_log(lp: float) -> float:
    return min(0.0, lp)


# ---------------------------------------------------------------------------
# Local bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundShape:
    """Constants of the local bound for one (m, n) pair.

    The sub-Gaussian bound is ``exp(-rate * t^2 / s^2)`` and the beta
    correction is ``C0 * I(u; a, 1/2)`` with ``ln C0 = log_c0``.
    """

    rate: float
    a: float
    log_c0: float
    connectivity: ConnectivityClass


def bound_shape(m: int, n: int) -> BoundShape:
    """Rate, beta shape and constant for a vertex of degree ``m`` in ``n`` vertices."""
    if not 0 < m < n - 1:
        raise ValueError(f"degree {m} is degenerate for n = {n}")
    rest = n - m - 1
    if m > n / 2:
        rate = rest / (2.0 * m * m)
        a = (n - 1) * m / (rest * rest)
        cls = ConnectivityClass.HIGH
    else:
        rate = m / (2.0 * rest * rest)
        a = (n - 1) * rest / (m * m)
        cls = ConnectivityClass.LOW
    log_c0 = 0.5 * math.log(a) - ln_gamma_ratio(a, 0.5)
    return BoundShape(rate, a, log_c0, cls)


def local_threshold(row: LocalRowSummary, literal: bool = False) -> float:
    """|gamma_i - m_i lambda_bar| by default; |gamma_i| when ``literal`` is set."""
    return abs(row.gamma) if literal else abs(row.gamma - row.centre)


def _log_u(row: LocalRowSummary, literal: bool) -> tuple[float, BoundShape] | None:
    shape = bound_shape(row.m, row.n)
    if not row.s2 > 0:
        return None
    t = local_threshold(row, literal)
    return -shape.rate * t * t / row.s2, shape


def local_log_pvalue_subgauss(row: LocalRowSummary, literal: bool = False) -> float:
    """Natural log of the sub-Gaussian bound (0 when the row has no spread)."""
    res = _log_u(row, literal)
    if res is None:
        return 0.0
    return _clamp_log(res[0])


def local_pvalue_subgauss(row: LocalRowSummary, literal: bool = False) -> float:
    """Sub-Gaussian bound on P(|gamma_i(pi) - m_i lambda_bar| >= t), clamped to [0, 1]."""
    return math.exp(local_log_pvalue_subgauss(row, literal))


def local_log_pvalue_beta(row: LocalRowSummary, literal: bool = False) -> float:
    """Natural log of ``C0 * I(u; a, 1/2)`` with ``u`` the unclamped sub-Gaussian bound."""
    res = _log_u(row, literal)
    if res is None:
        return 0.0
    log_u, shape = res
    return _clamp_log(shape.log_c0 + log_reg_inc_beta(log_u, shape.a, 0.5))


def local_pvalue_beta(row: LocalRowSummary, literal: bool = False) -> float:
    """Beta-corrected bound, clamped to [0, 1]."""
    return math.exp(local_log_pvalue_beta(row, literal))


def local_log_pvalue_zscore(value: float, moments: MomentSummary, tail: Tail = Tail.TWO_SIDED) -> float | None:
    """Log normal-tail probability of the standardized statistic, or ``None``
    when the variance is not positive."""
    if not moments.valid:
        return None
    z = (value - moments.mean) / math.sqrt(moments.variance)
    tail = Tail(tail)
    if tail is Tail.UPPER:
        return float(log_ndtr(-z))
    if tail is Tail.LOWER:
        return float(log_ndtr(z))
    return _clamp_log(math.log(2.0) + float(log_ndtr(-abs(z))))


def local_pvalue_zscore(value: float, moments: MomentSummary, tail: Tail = Tail.TWO_SIDED) -> float | None:
    lp = local_log_pvalue_zscore(value, moments, tail)
    return None if lp is None else math.exp(lp)


# ---------------------------------------------------------------------------
# Global bound
# ---------------------------------------------------------------------------


@dataclass
class GlobalTestResult:
    """Global gamma test summary.

    ``varpi2`` is reported as a diagnostic only; it does not enter the
    p-value.
    """

    kind: ProximityKind
    n: int
    gamma: float
    centre: float
    eta: list[float]
    upsilon2: float
    varpi2: float
    p_analytic: float
    log_p_analytic: float
    p_emp_beta: float | None = None
    r: int | None = None
    beta_params: BetaParams | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def threshold(self) -> float:
        return abs(self.gamma - self.centre)


def global_log_pvalue(t: float, upsilon2: float) -> float:
    """ln Q(t^2 / (4 upsilon^2); 1/2); 0 when ``upsilon2`` is zero."""
    if not upsilon2 > 0:
        return 0.0
    return _clamp_log(log_reg_upper_inc_gamma(t * t / (4.0 * upsilon2), 0.5))


def global_pvalue(t: float, upsilon2: float) -> float:
    return math.exp(global_log_pvalue(t, upsilon2))


def global_test(w: WeightMatrix, y, kind: ProximityKind) -> GlobalTestResult:
    """Analytic global test; the exponentially small remainder is not added."""
    y = as_observations(y)
    kind = ProximityKind(kind)
    n = w.n
    rows = global_gamma(w, y, kind)
    eta, up, vp = [], [], []
    for r in rows:
        rest = n - r.m - 1
        eta.append(r.m * rest / (n - 1))
        up.append(eta[-1] * r.s2)
        if r.m > 0:
            vp.append(rest * rest * r.s2 / r.m)
    gamma = math.fsum(r.gamma for r in rows)
    centre = math.fsum(r.centre for r in rows)
    upsilon2 = math.fsum(up)
    flags = []
    if not upsilon2 > 0:
        flags.append(ZERO_SCALE)
    if n < 10:
        flags.append(SMALL_N)
    lp = global_log_pvalue(abs(gamma - centre), upsilon2)
    return GlobalTestResult(
        kind=kind,
        n=n,
        gamma=gamma,
        centre=centre,
        eta=eta,
        upsilon2=upsilon2,
        varpi2=math.fsum(vp),
        p_analytic=math.exp(lp),
        log_p_analytic=lp,
        flags=flags,
    )


# ---------------------------------------------------------------------------
# Empirical beta transform
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmpiricalBetaResult:
    p_adjusted: float
    samples: tuple[float, ...]
    params: BetaParams | None
    degenerate: bool


def beta_adjust(p0: float, samples) -> EmpiricalBetaResult:
    """I(p0; alpha, beta) with (alpha, beta) fitted by moments to ``samples``.

    A degenerate fit passes ``p0`` through unchanged.
    """
    samples = tuple(float(s) for s in samples)
    if len(samples) < 2:
        raise ValueError("need at least two simulated p-values")
    try:
        params = beta_mom_fit(samples)
    except DegenerateFit:
        return EmpiricalBetaResult(p0, samples, None, True)
    return EmpiricalBetaResult(reg_inc_beta(p0, params.alpha, params.beta), samples, params, False)


def empirical_beta_transform(
    w: WeightMatrix, y, kind: ProximityKind, r: int = 10, seed: int = 0, result: GlobalTestResult | None = None
) -> EmpiricalBetaResult:
    """Recalibrate the analytic global p-value with ``r`` product-group permutations.

    Each permutation's global gamma is scored with the same centre and
    ``upsilon^2`` (both are invariant under product-group permutations).
    Permutation ``k`` uses its own stream keyed by ``("alg1", k)``.
    """
    if int(r) != r or r < 2:
        raise ValueError(f"r must be an integer >= 2, got {r}")
    y = as_observations(y)
    res = result if result is not None else global_test(w, y, kind)
    samples = []
    for k in range(r):
        g = product_group_gammas(w, y, kind, seed, "alg1", 1, index=k)[0]
        samples.append(global_pvalue(abs(g - res.centre), res.upsilon2))
    return beta_adjust(res.p_analytic, samples)


def attach_empirical_beta(res: GlobalTestResult, eb: EmpiricalBetaResult, r: int) -> GlobalTestResult:
    res.p_emp_beta = eb.p_adjusted
    res.r = r
    res.beta_params = eb.params
    if eb.degenerate and DEGENERATE_FIT not in res.flags:
        res.flags.append(DEGENERATE_FIT)
    return res

