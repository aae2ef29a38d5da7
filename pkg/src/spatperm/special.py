"""
Numeric kernel: log-gamma, regularized incomplete beta and upper incomplete
gamma functions (with log-space variants), a beta method-of-moments fit and
numeric checks of two combinatorial inequalities used by the global bound.

Incomplete beta uses the classical continued fraction (modified Lentz) with
the symmetry split at x = (a+1)/(a+b+2); incomplete gamma uses the power
series below x = s+1 and a continued fraction above it.  Prefactors are
assembled in log space with a cancellation-free log-beta for large arguments.
"""

from __future__ import annotations

import itertools
import math
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "DegenerateFit",
    "BetaParams",
    "ln_gamma",
    "ln_gamma_ratio",
    "ln_beta",
    "reg_inc_beta",
    "log_reg_inc_beta",
    "reg_upper_inc_gamma",
    "log_reg_upper_inc_gamma",
    "beta_mom_fit",
    "check_half_binomial",
    "check_composition_bound",
]

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 200_000
_LN_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


class DegenerateFit(ValueError):
    """Method-of-moments fit is undefined (zero variance or mean outside (0, 1))."""


class BetaParams(NamedTuple):
    alpha: float
    beta: float

    def validate(self) -> "BetaParams":
        if not (self.alpha > 0 and self.beta > 0) or not (
            math.isfinite(self.alpha) and math.isfinite(self.beta)
        ):
            raise DomainError(f"beta parameters must be positive, got {self!r}")
        return self


# ---------------------------------------------------------------------------
# Gamma function helpers
# ---------------------------------------------------------------------------


def ln_gamma(x: float) -> float:
    """Natural log of the gamma function for x > 0."""
    x = float(x)
    if not x > 0 or math.isnan(x):
        raise DomainError(f"ln_gamma requires x > 0, got {x}")
    return math.lgamma(x)


def _stirling_corr(z: float) -> float:
    # ln Γ(z) − [(z−½)ln z − z + ½ln 2π], valid to double precision for z ≥ 15
    z2 = 1.0 / (z * z)
    return (
        1.0 / 12.0
        - z2 * (1.0 / 360.0 - z2 * (1.0 / 1260.0 - z2 * (1.0 / 1680.0 - z2 / 1188.0)))
    ) / z


def ln_gamma_ratio(x: float, d: float) -> float:
    """ln Γ(x + d) − ln Γ(x), accurate when x is large and d moderate."""
    if not x > 0 or not x + d > 0:
        raise DomainError(f"ln_gamma_ratio requires x > 0 and x + d > 0, got {x}, {d}")
    if x < 15.0 or x + d < 15.0:
        return math.lgamma(x + d) - math.lgamma(x)
    return (
        (x - 0.5) * math.log1p(d / x)
        + d * math.log(x + d)
        - d
        + _stirling_corr(x + d)
        - _stirling_corr(x)
    )


def ln_beta(a: float, b: float) -> float:
    """ln B(a, b) without catastrophic cancellation for large a and/or b."""
    if not (a > 0 and b > 0):
        raise DomainError(f"ln_beta requires positive arguments, got {a}, {b}")
    lo, hi = (a, b) if a <= b else (b, a)
    if hi < 15.0:
        return math.lgamma(lo) + math.lgamma(hi) - math.lgamma(lo + hi)
    if lo < 15.0:
        return math.lgamma(lo) - ln_gamma_ratio(hi, lo)
    s = lo + hi
    return (
        _LN_SQRT_2PI
        + (lo - 0.5) * math.log(lo / s)
        - (hi - 0.5) * math.log1p(lo / hi)
        - 0.5 * math.log(s)
        + _stirling_corr(lo)
        + _stirling_corr(hi)
        - _stirling_corr(s)
    )


# ---------------------------------------------------------------------------
# Regularized incomplete beta
# ---------------------------------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def _check_ab(a: float, b: float) -> None:
    if not (a > 0 and b > 0) or not (math.isfinite(a) and math.isfinite(b)):
        raise DomainError(f"incomplete beta requires a, b > 0, got a={a}, b={b}")


def _log_front(a: float, b: float, log_x: float, log_1mx: float) -> float:
    return a * log_x + b * log_1mx - ln_beta(a, b)


def reg_inc_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta function I_x(a, b).

    Parameters
    ----------
    x : float
        Upper integration limit, 0 <= x <= 1.
    a, b : float
        Positive shape parameters.

    Returns
    -------
    float
        Value in [0, 1].
    """
    a = float(a)
    b = float(b)
    x = float(x)
    _check_ab(a, b)
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"reg_inc_beta requires 0 <= x <= 1, got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    if x < (a + 1.0) / (a + b + 2.0):
        front = math.exp(_log_front(a, b, math.log(x), math.log1p(-x)))
        return min(1.0, front * _betacf(a, b, x) / a)
    y = 1.0 - x
    front = math.exp(_log_front(b, a, math.log(y), math.log(x)))
    return max(0.0, 1.0 - front * _betacf(b, a, y) / b)


def log_reg_inc_beta(log_x: float, a: float, b: float) -> float:
    """ln I_x(a, b) given ln x; stays finite when x itself underflows."""
    a = float(a)
    b = float(b)
    _check_ab(a, b)
    if math.isnan(log_x) or log_x > 0.0:
        raise DomainError(f"log_reg_inc_beta requires log_x <= 0, got {log_x}")
    if log_x == -math.inf:
        return -math.inf
    if log_x == 0.0:
        return 0.0
    x = math.exp(log_x)
    if x < (a + 1.0) / (a + b + 2.0):
        log_1mx = math.log1p(-x) if x > 1e-8 else -x - 0.5 * x * x
        return _log_front(a, b, log_x, log_1mx) + math.log(_betacf(a, b, x)) - math.log(a)
    y = -math.expm1(log_x)
    front = math.exp(_log_front(b, a, math.log(y), log_x))
    comp = front * _betacf(b, a, y) / b
    if comp >= 1.0:
        return -math.inf
    return math.log1p(-comp)


# ---------------------------------------------------------------------------
# Regularized upper incomplete gamma
# ---------------------------------------------------------------------------


def _gamma_series(x: float, s: float) -> float:
    # lower regularized P(s, x) by its power series; use for x < s + 1
    ap = s
    total = 1.0 / s
    term = total
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return math.exp(-x + s * math.log(x) - math.lgamma(s)) * total
    raise ArithmeticError(f"incomplete gamma series did not converge (s={s}, x={x})")


def _log_gamma_cf(x: float, s: float) -> float:
    # ln Q(s, x) by Lentz continued fraction; use for x >= s + 1
    b = x + 1.0 - s
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return -x + s * math.log(x) - math.lgamma(s) + math.log(h)
    raise ArithmeticError(f"incomplete gamma continued fraction did not converge (s={s}, x={x})")


def _check_gamma_args(x: float, s: float) -> None:
    if not s > 0 or not math.isfinite(s):
        raise DomainError(f"incomplete gamma requires s > 0, got {s}")
    if not x >= 0:
        raise DomainError(f"incomplete gamma requires x >= 0, got {x}")


def reg_upper_inc_gamma(x: float, s: float) -> float:
    """Regularized upper incomplete gamma Q(s, x) = Γ(s, x) / Γ(s)."""
    x = float(x)
    s = float(s)
    _check_gamma_args(x, s)
    if x == 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < s + 1.0:
        return max(0.0, 1.0 - _gamma_series(x, s))
    return math.exp(_log_gamma_cf(x, s))


def log_reg_upper_inc_gamma(x: float, s: float) -> float:
    """ln Q(s, x); finite far into the tail where Q underflows."""
    x = float(x)
    s = float(s)
    _check_gamma_args(x, s)
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return -math.inf
    if x < s + 1.0:
        p = _gamma_series(x, s)
        return math.log1p(-p) if p < 1.0 else -math.inf
    return _log_gamma_cf(x, s)


# ---------------------------------------------------------------------------
# Beta method of moments
# ---------------------------------------------------------------------------


def beta_mom_fit(samples: Sequence[float]) -> BetaParams:
    """Method-of-moments beta fit from the sample mean and (n−1) sample variance.

    Raises
    ------
    DegenerateFit
        If fewer than two samples, zero variance, mean outside (0, 1), or the
        moments imply a non-positive shape parameter.
    """
    p = np.asarray(samples, dtype=float)
    if p.size < 2:
        raise DegenerateFit("need at least two samples")
    mean = float(p.mean())
    var = float(p.var(ddof=1))
    return beta_from_moments(mean, var)


def beta_from_moments(mean: float, var: float) -> BetaParams:
    if not 0.0 < mean < 1.0:
        raise DegenerateFit(f"sample mean {mean} outside (0, 1)")
    if not var > 0.0:
        raise DegenerateFit("zero sample variance")
    alpha = mean * mean * (1.0 - mean) / var - mean
    beta = (mean * (1.0 - mean) / var - 1.0) * (1.0 - mean)
    if not (alpha > 0.0 and beta > 0.0):
        raise DegenerateFit(f"moments give non-positive shape ({alpha}, {beta})")
    return BetaParams(alpha, beta)


# ---------------------------------------------------------------------------
# Inequality checks
# ---------------------------------------------------------------------------


def _logsumexp(values: Sequence[float]) -> float:
    top = max(values)
    if top == -math.inf:
        return top
    return top + math.log(math.fsum(math.exp(v - top) for v in values))


def half_binomial_sums(q: int, c: float) -> tuple[float, float]:
    """Even-index and odd-index half-binomial sums, each summed in log space."""
    lq = math.lgamma(q + 1)
    lc = math.log(c)

    def term(k: int) -> float:
        h = k / 2.0
        return lq + h * lc - math.lgamma(h + 1.0) - math.lgamma(q - h + 1.0)

    even = _logsumexp([term(k) for k in range(0, 2 * q + 1, 2)])
    odd = _logsumexp([term(k) for k in range(1, 2 * q, 2)])
    return math.exp(even), math.exp(odd)


def check_half_binomial(q: int, c: float) -> bool:
    """True iff the even-index half-binomial sum dominates the odd-index one."""
    if q < 1 or q > 30:
        raise DomainError(f"q must be in 1..30, got {q}")
    if not 0.0 < c < 1.0:
        raise DomainError(f"c must be in (0, 1), got {c}")
    even, odd = half_binomial_sums(q, c)
    return even >= odd


def _compositions(total: int, parts: int):
    # all (k_1..k_parts) >= 0 summing to total, via stars and bars
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for bar in bars:
            out.append(bar - prev - 1)
            prev = bar
        out.append(total + parts - 1 - prev - 1)
        yield out


def _scaled_composition_sum(p: int, u: Sequence[float]) -> float:
    # direct summation for weights in (0, 1]; Gamma(p + 1) <= 720 keeps every term small
    total = []
    for ks in _compositions(2 * p, len(u)):
        val = math.gamma(p + 1)
        for k, ui in zip(ks, u):
            val *= ui ** (0.5 * k) / math.gamma(0.5 * k + 1.0)
        total.append(val)
    return math.fsum(total)


def composition_sum(p: int, c: Sequence[float]) -> float:
    """Sum over compositions k_1+…+k_n = 2p of Gamma(p+1) prod c_i^(k_i/2) / Gamma(k_i/2+1).

    The sum is homogeneous of degree ``p`` in ``c``, so it is evaluated on
    ``c / max(c)`` and rescaled.
    """
    top = max(c)
    return top**p * _scaled_composition_sum(p, [ci / top for ci in c])


def check_composition_bound(n: int, p: int, c: Sequence[float], eps: float = 1e-12) -> bool:
    """True iff the composition sum over k_1+…+k_n = 2p is at most 2^(n−1)(Σc)^p.

    Zero weights are floored at ``eps`` before evaluation.  Both sides are
    compared after dividing the weights by their maximum, so the single-weight
    case, where the two sides are equal, is decided exactly.
    """
    if not 1 <= n <= 5 or not 1 <= p <= 6:
        raise DomainError(f"need n in 1..5 and p in 1..6, got n={n}, p={p}")
    if len(c) != n:
        raise DomainError(f"expected {n} weights, got {len(c)}")
    if any(ci < 0 for ci in c):
        raise DomainError("weights must be nonnegative")
    cc = [max(float(ci), eps) for ci in c]
    top = max(cc)
    u = [ci / top for ci in cc]
    return _scaled_composition_sum(p, u) <= 2 ** (n - 1) * math.fsum(u) ** p
