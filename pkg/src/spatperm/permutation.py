"""
Permutation reference distributions: restricted Monte Carlo and exhaustive
local tests, and single or product-group permutations for global tests.

Random numbers come from independent Philox streams keyed by
``(root seed, purpose label, index, block)``.  Replicates are drawn in fixed
blocks of :data:`BLOCK` and exceedances are reduced as integer counts, so a
result depends only on the plan and never on the number of worker threads.
"""

from __future__ import annotations

import enum
import itertools
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable

import numpy as np

from .graph import WeightMatrix
from .stats import (
    ObservationVector,
    ProximityKind,
    Statistic,
    Tail,
    as_observations,
    proximity_row,
    statistic_row,
)

__all__ = [
    "BLOCK",
    "EXHAUSTIVE_MAX_N",
    "InfeasibleRequest",
    "PermutationMode",
    "PermutationPlan",
    "stream",
    "derive_seed",
    "draw_restricted_permutation",
    "draw_neighbour_images",
    "mc_local_pvalue",
    "exhaustive_local_pvalue",
    "mc_global_pvalue",
    "exhaustive_global_pvalue",
    "product_group_gammas",
]

BLOCK = 1024
EXHAUSTIVE_MAX_N = 9
REL_TOL = 1e-10


class InfeasibleRequest(ValueError):
    """The request cannot be honoured (for example exhaustive enumeration at large n)."""


class PermutationMode(str, enum.Enum):
    RESTRICTED_LOCAL = "restricted-local"
    SINGLE_GLOBAL = "single-global"
    PRODUCT_GROUP_GLOBAL = "product-group-global"


@dataclass(frozen=True)
class PermutationPlan:
    """How to draw the Monte Carlo reference distribution.

    ``fixed`` is the tested vertex for restricted local plans.  ``purpose``
    selects the random stream; plans that share a purpose and seed see the
    same permutations.
    """

    mode: PermutationMode
    B: int
    seed: int
    tail: Tail = Tail.TWO_SIDED
    fixed: int | None = None
    purpose: str = "mc"
    threads: int = 1

    def __post_init__(self) -> None:
        if int(self.B) != self.B or self.B < 1:
            raise ValueError(f"B must be a positive integer, got {self.B}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "mode", PermutationMode(self.mode))
        object.__setattr__(self, "tail", Tail(self.tail))
        if self.mode is PermutationMode.RESTRICTED_LOCAL and self.fixed is None:
            raise ValueError("restricted local plans need a fixed vertex")


# ---------------------------------------------------------------------------
# Streams
# ---------------------------------------------------------------------------


def _label(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Independent generator for one ``(seed, purpose, indices...)`` key."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(_label(purpose), *map(int, indices)))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, purpose: str, *indices: int) -> int:
    """A 64-bit child seed, used to hand a sub-task its own root seed."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(_label(purpose), *map(int, indices)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _blocks(B: int) -> list[tuple[int, int]]:
    return [(b, min(BLOCK, B - b * BLOCK)) for b in range((B + BLOCK - 1) // BLOCK)]


def _map(fn: Callable, items: Iterable, threads: int) -> list:
    items = list(items)
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# ---------------------------------------------------------------------------
# Drawing
# ---------------------------------------------------------------------------


def draw_restricted_permutation(rng: np.random.Generator, n: int, fixed: int) -> np.ndarray:
    """Uniform permutation of 0..n-1 with ``fixed`` mapped to itself (Fisher-Yates)."""
    if n < 2:
        raise ValueError("n must be at least 2")
    perm = np.arange(n)
    rest = np.delete(perm, fixed)
    for j in range(rest.size - 1, 0, -1):
        k = int(rng.integers(0, j + 1))
        rest[j], rest[k] = rest[k], rest[j]
    perm[np.arange(n) != fixed] = rest
    return perm


def draw_neighbour_images(
    rng: np.random.Generator, n: int, fixed: int, m: int, size: int
) -> np.ndarray:
    """Images of ``m`` neighbours under ``size`` restricted permutations.

    Under a uniform permutation fixing ``fixed`` the images of any ``m``
    other vertices form a uniform ordered ``m``-subset of the complement, so
    only the first ``m`` steps of a Fisher-Yates shuffle are needed.
    Returns an int array of shape ``(size, m)``.
    """
    pool = np.delete(np.arange(n), fixed)
    k = pool.size
    if m > k:
        raise ValueError("more neighbours than available vertices")
    arr = np.broadcast_to(pool, (size, k)).copy()
    rows = np.arange(size)
    for j in range(m):
        pick = rng.integers(j, k, size=size)
        tmp = arr[rows, j].copy()
        arr[rows, j] = arr[rows, pick]
        arr[rows, pick] = tmp
    return arr[:, :m]


def _exceed(values: np.ndarray, observed: float, centre: float, tail: Tail, scale: float) -> int:
    tol = REL_TOL * scale
    if tail is Tail.UPPER:
        return int(np.count_nonzero(values >= observed - tol))
    if tail is Tail.LOWER:
        return int(np.count_nonzero(values <= observed + tol))
    return int(np.count_nonzero(np.abs(values - centre) >= abs(observed - centre) - tol))


# ---------------------------------------------------------------------------
# Local tests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _LocalSetup:
    h: np.ndarray
    nb: np.ndarray
    observed: float
    centre: float
    scale: float


def _local_setup(w: WeightMatrix, y, stat, i: int) -> _LocalSetup:
    y = as_observations(y)
    h = np.asarray(statistic_row(y, stat, i), dtype=float)
    nb = np.nonzero(w.w[i])[0]
    others = np.delete(h, i)
    m = nb.size
    centre = m * math.fsum(others) / others.size
    observed = math.fsum(h[nb])
    scale = m * float(np.max(np.abs(others))) if others.size else 0.0
    return _LocalSetup(h, nb, observed, centre, scale)


def _coerce_stat(stat):
    if isinstance(stat, (Statistic, ProximityKind)):
        return stat
    try:
        return Statistic(stat)
    except ValueError:
        return ProximityKind(stat)


def mc_local_pvalue(w: WeightMatrix, y, stat, i: int, plan: PermutationPlan) -> float:
    """Add-one Monte Carlo p-value ``(1 + #exceedances) / (B + 1)``.

    ``stat`` is a :class:`Statistic` (the named LISA) or a
    :class:`ProximityKind` (the raw gamma index).  The two-sided test uses
    the restricted-permutation mean of the statistic as its centre.
    """
    if plan.mode is not PermutationMode.RESTRICTED_LOCAL or plan.fixed != i:
        raise ValueError("plan must be a restricted local plan fixing vertex i")
    s = _local_setup(w, y, _coerce_stat(stat), i)
    n = w.n

    def count(block: tuple[int, int]) -> int:
        b, size = block
        rng = stream(plan.seed, plan.purpose, i, b)
        imgs = draw_neighbour_images(rng, n, i, s.nb.size, size)
        vals = s.h[imgs].sum(axis=1)
        return _exceed(vals, s.observed, s.centre, plan.tail, s.scale)

    hits = sum(_map(count, _blocks(plan.B), plan.threads))
    return (1 + hits) / (plan.B + 1)


@lru_cache(maxsize=8)
def _all_perms(k: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(k))), dtype=np.int64).reshape(-1, k)


def exhaustive_local_pvalue(w: WeightMatrix, y, stat, i: int, tail: Tail = Tail.TWO_SIDED) -> float:
    """Exact proportion of restricted permutations at least as extreme (identity included)."""
    n = w.n
    if n > EXHAUSTIVE_MAX_N:
        raise InfeasibleRequest(f"exhaustive enumeration needs n <= {EXHAUSTIVE_MAX_N}, got n = {n}")
    s = _local_setup(w, y, _coerce_stat(stat), i)
    pool = np.delete(np.arange(n), i)
    perms = pool[_all_perms(n - 1)]
    pos = np.searchsorted(pool, s.nb)
    vals = s.h[perms[:, pos]].sum(axis=1)
    return _exceed(vals, s.observed, s.centre, Tail(tail), s.scale) / perms.shape[0]


# ---------------------------------------------------------------------------
# Global tests
# ---------------------------------------------------------------------------


def _lambda_pair_mean(y: ObservationVector, kind: ProximityKind) -> float:
    """Mean of lambda(y_a, y_b) over ordered pairs a != b."""
    n = y.n
    z = y.centred
    ss = math.fsum(z * z)
    if kind is ProximityKind.MORAN_CROSS:
        return -ss / (n * (n - 1))
    return 2.0 * ss / (n - 1)


def _single_global_values(w: np.ndarray, yp: np.ndarray, kind: ProximityKind, mean: float) -> np.ndarray:
    """Global gamma for each row of ``yp`` (replicate-by-vertex data)."""
    if kind is ProximityKind.MORAN_CROSS:
        z = yp - mean
        return np.einsum("bi,bi->b", z @ w, z)
    r = w.sum(axis=1)
    c = w.sum(axis=0)
    sq = yp * yp
    return sq @ r + sq @ c - 2.0 * np.einsum("bi,bi->b", yp @ w, yp)


def _global_observed(w: WeightMatrix, y: ObservationVector, kind: ProximityKind) -> float:
    return math.fsum(math.fsum(proximity_row(y, kind, i)[w.w[i] == 1]) for i in range(w.n))


def _global_scale(w: WeightMatrix, y: ObservationVector, kind: ProximityKind) -> float:
    z = np.abs(y.centred) if kind is ProximityKind.MORAN_CROSS else np.abs(y.values - y.values.min())
    top = float(np.max(z)) if z.size else 0.0
    lam_max = top * top if kind is ProximityKind.MORAN_CROSS else 4.0 * top * top
    return float(w.w.sum()) * lam_max


def product_group_gammas(
    w: WeightMatrix, y, kind: ProximityKind, seed: int, purpose: str, size: int, index: int = 0
) -> np.ndarray:
    """Global gamma under ``size`` product-group permutations.

    Coordinate ``i`` permutes row ``i`` of the proximity matrix with a
    restricted permutation fixing ``i``; coordinates are independent.  The
    stream for coordinate ``i`` is keyed by ``(purpose, index, i)``.
    """
    y = as_observations(y)
    kind = ProximityKind(kind)
    n = w.n
    total = np.zeros(size)
    for i in range(n):
        nb = np.nonzero(w.w[i])[0]
        if nb.size == 0:
            continue
        row = proximity_row(y, kind, i)
        if nb.size == n - 1:
            total += math.fsum(row[nb])
            continue
        imgs = draw_neighbour_images(stream(seed, purpose, index, i), n, i, nb.size, size)
        total += row[imgs].sum(axis=1)
    return total


def mc_global_pvalue(w: WeightMatrix, y, kind: ProximityKind, plan: PermutationPlan) -> float:
    """Add-one Monte Carlo p-value for the global gamma index.

    SingleGlobal permutes all observations jointly; ProductGroupGlobal
    permutes each proximity row independently with its own index fixed.
    The two-sided centre is the exact permutation mean under the chosen
    randomization.
    """
    y = as_observations(y)
    kind = ProximityKind(kind)
    observed = _global_observed(w, y, kind)
    scale = _global_scale(w, y, kind)
    if plan.mode is PermutationMode.SINGLE_GLOBAL:
        centre = float(w.w.sum()) * _lambda_pair_mean(y, kind)

        def count(block: tuple[int, int]) -> int:
            b, size = block
            rng = stream(plan.seed, plan.purpose, 0, b)
            idx = np.argsort(rng.random((size, y.n)), axis=1)
            vals = _single_global_values(w.w, y.values[idx], kind, y.mean)
            return _exceed(vals, observed, centre, plan.tail, scale)

    elif plan.mode is PermutationMode.PRODUCT_GROUP_GLOBAL:
        centre = 0.0
        parts = []
        for i in range(w.n):
            row = np.delete(proximity_row(y, kind, i), i)
            parts.append(w.m[i] * math.fsum(row) / row.size)
        centre = math.fsum(parts)

        def count(block: tuple[int, int]) -> int:
            b, size = block
            vals = product_group_gammas(w, y, kind, plan.seed, plan.purpose, size, index=b)
            return _exceed(vals, observed, centre, plan.tail, scale)

    else:
        raise ValueError("plan must be a global plan")
    hits = sum(_map(count, _blocks(plan.B), plan.threads))
    return (1 + hits) / (plan.B + 1)


def exhaustive_global_pvalue(w: WeightMatrix, y, kind: ProximityKind, tail: Tail = Tail.TWO_SIDED) -> float:
    """Exact SingleGlobal p-value by enumerating all n! permutations (n <= 9)."""
    y = as_observations(y)
    n = w.n
    if n > EXHAUSTIVE_MAX_N:
        raise InfeasibleRequest(f"exhaustive enumeration needs n <= {EXHAUSTIVE_MAX_N}, got n = {n}")
    kind = ProximityKind(kind)
    observed = _global_observed(w, y, kind)
    centre = float(w.w.sum()) * _lambda_pair_mean(y, kind)
    perms = _all_perms(n)
    vals = _single_global_values(w.w, y.values[perms], kind, y.mean)
    return _exceed(vals, observed, centre, Tail(tail), _global_scale(w, y, kind)) / perms.shape[0]
