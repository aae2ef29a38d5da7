"""
Local and global indicators of spatial association written as gamma indices.

Every LISA statistic here has the form ``T_i = sum_j w_ij h_ij`` where the row
``h_i`` depends only on the data.  For the gamma-index view ``h`` is the
proximity row ``lambda_i`` (Moran cross-product or Geary squared difference);
for the named statistics it is the proximity row rescaled into the
statistic's own units.  Rows are built on demand, never as an n x n matrix.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import ConnectivityClass, Graph, WeightMatrix, classify_vertex

__all__ = [
    "DegenerateData",
    "ExcludedVertex",
    "ObservationError",
    "ObservationVector",
    "ProximityKind",
    "Statistic",
    "Tail",
    "LocalRowSummary",
    "MomentSummary",
    "GlobalValue",
    "load_observations",
    "proximity_row",
    "local_gamma",
    "statistic_row",
    "local_statistic",
    "lisa_moments",
    "global_statistic",
    "global_gamma",
]


class DegenerateData(ValueError):
    """A statistic's denominator is zero for the supplied data."""


class ExcludedVertex(ValueError):
    """The vertex cannot be tested (row degree 0 or n−1)."""


class ObservationError(ValueError):
    """Observation file does not match the graph."""


class ProximityKind(str, enum.Enum):
    MORAN_CROSS = "MoranCross"
    GEARY_SQUARE = "GearySquare"


class Tail(str, enum.Enum):
    UPPER = "upper"
    LOWER = "lower"
    TWO_SIDED = "two-sided"


class Statistic(str, enum.Enum):
    MORAN = "moran"
    GEARY = "geary"
    GETIS_G = "getis"
    GETIS_G_STAR = "getis-star"

    @property
    def kind(self) -> ProximityKind:
        # G and G* share Moran's restricted-permutation reference distribution
        if self is Statistic.GEARY:
            return ProximityKind.GEARY_SQUARE
        return ProximityKind.MORAN_CROSS


@dataclass(frozen=True)
class ObservationVector:
    """Per-vertex measurements with cached summary moments.

    ``variance`` is the 1/n sample variance and ``kurtosis`` is
    ``b = n sum(y^4) / (sum(y^2))^2`` computed from the raw values.
    """

    values: np.ndarray
    mean: float = field(init=False)
    variance: float = field(init=False)
    kurtosis: float = field(init=False)

    def __post_init__(self) -> None:
        y = np.array(self.values, dtype=float)
        if y.ndim != 1 or y.size == 0:
            raise ObservationError("observations must be a non-empty vector")
        if not np.all(np.isfinite(y)):
            raise ObservationError("observations must be finite")
        y.setflags(write=False)
        object.__setattr__(self, "values", y)
        mean = math.fsum(y) / y.size
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", math.fsum((y - mean) ** 2) / y.size)
        top = float(np.max(np.abs(y)))
        if top > 0:
            u = y / top  # scale-free, so tiny or huge values neither underflow nor overflow
            s2 = math.fsum(u * u)
            kurt = y.size * math.fsum(u**4) / (s2 * s2)
        else:
            kurt = math.nan
        object.__setattr__(self, "kurtosis", kurt)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def centred(self) -> np.ndarray:
        return self.values - self.mean


def load_observations(text: str, graph: Graph) -> ObservationVector:
    """Read an ``id,value`` CSV and align it to the graph's vertex order."""
    if text.startswith("\ufeff"):
        text = text[1:]
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise ObservationError("empty observation file") from None
    if [h.strip() for h in header] != ["id", "value"]:
        raise ObservationError(f"row 1: expected header 'id,value', got {','.join(header)!r}")
    found: dict[str, float] = {}
    for rowno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise ObservationError(f"row {rowno}: expected 2 fields, got {len(row)}")
        vid = row[0].strip()
        try:
            val = float(row[1])
        except ValueError:
            raise ObservationError(f"row {rowno}: value {row[1]!r} is not a number") from None
        if not math.isfinite(val):
            raise ObservationError(f"row {rowno}: value must be finite")
        if vid in found:
            raise ObservationError(f"row {rowno}: duplicate id {vid!r}")
        if vid not in graph._index:
            raise ObservationError(f"row {rowno}: id {vid!r} is not a graph vertex")
        found[vid] = val
    missing = [v for v in graph.vertices if v not in found]
    if missing:
        raise ObservationError(f"no observation for vertex {missing[0]!r} ({len(missing)} missing)")
    return ObservationVector(np.array([found[v] for v in graph.vertices]))


def _as_obs(y) -> ObservationVector:
    return y if isinstance(y, ObservationVector) else ObservationVector(np.asarray(y, dtype=float))


# ---------------------------------------------------------------------------
# Gamma-index view
# ---------------------------------------------------------------------------


def proximity_row(y: ObservationVector, kind: ProximityKind, i: int) -> np.ndarray:
    """lambda(y_i, y_j) for j = 0..n-1 (the diagonal entry is included but unused)."""
    y = _as_obs(y)
    kind = ProximityKind(kind)
    v = y.values
    if kind is ProximityKind.MORAN_CROSS:
        z = y.centred
        return z[i] * z
    d = v[i] - v
    return d * d


@dataclass(frozen=True)
class LocalRowSummary:
    i: int
    n: int
    m: int
    lam_bar: float
    s2: float
    gamma: float
    connectivity: ConnectivityClass

    @property
    def centre(self) -> float:
        return self.m * self.lam_bar


def _row_moments(row: np.ndarray, i: int) -> tuple[float, float]:
    others = np.delete(row, i)
    lam_bar = math.fsum(others) / others.size
    s2 = math.fsum((others - lam_bar) ** 2) / others.size
    return lam_bar, s2


def local_gamma(
    w: WeightMatrix, y: ObservationVector, kind: ProximityKind, i: int, strict: bool = True
) -> LocalRowSummary:
    """Local gamma index with the centring and scale terms of the bound.

    Parameters
    ----------
    strict : bool
        Refuse Degenerate vertices.  The summary itself is well defined for
        them; only the analytic bounds are not.

    Raises
    ------
    ExcludedVertex
        If ``strict`` and vertex ``i`` is Degenerate (degree 0 or n-1).
    """
    cls = classify_vertex(w, i)
    if strict and cls is ConnectivityClass.DEGENERATE:
        raise ExcludedVertex(f"vertex {i} has degree {int(w.m[i])} of {w.n - 1}")
    return _local_gamma(w, _as_obs(y), kind, i, cls)


def _local_gamma(w, y, kind, i, cls) -> LocalRowSummary:
    row = proximity_row(y, kind, i)
    lam_bar, s2 = _row_moments(row, i)
    wr = w.w[i]
    gamma = math.fsum(row[wr == 1])
    return LocalRowSummary(i=i, n=w.n, m=int(w.m[i]), lam_bar=lam_bar, s2=s2, gamma=gamma, connectivity=cls)


def global_gamma(w: WeightMatrix, y: ObservationVector, kind: ProximityKind) -> list[LocalRowSummary]:
    """Row summaries for every vertex, degenerate ones included (they carry no variance)."""
    y = _as_obs(y)
    return [_local_gamma(w, y, kind, i, classify_vertex(w, i)) for i in range(w.n)]


# ---------------------------------------------------------------------------
# Named statistics
# ---------------------------------------------------------------------------


def statistic_row(y: ObservationVector, stat: Statistic | ProximityKind, i: int) -> np.ndarray:
    """Row h_i with T_i = sum_j w_ij h_ij for the chosen statistic.

    A :class:`ProximityKind` gives the raw gamma-index row.
    """
    y = _as_obs(y)
    if isinstance(stat, ProximityKind):
        return proximity_row(y, stat, i)
    stat = Statistic(stat)
    v = y.values
    if stat in (Statistic.MORAN, Statistic.GEARY):
        if not y.variance > 0:
            raise DegenerateData("zero sample variance")
        return proximity_row(y, stat.kind, i) / y.variance
    if stat is Statistic.GETIS_G:
        denom = math.fsum(v) - v[i]
        if denom == 0:
            raise DegenerateData(f"sum of y over j != {i} is zero")
        row = v / denom
        row[i] = 0.0
        return row
    denom = math.fsum(v)
    if denom == 0:
        raise DegenerateData("sum of y is zero")
    return v / denom


def local_statistic(w: WeightMatrix, y: ObservationVector, stat: Statistic, i: int) -> float:
    """Local Moran I_i, Geary C_i, Getis-Ord G_i or G_i* at vertex ``i``."""
    h = statistic_row(y, stat, i)
    return math.fsum(h[w.w[i] == 1])


@dataclass(frozen=True)
class MomentSummary:
    statistic: Statistic
    mean: float
    variance: float
    mean_minus_i: float | None = None
    variance_minus_i: float | None = None

    @property
    def valid(self) -> bool:
        return self.variance > 0 and math.isfinite(self.variance)


def lisa_moments(w: WeightMatrix, y: ObservationVector, stat: Statistic, i: int) -> MomentSummary:
    """Mean and variance under total randomization, as printed for each statistic.

    With binary weights ``w_(1) = w_(2) = m_i``.  A negative variance is
    returned as computed; check :attr:`MomentSummary.valid` before use.
    """
    y = _as_obs(y)
    stat = Statistic(stat)
    n = y.n
    if n < 3:
        raise DegenerateData("moments need n >= 3")
    w1 = float(math.fsum(w.w[i]))
    w2 = float(math.fsum(w.w[i] ** 2))
    b = y.kurtosis
    if stat is Statistic.MORAN:
        mean = -w1 / (n - 1)
        var = (
            w2 * (n - b) / (n - 1)
            + (w1 * w1 - w2) * (2 * b - n) / ((n - 1) * (n - 2))
            - w1 * w1 / (n - 1) ** 2
        )
        return MomentSummary(stat, mean, var)
    if stat is Statistic.GEARY:
        mean = 2 * n * w1 / (n - 1)
        var = (n / (n - 1)) * (w1 * w1 - w2) * (3 + b) - mean * mean
        return MomentSummary(stat, mean, var)
    v = y.values
    if stat is Statistic.GETIS_G:
        rest = np.delete(v, i)
        ybar = math.fsum(rest) / rest.size
        s2 = math.fsum((rest - ybar) ** 2) / rest.size
        if ybar == 0:
            raise DegenerateData("mean of y excluding i is zero")
        mean = w1 / (n - 1)
        var = w1 * (n - 1 - w1) * s2 / ((n - 1) ** 2 * (n - 2) * ybar * ybar)
        return MomentSummary(stat, mean, var, ybar, s2)
    if y.mean == 0:
        raise DegenerateData("mean of y is zero")
    mean = w1 / n
    var = w1 * (n - w1) * y.variance / (n * n * (n - 1) * y.mean**2)
    return MomentSummary(stat, mean, var)


@dataclass(frozen=True)
class GlobalValue:
    value: float
    excluded: dict[int, str]


def global_statistic(w: WeightMatrix, y: ObservationVector, stat: Statistic) -> GlobalValue:
    """Sum of local statistics over non-Degenerate vertices."""
    y = _as_obs(y)
    excluded: dict[int, str] = {}
    total = []
    for i in range(w.n):
        if classify_vertex(w, i) is ConnectivityClass.DEGENERATE:
            excluded[i] = "degenerate-connectivity"
            continue
        total.append(local_statistic(w, y, stat, i))
    return GlobalValue(math.fsum(total), excluded)


def excluded_reason(w: WeightMatrix, i: int) -> str | None:
    if classify_vertex(w, i) is ConnectivityClass.DEGENERATE:
        return "degenerate-connectivity"
    return None


def as_observations(values: Sequence[float] | np.ndarray | ObservationVector) -> ObservationVector:
    return _as_obs(values)
