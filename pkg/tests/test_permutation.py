import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from conftest import random_connected_adjacency, ring_adjacency, weights_from_adjacency
from oracles import exhaustive_two_sided
from spatperm.graph import WeightMatrix, knn_weights
from spatperm.permutation import (
    BLOCK,
    InfeasibleRequest,
    PermutationMode,
    PermutationPlan,
    derive_seed,
    draw_neighbour_images,
    draw_restricted_permutation,
    exhaustive_global_pvalue,
    exhaustive_local_pvalue,
    mc_global_pvalue,
    mc_local_pvalue,
    stream,
)
from spatperm.stats import ObservationVector, ProximityKind, Statistic, Tail, proximity_row

MORAN = ProximityKind.MORAN_CROSS
GEARY = ProximityKind.GEARY_SQUARE
LOCAL = PermutationMode.RESTRICTED_LOCAL


def _binomial_ok(p_mc, p_exact, B, k=3.0):
    return abs(p_mc - p_exact) <= k * math.sqrt(max(p_exact * (1 - p_exact), 1.0 / B) / B) + 1.0 / (B + 1)


class TestPlan:
    def test_validation(self):
        with pytest.raises(ValueError):
            PermutationPlan(LOCAL, B=0, seed=1, fixed=0)
        with pytest.raises(ValueError):
            PermutationPlan(LOCAL, B=10, seed=1)
        with pytest.raises(ValueError):
            PermutationPlan(LOCAL, B=10, seed=-1, fixed=0)
        plan = PermutationPlan("single-global", B=10, seed=2**64 - 1, tail="upper")
        assert plan.mode is PermutationMode.SINGLE_GLOBAL and plan.tail is Tail.UPPER

    def test_streams_are_keyed(self):
        a = stream(5, "mc", 0, 0).random(4)
        assert np.array_equal(a, stream(5, "mc", 0, 0).random(4))
        assert not np.array_equal(a, stream(5, "mc", 0, 1).random(4))
        assert not np.array_equal(a, stream(5, "alg1", 0, 0).random(4))
        assert not np.array_equal(a, stream(6, "mc", 0, 0).random(4))
        assert derive_seed(5, "x", 1) == derive_seed(5, "x", 1) != derive_seed(5, "x", 2)


class TestDraws:
    def test_n2_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            assert list(draw_restricted_permutation(rng, 2, 1)) == [0, 1]

    def test_n3_frequencies(self):
        rng = np.random.default_rng(1)
        draws = 100_000
        identity = sum(int(draw_restricted_permutation(rng, 3, 2)[0] == 0) for _ in range(draws))
        sigma = math.sqrt(0.25 / draws)
        assert abs(identity / draws - 0.5) <= 3 * sigma

    def test_fixed_point_never_moves(self):
        rng = np.random.default_rng(2)
        for _ in range(10_000):
            perm = draw_restricted_permutation(rng, 8, 3)
            assert perm[3] == 3
            assert sorted(perm) == list(range(8))

    def test_neighbour_images_uniform_ordered_subsets(self):
        rng = np.random.default_rng(3)
        imgs = draw_neighbour_images(rng, 5, 0, 2, 60_000)
        assert not np.any(imgs == 0)
        assert np.all(imgs[:, 0] != imgs[:, 1])
        keys = [(a, b) for a in range(1, 5) for b in range(1, 5) if a != b]
        counts = [int(np.count_nonzero((imgs[:, 0] == a) & (imgs[:, 1] == b))) for a, b in keys]
        assert sum(counts) == 60_000
        assert chisquare(counts).pvalue > 1e-4


class TestLocalMC:
    def test_floor(self):
        # the five neighbours of vertex 0 carry the five largest values, so a
        # random image set reaches the observed sum with probability 1/C(199, 5)
        n = 200
        adj = np.zeros((n, n), dtype=int)
        for j in range(1, 6):
            adj[0, j] = adj[j, 0] = 1
        for a in range(5, n - 1):
            adj[a, a + 1] = adj[a + 1, a] = 1
        w = WeightMatrix(adj)
        y = np.concatenate([[1.0], 100.0 + np.arange(5.0), np.linspace(-1.0, 0.0, n - 6)])
        plan = PermutationPlan(LOCAL, B=999, seed=4, tail="upper", fixed=0)
        assert mc_local_pvalue(w, y, Statistic.GETIS_G_STAR, 0, plan) == 1 / 1000

    def test_upper_tail_against_exhaustive(self):
        w = WeightMatrix(ring_adjacency(8))
        y = ObservationVector(np.array([10.0, 9.0, -1.0, -2.0, -3.0, -4.0, -5.0, 8.5]))
        exact = exhaustive_local_pvalue(w, y, MORAN, 0, Tail.UPPER)
        assert exact == pytest.approx(2 / 42)
        p = mc_local_pvalue(w, y, MORAN, 0, PermutationPlan(LOCAL, B=999, seed=11, tail="upper", fixed=0))
        assert _binomial_ok(p, exact, 999)

    def test_p3_both_neighbours(self, p3):
        w = knn_weights(p3, 2)
        for seed in range(3):
            y = np.random.default_rng(seed).standard_normal(3)
            plan = PermutationPlan(LOCAL, B=999, seed=seed, fixed=2)
            assert mc_local_pvalue(w, y, MORAN, 2, plan) == 1.0
            assert exhaustive_local_pvalue(w, y, MORAN, 2) == 1.0

    def test_plan_must_fix_vertex(self, ring8_w):
        y = np.arange(8.0)
        with pytest.raises(ValueError):
            mc_local_pvalue(ring8_w, y, MORAN, 0, PermutationPlan(LOCAL, B=9, seed=1, fixed=1))

    def test_n7_seed11_against_exhaustive(self):
        rng = np.random.default_rng(11)
        w = weights_from_adjacency(random_connected_adjacency(rng, 7))
        y = ObservationVector(rng.standard_normal(7))
        B = 5000
        for i in range(7):
            if not 0 < w.m[i] < 6:
                continue
            for kind in ProximityKind:
                exact = exhaustive_local_pvalue(w, y, kind, i)
                oracle = exhaustive_two_sided(list(proximity_row(y, kind, i)), list(w.w[i]), i)
                assert exact == pytest.approx(oracle, abs=1e-15)
                p = mc_local_pvalue(w, y, kind, i, PermutationPlan(LOCAL, B=B, seed=11, fixed=i))
                assert abs(p - exact) <= 3 * math.sqrt(exact * (1 - exact) / B) + 1 / (B + 1)

    @pytest.mark.parametrize("seed", range(1, 11))
    def test_self_consistency_seeds(self, seed):
        w = WeightMatrix(ring_adjacency(8), k=1)
        y = ObservationVector(np.random.default_rng(seed).standard_normal(8))
        exact = exhaustive_local_pvalue(w, y, Statistic.MORAN, 3)
        p = mc_local_pvalue(w, y, Statistic.MORAN, 3, PermutationPlan(LOCAL, B=4000, seed=seed, fixed=3))
        assert _binomial_ok(p, exact, 4000, k=4.0)

    def test_add_one_lattice(self, ring8_w):
        y = np.random.default_rng(0).standard_normal(8)
        for B in (1, 7, 1024, 1500):
            p = mc_local_pvalue(ring8_w, y, GEARY, 2, PermutationPlan(LOCAL, B=B, seed=3, fixed=2))
            k = p * (B + 1)
            assert abs(k - round(k)) < 1e-9 and 1 <= round(k) <= B + 1

    def test_thread_independence(self, ring8_w):
        y = np.random.default_rng(0).standard_normal(8)
        B = 3 * BLOCK + 17
        ps = {
            mc_local_pvalue(ring8_w, y, MORAN, 5, PermutationPlan(LOCAL, B=B, seed=9, fixed=5, threads=t))
            for t in (1, 2, 4)
        }
        assert len(ps) == 1


class TestExhaustiveLocal:
    def test_refuses_large_n(self):
        w = WeightMatrix(ring_adjacency(10))
        with pytest.raises(InfeasibleRequest):
            exhaustive_local_pvalue(w, np.arange(10.0), MORAN, 0)

    def test_star_centre_and_leaf(self):
        adj = np.zeros((4, 4), dtype=int)
        adj[0, 1:] = adj[1:, 0] = 1
        w = WeightMatrix(adj)
        y = ObservationVector(np.array([1.0, 2.0, 3.0, 4.0]))
        # centre: every restricted permutation leaves the neighbour set unchanged
        assert exhaustive_local_pvalue(w, y, MORAN, 0) == 1.0
        # leaf 1 (y = 2): lambda row over the others is (z0 z1, z2 z1, z3 z1)
        z = [Fraction(v) - Fraction(5, 2) for v in (1, 2, 3, 4)]
        lam = [z[1] * z[j] for j in (0, 2, 3)]
        centre = sum(lam) / 3
        obs = abs(lam[0] - centre)
        hits = 0
        for perm in itertools.permutations(range(3)):
            hits += abs(lam[perm[0]] - centre) >= obs
        expected = Fraction(hits, 6)
        assert expected == Fraction(1, 3)
        assert exhaustive_local_pvalue(w, y, MORAN, 1) == float(expected)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_matches_python_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 7))
        w = weights_from_adjacency(random_connected_adjacency(rng, n))
        y = ObservationVector(rng.standard_normal(n))
        i = int(rng.integers(0, n))
        for kind in ProximityKind:
            expected = exhaustive_two_sided(list(proximity_row(y, kind, i)), list(w.w[i]), i)
            assert exhaustive_local_pvalue(w, y, kind, i) == pytest.approx(expected, abs=1e-15)


def _oracle_single_global(w, y, kind):
    n = len(y)
    ybar = sum(y) / n
    lam = (lambda a, b: (a - ybar) * (b - ybar)) if kind is MORAN else (lambda a, b: (a - b) ** 2)
    edges = [(i, j) for i in range(n) for j in range(n) if w[i][j]]

    def gamma(vals):
        return sum(lam(vals[i], vals[j]) for i, j in edges)

    values = [gamma([y[p] for p in perm]) for perm in itertools.permutations(range(n))]
    centre = sum(values) / len(values)
    obs = abs(gamma(list(y)) - centre)
    return sum(abs(v - centre) >= obs - 1e-9 for v in values) / len(values), centre


def _oracle_product_group(w, y, kind, draws, rng):
    n = len(y)
    total = np.zeros(draws)
    centre = 0.0
    obs = 0.0
    for i in range(n):
        row = proximity_row(ObservationVector(y), kind, i)
        nb = np.nonzero(w[i])[0]
        others = np.array([j for j in range(n) if j != i])
        keys = rng.random((draws, n - 1))
        shuffled = others[np.argsort(keys, axis=1)]
        # neighbour j_k maps to the image at its position among the others
        pos = np.searchsorted(others, nb)
        total += row[shuffled[:, pos]].sum(axis=1)
        centre += nb.size * row[others].mean()
        obs += row[nb].sum()
    return float(np.mean(np.abs(total - centre) >= abs(obs - centre) - 1e-9))


class TestGlobal:
    def test_all_exceed(self, ring8_w):
        y = np.full(8, 2.5)
        for mode in ("single-global", "product-group-global"):
            assert mc_global_pvalue(ring8_w, y, MORAN, PermutationPlan(mode, B=499, seed=1)) == 1.0
        assert exhaustive_global_pvalue(ring8_w, y, GEARY) == 1.0

    def test_rejects_local_plan(self, ring8_w):
        with pytest.raises(ValueError):
            mc_global_pvalue(ring8_w, np.arange(8.0), MORAN, PermutationPlan(LOCAL, B=9, seed=1, fixed=0))

    def test_exhaustive_refuses_large_n(self):
        w = WeightMatrix(ring_adjacency(10))
        with pytest.raises(InfeasibleRequest):
            exhaustive_global_pvalue(w, np.arange(10.0), MORAN)

    @pytest.mark.parametrize("kind", list(ProximityKind))
    def test_n6_both_modes(self, kind):
        rng = np.random.default_rng(6)
        w = weights_from_adjacency(random_connected_adjacency(rng, 6, 0.3))
        y = rng.standard_normal(6)
        exact, _ = _oracle_single_global(w.w.tolist(), list(y), kind)
        assert exhaustive_global_pvalue(w, y, kind) == pytest.approx(exact, abs=1e-12)
        B = 4000
        p_single = mc_global_pvalue(w, y, kind, PermutationPlan("single-global", B=B, seed=6))
        assert _binomial_ok(p_single, exact, B)
        ref = _oracle_product_group(w.w, y, kind, 40_000, np.random.default_rng(60))
        p_prod = mc_global_pvalue(w, y, kind, PermutationPlan("product-group-global", B=B, seed=6))
        assert abs(p_prod - ref) <= 3 * math.sqrt(ref * (1 - ref) * (1 / B + 1 / 40_000)) + 1 / (B + 1)

    def test_thread_independence(self):
        w = WeightMatrix(ring_adjacency(12))
        y = np.random.default_rng(1).standard_normal(12)
        for mode in ("single-global", "product-group-global"):
            ps = {
                mc_global_pvalue(w, y, GEARY, PermutationPlan(mode, B=2 * BLOCK + 5, seed=8, threads=t))
                for t in (1, 3)
            }
            assert len(ps) == 1


class TestGetisOrdEquivalence:
    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_shared_stream_upper_tail(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 12))
        w = weights_from_adjacency(random_connected_adjacency(rng, n, 0.3))
        y = ObservationVector(rng.gamma(2.0, size=n) + 0.1)
        for i in np.nonzero(y.values > y.mean)[0]:
            i = int(i)
            if w.m[i] in (0, n - 1):
                continue
            plan = PermutationPlan(LOCAL, B=300, seed=seed, tail="upper", fixed=i)
            assert mc_local_pvalue(w, y, Statistic.MORAN, i, plan) == mc_local_pvalue(
                w, y, Statistic.GETIS_G_STAR, i, plan
            )
