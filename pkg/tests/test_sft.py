import itertools

import numpy as np
import pytest

from shiftlab.sft import (
    DeadSymbol,
    DepthZero,
    LengthMismatch,
    NonSquareMatrix,
    SftError,
    ThetaOutOfRange,
    build_subshift,
    check_mixing,
    cylinder_diameter,
    d_theta,
    depth_index,
    enumerate_cylinders,
    forced_run,
    omega_continuation,
    representative,
)


def brute_cylinders(spec, depth):
    """Oracle: filter the full product alphabet by admissibility."""
    out = []
    for w in itertools.product(range(spec.alphabet_size), repeat=depth):
        if spec.is_admissible(w):
            out.append(w)
    return out


class TestBuildSubshift:
    def test_full_shift_valid(self):
        spec = build_subshift(2, [[1, 1], [1, 1]], 0.5)
        assert spec.alphabet_size == 2
        assert spec.theta == 0.5

    def test_dead_symbol_rejected(self):
        with pytest.raises(DeadSymbol):
            build_subshift(2, [[1, 1], [0, 0]], 0.5)
        with pytest.raises(DeadSymbol):
            build_subshift(2, [[1, 0], [1, 0]], 0.5)

    def test_golden_mean_valid(self):
        # Oracle: brute-force row/column nonzero check.
        t = np.array([[1, 1], [1, 0]])
        assert (t.sum(axis=0) > 0).all() and (t.sum(axis=1) > 0).all()
        spec = build_subshift(2, t, 0.5)
        assert spec.is_admissible((0, 1, 0))
        assert not spec.is_admissible((0, 1, 1))

    def test_non_square_rejected(self):
        with pytest.raises(NonSquareMatrix):
            build_subshift(2, [[1, 1, 0], [1, 1, 0]], 0.5)

    def test_bad_theta_rejected(self):
        for theta in (0.0, 1.0, -0.3, 2.0):
            with pytest.raises(ThetaOutOfRange):
                build_subshift(2, [[1, 1], [1, 1]], theta)

    def test_non_binary_entries_rejected(self):
        with pytest.raises(SftError):
            build_subshift(2, [[2, 1], [1, 1]], 0.5)


class TestMixing:
    def test_full_shift_exponent_one(self, full2):
        assert check_mixing(full2).exponent == 1

    def test_permutation_never_mixes(self):
        spec = build_subshift(2, [[0, 1], [1, 0]], 0.5)
        assert check_mixing(spec, max_power=64) is None

    def test_golden_mean_exponent_two(self, golden):
        # Oracle: explicit matrix powers.
        t = np.array([[1, 1], [1, 0]])
        assert not (t > 0).all()
        assert (t @ t > 0).all()
        assert check_mixing(golden).exponent == 2

    def test_certificate_gives_positive_power(self, three_chain):
        cert = check_mixing(three_chain)
        power = np.linalg.matrix_power(three_chain.transition.astype(int), cert.exponent)
        assert (power > 0).all()

    def test_mixing_connects_all_pairs(self, golden):
        # With exponent n there is a length-(n+1) admissible word j -> k
        # for every ordered symbol pair.
        n = check_mixing(golden).exponent
        words = enumerate_cylinders(golden, n + 1)
        for j in range(2):
            for k in range(2):
                assert any(w[0] == j and w[-1] == k for w in words)


class TestEnumerateCylinders:
    def test_full_shift_counts(self, full2):
        assert len(enumerate_cylinders(full2, 3)) == 8

    def test_golden_mean_fibonacci(self, golden):
        # Counts follow the Fibonacci recursion; depth 3 has 5 words.
        words = enumerate_cylinders(golden, 3)
        assert len(words) == 5
        assert words == brute_cylinders(golden, 3)
        assert len(enumerate_cylinders(golden, 1)) == 2

    def test_lexicographic_order(self, three_chain):
        for depth in (1, 2, 3, 4):
            words = enumerate_cylinders(three_chain, depth)
            assert words == sorted(words)
            assert words == brute_cylinders(three_chain, depth)

    def test_depth_zero_rejected(self, full2):
        with pytest.raises(DepthZero):
            enumerate_cylinders(full2, 0)

    def test_truncation_surjects(self, golden):
        deep = {w[:-1] for w in enumerate_cylinders(golden, 5)}
        assert deep == set(enumerate_cylinders(golden, 4))


class TestDTheta:
    def test_identical_words(self, full2):
        assert d_theta((0, 1, 0), (0, 1, 0), full2) == 0.0

    def test_first_symbol_differs(self, full2):
        assert d_theta((0, 1, 0), (1, 1, 0), full2) == 1.0

    def test_late_disagreement(self, full2):
        # First disagreement at index 2 gives theta^2.
        assert d_theta((0, 1, 0), (0, 1, 1), full2) == 0.25

    def test_length_mismatch(self, full2):
        with pytest.raises(LengthMismatch):
            d_theta((0, 1), (0, 1, 0), full2)

    def test_metric_axioms_exhaustive(self, three_chain):
        # Symmetry, identity of indiscernibles, triangle inequality on
        # all word pairs at small depth.
        words = enumerate_cylinders(three_chain, 4)
        for x in words:
            for y in words:
                dxy = d_theta(x, y, three_chain)
                assert dxy == d_theta(y, x, three_chain)
                assert (dxy == 0.0) == (x == y)
        for x, y, z in itertools.islice(itertools.product(words, repeat=3), 20000):
            assert d_theta(x, z, three_chain) <= (
                d_theta(x, y, three_chain) + d_theta(y, z, three_chain) + 1e-15
            )


class TestRepresentatives:
    def test_forced_run_golden(self, golden):
        assert forced_run(golden, 0) == 0  # symbol 0 branches
        assert forced_run(golden, 1) == 1  # 1 -> 0 forced, then branch

    def test_cylinder_diameter_golden(self, golden):
        # Ending at the branching symbol: theta^len; after symbol 1 one
        # forced step is needed first.
        assert cylinder_diameter(golden, (0,)) == 0.5
        assert cylinder_diameter(golden, (1,)) == 0.25
        assert cylinder_diameter(golden, (0, 1)) == 0.125

    def test_diameter_is_exact_sup(self, golden):
        # Oracle: max pairwise distance between deep refinements.
        ki = depth_index(golden, 6)
        for prefix_len in (1, 2, 3):
            for prefix in enumerate_cylinders(golden, prefix_len):
                members = [w for w in ki.words if w[:prefix_len] == prefix]
                best = max(
                    d_theta(a, b, golden) for a in members for b in members
                )
                assert cylinder_diameter(golden, prefix) == pytest.approx(best)

    def test_omega_continuation_admissible(self, golden):
        w = omega_continuation(golden, 1, 5)
        assert golden.is_admissible((1,) + w)
        assert w == (0, 0, 0, 0, 0)

    def test_representative_periodic_or_fallback(self, golden):
        assert representative(golden, (0, 1), 6) == (0, 1, 0, 1, 0, 1)
        spec = build_subshift(3, [[1, 1, 0], [0, 1, 1], [1, 0, 1]], 0.5)
        # (0, 1) cannot wrap (T[1, 0] = 0): falls back to smallest continuation.
        rep = spec and representative(spec, (0, 1), 5)
        assert rep[:2] == (0, 1)
        assert spec.is_admissible(rep)


class TestDepthIndex:
    def test_src_dst_consistency(self, golden):
        ki = depth_index(golden, 4)
        for i, w in enumerate(ki.words_deep):
            assert ki.words[ki.src[i]] == w[:-1]
            assert ki.words[ki.dst[i]] == w[1:]

    def test_pairwise_d_matches_scalar(self, golden):
        ki = depth_index(golden, 4)
        d = ki.pairwise_d()
        for i, a in enumerate(ki.words):
            for j, b in enumerate(ki.words):
                assert d[i, j] == d_theta(a, b, golden)

    def test_metric_dominates_d(self, golden):
        # D(u, u') >= d(u, u') on all pairs, equality off-diagonal at
        # branching prefixes, positive on the diagonal.
        ki = depth_index(golden, 5)
        d = ki.pairwise_d()
        D = ki.metric_D_matrix()
        assert (D >= d - 1e-15).all()
        assert (np.diag(D) > 0).all()
