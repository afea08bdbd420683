import itertools
import math

import numpy as np
import pytest

from shiftlab.congruence import (
    BadFactorSelection,
    Cocycle,
    CongruenceError,
    FiberedFunction,
    NoAdmissiblePath,
    NotAProductGroup,
    NotPrime,
    NotZeroSum,
    OrderTooLarge,
    TwistedOperator,
    build_group,
    cocycle_product,
    constant_cocycle,
    cyclic_group,
    fiber_inner,
    fit_log_decay,
    generating_set,
    l2_norm,
    new_subspace,
    norms,
    product_group,
    project_cocycle,
    sl2_element,
    sl2_group,
    trivial_group,
    twisted_apply,
    twisted_decay,
)
from shiftlab.sft import InadmissibleWord, depth_index, enumerate_cylinders
from shiftlab.thermo import ThermoConfig, normalized_potential, potential_table, transfer_operator

CFG = ThermoConfig(depth=4)


def make_context(spec, roof="1 + 0.2*(x0 == 0)", a=0.0, depth=4):
    tau = potential_table(roof, spec, min(2, depth))
    return normalized_potential(a, tau, spec, ThermoConfig(depth=depth), depth=depth)


def golden_sl2_cocycle(spec, group):
    # Upper/lower unipotent generators on the two out-edges of symbol 0;
    # these generate SL2 over any prime field.
    gen_a = sl2_element(group, 1, 1, 0, 1)
    gen_b = sl2_element(group, 1, 0, 1, 1)
    return Cocycle(spec, group, {(0, 0): gen_a, (0, 1): gen_b, (1, 0): group.identity})


def brute_twisted_apply(context, b, group, cocycle, values):
    """Oracle: direct per-cylinder, per-group-element summation."""
    spec = context.spec
    ki = depth_index(spec, context.depth)
    w = context.weights(b)
    out = np.zeros_like(values, dtype=complex)
    for i_deep, word in enumerate(ki.words_deep):
        src = ki.index[word[:-1]]
        dst = ki.index[word[1:]]
        c = cocycle.edge_values[(word[0], word[1])]
        cinv = group.inv[c]
        for g in range(group.order):
            out[dst, g] += w[i_deep] * values[src, group.mul[g, cinv]]
    return out


class TestGroups:
    def test_cyclic_basics(self):
        g = cyclic_group(5)
        assert g.order == 5
        assert g.inverse(2) == 3
        g.validate()

    def test_sl2_3_order_by_bruteforce(self):
        g = sl2_group(3)
        count = 0
        for a, b, c, d in itertools.product(range(3), repeat=4):
            if (a * d - b * c) % 3 == 1:
                count += 1
        assert g.order == count == 24
        g.validate()

    def test_sl2_rejects_non_prime(self):
        with pytest.raises(NotPrime):
            sl2_group(9)
        with pytest.raises(NotPrime):
            sl2_group(2)

    def test_order_cap(self):
        with pytest.raises(OrderTooLarge):
            sl2_group(17)
        with pytest.raises(OrderTooLarge):
            cyclic_group(5000)

    def test_product_crt_is_cyclic(self):
        g = product_group([cyclic_group(3), cyclic_group(5)])
        assert g.order == 15
        g.validate()
        # CRT: some element has order 15, so the product is cyclic.
        def element_order(g, x):
            y, k = x, 1
            while y != g.identity:
                y = g.multiply(y, x)
                k += 1
            return k
        assert max(element_order(g, x) for x in range(15)) == 15

    def test_build_group_dispatch(self):
        assert build_group({"kind": "cyclic", "q": 7}).order == 7
        assert build_group({"kind": "sl2", "p": 3}).order == 24
        assert build_group({"kind": "trivial"}).order == 1
        g = build_group({"kind": "product",
                         "factors": [{"kind": "cyclic", "q": 3}, {"kind": "cyclic", "q": 5}]})
        assert g.order == 15
        with pytest.raises(CongruenceError):
            build_group({"kind": "nope"})


class TestCocycle:
    def test_requires_exact_edge_cover(self, golden):
        g = cyclic_group(3)
        with pytest.raises(CongruenceError):
            Cocycle(golden, g, {(0, 0): 1})
        with pytest.raises(CongruenceError):
            Cocycle(golden, g, {(0, 0): 1, (0, 1): 2, (1, 0): 0, (1, 1): 0})

    def test_single_symbol_is_identity(self, golden):
        c = constant_cocycle(golden, cyclic_group(3), 1)
        assert cocycle_product(c, (0,)) == 0

    def test_single_edge(self, golden):
        c = constant_cocycle(golden, cyclic_group(5), 2)
        assert cocycle_product(c, (0, 1)) == 2

    def test_order_matters_nonabelian(self, golden):
        g = sl2_group(3)
        c = golden_sl2_cocycle(golden, g)
        forward = cocycle_product(c, (0, 0, 1))
        # reversing the edge values reverses the product
        swapped = Cocycle(golden, g, {(0, 0): c.edge_values[(0, 1)],
                                      (0, 1): c.edge_values[(0, 0)],
                                      (1, 0): g.identity})
        backward = cocycle_product(swapped, (0, 0, 1))
        ga, gb = c.edge_values[(0, 0)], c.edge_values[(0, 1)]
        assert forward == g.multiply(ga, gb)
        assert backward == g.multiply(gb, ga)
        assert forward != backward

    def test_inadmissible_word_rejected(self, golden):
        c = constant_cocycle(golden, cyclic_group(3), 1)
        with pytest.raises(InadmissibleWord):
            cocycle_product(c, (1, 1))


class TestTwistedApply:
    def test_trivial_group_bit_for_bit(self, golden):
        ctx = make_context(golden)
        group = trivial_group()
        c = constant_cocycle(golden, group, 0)
        op = TwistedOperator(ctx, 0.3, group, c)
        plain = transfer_operator_from(ctx, 0.3)
        rng = np.random.default_rng(7)
        h = rng.standard_normal(op.n) + 1j * rng.standard_normal(op.n)
        twisted = h[:, None].copy()
        flat = h.copy()
        for _ in range(3):
            twisted = op.apply(twisted)
            flat = plain.apply(flat)
            assert (twisted[:, 0] == flat).all()  # bitwise equality

    def test_zero_input(self, golden):
        ctx = make_context(golden)
        g = cyclic_group(4)
        c = constant_cocycle(golden, g, 1)
        h = FiberedFunction(4, np.zeros((ctx.operator().n, 4), dtype=complex))
        out = twisted_apply(ctx, 0.0, g, c, h)
        assert np.all(out.values == 0)

    def test_cyclic_character_closed_form(self, golden):
        # Fiber = character chi_m; the twist multiplies by a fixed root
        # of unity and acts per cylinder like the untwisted operator.
        q, m = 5, 2
        ctx = make_context(golden)
        g = cyclic_group(q)
        c = constant_cocycle(golden, g, 1)
        op = TwistedOperator(ctx, 0.0, g, c)
        n = op.n
        rng = np.random.default_rng(3)
        v = rng.standard_normal(n)
        omega = np.exp(2j * np.pi / q)
        chi = omega ** (m * np.arange(q))
        h = np.outer(v, chi).astype(complex)
        out = op.apply(h)
        plain = transfer_operator_from(ctx, 0.0)
        expected = np.outer(plain.apply(v.astype(complex)), chi) * omega ** (-m)
        assert np.allclose(out, expected, atol=1e-12)
        oracle = brute_twisted_apply(ctx, 0.0, g, c, h)
        assert np.allclose(out, oracle, atol=1e-12)

    def test_matches_bruteforce_nonabelian(self, golden, rng):
        ctx = make_context(golden)
        g = sl2_group(3)
        c = golden_sl2_cocycle(golden, g)
        op = TwistedOperator(ctx, 0.7, g, c)
        h = rng.standard_normal((op.n, 24)) + 1j * rng.standard_normal((op.n, 24))
        assert np.allclose(op.apply(h), brute_twisted_apply(ctx, 0.7, g, c, h), atol=1e-12)

    def test_zero_sum_preserved(self, golden, rng):
        ctx = make_context(golden)
        g = sl2_group(3)
        c = golden_sl2_cocycle(golden, g)
        h = rng.standard_normal((ctx.operator().n, 24)).astype(complex)
        h -= h.mean(axis=1, keepdims=True)
        fib = FiberedFunction(4, h, zero_sum=True)
        out = twisted_apply(ctx, 0.4, g, c, fib)
        assert out.zero_sum
        assert np.abs(out.values.sum(axis=1)).max() <= 1e-12

    def test_iteration_law_with_cocycle(self, golden, rng):
        # M^k weights use the ordered product c^k; oracle enumerates
        # admissible k-prefixes and multiplies edges left to right.
        ctx = make_context(golden)
        g = sl2_group(3)
        c = golden_sl2_cocycle(golden, g)
        op = TwistedOperator(ctx, 0.5, g, c)
        ki = depth_index(golden, 4)
        h = rng.standard_normal((op.n, 24)).astype(complex)
        w = ctx.weights(0.5)
        for k in (1, 2, 3):
            cur = h.copy()
            for _ in range(k):
                cur = op.apply(cur)
            oracle = np.zeros_like(h)
            for xi, x in enumerate(ki.words):
                for prefix in enumerate_cylinders(golden, k):
                    if not golden.transition[prefix[-1], x[0]]:
                        continue
                    full = prefix + x
                    weight = np.prod([w[ki.deep_index[full[j: j + 5]]] for j in range(k)])
                    ck = cocycle_product(c, prefix + (x[0],))
                    cols = g.mul[:, g.inv[ck]]
                    oracle[xi] += weight * h[ki.index[full[:4]], cols]
            assert np.allclose(cur, oracle, atol=1e-11)

    def test_unitarity_of_translation(self, rng):
        g = sl2_group(3)
        phi = rng.standard_normal(24) + 1j * rng.standard_normal(24)
        for elem in (1, 5, 17):
            translated = phi[g.mul[:, elem]]
            assert np.linalg.norm(translated) == pytest.approx(np.linalg.norm(phi))


class TestNorms:
    def test_constant_fiber(self, golden):
        n = depth_index(golden, 4).n
        h = FiberedFunction(4, np.ones((n, 3), dtype=complex))
        res = norms(h, 0.0, golden)
        assert res.lip_d == 0.0
        assert res.one_b_norm == res.sup_norm == pytest.approx(math.sqrt(3))

    def test_b_scaling_exact(self, golden, rng):
        n = depth_index(golden, 4).n
        h = FiberedFunction(4, rng.standard_normal((n, 3)).astype(complex))
        r0 = norms(h, 0.0, golden)
        r10 = norms(h, 10.0, golden)
        assert r10.one_b_norm == pytest.approx(r0.sup_norm + r0.lip_d / 10.0)

    def test_l2_below_sup(self, golden, rng):
        ctx = make_context(golden)
        n = ctx.operator().n
        h = FiberedFunction(4, rng.standard_normal((n, 5)).astype(complex))
        res = norms(h, 0.0, golden)
        assert l2_norm(h.values, ctx.nu_u()) <= res.sup_norm + 1e-12


class TestTwistedDecay:
    def test_constant_cocycle_no_gap(self, golden):
        # chi_1 sector of a constant-generator cyclic twist has modulus-one
        # eigenvalue: the norm sequence is flat.
        q = 7
        ctx = make_context(golden)
        g = cyclic_group(q)
        c = constant_cocycle(golden, g, 1)
        omega = np.exp(2j * np.pi / q)
        chi = omega ** np.arange(q)
        n = ctx.operator().n
        h = FiberedFunction(4, np.outer(np.ones(n), chi).astype(complex), zero_sum=True)
        report = twisted_decay(ctx, 0.0, g, c, h, kmax=20, level=q)
        assert abs(report.fitted_rate) <= 1e-8
        assert np.allclose(report.norms, report.norms[0], atol=1e-10)

    def test_generating_cocycle_decays(self, golden, rng):
        ctx = make_context(golden)
        g = sl2_group(3)
        c = golden_sl2_cocycle(golden, g)
        n = ctx.operator().n
        h = rng.standard_normal((n, 24)).astype(complex)
        h -= h.mean(axis=1, keepdims=True)
        report = twisted_decay(ctx, 0.0, g, c, FiberedFunction(4, h, zero_sum=True), kmax=25)
        assert report.fitted_rate > 0
        assert all(report.norms[k + 1] < report.norms[k] for k in range(2, 25))

    def test_kmax_zero(self, golden, rng):
        ctx = make_context(golden)
        g = cyclic_group(3)
        c = constant_cocycle(golden, g, 1)
        n = ctx.operator().n
        h = rng.standard_normal((n, 3)).astype(complex)
        h -= h.mean(axis=1, keepdims=True)
        report = twisted_decay(ctx, 0.0, g, c, FiberedFunction(4, h, zero_sum=True), kmax=0)
        assert len(report.norms) == 1
        assert report.fitted_rate == 0.0

    def test_zero_sum_required(self, golden):
        ctx = make_context(golden)
        g = cyclic_group(3)
        c = constant_cocycle(golden, g, 1)
        n = ctx.operator().n
        h = FiberedFunction(4, np.ones((n, 3), dtype=complex), zero_sum=False)
        with pytest.raises(NotZeroSum):
            twisted_decay(ctx, 0.0, g, c, h, kmax=3)


class TestNewSubspace:
    def test_full_selection_is_identity(self, rng):
        g = product_group([cyclic_group(3), cyclic_group(5)])
        sub = new_subspace(g, (0, 1))
        assert sub.spade == 1
        phi = rng.standard_normal(15) + 1j * rng.standard_normal(15)
        phi0 = sub.project_fiber(phi)
        # image: zero-sum in both factors; push_down is then the identity
        assert np.allclose(sub.push_down(phi0), phi0)

    def test_norm_scaling_sqrt5(self, rng):
        # Retain the 3-factor: members are constant across the 5-factor,
        # so the norm drops by exactly sqrt(5) on push-down.
        g = product_group([cyclic_group(3), cyclic_group(5)])
        sub = new_subspace(g, (0,))
        assert sub.spade == 5
        phi = rng.standard_normal(15) + 1j * rng.standard_normal(15)
        e_phi = sub.project_fiber(phi)
        down = sub.push_down(e_phi)
        assert np.linalg.norm(e_phi) == pytest.approx(
            math.sqrt(5) * np.linalg.norm(down), rel=1e-12)

    def test_parseval_over_subproducts(self, rng):
        g = product_group([cyclic_group(3), cyclic_group(5)])
        phi = rng.standard_normal(15) + 1j * rng.standard_normal(15)
        phi -= phi.mean()  # zero-sum overall
        pieces = [new_subspace(g, sel).project_fiber(phi) for sel in [(0,), (1,), (0, 1)]]
        total = sum(np.linalg.norm(p) ** 2 for p in pieces)
        assert total == pytest.approx(np.linalg.norm(phi) ** 2, rel=1e-10)
        assert np.allclose(sum(pieces), phi, atol=1e-12)

    def test_requires_product(self):
        with pytest.raises(NotAProductGroup):
            new_subspace(cyclic_group(6), (0,))
        g = product_group([cyclic_group(3), cyclic_group(5)])
        with pytest.raises(BadFactorSelection):
            new_subspace(g, ())

    def test_projector_commutes_with_twist(self, golden, rng):
        g = product_group([cyclic_group(3), cyclic_group(5)])
        edges = {(0, 0): 4, (0, 1): 7, (1, 0): 11}
        c = Cocycle(golden, g, edges)
        ctx = make_context(golden)
        op = TwistedOperator(ctx, 0.6, g, c)
        sub = new_subspace(g, (0,))
        h = rng.standard_normal((op.n, 15)) + 1j * rng.standard_normal((op.n, 15))
        lhs = sub.project_fiber(op.apply(h))
        rhs = op.apply(sub.project_fiber(h))
        assert np.allclose(lhs, rhs, atol=1e-10)

    def test_push_down_intertwines_operators(self, golden, rng):
        g = product_group([cyclic_group(3), cyclic_group(5)])
        edges = {(0, 0): 4, (0, 1): 7, (1, 0): 11}
        c = Cocycle(golden, g, edges)
        ctx = make_context(golden)
        sub = new_subspace(g, (0,))
        c_sub = project_cocycle(c, g, sub)
        op = TwistedOperator(ctx, 0.6, g, c)
        op_sub = TwistedOperator(ctx, 0.6, sub.subgroup, c_sub)
        h = rng.standard_normal((op.n, 15)) + 1j * rng.standard_normal((op.n, 15))
        h = sub.project_fiber(h)
        lhs = sub.push_down(op.apply(h))
        rhs = op_sub.apply(sub.push_down(h))
        assert np.allclose(lhs, rhs, atol=1e-10)


class TestGeneratingSet:
    def test_single_path_gives_identity(self, golden):
        # From symbol 1 the first step is forced to 0; choose (y, z) and p
        # with a unique admissible path.
        g = sl2_group(3)
        c = golden_sl2_cocycle(golden, g)
        # paths of length 1 edge... p=0: words (y, z) only; unique.
        out = generating_set(c, g, 0, 1, 0)
        assert out == {g.identity}

    def test_constant_cocycle_cancels(self, golden):
        g = cyclic_group(7)
        c = constant_cocycle(golden, g, 3)
        for p in (1, 2, 3):
            out = generating_set(c, g, p, 0, 0)
            assert out == {g.identity}

    def test_full_shift_bruteforce(self, full2, rng):
        g = sl2_group(3)
        edges = {(0, 0): sl2_element(g, 1, 1, 0, 1), (0, 1): sl2_element(g, 1, 0, 1, 1),
                 (1, 0): sl2_element(g, 0, 1, 2, 0), (1, 1): g.identity}
        c = Cocycle(full2, g, edges)
        out = generating_set(c, g, 1, 0, 1)
        # oracle: double loop over the 4 paths of 2 edges from 0 to 1
        paths = [w for w in itertools.product(range(2), repeat=3)
                 if w[0] == 0 and w[-1] == 1]
        oracle = set()
        for w1 in paths:
            for w2 in paths:
                oracle.add(g.multiply(cocycle_product(c, w1), g.inverse(cocycle_product(c, w2))))
        assert out == oracle
        assert g.identity in out
        assert all(g.inverse(x) in out for x in out)

    def test_no_path(self, golden):
        g = cyclic_group(3)
        c = constant_cocycle(golden, g, 1)
        # length-1 path (p=0) from 1 to 1 needs edge (1,1): inadmissible.
        with pytest.raises(NoAdmissiblePath):
            generating_set(c, g, 0, 1, 1)


class TestFitLogDecay:
    def test_recovers_planted_rate(self):
        k = np.arange(40)
        seq = 3.0 * np.exp(-0.37 * k)
        rate, const, residual = fit_log_decay(seq)
        assert rate == pytest.approx(0.37, abs=1e-10)
        assert const == pytest.approx(3.0, rel=1e-8)
        assert residual <= 1e-10

    def test_underflow_guard(self):
        seq = np.array([1.0, 1e-320, 0.0, 0.0])
        rate, const, residual = fit_log_decay(seq)
        assert np.isfinite(rate) and np.isfinite(const)


def transfer_operator_from(ctx, b):
    return ctx.operator(b)
