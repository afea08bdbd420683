"""Finite groups, edge cocycles and congruence-twisted transfer operators.

A cocycle assigns a group element to every admissible edge (j, k); along
a word it multiplies left to right, c(w) = c(w0,w1) c(w1,w2) ... .  The
twisted operator acts on group-fibered cylinder functions by

    (M H)(x)(g) = sum over preimages x' of  exp((f_a + i b tau)(x')) *
                  H(x')(g * c(x')^{-1})

so that k-fold application twists by the ordered product c^k(x')^{-1}.
Fiber norms are Euclidean on C^{order}; spatial norms are weighted by
the equilibrium measure nu_U.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sft import InadmissibleWord, SubshiftSpec, Word, depth_index
from .thermo import NormalizedPotential, TransferOperator

DENSE_GROUP_CAP = 3000


class CongruenceError(ValueError):
    pass


class OrderTooLarge(CongruenceError):
    pass


class NotPrime(CongruenceError):
    pass


class DimensionMismatch(CongruenceError):
    pass


class NotZeroSum(CongruenceError):
    pass


class NotAProductGroup(CongruenceError):
    pass


class BadFactorSelection(CongruenceError):
    pass


class NoAdmissiblePath(CongruenceError):
    pass


@dataclass(frozen=True, eq=False)
class FiniteGroupTable:
    """Finite group by explicit multiplication table on indices 0..order-1."""

    order: int
    mul: np.ndarray  # (order, order) int32
    inv: np.ndarray  # (order,)
    identity: int
    kind: str = "group"
    labels: tuple[str, ...] | None = None
    factors: tuple["FiniteGroupTable", ...] | None = None

    def __post_init__(self):
        self.mul.setflags(write=False)
        self.inv.setflags(write=False)

    def multiply(self, a: int, b: int) -> int:
        return int(self.mul[a, b])

    def inverse(self, a: int) -> int:
        return int(self.inv[a])

    def validate(self, sample: int = 2000, rng=None) -> None:
        """Group-law sanity check: exhaustive for order <= 64, sampled above."""
        n = self.order
        assert (self.mul[self.identity] == np.arange(n)).all()
        assert (self.mul[:, self.identity] == np.arange(n)).all()
        assert (self.mul[np.arange(n), self.inv] == self.identity).all()
        if n <= 64:
            triples = [(a, b, c) for a in range(n) for b in range(n) for c in range(n)]
        else:
            rng = np.random.default_rng(0) if rng is None else rng
            triples = rng.integers(0, n, size=(sample, 3)).tolist()
        for a, b, c in triples:
            assert self.mul[self.mul[a, b], c] == self.mul[a, self.mul[b, c]]


def trivial_group() -> FiniteGroupTable:
    return FiniteGroupTable(order=1, mul=np.zeros((1, 1), dtype=np.int32),
                            inv=np.zeros(1, dtype=np.int32), identity=0, kind="trivial")


def cyclic_group(q: int) -> FiniteGroupTable:
    if q < 2:
        raise CongruenceError(f"cyclic level must be >= 2, got {q}")
    if q > DENSE_GROUP_CAP:
        raise OrderTooLarge(f"order {q} exceeds the dense cap {DENSE_GROUP_CAP}")
    idx = np.arange(q)
    mul = (idx[:, None] + idx[None, :]) % q
    return FiniteGroupTable(order=q, mul=mul.astype(np.int32),
                            inv=((-idx) % q).astype(np.int32), identity=0,
                            kind=f"cyclic({q})",
                            labels=tuple(str(i) for i in range(q)))


def _is_prime(p: int) -> bool:
    if p < 2:
        return False
    return all(p % d for d in range(2, int(p**0.5) + 1))


def sl2_group(p: int) -> FiniteGroupTable:
    """SL(2, F_p) by exhaustive enumeration of unit-determinant matrices."""
    if not _is_prime(p) or p == 2:
        raise NotPrime(f"sl2 level must be an odd prime, got {p}")
    order = p * (p * p - 1)
    if order > DENSE_GROUP_CAP:
        raise OrderTooLarge(f"SL2(F_{p}) has order {order} > cap {DENSE_GROUP_CAP}")
    grid = np.arange(p)
    a, b, c, d = np.meshgrid(grid, grid, grid, grid, indexing="ij")
    det_one = ((a * d - b * c) % p) == 1
    elems = np.stack([a[det_one], b[det_one], c[det_one], d[det_one]], axis=1)
    # Lexicographic canonical order of (a, b, c, d) tuples.
    order_key = np.lexsort((elems[:, 3], elems[:, 2], elems[:, 1], elems[:, 0]))
    elems = elems[order_key]
    n = len(elems)
    assert n == order
    code = ((elems[:, 0] * p + elems[:, 1]) * p + elems[:, 2]) * p + elems[:, 3]
    lut = np.full(p**4, -1, dtype=np.int32)
    lut[code] = np.arange(n, dtype=np.int32)
    mats = elems.reshape(n, 2, 2)
    mul = np.empty((n, n), dtype=np.int32)
    for i in range(n):
        prod = np.einsum("ij,njk->nik", mats[i], mats) % p
        pcode = ((prod[:, 0, 0] * p + prod[:, 0, 1]) * p + prod[:, 1, 0]) * p + prod[:, 1, 1]
        mul[i] = lut[pcode]
    invm = np.stack([mats[:, 1, 1], (-mats[:, 0, 1]) % p,
                     (-mats[:, 1, 0]) % p, mats[:, 0, 0]], axis=1)
    icode = ((invm[:, 0] * p + invm[:, 1]) * p + invm[:, 2]) * p + invm[:, 3]
    inv = lut[icode]
    ident = int(lut[((1 * p + 0) * p + 0) * p + 1])
    labels = tuple(f"[{e[0]},{e[1]};{e[2]},{e[3]}]" for e in elems)
    return FiniteGroupTable(order=n, mul=mul, inv=inv.astype(np.int32), identity=ident,
                            kind=f"sl2({p})", labels=labels)


def sl2_element(group: FiniteGroupTable, a: int, b: int, c: int, d: int) -> int:
    """Index of an explicit matrix in an sl2 group table."""
    p = {24: 3, 120: 5, 336: 7, 1320: 11, 2184: 13}.get(group.order)
    if p is None or not group.kind.startswith("sl2"):
        raise CongruenceError("sl2_element needs an sl2 group table")
    target = f"[{a % p},{b % p};{c % p},{d % p}]"
    return group.labels.index(target)


def product_group(factors) -> FiniteGroupTable:
    """Direct product with mixed-radix element indices (first factor most
    significant); for coprime cyclic factors this is the usual CRT model."""
    factors = tuple(factors)
    if not factors:
        raise CongruenceError("product needs at least one factor")
    order = 1
    for f in factors:
        order *= f.order
    if order > DENSE_GROUP_CAP:
        raise OrderTooLarge(f"product order {order} > cap {DENSE_GROUP_CAP}")
    radix = np.ones(len(factors), dtype=np.int64)
    for i in range(len(factors) - 2, -1, -1):
        radix[i] = radix[i + 1] * factors[i + 1].order
    idx = np.arange(order)
    digits = [(idx // radix[i]) % factors[i].order for i in range(len(factors))]
    mul = np.zeros((order, order), dtype=np.int64)
    inv = np.zeros(order, dtype=np.int64)
    for i, f in enumerate(factors):
        gi = digits[i]
        mul += radix[i] * f.mul[gi[:, None], gi[None, :]]
        inv += radix[i] * f.inv[gi]
    ident = int(sum(radix[i] * factors[i].identity for i in range(len(factors))))
    kind = "x".join(f.kind for f in factors)
    return FiniteGroupTable(order=order, mul=mul.astype(np.int32),
                            inv=inv.astype(np.int32), identity=ident,
                            kind=f"product({kind})", factors=factors)


def build_group(descriptor) -> FiniteGroupTable:
    """Build a group from a config descriptor.

    Accepts {"kind": "cyclic", "q": 5}, {"kind": "sl2", "p": 3},
    {"kind": "trivial"} or {"kind": "product", "factors": [...]}.
    """
    kind = descriptor["kind"]
    if kind == "cyclic":
        return cyclic_group(int(descriptor["q"]))
    if kind == "sl2":
        return sl2_group(int(descriptor["p"]))
    if kind == "trivial":
        return trivial_group()
    if kind == "product":
        return product_group(build_group(d) for d in descriptor["factors"])
    raise CongruenceError(f"unknown group kind {kind!r}")


@dataclass(frozen=True)
class Cocycle:
    """Group element per admissible edge; identity-valued on request."""

    spec: SubshiftSpec
    group: FiniteGroupTable
    edge_values: dict[tuple[int, int], int]

    def __post_init__(self):
        n = self.spec.alphabet_size
        admissible = {(j, k) for j in range(n) for k in range(n)
                      if self.spec.transition[j, k]}
        if set(self.edge_values) != admissible:
            missing = admissible - set(self.edge_values)
            extra = set(self.edge_values) - admissible
            raise CongruenceError(
                f"cocycle must cover exactly the admissible edges; missing {missing}, extra {extra}")

    def value(self, j: int, k: int) -> int:
        return self.edge_values[(j, k)]


def constant_cocycle(spec: SubshiftSpec, group: FiniteGroupTable, element: int) -> Cocycle:
    n = spec.alphabet_size
    edges = {(j, k): element for j in range(n) for k in range(n) if spec.transition[j, k]}
    return Cocycle(spec, group, edges)


def cocycle_product(c: Cocycle, word: Word) -> int:
    """Ordered edge product c(w0,w1) c(w1,w2) ... along an admissible word."""
    if len(word) < 1 or not c.spec.is_admissible(word):
        raise InadmissibleWord(f"{word} is not admissible")
    g = c.group.identity
    for j in range(len(word) - 1):
        g = c.group.mul[g, c.edge_values[(word[j], word[j + 1])]]
    return int(g)


@dataclass
class FiberedFunction:
    """Cylinder-indexed family of fiber vectors in C^{group order}."""

    depth: int
    values: np.ndarray  # (n_cylinders, order) complex
    zero_sum: bool = False

    def check_zero_sum(self, tol: float = 1e-12) -> bool:
        return bool(np.abs(self.values.sum(axis=1)).max(initial=0.0) <= tol)


class TwistedOperator:
    """Congruence transfer operator for one (a, b, group, cocycle) choice."""

    def __init__(self, context: NormalizedPotential, b: float,
                 group: FiniteGroupTable, cocycle: Cocycle):
        if cocycle.group is not group and cocycle.group.order != group.order:
            raise DimensionMismatch("cocycle and operator use different groups")
        self.context = context
        self.spec = context.spec
        self.depth = context.depth
        self.b = b
        self.group = group
        self.cocycle = cocycle
        self.ki = depth_index(self.spec, self.depth)
        self.weights = context.weights(b).astype(complex)
        # Column gather per deep word: entry g of the output reads the
        # source fiber at g * c(edge)^{-1}.
        edge_list = sorted({(w[0], w[1]) for w in self.ki.words_deep})
        self.edge_of = np.array([edge_list.index((w[0], w[1])) for w in self.ki.words_deep],
                                dtype=np.int64)
        cols = np.empty((len(edge_list), group.order), dtype=np.int64)
        for e, pair in enumerate(edge_list):
            cinv = group.inv[cocycle.edge_values[pair]]
            cols[e] = group.mul[:, cinv]
        self.colmap = cols

    @property
    def n(self) -> int:
        return self.ki.n

    def apply(self, values: np.ndarray) -> np.ndarray:
        if values.shape != (self.ki.n, self.group.order):
            raise DimensionMismatch(
                f"expected shape {(self.ki.n, self.group.order)}, got {values.shape}")
        out = np.zeros_like(values, dtype=complex)
        for _, sel in self.ki.lead_slices:
            gathered = values[self.ki.src[sel][:, None], self.colmap[self.edge_of[sel]]]
            out[self.ki.dst[sel]] += self.weights[sel][:, None] * gathered
        return out

    def apply_fibered(self, h: FiberedFunction) -> FiberedFunction:
        out = self.apply(h.values)
        return FiberedFunction(self.depth, out, zero_sum=h.zero_sum)


def twisted_apply(context: NormalizedPotential, b: float, group: FiniteGroupTable,
                  cocycle: Cocycle, h: FiberedFunction) -> FiberedFunction:
    """One application of the congruence transfer operator M_{a+ib, group}."""
    return TwistedOperator(context, b, group, cocycle).apply_fibered(h)


def l2_norm(h_values: np.ndarray, nu_u: np.ndarray) -> float:
    """Equilibrium-weighted L2 norm of a fibered (or scalar) function."""
    fiber_sq = np.abs(h_values) ** 2
    if fiber_sq.ndim == 2:
        fiber_sq = fiber_sq.sum(axis=1)
    return float(np.sqrt(nu_u @ fiber_sq))


def fiber_inner(h1: np.ndarray, h2: np.ndarray, nu_u: np.ndarray) -> complex:
    """<H1, H2> = integral of the fiber inner product against nu_U."""
    return complex(np.einsum("xg,xg,x->", h1, h2.conj(), nu_u))


@dataclass(frozen=True)
class FiberedNorms:
    sup_norm: float
    lip_d: float
    lip_dtheta: float
    one_b_norm: float


def norms(h: FiberedFunction, b: float, spec: SubshiftSpec) -> FiberedNorms:
    """Sup and Lipschitz seminorms of a fibered function.

    At working depth the manifold metric is realized by d_theta of
    representative sequences, so the two Lipschitz fields coincide; the
    1,b norm divides the Lipschitz part by max(1, |b|).
    """
    ki = depth_index(spec, h.depth)
    fiber_norms = np.linalg.norm(h.values, axis=1)
    sup = float(fiber_norms.max(initial=0.0))
    d = ki.pairwise_d()
    # ||H(u) - H(u')||_2 over all pairs.
    lip = 0.0
    for i in range(ki.n):
        diff = np.linalg.norm(h.values[i][None, :] - h.values, axis=1)
        sel = d[i] > 0
        if sel.any():
            lip = max(lip, float((diff[sel] / d[i][sel]).max()))
    one_b = sup + lip / max(1.0, abs(b))
    return FiberedNorms(sup_norm=sup, lip_d=lip, lip_dtheta=lip, one_b_norm=one_b)


@dataclass(frozen=True, eq=False)
class GapReport:
    level: int
    norms: np.ndarray
    fitted_rate: float
    constant: float
    residual: float

    def __post_init__(self):
        self.norms.setflags(write=False)


def fit_log_decay(norm_seq: np.ndarray, floor: float = 1e-300) -> tuple[float, float, float]:
    """Least-squares fit of log norms vs k over the tail half.

    Returns (rate, constant, residual) with norms ~ constant * exp(-rate k);
    underflowed entries are dropped from the window.
    """
    k = np.arange(len(norm_seq))
    start = len(norm_seq) // 2
    sel = (k >= start) & (norm_seq > floor)
    if sel.sum() < 2:
        return 0.0, float(norm_seq[0] if len(norm_seq) else 0.0), 0.0
    ks, ys = k[sel], np.log(norm_seq[sel])
    coef = np.polyfit(ks, ys, 1)
    fitted = np.polyval(coef, ks)
    residual = float(np.sqrt(np.mean((ys - fitted) ** 2)))
    return float(-coef[0]), float(np.exp(coef[1])), residual


def twisted_decay(context: NormalizedPotential, b: float, group: FiniteGroupTable,
                  cocycle: Cocycle, h: FiberedFunction, kmax: int,
                  level: int | None = None) -> GapReport:
    """Norm sequence ||M^k H||_2 for k = 0..kmax and its log-linear tail fit."""
    if not h.check_zero_sum(tol=1e-10 * max(1.0, float(np.abs(h.values).max(initial=0.0)))):
        raise NotZeroSum("input fibers must sum to zero in every cylinder")
    op = TwistedOperator(context, b, group, cocycle)
    nu_u = context.nu_u()
    seq = [l2_norm(h.values, nu_u)]
    cur = h.values
    for _ in range(kmax):
        cur = op.apply(cur)
        seq.append(l2_norm(cur, nu_u))
    seq = np.array(seq)
    if kmax == 0:
        return GapReport(level=level or group.order, norms=seq, fitted_rate=0.0,
                         constant=float(seq[0]), residual=0.0)
    rate, const, residual = fit_log_decay(seq)
    return GapReport(level=level or group.order, norms=seq, fitted_rate=rate,
                     constant=const, residual=residual)


@dataclass(frozen=True)
class NewSubspace:
    """Orthogonal piece of L^2_0(G) pulled back from a factor selection.

    `selection` lists the retained factor positions; fibers in the image
    are zero-sum in every retained factor and constant across dropped
    factors.  `spade` = product of dropped orders relates the norms:
    ||phi|| = sqrt(spade) * ||project(phi)||.
    """

    group: FiniteGroupTable
    selection: tuple[int, ...]
    spade: int
    subgroup: FiniteGroupTable

    def _to_axes(self, phi: np.ndarray) -> np.ndarray:
        shape = phi.shape[:-1] + tuple(f.order for f in self.group.factors)
        return phi.reshape(shape)

    def project_fiber(self, phi: np.ndarray) -> np.ndarray:
        """e_{q,q'}: zero-sum along retained factors, average along dropped."""
        nfac = len(self.group.factors)
        lead = phi.ndim - 1
        arr = self._to_axes(phi)
        for i in range(nfac):
            axis = lead + i
            mean = arr.mean(axis=axis, keepdims=True)
            arr = (arr - mean) if i in self.selection else np.broadcast_to(
                mean, arr.shape).copy()
        return arr.reshape(phi.shape)

    def push_down(self, phi: np.ndarray) -> np.ndarray:
        """proj_{q,q'}: evaluate at any lift (slice dropped coordinates)."""
        nfac = len(self.group.factors)
        lead = phi.ndim - 1
        arr = self._to_axes(phi)
        slicer = [slice(None)] * arr.ndim
        for i in range(nfac):
            if i not in self.selection:
                slicer[lead + i] = self.group.factors[i].identity
        out = arr[tuple(slicer)]
        return out.reshape(phi.shape[:-1] + (self.subgroup.order,))


def new_subspace(group: FiniteGroupTable, selection) -> NewSubspace:
    """Decomposition data for the selected sub-product of factors."""
    if group.factors is None:
        raise NotAProductGroup("group was not built as a product")
    selection = tuple(sorted(set(int(i) for i in selection)))
    if not selection:
        raise BadFactorSelection("selection must retain at least one factor")
    if any(i < 0 or i >= len(group.factors) for i in selection):
        raise BadFactorSelection(f"selection {selection} outside factor range")
    spade = 1
    for i, f in enumerate(group.factors):
        if i not in selection:
            spade *= f.order
    sub = product_group([group.factors[i] for i in selection])
    return NewSubspace(group=group, selection=selection, spade=spade, subgroup=sub)


def project_cocycle(c: Cocycle, group: FiniteGroupTable, sub: NewSubspace) -> Cocycle:
    """Push a product-group cocycle down to the retained factors."""
    radix = np.ones(len(group.factors), dtype=np.int64)
    for i in range(len(group.factors) - 2, -1, -1):
        radix[i] = radix[i + 1] * group.factors[i + 1].order
    sub_radix = np.ones(len(sub.selection), dtype=np.int64)
    for i in range(len(sub.selection) - 2, -1, -1):
        sub_radix[i] = sub_radix[i + 1] * group.factors[sub.selection[i + 1]].order
    edges = {}
    for pair, g in c.edge_values.items():
        digits = [(g // radix[i]) % group.factors[i].order for i in range(len(group.factors))]
        edges[pair] = int(sum(sub_radix[j] * digits[i] for j, i in enumerate(sub.selection)))
    return Cocycle(c.spec, sub.subgroup, edges)


def generating_set(c: Cocycle, group: FiniteGroupTable, p: int, y: int, z: int,
                   path_cap: int = 4_000_000) -> set[int]:
    """Quotients of ordered cocycle products over path pairs y -> z.

    Paths have p+1 edges (p+2 symbols); each pair (w, wbar) contributes
    prod(w) * prod(wbar)^{-1}.  Contains the identity and is closed
    under inversion by the w <-> wbar symmetry.
    """
    spec = c.spec
    paths = [(y,)]
    for _ in range(p + 1):
        paths = [w + (k,) for w in paths for k in spec.successors(w[-1])]
    paths = [w for w in paths if w[-1] == z]
    if not paths:
        raise NoAdmissiblePath(f"no admissible path of length {p + 1} from {y} to {z}")
    if len(paths) ** 2 > path_cap:
        raise CongruenceError(f"{len(paths)}^2 path pairs exceed the cap {path_cap}")
    prods = np.array([cocycle_product(c, w) for w in paths], dtype=np.int64)
    out = set()
    inv = group.inv
    mul = group.mul
    for g1 in prods:
        out.update(int(v) for v in mul[g1, inv[prods]])
    return out
