"""Path measures on the group, Cayley spectral gaps and L2-flattening.

The s-step twisted operator at a point factors, up to a O(theta^{s-r})
defect, through convolutions against path measures: summing the weight
exp((f_s + i b tau_s)) over admissible length-r bridges and placing the
mass at the ordered cocycle product gives the measure mu (and its
real-weight companions mu_hat, nu0, nu).  Breaking the bridge into
blocks of length l produces measures that are flat up to a fixed factor
within each block, which is what the Cayley-graph expansion of the
cocycle's generating sets can exploit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .congruence import (
    Cocycle,
    CongruenceError,
    FiberedFunction,
    FiniteGroupTable,
    TwistedOperator,
    cocycle_product,
    generating_set,
    new_subspace,
    norms,
)
from .sft import SubshiftSpec, Word, depth_index, omega_continuation
from .thermo import NormalizedPotential

DENSE_EIG_CAP = 3000


class FlatteningError(ValueError):
    pass


class DimensionMismatch(FlatteningError):
    pass


class EmptyGeneratingSet(FlatteningError):
    pass


class InadmissibleHead(FlatteningError):
    pass


class BadRange(FlatteningError):
    pass


class BadFactorization(FlatteningError):
    pass


@dataclass
class GroupMeasure:
    """Complex measure on a finite group (weights per element index)."""

    group: FiniteGroupTable
    weights: np.ndarray

    def __post_init__(self):
        if self.weights.shape != (self.group.order,):
            raise DimensionMismatch(
                f"weights must have length {self.group.order}, got {self.weights.shape}")

    @property
    def is_real_nonnegative(self) -> bool:
        w = self.weights
        return not np.iscomplexobj(w) or (np.abs(w.imag).max(initial=0) == 0 and w.real.min() >= 0)

    def l1(self) -> float:
        return float(np.abs(self.weights).sum())

    def l2(self) -> float:
        return float(np.linalg.norm(self.weights))

    def linf(self) -> float:
        return float(np.abs(self.weights).max(initial=0.0))

    def adjoint(self) -> "GroupMeasure":
        """mu*(g) = conj(mu(g^{-1}))."""
        return GroupMeasure(self.group, np.conj(self.weights[self.group.inv]))


def delta_measure(group: FiniteGroupTable, element: int) -> GroupMeasure:
    w = np.zeros(group.order)
    w[element] = 1.0
    return GroupMeasure(group, w)


def uniform_measure(group: FiniteGroupTable) -> GroupMeasure:
    return GroupMeasure(group, np.full(group.order, 1.0 / group.order))


def convolve(mu: GroupMeasure, phi: np.ndarray) -> np.ndarray:
    """(mu * phi)(g) = sum_h mu(h) phi(g h^{-1}); also the measure product."""
    group = mu.group
    if phi.shape[-1] != group.order:
        raise DimensionMismatch(f"fiber length {phi.shape[-1]} != group order {group.order}")
    support = np.flatnonzero(mu.weights)
    out = np.zeros(phi.shape, dtype=np.result_type(mu.weights, phi))
    for h in support:
        out += mu.weights[h] * phi[..., group.mul[:, group.inv[h]]]
    return out


def convolve_measures(mu: GroupMeasure, nu: GroupMeasure) -> GroupMeasure:
    return GroupMeasure(mu.group, convolve(mu, nu.weights))


def convolution_matrix(mu: GroupMeasure) -> np.ndarray:
    """Matrix of phi -> mu * phi: M[g, x] = mu(x^{-1} g)."""
    group = mu.group
    xg = group.mul[group.inv[:, None], np.arange(group.order)[None, :]]  # x^{-1} g
    return mu.weights[xg].T.copy()


@dataclass(frozen=True)
class CayleyGraph:
    group: FiniteGroupTable
    gens: tuple[int, ...]  # symmetrized, deduplicated

    @property
    def degree(self) -> int:
        return len(self.gens)


def build_cayley(group: FiniteGroupTable, gens) -> CayleyGraph:
    gens = set(int(g) for g in gens)
    if not gens:
        raise EmptyGeneratingSet("generating set is empty")
    gens |= {int(group.inv[g]) for g in gens}
    return CayleyGraph(group=group, gens=tuple(sorted(gens)))


def cayley_gap(graph: CayleyGraph) -> tuple[float, float, float]:
    """(lambda1, lambda2, eps) of the adjacency operator A phi(g) = sum phi(gs).

    lambda1 equals the degree with constant eigenvector (validated);
    eps = 1 - lambda2/lambda1 vanishes exactly when the generators span
    a proper subgroup (disconnected graph).
    """
    group = graph.group
    n = group.order
    if n > DENSE_EIG_CAP:
        raise FlatteningError(f"group order {n} exceeds dense eigensolve cap {DENSE_EIG_CAP}")
    adj = np.zeros((n, n))
    for s in graph.gens:
        adj[np.arange(n), group.mul[:, s]] += 1.0
    eigs = np.linalg.eigvalsh(adj)
    lam1 = float(eigs[-1])
    lam2 = float(eigs[-2]) if n > 1 else lam1
    # Degree eigenvalue with constant eigenvector.
    const = np.ones(n) / math.sqrt(n)
    residual = float(np.abs(adj @ const - graph.degree * const).max())
    if abs(lam1 - graph.degree) > 1e-8 or residual > 1e-10:
        raise FlatteningError("adjacency operator failed the degree/constant-vector check")
    eps = 1.0 - lam2 / lam1 if n > 1 else 1.0
    return lam1, lam2, eps


def _bridge_words(spec: SubshiftSpec, after: int, length: int, before: int) -> list[Word]:
    """Admissible words w (len `length`) with after -> w[0] and w[-1] -> before."""
    words = [(k,) for k in spec.successors(after)]
    for _ in range(length - 1):
        words = [w + (k,) for w in words for k in spec.successors(w[-1])]
    return [w for w in words if spec.transition[w[-1], before]]


def measure_cf(context: NormalizedPotential, kmax: int = 64) -> float:
    """Uniform bound on the total normalized weight of k-step preimages.

    Computed as max over k <= kmax of ||L_a^k 1||_inf; equals 1 at a = 0
    and stays bounded over the window because the normalized operator
    has unit leading eigenvalue.
    """
    op = context.operator(0.0)
    cur = np.ones(op.n)
    best = 1.0
    for _ in range(kmax):
        cur = op.apply(cur).real
        best = max(best, float(cur.max()))
    return best * (1.0 + 1e-12)


@dataclass
class FlatteningMeasures:
    """The four path measures of one (head, tail, r, s) instance.

    mu carries the oscillatory weight exp(f_s + i b tau_s); mu_hat its
    modulus counterpart; nu0 uses only the r-step weight; nu rescales
    nu0 by the head weight evaluated along the deterministic
    continuation.  comparison_factor is the proven envelope
    exp(T0 * theta / (1 - theta)) for the mu_hat / nu sandwich.
    """

    mu: GroupMeasure
    mu_hat: GroupMeasure
    nu: GroupMeasure
    nu0: GroupMeasure
    head: Word
    tail: Word
    r: int
    s: int
    comparison_factor: float
    mu_le_mu_hat: bool = True
    sandwich_ok: bool = True
    max_ratio_hat_over_nu: float = 0.0
    max_ratio_nu_over_hat: float = 0.0


def _window_weight(ki, wdeep: np.ndarray, word: Word, start: int, count: int) -> complex:
    """Product of transfer weights over `count` windows of `word` from `start`."""
    out = 1.0 + 0.0j
    width = ki.depth + 1
    for j in range(start, start + count):
        out *= wdeep[ki.deep_index[word[j: j + width]]]
    return out


def build_flattening_measures(context: NormalizedPotential, b: float,
                              group: FiniteGroupTable, cocycle: Cocycle,
                              tail: Word, r: int, s: int, head: Word,
                              t0: float) -> FlatteningMeasures:
    """Assemble the path measures for one head/tail pair.

    head is the fixed upper word (length s - r), tail a working-depth
    word; the sum runs over all admissible length-r bridges; each path
    places mass at the ordered (r+1)-edge cocycle product ending with
    the edge into the tail.
    """
    spec = context.spec
    if not (0 < r < s):
        raise BadRange(f"need 0 < r < s, got r={r}, s={s}")
    if len(head) != s - r:
        raise BadRange(f"head must have s - r = {s - r} symbols, got {len(head)}")
    if not spec.is_admissible(head):
        raise InadmissibleHead(f"head {head} is not admissible")
    ki = depth_index(spec, context.depth)
    if len(tail) != context.depth:
        raise BadRange(f"tail must be a depth-{context.depth} word")
    w_complex = context.weights(b).astype(complex)
    w_real = context.weights(0.0).astype(float)
    n = group.order
    mu = np.zeros(n, dtype=complex)
    mu_hat = np.zeros(n)
    nu0 = np.zeros(n)
    for bridge in _bridge_words(spec, head[-1], r, tail[0]):
        full = head + bridge + tail
        w_s = _window_weight(ki, w_complex, full, 0, s)
        w_s_hat = _window_weight(ki, w_real, full, 0, s).real
        w_r = _window_weight(ki, w_real, full, s - r, r).real
        point = cocycle_product(cocycle, full[s - r - 1: s + 1])
        mu[point] += w_s
        mu_hat[point] += w_s_hat
        nu0[point] += w_r
    # Head weight along the deterministic continuation.
    ext = head + omega_continuation(spec, head[-1], context.depth)
    head_weight = _window_weight(ki, w_real, ext, 0, s - r).real
    nu = head_weight * nu0
    comparison = math.exp(t0 * spec.theta / (1.0 - spec.theta))
    mu_le_hat = bool((np.abs(mu) <= mu_hat + 1e-12 * max(1.0, mu_hat.max(initial=0))).all())
    sup = np.flatnonzero(mu_hat + nu > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = float(np.max(mu_hat[sup] / np.where(nu[sup] > 0, nu[sup], np.inf), initial=0.0))
        r2 = float(np.max(nu[sup] / np.where(mu_hat[sup] > 0, mu_hat[sup], np.inf), initial=0.0))
    sandwich_ok = r1 <= comparison * (1 + 1e-12) and r2 <= comparison * (1 + 1e-12)
    return FlatteningMeasures(
        mu=GroupMeasure(group, mu), mu_hat=GroupMeasure(group, mu_hat),
        nu=GroupMeasure(group, nu), nu0=GroupMeasure(group, nu0),
        head=head, tail=tail, r=r, s=s, comparison_factor=comparison,
        mu_le_mu_hat=mu_le_hat, sandwich_ok=sandwich_ok,
        max_ratio_hat_over_nu=r1, max_ratio_nu_over_hat=r2)


def head_fiber(context: NormalizedPotential, group: FiniteGroupTable,
               cocycle: Cocycle, h: FiberedFunction, head: Word) -> np.ndarray:
    """phi_head: the input fiber at (head, omega), pre-twisted by the
    cocycle product along the head's own edges."""
    spec = context.spec
    point = (head + omega_continuation(spec, head[-1], context.depth))[: context.depth]
    ki = depth_index(spec, context.depth)
    vec = h.values[ki.index[point]]
    k = cocycle_product(cocycle, head) if len(head) >= 2 else group.identity
    return convolve(delta_measure(group, k), vec)


@dataclass
class DefectReport:
    defect: float
    bound: float
    lip_h: float
    cf: float
    ok: bool


def approximation_defect(context: NormalizedPotential, b: float, group: FiniteGroupTable,
                         cocycle: Cocycle, h: FiberedFunction, r: int, s: int,
                         tail: Word, t0: float, cf: float | None = None) -> DefectReport:
    """Distance between the s-step twisted image at one point and the sum
    of head measures convolved with head fibers; the proven envelope is
    cf * Lip(h) * theta^{s-r}."""
    spec = context.spec
    ki = depth_index(spec, context.depth)
    if cf is None:
        cf = measure_cf(context, kmax=max(16, 2 * s))
    from .sft import enumerate_cylinders

    op = TwistedOperator(context, b, group, cocycle)
    cur = h.values.astype(complex)
    for _ in range(s):
        cur = op.apply(cur)
    lhs = cur[ki.index[tail]]
    rhs = np.zeros(group.order, dtype=complex)
    for head in enumerate_cylinders(spec, s - r):
        fm = build_flattening_measures(context, b, group, cocycle, tail, r, s, head, t0)
        if not fm.mu.weights.any():
            continue
        rhs += convolve(fm.mu, head_fiber(context, group, cocycle, h, head))
    defect = float(np.linalg.norm(lhs - rhs))
    lip = norms(h, b, spec).lip_dtheta
    bound = cf * lip * spec.theta ** (s - r)
    return DefectReport(defect=defect, bound=bound, lip_h=lip, cf=cf,
                        ok=defect <= bound * (1 + 1e-9) + 1e-12)


@dataclass
class NearlyFlatReport:
    """Block decomposition of nu0 into convolutions of nearly flat pieces.

    nu1 sums, over the admissible choices of block lower parts, the
    convolution of the per-block measures; flatness is the largest ratio
    of coefficients within one block family; the sandwich factor
    exp(r' * C * theta^l) with C = T0 * theta^(1-p)/(1-theta) must
    dominate nu0/nu1 and nu1/nu0 entrywise.
    """

    nu0: GroupMeasure
    nu1: GroupMeasure
    eta_blocks: dict
    flatness: float
    flatness_bound: float
    sandwich_factor: float
    sandwich_ok: bool
    l1_identity_gap: float


def nearly_flat_decompose(context: NormalizedPotential, group: FiniteGroupTable,
                          cocycle: Cocycle, tail: Word, r: int, block: int,
                          head_symbol: int, t0: float, p: int = 1) -> NearlyFlatReport:
    """Split the r-step path measure into r/l nearly flat block measures.

    `head_symbol` is the symbol above the bridge (the last symbol of the
    head in the parent measure); `block` is the block length l > p and
    must divide r with r/l >= 2.
    """
    spec = context.spec
    if r % block != 0 or block <= p or r // block < 2:
        raise BadFactorization(
            f"need r = r'*l with l > p and r' >= 2; got r={r}, l={block}, p={p}")
    r_blocks = r // block
    ki = depth_index(spec, context.depth)
    w_real = context.weights(0.0).astype(float)

    def edge_weight(word: Word, start: int, count: int) -> float:
        return _window_weight(ki, w_real, word, start, count).real

    # Reference measure: direct enumeration of all bridges.
    nu0 = np.zeros(group.order)
    bridges = _bridge_words(spec, head_symbol, r, tail[0])
    coeff_products = np.zeros(group.order)
    flat_groups: dict = {}
    eta_blocks: dict = {}
    for bridge in bridges:
        full = (head_symbol,) + bridge + tail
        w_r = edge_weight(full, 1, r)
        point = cocycle_product(cocycle, full[: r + 2])
        nu0[point] += w_r

    # Block coefficients.  The bridge word lists alpha_r .. alpha_1 left
    # to right; block j (1-based from the bottom) holds positions
    # r - j*l .. r - (j-1)*l - 1.  Within block j the top p symbols are
    # the free part, the remaining l - p the lower part.
    def block_spans(j: int):
        top = r - j * block  # index in `bridge` of alpha_{jl}
        return top, top + p, top + block

    omega_cache: dict[Word, Word] = {}

    def omega_ext(word: Word) -> Word:
        got = omega_cache.get(word)
        if got is None:
            got = word + omega_continuation(spec, word[-1], context.depth + block)
            omega_cache[word] = got
        return got

    def coefficient(j: int, bridge: Word) -> float:
        # E_j: exact tail-weight for the bottom block, deterministic
        # continuations elsewhere.
        top, _, bot = block_spans(j)
        if j == 1:
            seq = bridge[r - (2 * block - p):] + tail
            return edge_weight(seq, 0, 2 * block - p)
        if j == r_blocks:
            seq = omega_ext(bridge[:block])
            return edge_weight(seq, 0, p)
        upper_lower = bridge[r - (j + 1) * block + p: r - j * block]  # lower part of block j+1
        seq = omega_ext(upper_lower + bridge[top:bot])
        return edge_weight(seq, 0, block)

    for bridge in bridges:
        prod = 1.0
        for j in range(1, r_blocks + 1):
            e_j = coefficient(j, bridge)
            prod *= e_j
            top, mid, bot = block_spans(j)
            upper_ctx = bridge[top - (block - p): top] if j < r_blocks else ()
            key = (j, upper_ctx, bridge[mid:bot])
            flat_groups.setdefault(key, []).append(e_j)
            # eta_j for this dependency key: sum over the free part of
            # E_j times the point mass at the l-edge cocycle product
            # starting one symbol above the block.
            free = bridge[top:mid]
            if j == r_blocks:
                seg = (head_symbol,) + bridge[:bot]
            else:
                seg = bridge[top - 1: bot]
            point = cocycle_product(cocycle, seg)
            entry = eta_blocks.setdefault(key, {})
            entry[free] = (e_j, point)
        # full-path coefficient product at the full cocycle point
        point_full = cocycle_product(cocycle, (head_symbol,) + bridge + (tail[0],))
        coeff_products[point_full] += prod

    def eta_measure(key) -> GroupMeasure:
        w = np.zeros(group.order)
        for (e_j, point) in eta_blocks[key].values():
            w[point] += e_j
        return GroupMeasure(group, w)

    # Chains of lower parts: block j's context symbol is the last entry
    # of block j+1's lower part (the head symbol at the top).  The star
    # composes bottom-up: eta_0, then eta_1, ..., eta_{r'}.
    by_level: dict[int, dict] = {}
    for key in eta_blocks:
        by_level.setdefault(key[0], {}).setdefault(key[1], []).append(key)

    nu1 = np.zeros(group.order)

    def walk(j: int, lower_above: Word, chain: list):
        if j == 0:
            alpha1 = chain[0][-1]  # last symbol of block 1's lower part
            acc = delta_measure(group, cocycle.edge_values[(alpha1, tail[0])])
            for jj, lower in enumerate(chain, start=1):
                upper = () if jj == r_blocks else chain[jj]
                acc = convolve_measures(acc, eta_measure((jj, upper, lower)))
            nonlocal nu1
            nu1 += acc.weights.real
            return
        for key in by_level.get(j, {}).get(lower_above, []):
            walk(j - 1, key[2], [key[2]] + chain)

    walk(r_blocks, (), [])

    flatness = 1.0
    for vals in flat_groups.values():
        flatness = max(flatness, max(vals) / min(vals))
    theta = spec.theta
    c_estimate = t0 * theta ** (1 - p) / (1 - theta)
    flat_bound = math.exp(t0 * (theta / (1 - theta) + p))
    factor = math.exp(r_blocks * c_estimate * theta**block)
    sup = np.flatnonzero(nu0 + nu1 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        up = float(np.max(nu0[sup] / np.where(nu1[sup] > 0, nu1[sup], np.inf), initial=0.0))
        dn = float(np.max(nu1[sup] / np.where(nu0[sup] > 0, nu0[sup], np.inf), initial=0.0))
    ok = up <= factor * (1 + 1e-10) and dn <= factor * (1 + 1e-10)
    gap = abs(coeff_products.sum() - np.abs(nu1).sum())
    return NearlyFlatReport(nu0=GroupMeasure(group, nu0), nu1=GroupMeasure(group, nu1),
                            eta_blocks=eta_blocks, flatness=flatness,
                            flatness_bound=flat_bound, sandwich_factor=factor,
                            sandwich_ok=ok, l1_identity_gap=float(gap))


def newspace_operator_norm(mu: GroupMeasure, level: int) -> tuple[float, float]:
    """Exact operator norm of convolution by mu on the new subspace.

    For product groups the new subspace is the tensor of per-factor
    zero-sum spaces; otherwise plain zero-sum vectors.  Returns the norm
    and the comparison side level^{-1/2} * order^{1/2} * ||mu||_2 (the
    non-effective constant set to 1).
    """
    group = mu.group
    n = group.order
    if n > DENSE_EIG_CAP:
        raise FlatteningError(f"group order {n} exceeds dense cap {DENSE_EIG_CAP}")
    m = convolution_matrix(mu)
    if group.factors is not None:
        sub = new_subspace(group, range(len(group.factors)))
        proj = np.stack([sub.project_fiber(row) for row in np.eye(n)], axis=1)
    else:
        proj = np.eye(n) - np.full((n, n), 1.0 / n)
    # Orthonormal basis of the subspace from the idempotent projector.
    vals, vecs = np.linalg.eigh((proj + proj.T) / 2)
    basis = vecs[:, vals > 0.5]
    if basis.shape[1] == 0:
        return 0.0, 0.0
    singular = np.linalg.svd(m @ basis, compute_uv=False)
    norm = float(singular[0])
    bound_side = level ** (-0.5) * math.sqrt(n) * mu.l2()
    return norm, bound_side


@dataclass
class FlatteningRow:
    level: int
    trial: int
    ratio: float
    lambda2: float
    eps: float
    warning: str = ""


@dataclass
class FlatteningSummary:
    rows: list[FlatteningRow]
    max_ratio_by_level: dict[int, float]
    slope: float

    def table(self) -> list[dict]:
        return [dict(q=r.level, trial=r.trial, ratio=r.ratio, lambda2=r.lambda2,
                     eps=r.eps, warning=r.warning) for r in self.rows]


def flattening_experiment(context: NormalizedPotential, levels: list[dict],
                          trials: int, rng: np.random.Generator,
                          t0: float, r_policy=None, s_gap: int = 2,
                          p: int = 1) -> FlatteningSummary:
    """Measure ||mu * phi||_2 sqrt(q) / ||nu||_1 across group levels.

    Each level descriptor carries a group construction, a cocycle edge
    map builder and its arithmetic level q; phi is a random unit vector
    of the new subspace.  The summary reports the per-level max ratio
    and the log-log regression slope of max ratio against q.
    """
    spec = context.spec
    if r_policy is None:
        def r_policy(q):
            # enough bridge paths to spread mass over a group of size ~ q^3
            target = max(6, int(math.ceil(6.5 * math.log(max(q, 2)))))
            return target
    rows: list[FlatteningRow] = []
    max_ratio: dict[int, float] = {}
    ki = depth_index(spec, context.depth)
    tail = ki.words[0]
    for desc in levels:
        group: FiniteGroupTable = desc["group"]
        cocycle: Cocycle = desc["cocycle"]
        q = int(desc["level"])
        if group.order == 1:
            continue  # trivial level carries no new subspace
        r = int(r_policy(q))
        s = r + s_gap
        # Cayley gap of the generating set at this level (p-step quotients).
        warning = ""
        try:
            gens = set()
            for y in range(spec.alphabet_size):
                for z in range(spec.alphabet_size):
                    try:
                        gens |= generating_set(cocycle, group, p, y, z)
                    except CongruenceError:
                        continue
            gens.discard(group.identity)
            if gens:
                lam1, lam2, eps = cayley_gap(build_cayley(group, gens))
            else:
                lam1, lam2, eps = 0.0, 0.0, 0.0
        except FlatteningError:
            lam1, lam2, eps = 0.0, 0.0, 0.0
        if eps <= 1e-12:
            warning = "generating set does not expand at this level"
        head = _first_admissible_head(spec, s - r, tail[0], r)
        fm = build_flattening_measures(context, 0.0, group, cocycle, tail, r, s, head, t0)
        nu_l1 = fm.nu.l1()
        for trial in range(trials):
            phi = rng.standard_normal(group.order) + 1j * rng.standard_normal(group.order)
            if group.factors is not None:
                sub = new_subspace(group, range(len(group.factors)))
                phi = sub.project_fiber(phi)
            else:
                phi = phi - phi.mean()
            phi /= np.linalg.norm(phi)
            ratio = float(np.linalg.norm(convolve(fm.mu, phi))) * math.sqrt(q) / nu_l1
            rows.append(FlatteningRow(level=q, trial=trial, ratio=ratio,
                                      lambda2=lam2, eps=eps, warning=warning))
            max_ratio[q] = max(max_ratio.get(q, 0.0), ratio)
    if len(max_ratio) >= 2:
        qs = np.array(sorted(max_ratio))
        ys = np.array([max_ratio[q] for q in qs])
        slope = float(np.polyfit(np.log(qs), np.log(ys), 1)[0])
    else:
        slope = 0.0
    return FlatteningSummary(rows=rows, max_ratio_by_level=max_ratio, slope=slope)


def _first_admissible_head(spec: SubshiftSpec, length: int, tail_start: int, r: int) -> Word:
    """Smallest admissible head that admits at least one length-r bridge."""
    if length == 1:
        candidates = [(j,) for j in range(spec.alphabet_size)]
    else:
        from .sft import enumerate_cylinders
        candidates = enumerate_cylinders(spec, length)
    for head in candidates:
        if _bridge_words(spec, head[-1], r, tail_start):
            return head
    raise InadmissibleHead("no admissible head connects to the tail")
