"""Oscillation-damping machinery for large twist frequencies.

The working objects are: the cylinder metric D (diameter of the
smallest common cylinder), cones K_B of positive functions with
log-Lipschitz constant B in D, a partition of a base cylinder union
into maximal cells of diameter eps1/|b| with distinguished subcells,
inverse-branch sections of the m-step shift, and damping operators

    N_{a,J}(h) = L_a^m(beta_J * h),   beta_J = 1 - mu * sum of X-cell
                                                indicators over J.

All constants are solved from measured ingredients in the fixed order
E -> eps1 -> m -> mu; each inequality of the constraint web is checked
at build time and any failure is a hard error naming the constraint.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .congruence import Cocycle, FiniteGroupTable, TwistedOperator, cocycle_product
from .sft import DepthIndex, SubshiftSpec, Word, cylinder_diameter, depth_index
from .thermo import (
    CylinderFunction,
    NormalizedPotential,
    RegularityBudget,
    ThermoConfig,
    gibbs_check,
)


class DolgopyatError(ValueError):
    pass


class InfeasibleConfig(DolgopyatError):
    pass


class BadIndex(DolgopyatError):
    pass


class HypothesesFail(DolgopyatError):
    pass


class SelectionFail(DolgopyatError):
    pass


class PreconditionFail(DolgopyatError):
    pass


@dataclass(frozen=True, eq=False)
class HyperbolicityConstants:
    """Measured expansion/contraction constants of the shift.

    The two-sided bounds c0 * kappa2^j <= d(sigma^j u, sigma^j u')/d(u, u')
    <= kappa1^j / c0 are fitted over all common-cylinder pairs up to the
    scan depth and re-verified on the scanned set; (p0, rho) realize the
    diameter sandwich diam(C'') <= rho diam(C) <= diam(C') for
    subcylinders p0 resp. 1 deeper.
    """

    c0: float
    kappa1: float
    kappa2: float
    rho: float
    p0: int
    verified: bool


def measure_hyperbolicity(spec: SubshiftSpec, depth: int) -> HyperbolicityConstants:
    if depth < 3:
        raise DolgopyatError("need depth >= 3 to fit hyperbolicity constants")
    ki = depth_index(spec, depth)
    ratios = {}
    words = ki.words
    # Ratios d(sigma^j u, sigma^j u') / d(u, u') over common-j-cylinder pairs.
    lo_rate, hi_rate = math.inf, 0.0
    for j in range(1, min(4, depth - 1) + 1):
        for a in range(len(words)):
            for b in range(a + 1, len(words)):
                u, v = words[a], words[b]
                if u[:j] != v[:j]:
                    continue
                i = next(t for t in range(depth) if u[t] != v[t])
                ratio = (spec.theta ** (i - j) / spec.theta**i) ** (1.0 / j)
                lo_rate = min(lo_rate, ratio)
                hi_rate = max(hi_rate, ratio)
    kappa2 = lo_rate if math.isfinite(lo_rate) else 1.0 / spec.theta
    kappa1 = max(hi_rate, kappa2 * (1 + 1e-12))
    # c0 from the worst-case residual at the fitted rates.
    c0 = 1.0
    for j in range(1, min(4, depth - 1) + 1):
        for a in range(len(words)):
            for b in range(a + 1, len(words)):
                u, v = words[a], words[b]
                if u[:j] != v[:j]:
                    continue
                i = next(t for t in range(depth) if u[t] != v[t])
                expansion = spec.theta ** (i - j) / spec.theta**i
                c0 = min(c0, expansion / kappa2**j, kappa1**j / expansion)
    # Diameter sandwich.
    chosen = None
    for p0 in range(1, depth):
        worst_deep = 0.0
        best_child = 1.0
        for k in range(1, depth - p0 + 1):
            for w in depth_index(spec, k).words:
                d_c = cylinder_diameter(spec, w)
                if d_c == 0:
                    continue
                for wpp in depth_index(spec, k + p0).words:
                    if wpp[:k] == w:
                        worst_deep = max(worst_deep, cylinder_diameter(spec, wpp) / d_c)
                for wp in depth_index(spec, k + 1).words:
                    if wp[:k] == w:
                        best_child = min(best_child, cylinder_diameter(spec, wp) / d_c)
        if worst_deep <= best_child and worst_deep < 1.0:
            chosen = (p0, worst_deep)
            break
    if chosen is None:
        raise InfeasibleConfig("diameter-sandwich: no (p0, rho) fits at this depth")
    p0, rho = chosen
    verified = kappa2 > 1.0 and 0 < c0 <= 1.0 and 0 < rho < 1
    if not verified:
        raise InfeasibleConfig("expansion-rates: fitted constants out of range")
    return HyperbolicityConstants(c0=c0, kappa1=kappa1, kappa2=kappa2,
                                  rho=rho, p0=p0, verified=verified)


def metric_D(u: Word, v: Word, spec: SubshiftSpec) -> float:
    """Diameter of the smallest common cylinder; 1 across leading symbols."""
    if len(u) != len(v):
        from .sft import LengthMismatch

        raise LengthMismatch(f"word lengths differ: {len(u)} vs {len(v)}")
    if u[0] != v[0]:
        return 1.0
    common = len(u)
    for t in range(len(u)):
        if u[t] != v[t]:
            common = t
            break
    return cylinder_diameter(spec, u[:common])


@dataclass(frozen=True, eq=False)
class DolgopyatConfig:
    """Solved constant web plus sections for the damping operators."""

    e_const: float
    eps1: float
    m: int
    mu: float
    b0: float
    m1: int
    ell0: int
    p1: int
    delta0: float
    base_symbol: int
    sections: tuple[Word, ...]  # 2*ell0 words of length m
    hyper: HyperbolicityConstants
    a0_log: float  # A0
    t0: float
    a_f: float
    notes: dict = field(default_factory=dict)

    def section_word(self, j: int, ell: int) -> Word:
        # j in {1, 2}, ell in 1..ell0
        return self.sections[2 * (ell - 1) + (j - 1)]


def solve_constants(context: NormalizedPotential, budget: RegularityBudget,
                    delta0: float = 1000.0, p1: int = 1, m1: int = 1,
                    ell0: int = 1, base_symbol: int = 0,
                    delta1: float = math.inf, scan_depth: int = 6) -> DolgopyatConfig:
    """Solve (E, eps1, m, mu) greedily from measured constants.

    Raises InfeasibleConfig naming the first constraint that cannot be
    met at the working depth.
    """
    spec = context.spec
    hyper = measure_hyperbolicity(spec, min(scan_depth, context.depth))
    t0 = budget.t0
    c0, k1, k2, rho, p0 = hyper.c0, hyper.kappa1, hyper.kappa2, hyper.rho, hyper.p0
    a0_log = 2.0 / c0 * math.exp(t0 / (c0 * (k2 - 1))) * max(1.0, t0 / (k2 - 1))
    a0_log *= 1.0 + 1e-9
    e_const = max(1.0, 2.0 * a0_log) * (1.0 + 1e-9)
    r0 = min(cylinder_diameter(spec, (j,)) for j in range(spec.alphabet_size))
    if r0 <= 0:
        raise InfeasibleConfig("base-cylinder-size: a depth-1 cylinder is a single point")
    window = min(c0 * r0 / k1**m1, delta1,
                 math.pi * c0**2 * (k2 - 1) / (2 * t0 * k1**m1))
    if window <= 0:
        raise InfeasibleConfig("eps1-window: empty window for the cell diameter scale")
    eps1 = 0.95 * window
    lower = max(8.0 * a0_log,
                4.0 * e_const * rho**p1 * k1**m1 * eps1 / c0**2,
                4.0 * 128.0 * e_const * k1**m1 / (c0**2 * delta0 * rho))
    m = max(m1 + 1, 2)
    while k2**m <= lower:
        m += 1
        if m > 60:
            raise InfeasibleConfig("iterate-length: kappa2^m cannot exceed its lower bounds")
    mu_cap = min(2.0 * e_const * eps1 * c0**2 * rho ** (p0 * p1 + 1) * k2**m1 / k1**m,
                 0.25,
                 (delta0 * rho * eps1 / 64.0) ** 2 / (16.0 * 16.0 * a0_log))
    if mu_cap <= 0:
        raise InfeasibleConfig("damping-budget: mu upper bounds collapse to zero")
    mu = 0.999 * mu_cap
    # Sections: 2*ell0 smallest admissible length-m words whose last
    # symbol connects to every symbol (so they are global inverse
    # branches of sigma^m).
    full_rows = [j for j in range(spec.alphabet_size)
                 if len(spec.successors(j)) == spec.alphabet_size]
    if not full_rows:
        raise InfeasibleConfig("sections: no symbol has a full transition row")
    words = [w for w in depth_index(spec, m).words if w[-1] in full_rows]
    if len(words) < 2 * ell0:
        raise InfeasibleConfig(f"sections: need {2 * ell0} inverse words of length {m}")
    sections = tuple(words[: 2 * ell0])
    # Base cylinder union must shift onto the whole space.
    if len(spec.successors(base_symbol)) != spec.alphabet_size:
        raise InfeasibleConfig("base-cylinder: sigma^{m1} image of the base does not cover")
    notes = dict(r0=r0, eps1_window=window, mu_cap=mu_cap, kappa_lower=lower)
    return DolgopyatConfig(e_const=e_const, eps1=eps1, m=m, mu=mu, b0=1.0, m1=m1,
                           ell0=ell0, p1=p1, delta0=delta0, base_symbol=base_symbol,
                           sections=sections, hyper=hyper, a0_log=a0_log, t0=t0,
                           a_f=budget.a_f, notes=notes)


def _members(ki: DepthIndex, prefix: Word) -> np.ndarray:
    """Indices of depth-K words extending `prefix` (contiguous in lex order)."""
    lo = bisect.bisect_left(ki.words, prefix)
    hi = bisect.bisect_left(ki.words, prefix[:-1] + (prefix[-1] + 1,))
    return np.arange(lo, hi)


@dataclass(eq=False)
class PartitionXi:
    """Cells of the damping construction for one twist frequency b."""

    b: float
    c_cells: list[Word]
    d_cells: list[Word]
    d_parent: list[int]
    z_cells: list[Word]
    xi: list[tuple[int, int, int]]  # (k, j, ell)
    sections: tuple[Word, ...]
    cfg: DolgopyatConfig
    violations: list[str]
    t_scale: float
    cert_const: float

    def x_word(self, k: int, j: int, ell: int) -> Word:
        return self.cfg.section_word(j, ell) + self.z_cells[k]

    def candidates_for_cell(self, l: int) -> list[tuple[int, int, int]]:
        return [(k, j, ell) for (k, j, ell) in self.xi if self.d_parent[k] == l]


def build_partition_xi(b: float, cfg: DolgopyatConfig, context: NormalizedPotential) -> PartitionXi:
    """Maximal cells of diameter <= eps1/|b| under the base cylinder,
    their deeper subcells, shifted copies and section images.

    Validates the four diameter displays and the disjointness of the
    section images; violations are recorded, an impossible tree walk is
    a hard error.
    """
    spec = context.spec
    depth = context.depth
    if abs(b) <= cfg.b0:
        raise DolgopyatError(f"|b| must exceed b0 = {cfg.b0}")
    cap = cfg.eps1 / abs(b)
    max_c_len = depth + cfg.m1 - cfg.p1 * cfg.hyper.p0 - cfg.m
    if max_c_len < cfg.m1 + 1:
        raise InfeasibleConfig("cell-depth: working depth cannot host cells plus sections")
    base = [w for w in depth_index(spec, cfg.m1).words if w[0] == cfg.base_symbol]
    c_cells: list[Word] = []

    def walk(word: Word):
        if cylinder_diameter(spec, word) <= cap and len(word) > cfg.m1:
            c_cells.append(word)
            return
        if len(word) >= max_c_len:
            raise InfeasibleConfig(
                "cell-depth: diameter cap unreachable before the working depth")
        for k in spec.successors(word[-1]):
            walk(word + (k,))

    for w in base:
        walk(w)
    violations: list[str] = []
    rho, p0, p1 = cfg.hyper.rho, cfg.hyper.p0, cfg.p1
    c0, k1, k2 = cfg.hyper.c0, cfg.hyper.kappa1, cfg.hyper.kappa2
    for w in c_cells:
        d = cylinder_diameter(spec, w)
        if not (rho * cap * (1 - 1e-9) <= d <= cap * (1 + 1e-9)):
            violations.append(f"cell-diameter: diam {d:.3e} outside [{rho * cap:.3e}, {cap:.3e}]")
    d_cells: list[Word] = []
    d_parent: list[int] = []
    for l, w in enumerate(c_cells):
        target = len(w) + p0 * p1
        subs = [w]
        for _ in range(p0 * p1):
            subs = [u + (k,) for u in subs for k in spec.successors(u[-1])]
        for u in subs:
            d_cells.append(u)
            d_parent.append(l)
    for u in d_cells:
        d = cylinder_diameter(spec, u)
        lo = rho ** (p0 * p1 + 1) * cap
        hi = rho**p1 * cap
        if not (lo * (1 - 1e-9) <= d <= hi * (1 + 1e-9)):
            violations.append(f"subcell-diameter: diam {d:.3e} outside [{lo:.3e}, {hi:.3e}]")
    z_cells = [u[cfg.m1:] for u in d_cells]
    for u in z_cells:
        d = cylinder_diameter(spec, u)
        # The m1-step shift expands diameters by a factor inside
        # [c0 kappa2^m1, kappa1^m1 / c0].
        lo = c0 * k2**cfg.m1 * rho ** (p0 * p1 + 1) * cap
        hi = k1**cfg.m1 / c0 * rho**p1 * cap
        if not (lo * (1 - 1e-9) <= d <= hi * (1 + 1e-9)):
            violations.append(f"shifted-diameter: diam {d:.3e} outside [{lo:.3e}, {hi:.3e}]")
    xi = [(k, j, ell) for k in range(len(d_cells))
          for j in (1, 2) for ell in range(1, cfg.ell0 + 1)]
    x_words = {}
    for (k, j, ell) in xi:
        xw = cfg.section_word(j, ell) + z_cells[k]
        if len(xw) > depth:
            raise InfeasibleConfig("cell-depth: section image exceeds the working depth")
        lo = cfg.eps1 * c0**2 * rho ** (p0 * p1 + 1) * k2**cfg.m1 / (abs(b) * k1**cfg.m)
        hi = cfg.eps1 * rho**p1 * k1**cfg.m1 / (abs(b) * c0**2 * k2**cfg.m)
        d = cylinder_diameter(spec, xw)
        if not (lo * (1 - 1e-9) <= d <= hi * (1 + 1e-9)):
            violations.append(f"section-image-diameter: diam {d:.3e} outside [{lo:.3e}, {hi:.3e}]")
        x_words[(k, j, ell)] = xw
    # Pairwise disjointness of section images (distinct prefixes).
    items = sorted(x_words.values())
    for a, bword in zip(items, items[1:]):
        if bword[: len(a)] == a:
            violations.append(f"section-images-overlap: {a} prefixes {bword}")
    t_scale = cfg.eps1 * c0 * rho ** (p0 * p1 + 1) * k2**cfg.m1 / abs(b)
    cert_const = k1**cfg.m1 / (c0**2 * rho ** (p0 * p1 + 1) * k2**cfg.m1)
    return PartitionXi(b=b, c_cells=c_cells, d_cells=d_cells, d_parent=d_parent,
                       z_cells=z_cells, xi=xi, sections=cfg.sections, cfg=cfg,
                       violations=violations, t_scale=t_scale, cert_const=cert_const)


def beta_values(part: PartitionXi, J, context: NormalizedPotential) -> np.ndarray:
    """beta_J on depth-K words: 1 - mu on the selected section images."""
    ki = depth_index(context.spec, context.depth)
    beta = np.ones(ki.n)
    for (k, j, ell) in J:
        if (k, j, ell) not in set(part.xi):
            raise BadIndex(f"{(k, j, ell)} is not in the index set")
        beta[_members(ki, part.x_word(k, j, ell))] -= part.cfg.mu
    return beta


def dolgopyat_apply(context: NormalizedPotential, J, h: np.ndarray,
                    part: PartitionXi) -> np.ndarray:
    """N_{a,J}(h) = L_a^m(beta_J * h)."""
    if (h <= 0).any():
        raise DolgopyatError("input must be strictly positive")
    op = context.operator(0.0)
    cur = beta_values(part, J, context) * h
    for _ in range(part.cfg.m):
        cur = op.apply(cur)
    return np.asarray(cur, dtype=float)


def cone_violation(h: np.ndarray, bound: float, context: NormalizedPotential,
                   d_matrix: np.ndarray | None = None) -> float:
    """Worst relative slack of the K_B cone inequality (<= 0 means member).

    Checks |h(u) - h(u')| <= B h(u) D(u, u') over ordered pairs inside
    each depth-1 cylinder.
    """
    spec = context.spec
    ki = depth_index(spec, context.depth)
    if (h <= 0).any():
        return math.inf
    d = ki.metric_D_matrix() if d_matrix is None else d_matrix
    first = np.array([w[0] for w in ki.words])
    worst = -math.inf
    for i in range(ki.n):
        sel = first == first[i]
        lhs = np.abs(h[i] - h[sel])
        rhs = bound * h[i] * d[i, sel]
        worst = max(worst, float((lhs - rhs).max()))
    return worst


def _mcshane_field(rng: np.random.Generator, d_matrix: np.ndarray) -> np.ndarray:
    """Centered random field with Lipschitz constant <= 1 in the metric D
    (inf-convolution regularization of iid noise)."""
    raw = rng.uniform(-1.0, 1.0, size=d_matrix.shape[0])
    smooth = (raw[None, :] + d_matrix).min(axis=1)
    return smooth - smooth.mean()


def sample_cone_function(rng: np.random.Generator, bound: float,
                         context: NormalizedPotential,
                         d_matrix: np.ndarray, gap_range: tuple[float, float] = (0.7, 1.4),
                         fine_scale: float = 0.25) -> np.ndarray:
    """Random strictly positive cone element with a calibrated roughness.

    log h combines independent offsets per depth-1 cylinder (the cone
    only constrains pairs inside one cylinder, so the offsets are free
    and guarantee genuine variance) with a small D-Lipschitz fine part;
    the fine part is shrunk if the cone inequality is ever violated.
    """
    spec = context.spec
    ki = depth_index(spec, context.depth)
    first = np.array([w[0] for w in ki.words])
    offsets = rng.uniform(-0.5, 0.5, size=spec.alphabet_size)
    spread = offsets.max() - offsets.min()
    gap = rng.uniform(*gap_range)
    if spread > 0:
        offsets = (offsets - offsets.mean()) / spread * gap
    fine = fine_scale * _mcshane_field(rng, d_matrix)
    log_h = offsets[first] + fine
    h = np.exp(log_h)
    for _ in range(60):
        if cone_violation(h, bound, context, d_matrix) <= 0:
            return h
        fine *= 0.5
        h = np.exp(offsets[first] + fine)
    raise DolgopyatError("could not fit a sample into the cone")


def random_dense_j(rng: np.random.Generator, part: PartitionXi) -> list[tuple[int, int, int]]:
    """One uniformly chosen index per cell: dense by construction."""
    out = []
    for l in range(len(part.c_cells)):
        options = part.candidates_for_cell(l)
        out.append(options[int(rng.integers(0, len(options)))])
    return out


def sample_dominated_pair(rng: np.random.Generator, part: PartitionXi,
                          context: NormalizedPotential, order: int,
                          rho_range: tuple[float, float] = (0.25, 0.95),
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Random (H, h) satisfying the domination and log-Lipschitz
    hypotheses: h a cone sample, H = rho(u) h(u) e^{i phi(u)} V with a
    fixed unit fiber direction and slowly varying scalar fields."""
    cfg = part.cfg
    bound = cfg.e_const * abs(part.b)
    ki = depth_index(context.spec, context.depth)
    d_matrix = ki.metric_D_matrix()
    h = sample_cone_function(rng, bound, context, d_matrix)
    direction = rng.standard_normal(order) + 1j * rng.standard_normal(order)
    direction /= np.linalg.norm(direction)
    lo, hi = rho_range
    base = rng.uniform(-1.0, 1.0, size=ki.n)
    smooth = (base[None, :] + d_matrix).min(axis=1)
    span = max(smooth.max() - smooth.min(), 1e-12)
    rho = lo + (hi - lo) * (smooth - smooth.min()) / span
    phase = np.exp(1j * 0.2 * (smooth - smooth.mean()) / span)
    H = (rho * h * phase)[:, None] * direction[None, :]
    check_hypotheses(h, H, part, context, d_matrix)
    return H, h


@dataclass
class WDenseCertificate:
    t: float
    s_const: float
    eta_prime: float
    cover_ok: bool
    diameters_ok: bool
    witness_ok: bool


def wdense_certificate(part: PartitionXi, J, context: NormalizedPotential,
                       depth_range=range(1, 5)) -> WDenseCertificate:
    """Structural (t, S)-dense certificate for W = union of selected
    shifted cells, with the resulting mass constant eta'."""
    spec = context.spec
    cfg = part.cfg
    ki = depth_index(spec, context.depth)
    t = part.t_scale
    s_const = part.cert_const
    blocks = [w[cfg.m1:] for w in part.c_cells]
    covered = np.zeros(ki.n, dtype=bool)
    diameters_ok = True
    witness_ok = True
    selected_cells = {(k) for (k, j, ell) in J}
    for l, bw in enumerate(blocks):
        mem = _members(ki, bw)
        covered[mem] = True
        if cylinder_diameter(spec, bw) > t * s_const * (1 + 1e-9):
            diameters_ok = False
        ks = [k for k in selected_cells if part.d_parent[k] == l]
        if not ks:
            witness_ok = False
            continue
        if all(cylinder_diameter(spec, part.z_cells[k]) < t * (1 - 1e-9) for k in ks):
            witness_ok = False
    cover_ok = bool(covered.all())
    tau = context.tau
    c1, c2 = gibbs_check(context.nu_u(), tau, context.delta, depth_range, spec, context.depth)
    tau_bar = float(np.max(tau.real_values()))
    b_cone = cfg.e_const * cfg.eps1 * cfg.hyper.c0 * cfg.hyper.rho ** (
        cfg.hyper.p0 * cfg.p1 + 1) * cfg.hyper.kappa2**cfg.m1
    eta_prime = (math.exp(-2 * b_cone * s_const) * (c1 / c2)
                 * math.exp(-cfg.hyper.p0 * context.delta * tau_bar
                            * (1 - math.log(s_const) / math.log(cfg.hyper.rho))))
    return WDenseCertificate(t=t, s_const=s_const, eta_prime=eta_prime,
                             cover_ok=cover_ok, diameters_ok=diameters_ok,
                             witness_ok=witness_ok)


def w_mass_fraction(part: PartitionXi, J, context: NormalizedPotential,
                    h: np.ndarray) -> float:
    """integral over W of h^2 relative to the full integral, in nu_U."""
    ki = depth_index(context.spec, context.depth)
    nu_u = context.nu_u()
    mask = np.zeros(ki.n, dtype=bool)
    for (k, j, ell) in J:
        mask[_members(ki, part.z_cells[k])] = True
    total = float(nu_u @ h**2)
    return float(nu_u[mask] @ h[mask] ** 2) / total


@dataclass
class ContractionReport:
    eta_hat: float
    const_ratio: float
    cone_violations: int
    wdense_failures: int
    trials: int
    ratios: list[float]
    certificate: WDenseCertificate
    separation: float
    separation_threshold: float


def measure_separation(part: PartitionXi, context: NormalizedPotential) -> float:
    """Smallest oscillation |b| |Delta(tau_m o v2 - tau_m o v1)| across
    pairs of shifted cells inside one parent cell (diagnostic for the
    roof's non-degeneracy)."""
    spec = context.spec
    cfg = part.cfg
    ki = depth_index(spec, context.depth)
    tau_birk = _birkhoff_section_table(context, cfg)
    best = math.inf
    for l in range(len(part.c_cells)):
        ks = [k for k in range(len(part.d_cells)) if part.d_parent[k] == l]
        for ell in range(1, cfg.ell0 + 1):
            w1 = cfg.section_word(1, ell)
            w2 = cfg.section_word(2, ell)
            for ka in ks:
                for kb in ks:
                    if ka >= kb:
                        continue
                    ua = _members(ki, part.z_cells[ka])
                    ub = _members(ki, part.z_cells[kb])
                    fa = tau_birk[w1][ua] - tau_birk[w2][ua]
                    fb = tau_birk[w1][ub] - tau_birk[w2][ub]
                    osc = np.abs(fa[:, None] - fb[None, :]).min()
                    best = min(best, abs(part.b) * float(osc))
    return best


def _birkhoff_section_table(context: NormalizedPotential, cfg: DolgopyatConfig):
    """tau_m(section + u) for every section and depth-K word u."""
    spec = context.spec
    ki = depth_index(spec, context.depth)
    tau_deep = context.tau_deep()
    out = {}
    for w in cfg.sections:
        vals = np.zeros(ki.n)
        for i, u in enumerate(ki.words):
            full = w + u
            s = 0.0
            for j in range(cfg.m):
                s += tau_deep[ki.deep_index[full[j: j + context.depth + 1]]]
            vals[i] = s
        out[w] = vals
    return out


def _weight_section_table(context: NormalizedPotential, b: float, cfg: DolgopyatConfig):
    """exp((f_a + i b tau)_m) on section branches, per depth-K word."""
    spec = context.spec
    ki = depth_index(spec, context.depth)
    wdeep = context.weights(b).astype(complex)
    out = {}
    for w in cfg.sections:
        vals = np.ones(ki.n, dtype=complex)
        for i, u in enumerate(ki.words):
            full = w + u
            prod = 1.0 + 0.0j
            for j in range(cfg.m):
                prod *= wdeep[ki.deep_index[full[j: j + context.depth + 1]]]
            vals[i] = prod
        out[w] = vals
    return out


def contraction_check(context: NormalizedPotential, part: PartitionXi,
                      trials: int, rng: np.random.Generator) -> ContractionReport:
    """Measured contraction of the damping operators on cone samples.

    eta_hat is the max ratio ||N_{a,J} h||_2 / ||h||_2 over random
    (h, J); const_ratio is the same ratio at h = 1 with a canonical
    dense J (it isolates the bare damping, which is 1 - O(mu));
    cone preservation and the W-density inequality are asserted per
    trial against the structural certificate.
    """
    cfg = part.cfg
    bound = cfg.e_const * abs(part.b)
    ki = depth_index(context.spec, context.depth)
    d_matrix = ki.metric_D_matrix()
    nu_u = context.nu_u()

    def l2(v):
        return math.sqrt(float(nu_u @ v**2))

    cone_violations = 0
    wdense_failures = 0
    ratios = []
    canonical_j = [part.candidates_for_cell(l)[0] for l in range(len(part.c_cells))]
    cert = wdense_certificate(part, canonical_j, context)
    for _ in range(trials):
        h = sample_cone_function(rng, bound, context, d_matrix)
        J = random_dense_j(rng, part)
        image = dolgopyat_apply(context, J, h, part)
        ratios.append(l2(image) / l2(h))
        if cone_violation(image, bound, context, d_matrix) > 1e-12 * float(image.max()):
            cone_violations += 1
        cert_j = wdense_certificate(part, J, context)
        frac = w_mass_fraction(part, J, context, h)
        if not (cert_j.cover_ok and cert_j.diameters_ok and cert_j.witness_ok
                and frac >= cert_j.eta_prime * (1 - 1e-9)):
            wdense_failures += 1
    ones = np.ones(ki.n)
    const_ratio = l2(dolgopyat_apply(context, canonical_j, ones, part)) / l2(ones)
    separation = measure_separation(part, context)
    threshold = cfg.delta0 * cfg.hyper.rho * cfg.eps1 / 16.0
    return ContractionReport(eta_hat=max(ratios) if ratios else const_ratio,
                             const_ratio=const_ratio,
                             cone_violations=cone_violations,
                             wdense_failures=wdense_failures, trials=trials,
                             ratios=ratios, certificate=cert,
                             separation=separation, separation_threshold=threshold)


def check_hypotheses(h: np.ndarray, H: np.ndarray, part: PartitionXi,
                     context: NormalizedPotential, d_matrix: np.ndarray) -> None:
    """Domination and log-Lipschitz hypotheses for the (H, h) pair."""
    ki = depth_index(context.spec, context.depth)
    bound = part.cfg.e_const * abs(part.b)
    fiber = np.linalg.norm(H, axis=1)
    if (fiber > h * (1 + 1e-12)).any():
        raise HypothesesFail("domination: ||H(u)|| exceeds h(u)")
    first = np.array([w[0] for w in ki.words])
    for i in range(ki.n):
        sel = first == first[i]
        lhs = np.linalg.norm(H[i][None, :] - H[sel], axis=1)
        rhs = bound * h[i] * d_matrix[i, sel]
        if (lhs > rhs * (1 + 1e-9) + 1e-14).any():
            raise HypothesesFail("log-lipschitz: ||H(u) - H(u')|| exceeds E|b| h(u) D(u,u')")


def select_dense_j(context: NormalizedPotential, b: float, group: FiniteGroupTable,
                   cocycle: Cocycle, H: np.ndarray, h: np.ndarray,
                   part: PartitionXi) -> list[tuple[int, int, int]]:
    """For each cell pick an index whose comparison function stays <= 1.

    Follows the trapped-alternatives route: a candidate is validated by
    evaluating chi on its shifted cell directly; if some cell admits no
    validated candidate the selection fails with diagnostics (expected
    for degenerate roofs with no phase separation).
    """
    spec = context.spec
    cfg = part.cfg
    ki = depth_index(spec, context.depth)
    d_matrix = ki.metric_D_matrix()
    check_hypotheses(h, H, part, context, d_matrix)
    weight_tab = _weight_section_table(context, b, cfg)
    real_tab = {w: np.abs(v) for w, v in weight_tab.items()}
    out = []
    diagnostics = []
    for l in range(len(part.c_cells)):
        chosen = None
        worst = math.inf
        for (k, j, ell) in part.candidates_for_cell(l):
            w1 = cfg.section_word(1, ell)
            w2 = cfg.section_word(2, ell)
            mem = _members(ki, part.z_cells[k])
            c1 = cocycle_product(cocycle, w1 + (part.z_cells[k][0],))
            c2 = cocycle_product(cocycle, w2 + (part.z_cells[k][0],))
            idx1 = np.array([ki.index[(w1 + u)[: context.depth]] for u in
                             (ki.words[i] for i in mem)])
            idx2 = np.array([ki.index[(w2 + u)[: context.depth]] for u in
                             (ki.words[i] for i in mem)])
            v1 = weight_tab[w1][mem][:, None] * H[idx1][:, group.mul[:, group.inv[c1]]]
            v2 = weight_tab[w2][mem][:, None] * H[idx2][:, group.mul[:, group.inv[c2]]]
            numer = np.linalg.norm(v1 + v2, axis=1)
            d1 = real_tab[w1][mem] * h[idx1]
            d2 = real_tab[w2][mem] * h[idx2]
            denom = ((1 - cfg.mu) * d1 + d2) if j == 1 else (d1 + (1 - cfg.mu) * d2)
            chi = float((numer / denom).max())
            if chi <= 1.0 + 1e-12:
                chosen = (k, j, ell)
                break
            worst = min(worst, chi)
        if chosen is None:
            diagnostics.append((l, worst))
            continue
        out.append(chosen)
    if diagnostics:
        raise SelectionFail(
            "no comparison function dips below 1 on cells "
            + ", ".join(f"{l} (best chi {w:.6f})" for l, w in diagnostics))
    return out


@dataclass
class DominationReport:
    pointwise_violations: int
    lipschitz_violations: int
    trapped_violations: int
    preliminary_violations: int
    witnesses: list


def domination_check(context: NormalizedPotential, b: float, group: FiniteGroupTable,
                     cocycle: Cocycle, H: np.ndarray, h: np.ndarray,
                     J, part: PartitionXi) -> DominationReport:
    """Pointwise and log-Lipschitz domination of the twisted image by the
    damping operator, plus the preliminary regularity inequalities with
    the measured constants."""
    spec = context.spec
    cfg = part.cfg
    ki = depth_index(spec, context.depth)
    d_matrix = ki.metric_D_matrix()
    check_hypotheses(h, H, part, context, d_matrix)
    bound = cfg.e_const * abs(b)
    op = TwistedOperator(context, b, group, cocycle)
    mh = H.astype(complex)
    for _ in range(cfg.m):
        mh = op.apply(mh)
    mh_norm = np.linalg.norm(mh, axis=1)
    nh = dolgopyat_apply(context, J, h, part)
    witnesses = []
    pointwise = int((mh_norm > nh * (1 + 1e-9) + 1e-13).sum())
    if pointwise:
        bad = np.flatnonzero(mh_norm > nh * (1 + 1e-9) + 1e-13)[:5]
        witnesses += [("pointwise", ki.words[i], float(mh_norm[i]), float(nh[i]))
                      for i in bad]
    lips = 0
    first = np.array([w[0] for w in ki.words])
    for i in range(ki.n):
        sel = first == first[i]
        lhs = np.linalg.norm(mh[i][None, :] - mh[sel], axis=1)
        rhs = bound * nh[i] * d_matrix[i, sel]
        bad = lhs > rhs * (1 + 1e-9) + 1e-13
        if bad.any():
            lips += int(bad.sum())
            witnesses.append(("lipschitz", ki.words[i]))
    # Trapped two-sided bound on section branches over shifted cells.
    trapped = 0
    for (k, j, ell) in part.xi:
        w = cfg.section_word(j, ell)
        mem = _members(ki, part.z_cells[k])
        idx = np.array([ki.index[(w + ki.words[i])[: context.depth]] for i in mem])
        vals = h[idx]
        if vals.max() > 2.0 * vals.min() * (1 + 1e-9):
            trapped += 1
            witnesses.append(("trapped", part.z_cells[k], w))
    # Preliminary log-Lipschitz inequalities at k = m.
    prelim = 0
    la_h = h.copy()
    la_habs = np.linalg.norm(H, axis=1)
    op0 = context.operator(0.0)
    for _ in range(cfg.m):
        la_h = op0.apply(la_h)
        la_habs = op0.apply(la_habs)
    a0 = cfg.a0_log
    factor1 = a0 * (bound / cfg.hyper.kappa2**cfg.m + 1)
    for i in range(ki.n):
        sel = first == first[i]
        lhs1 = np.abs(la_h[i] - la_h[sel])
        if (lhs1 > factor1 * la_h[i] * d_matrix[i, sel] * (1 + 1e-9) + 1e-13).any():
            prelim += 1
        lhs2 = np.linalg.norm(mh[i][None, :] - mh[sel], axis=1)
        rhs2 = a0 * (bound / cfg.hyper.kappa2**cfg.m * la_h[i]
                     + abs(b) * la_habs[i]) * d_matrix[i, sel]
        if (lhs2 > rhs2 * (1 + 1e-9) + 1e-13).any():
            prelim += 1
    return DominationReport(pointwise_violations=pointwise, lipschitz_violations=lips,
                            trapped_violations=trapped, preliminary_violations=prelim,
                            witnesses=witnesses)


def strong_triangle(w1: np.ndarray, w2: np.ndarray, alpha: float, ratio_cap: float) -> bool:
    """Strengthened triangle inequality for separated directions.

    For nonzero vectors with angle >= alpha and norm ratio
    ||w1||/||w2|| <= L the combined norm loses a definite fraction:
    ||w1 + w2|| <= (1 - alpha^2/(16 L)) ||w1|| + ||w2||.
    """
    n1, n2 = float(np.linalg.norm(w1)), float(np.linalg.norm(w2))
    if n1 == 0 or n2 == 0:
        raise PreconditionFail("vectors must be nonzero")
    if not (0 <= alpha <= math.pi) or ratio_cap < 1:
        raise PreconditionFail("need alpha in [0, pi] and L >= 1")
    cosang = float(np.real(np.vdot(w1, w2))) / (n1 * n2)
    angle = math.acos(min(1.0, max(-1.0, cosang)))
    if angle < alpha - 1e-12:
        raise PreconditionFail(f"angle {angle} below the stated floor {alpha}")
    if n1 / n2 > ratio_cap * (1 + 1e-12):
        raise PreconditionFail(f"norm ratio {n1 / n2} above the stated cap {ratio_cap}")
    lhs = float(np.linalg.norm(np.asarray(w1) + np.asarray(w2)))
    rhs = (1 - alpha**2 / (16 * ratio_cap)) * n1 + n2
    return lhs <= rhs + 1e-12 * max(1.0, rhs)
