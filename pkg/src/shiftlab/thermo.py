"""Transfer operators and thermodynamic quantities on depth-K cylinders.

Conventions.  A function on the shift space is approximated by a table
over admissible words of some depth; transfer-operator weights may look
one symbol deeper than the function space, so an operator at working
depth K is a weighted gather/scatter over the admissible (K+1)-words:

    (L_f h)(x) = sum over predecessors a of  exp(f(a.x)) * h((a.x)[:K])

with lexicographic word order fixing all matrix layouts.  The leading
eigendata (lam, h, nu) of the weighted operator is computed by plain
power iteration, which converges geometrically because the eigenvalue
is simple for mixing subshifts.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .sft import (
    DepthIndex,
    SftError,
    SubshiftSpec,
    Word,
    check_mixing,
    depth_index,
    representative,
)


class ThermoError(ValueError):
    pass


class MalformedExpression(ThermoError):
    pass


class DepthMismatch(ThermoError):
    pass


class NotMixing(ThermoError):
    pass


class NoConvergence(ThermoError):
    pass


class NoSignChange(ThermoError):
    pass


class NonPositiveRoof(ThermoError):
    pass


class AOutOfWindow(ThermoError):
    pass


@dataclass(frozen=True, eq=False)
class CylinderFunction:
    """Locally constant function: one value per admissible depth-`depth` word."""

    depth: int
    values: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.values)

    def real_values(self) -> np.ndarray:
        if np.iscomplexobj(self.values):
            if np.abs(self.values.imag).max(initial=0.0) > 0:
                raise ThermoError("cylinder function has nonzero imaginary part")
            return self.values.real
        return self.values


@dataclass(frozen=True, eq=False)
class RpfData:
    """Leading eigendata of a weighted transfer operator.

    lam > 0 is the simple leading eigenvalue, h the positive
    eigenfunction, nu the adjoint probability vector with nu(h) = 1,
    residual the worst of the two eigen-equation residuals.
    """

    depth: int
    lam: float
    h: CylinderFunction
    nu: np.ndarray
    residual: float
    iterations: int

    def __post_init__(self):
        self.nu.setflags(write=False)

    def nu_u(self) -> np.ndarray:
        """Probability weights of the equilibrium measure: h-weighted nu."""
        return self.nu * self.h.real_values()


@dataclass(frozen=True)
class ThermoConfig:
    depth: int = 6
    power_iter_tol: float = 1e-13
    power_iter_max: int = 100_000
    a_window: float = 0.75
    lip_bound: float | None = None  # override for the regularity constant T0

    def __post_init__(self):
        if self.depth < 1:
            raise ThermoError("depth must be >= 1")
        if self.power_iter_tol <= 0 or self.power_iter_max < 1:
            raise ThermoError("power iteration tolerances must be positive")


_ALLOWED_FUNCS = {"exp": math.exp, "log": math.log, "sqrt": math.sqrt,
                  "cos": math.cos, "sin": math.sin, "abs": abs}


def _compile_expression(text: str):
    """Compile a small arithmetic expression over symbol variables x0, x1, ...

    Supported: numbers, x<j>, theta, + - * / ** and unary -, comparisons
    (evaluating to 1.0/0.0), and calls to exp/log/sqrt/cos/sin/abs.
    """
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise MalformedExpression(f"cannot parse {text!r}: {exc}") from None

    def ev(node, env):
        if isinstance(node, ast.Expression):
            return ev(node.body, env)
        if isinstance(node, ast.Constant):
            if isinstance(node.value, (int, float)):
                return float(node.value)
            raise MalformedExpression(f"bad constant {node.value!r}")
        if isinstance(node, ast.Name):
            if node.id in env:
                return env[node.id]
            raise MalformedExpression(f"unknown name {node.id!r}")
        if isinstance(node, ast.BinOp):
            a, b = ev(node.left, env), ev(node.right, env)
            if isinstance(node.op, ast.Add):
                return a + b
            if isinstance(node.op, ast.Sub):
                return a - b
            if isinstance(node.op, ast.Mult):
                return a * b
            if isinstance(node.op, ast.Div):
                return a / b
            if isinstance(node.op, ast.Pow):
                return a**b
            raise MalformedExpression(f"operator {node.op} not allowed")
        if isinstance(node, ast.UnaryOp):
            val = ev(node.operand, env)
            if isinstance(node.op, ast.USub):
                return -val
            if isinstance(node.op, ast.UAdd):
                return val
            raise MalformedExpression(f"operator {node.op} not allowed")
        if isinstance(node, ast.Compare):
            if len(node.ops) != 1:
                raise MalformedExpression("chained comparisons not supported")
            a, b = ev(node.left, env), ev(node.comparators[0], env)
            op = node.ops[0]
            result = {
                ast.Eq: a == b, ast.NotEq: a != b, ast.Lt: a < b,
                ast.LtE: a <= b, ast.Gt: a > b, ast.GtE: a >= b,
            }.get(type(op))
            if result is None:
                raise MalformedExpression(f"comparison {op} not allowed")
            return 1.0 if result else 0.0
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _ALLOWED_FUNCS:
                raise MalformedExpression("only exp/log/sqrt/cos/sin/abs calls allowed")
            if len(node.args) != 1 or node.keywords:
                raise MalformedExpression("calls take exactly one positional argument")
            return _ALLOWED_FUNCS[node.func.id](ev(node.args[0], env))
        raise MalformedExpression(f"syntax {type(node).__name__} not allowed")

    return ev, tree


def potential_table(expr, spec: SubshiftSpec, depth: int) -> CylinderFunction:
    """Tabulate a potential on depth-`depth` cylinders.

    `expr` may be a number (constant potential), an explicit table
    {word-tuple: value} of uniform key length J <= depth, a callable
    taking the symbol tuple, or an expression string over x0..x_{depth-1}
    and theta.  Formulas are evaluated at the representative point of
    each cylinder, so tables of locally constant inputs are exact.
    """
    ki = depth_index(spec, depth)
    if isinstance(expr, (int, float)):
        return CylinderFunction(depth, np.full(ki.n, float(expr)))
    if isinstance(expr, complex):
        return CylinderFunction(depth, np.full(ki.n, expr, dtype=complex))
    if isinstance(expr, dict):
        keys = list(expr.keys())
        key_len = len(keys[0])
        if any(len(k) != key_len for k in keys):
            raise MalformedExpression("table keys must have uniform length")
        if key_len > depth:
            raise DepthMismatch(f"table depth {key_len} exceeds target depth {depth}")
        vals = np.array([float(expr[w[:key_len]]) for w in ki.words])
        return CylinderFunction(depth, vals)
    if callable(expr):
        vals = np.array([float(expr(w)) for w in ki.words])
        return CylinderFunction(depth, vals)
    if isinstance(expr, str):
        ev, tree = _compile_expression(expr)
        vals = np.empty(ki.n)
        for i, w in enumerate(ki.words):
            env = {f"x{j}": float(s) for j, s in enumerate(w)}
            env["theta"] = spec.theta
            try:
                vals[i] = ev(tree, env)
            except MalformedExpression:
                raise
            except Exception as exc:
                raise MalformedExpression(f"evaluating {expr!r} at {w}: {exc}") from None
        return CylinderFunction(depth, vals)
    raise MalformedExpression(f"unsupported potential description {type(expr).__name__}")


def lift_table(spec: SubshiftSpec, cf: CylinderFunction, depth: int) -> np.ndarray:
    """Values of a shallower table on all admissible depth-`depth` words."""
    if cf.depth > depth:
        raise DepthMismatch(f"cannot restrict depth-{cf.depth} table to depth {depth}")
    ki = depth_index(spec, depth)
    if cf.depth == depth:
        return cf.values
    shallow = depth_index(spec, cf.depth)
    idx = np.array([shallow.index[w[: cf.depth]] for w in ki.words], dtype=np.int64)
    return cf.values[idx]


def deep_weights(spec: SubshiftSpec, f: CylinderFunction, depth: int) -> np.ndarray:
    """exp(f) tabulated on the admissible (depth+1)-words of the kernel."""
    if f.depth > depth + 1:
        raise DepthMismatch(f"weight depth {f.depth} exceeds {depth}+1")
    ki = depth_index(spec, depth)
    if f.depth == depth + 1:
        fdeep = f.values
    else:
        shallow = depth_index(spec, f.depth)
        idx = np.array([shallow.index[w[: f.depth]] for w in ki.words_deep], dtype=np.int64)
        fdeep = f.values[idx]
    return np.exp(fdeep)


def _apply_slices(ki: DepthIndex, weights: np.ndarray, vec: np.ndarray,
                  out: np.ndarray) -> np.ndarray:
    """One transfer application; accumulation ordered by leading symbol.

    Within a leading-symbol slice every target index occurs once, so the
    slice update is collision free; iterating slices in symbol order
    fixes the floating-point summation order.
    """
    for _, sel in ki.lead_slices:
        contrib = weights[sel] * vec[ki.src[sel]] if vec.ndim == 1 else \
            weights[sel][:, None] * vec[ki.src[sel]]
        out[ki.dst[sel]] += contrib
    return out


class TransferOperator:
    """Weighted transfer operator at a fixed working depth."""

    def __init__(self, spec: SubshiftSpec, weights_deep: np.ndarray, depth: int):
        self.spec = spec
        self.depth = depth
        self.ki = depth_index(spec, depth)
        if weights_deep.shape != (self.ki.n_deep,):
            raise DepthMismatch("weight vector must cover the (depth+1)-word list")
        self.weights = weights_deep

    @property
    def n(self) -> int:
        return self.ki.n

    def apply(self, vec: np.ndarray) -> np.ndarray:
        out = np.zeros(vec.shape, dtype=np.result_type(vec, self.weights))
        return _apply_slices(self.ki, self.weights, vec, out)

    def apply_adjoint(self, vec: np.ndarray) -> np.ndarray:
        out = np.zeros(vec.shape, dtype=np.result_type(vec, self.weights))
        w = self.weights if vec.ndim == 1 else self.weights[:, None]
        conj = np.conj(w) if np.iscomplexobj(self.weights) else w
        for _, sel in self.ki.lead_slices:
            np.add.at(out, self.ki.src[sel], conj[sel] * vec[self.ki.dst[sel]])
        return out

    def matrix(self) -> np.ndarray:
        """Dense matrix with rows indexed by target words, columns by sources."""
        dtype = complex if np.iscomplexobj(self.weights) else float
        m = np.zeros((self.ki.n, self.ki.n), dtype=dtype)
        np.add.at(m, (self.ki.dst, self.ki.src), self.weights)
        return m


def transfer_matrix(f: CylinderFunction, spec: SubshiftSpec, depth: int) -> np.ndarray:
    """Dense matrix of L_f over depth-`depth` cylinders (targets in rows)."""
    op = TransferOperator(spec, deep_weights(spec, f, depth), depth)
    return op.matrix()


def transfer_operator(f: CylinderFunction, spec: SubshiftSpec, depth: int) -> TransferOperator:
    return TransferOperator(spec, deep_weights(spec, f, depth), depth)


def rpf_solve(f: CylinderFunction, spec: SubshiftSpec, cfg: ThermoConfig,
              depth: int | None = None) -> RpfData:
    """Leading eigendata (lam, h, nu) of L_f by two-sided power iteration.

    Requires a mixing subshift (simple leading eigenvalue); h is scaled
    so that nu is a probability vector and nu(h) = 1.
    """
    if check_mixing(spec) is None:
        raise NotMixing("transition matrix is not primitive; leading eigenvalue may be degenerate")
    depth = cfg.depth if depth is None else depth
    fr = CylinderFunction(f.depth, f.real_values())
    op = TransferOperator(spec, deep_weights(spec, fr, depth), depth)
    n = op.n
    h = np.full(n, 1.0 / n)
    nu = np.full(n, 1.0 / n)
    lam = 1.0
    iters = 0
    for iters in range(1, cfg.power_iter_max + 1):
        mh = op.apply(h)
        lam = mh.sum() / h.sum()
        h_next = mh / mh.sum()
        mnu = op.apply_adjoint(nu)
        nu_next = mnu / mnu.sum()
        res_h = np.abs(mh - lam * h).max() / lam
        res_nu = np.abs(mnu - lam * nu).sum() / lam
        h, nu = h_next, nu_next
        if max(res_h, res_nu) <= cfg.power_iter_tol:
            break
    else:
        raise NoConvergence(f"power iteration did not converge in {cfg.power_iter_max} steps")
    # Polish the eigenvalue with a Rayleigh quotient against the adjoint vector.
    lam = float(nu @ op.apply(h) / (nu @ h))
    nu = nu / nu.sum()
    h = h / float(nu @ h)
    res_h = float(np.abs(op.apply(h) - lam * h).max() / lam)
    res_nu = float(np.abs(op.apply_adjoint(nu) - lam * nu).sum() / lam)
    return RpfData(depth=depth, lam=lam, h=CylinderFunction(depth, h), nu=nu,
                   residual=max(res_h, res_nu), iterations=iters)


def pressure(f: CylinderFunction, spec: SubshiftSpec, cfg: ThermoConfig,
             depth: int | None = None) -> float:
    """log of the leading transfer-operator eigenvalue."""
    return math.log(rpf_solve(f, spec, cfg, depth=depth).lam)


def bowen_delta(tau: CylinderFunction, spec: SubshiftSpec, cfg: ThermoConfig,
                s_max: float | None = None, tol: float = 1e-12,
                depth: int | None = None) -> float:
    """Root of s -> pressure(-s * tau) by bisection.

    The map is strictly decreasing for positive roofs, so a sign change
    on [0, s_max] brackets the unique root.
    """
    roof = tau.real_values()
    tau_min = float(roof.min())
    if tau_min <= 0:
        raise NonPositiveRoof(f"roof must be strictly positive, min value {tau_min}")
    if s_max is None:
        s_max = 50.0 / tau_min

    def pr(s: float) -> float:
        return pressure(CylinderFunction(tau.depth, -s * roof), spec, cfg, depth=depth)

    lo, hi = 0.0, float(s_max)
    p_lo, p_hi = pr(lo), pr(hi)
    if p_lo < -tol:
        # Pressure already negative at s = 0 (possible only for a single
        # symbol alphabet); the root is s = 0.
        return 0.0
    if p_hi > 0:
        raise NoSignChange(f"pressure at s_max={s_max} is {p_hi} > 0; enlarge the bracket")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        p_mid = pr(mid)
        if abs(p_mid) <= tol or (hi - lo) <= 1e-16 * max(1.0, hi):
            return mid
        if p_mid > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True, eq=False)
class NormalizedPotential:
    """Normalized weight for a fixed shift parameter a.

    f_a is a (depth+1)-deep table such that the weighted operator fixes
    the constant function at a = 0 and its adjoint fixes nu_u; lam_a is
    the leading eigenvalue of the operator for the roof scaled by
    -(a + delta).
    """

    a: float
    delta: float
    depth: int
    f_a: CylinderFunction
    lam_a: float
    rpf_a: RpfData
    rpf_0: RpfData
    tau: CylinderFunction
    spec: SubshiftSpec

    def nu_u(self) -> np.ndarray:
        return self.rpf_0.nu_u()

    def tau_deep(self) -> np.ndarray:
        return _tau_on_deep(self.spec, self.tau, self.depth)

    def weights(self, b: float = 0.0) -> np.ndarray:
        """exp(f_a + i b tau) over the (depth+1)-word list."""
        w = np.exp(self.f_a.values)
        if b == 0.0:
            return w.astype(float)
        return w * np.exp(1j * b * _tau_on_deep(self.spec, self.tau, self.depth))

    def operator(self, b: float = 0.0) -> TransferOperator:
        return TransferOperator(self.spec, self.weights(b), self.depth)


def _tau_on_deep(spec: SubshiftSpec, tau: CylinderFunction, depth: int) -> np.ndarray:
    ki = depth_index(spec, depth)
    shallow = depth_index(spec, tau.depth)
    idx = np.array([shallow.index[w[: tau.depth]] for w in ki.words_deep], dtype=np.int64)
    return tau.real_values()[idx]


def _deep_prefix_idx(spec: SubshiftSpec, depth: int) -> np.ndarray:
    return depth_index(spec, depth).src


def normalized_potential(a: float, tau: CylinderFunction, spec: SubshiftSpec,
                         cfg: ThermoConfig, delta: float | None = None,
                         depth: int | None = None) -> NormalizedPotential:
    """Build the normalized weight table for shift parameter a.

    f_a(u) = -(a + delta) tau(u) + log h0(u) - log h0(sigma u) - log lam_a,
    tabulated one symbol deeper than the working depth so that the
    normalization identities hold to solver precision.
    """
    if abs(a) > cfg.a_window:
        raise AOutOfWindow(f"|a|={abs(a)} exceeds the configured window {cfg.a_window}")
    depth = cfg.depth if depth is None else depth
    roof = tau.real_values()
    if roof.min() <= 0:
        raise NonPositiveRoof("roof must be strictly positive")
    if delta is None:
        delta = bowen_delta(tau, spec, cfg, depth=depth)
    tau_k = lift_table(spec, CylinderFunction(tau.depth, roof), depth)
    rpf_0 = rpf_solve(CylinderFunction(depth, -delta * tau_k), spec, cfg, depth=depth)
    if a == 0.0:
        rpf_a = rpf_0
    else:
        rpf_a = rpf_solve(CylinderFunction(depth, -(a + delta) * tau_k), spec, cfg, depth=depth)
    ki = depth_index(spec, depth)
    tau_deep = _tau_on_deep(spec, tau, depth)
    log_h0 = np.log(rpf_0.h.real_values())
    f_a_vals = (-(a + delta) * tau_deep + log_h0[ki.src] - log_h0[ki.dst]
                - math.log(rpf_a.lam))
    # The a = 0 eigenvalue of the roof-weighted operator enters through
    # lam_a, so L_{f_0} fixes constants exactly (not just when the Bowen
    # root is exact).
    return NormalizedPotential(a=a, delta=delta, depth=depth,
                               f_a=CylinderFunction(depth + 1, f_a_vals),
                               lam_a=rpf_a.lam, rpf_a=rpf_a, rpf_0=rpf_0,
                               tau=CylinderFunction(tau.depth, roof), spec=spec)


def birkhoff_at(spec: SubshiftSpec, table: CylinderFunction, word: Word, k: int) -> float:
    """Birkhoff sum of a table along the first k shifts of `word`.

    The word is extended deterministically (periodic wrap when
    admissible, lexicographic continuation otherwise) so every shifted
    evaluation window is filled.
    """
    need = k + table.depth
    ext = representative(spec, word, need) if len(word) < need else word
    shallow = depth_index(spec, table.depth)
    vals = table.real_values() if table.is_real else table.values
    return sum(vals[shallow.index[ext[j: j + table.depth]]] for j in range(k))


def gibbs_check(nu_u: np.ndarray, tau: CylinderFunction, delta: float,
                depth_range, spec: SubshiftSpec, working_depth: int) -> tuple[float, float]:
    """Empirical Gibbs constants over cylinders of the requested depths.

    Returns (c1, c2) = extremes of nu_u(C) * exp(delta * tau_k(x)) with x
    the representative point of C; both finite and positive for mixing
    subshifts with positive roofs.
    """
    ki = depth_index(spec, working_depth)
    ratios = []
    for k in depth_range:
        if k > working_depth:
            raise DepthMismatch(f"cylinder depth {k} exceeds working depth {working_depth}")
        masses: dict[Word, float] = {}
        for w, m in zip(ki.words, nu_u):
            masses[w[:k]] = masses.get(w[:k], 0.0) + float(m)
        for w, mass in masses.items():
            birk = birkhoff_at(spec, tau, w, k)
            ratios.append(mass * math.exp(delta * birk))
    return min(ratios), max(ratios)


def lip_dtheta(spec: SubshiftSpec, cf: CylinderFunction) -> float:
    """Lipschitz seminorm of a table w.r.t. word distance theta^j."""
    ki = depth_index(spec, cf.depth)
    d = ki.pairwise_d()
    vals = cf.values
    diff = np.abs(vals[:, None] - vals[None, :])
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(d > 0, diff / np.where(d > 0, d, 1.0), 0.0)
    return float(q.max(initial=0.0))


def lip_essential(spec: SubshiftSpec, cf: CylinderFunction) -> float:
    """Lipschitz seminorm restricted to pairs inside one depth-1 cylinder."""
    ki = depth_index(spec, cf.depth)
    d = ki.pairwise_d()
    first = np.array([w[0] for w in ki.words])
    same = first[:, None] == first[None, :]
    vals = cf.values
    diff = np.abs(vals[:, None] - vals[None, :])
    mask = same & (d > 0)
    if not mask.any():
        return 0.0
    return float((diff[mask] / d[mask]).max())


@dataclass(frozen=True)
class RegularityBudget:
    """Measured regularity constants of the roof and normalized weights.

    t0 dominates the sup norms and Lipschitz seminorms of tau and of
    f_a over the a-window; a_f is the measured Lipschitz-in-a constant
    of a -> f_a.
    """

    t0: float
    a_f: float
    details: dict = field(default_factory=dict)


def measure_regularity(tau: CylinderFunction, spec: SubshiftSpec, cfg: ThermoConfig,
                       delta: float | None = None, n_grid: int = 5,
                       depth: int | None = None) -> RegularityBudget:
    depth = cfg.depth if depth is None else depth
    base = normalized_potential(0.0, tau, spec, cfg, delta=delta, depth=depth)
    tau_full = CylinderFunction(depth, lift_table(spec, tau, depth))
    cand = {
        "sup_tau": float(np.abs(tau_full.values).max()),
        "lip_e_tau": lip_essential(spec, tau_full),
        "lip_dtheta_tau": lip_dtheta(spec, tau_full),
        "sup_f0": float(np.abs(base.f_a.values).max()),
        "lip_e_f0": lip_essential(spec, base.f_a),
        "lip_dtheta_f0": lip_dtheta(spec, base.f_a),
    }
    a_f = 0.0
    grid = np.linspace(-cfg.a_window, cfg.a_window, n_grid)
    for a in grid:
        if a == 0.0:
            continue
        fa = normalized_potential(float(a), tau, spec, cfg, delta=base.delta, depth=depth)
        cand[f"sup_f@{a:+.3f}"] = float(np.abs(fa.f_a.values).max())
        cand[f"lip_dtheta_f@{a:+.3f}"] = lip_dtheta(spec, fa.f_a)
        cand[f"lip_e_f@{a:+.3f}"] = lip_essential(spec, fa.f_a)
        a_f = max(a_f, float(np.abs(fa.f_a.values - base.f_a.values).max()) / abs(float(a)))
    t0 = max(cand.values()) * (1.0 + 1e-9)
    if cfg.lip_bound is not None:
        t0 = max(t0, cfg.lip_bound)
    return RegularityBudget(t0=t0, a_f=a_f, details=cand)
