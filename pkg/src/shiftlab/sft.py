"""Subshift-of-finite-type machinery.

A subshift is given by an alphabet {0..N-1}, a 0/1 transition matrix T
(transition j -> k allowed iff T[j, k] == 1) and a metric parameter
theta in (0, 1).  Points of the one-sided shift space are approximated
throughout by admissible words of a fixed working depth K; the canonical
representative of a depth-K cylinder is the periodic extension of its
word (falling back to the lexicographically smallest admissible
continuation when the wrap-around edge is inadmissible).  All orderings
are lexicographic, which fixes the global indexing convention for every
matrix built downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

Word = tuple[int, ...]


class SftError(ValueError):
    """Base class for subshift construction/usage errors."""


class NonSquareMatrix(SftError):
    pass


class DeadSymbol(SftError):
    """A symbol with no admissible successor or predecessor."""


class ThetaOutOfRange(SftError):
    pass


class DepthZero(SftError):
    pass


class LengthMismatch(SftError):
    pass


class InadmissibleWord(SftError):
    pass


@dataclass(frozen=True)
class SubshiftSpec:
    """Validated subshift: alphabet size, transition matrix, metric base."""

    alphabet_size: int
    transition: np.ndarray  # (N, N) uint8, read-only
    theta: float

    def __post_init__(self):
        self.transition.setflags(write=False)

    @property
    def n_symbols(self) -> int:
        return self.alphabet_size

    def successors(self, j: int) -> tuple[int, ...]:
        return tuple(int(k) for k in np.flatnonzero(self.transition[j]))

    def predecessors(self, k: int) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.transition[:, k]))

    def is_admissible(self, word: Word) -> bool:
        t = self.transition
        return all(t[word[i], word[i + 1]] for i in range(len(word) - 1))

    def __hash__(self):
        return hash((self.alphabet_size, self.transition.tobytes(), self.theta))

    def __eq__(self, other):
        return (
            isinstance(other, SubshiftSpec)
            and self.alphabet_size == other.alphabet_size
            and self.theta == other.theta
            and np.array_equal(self.transition, other.transition)
        )


@dataclass(frozen=True)
class MixingCertificate:
    """Smallest power N_T with T^{N_T} entrywise positive."""

    exponent: int


def build_subshift(n: int, transition, theta: float) -> SubshiftSpec:
    """Validate and freeze a subshift specification.

    Rejects non-square matrices, entries outside {0, 1}, dead symbols
    (all-zero row or column) and theta outside (0, 1).
    """
    t = np.asarray(transition)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise NonSquareMatrix(f"transition matrix must be square, got shape {t.shape}")
    if t.shape[0] != n:
        raise NonSquareMatrix(f"matrix is {t.shape[0]}x{t.shape[0]} but alphabet_size={n}")
    if n < 1:
        raise DeadSymbol("alphabet must contain at least one symbol")
    if not np.isin(t, (0, 1)).all():
        raise SftError("transition entries must be 0 or 1")
    row_dead = np.flatnonzero(t.sum(axis=1) == 0)
    col_dead = np.flatnonzero(t.sum(axis=0) == 0)
    if row_dead.size:
        raise DeadSymbol(f"symbol {int(row_dead[0])} has no successor")
    if col_dead.size:
        raise DeadSymbol(f"symbol {int(col_dead[0])} has no predecessor")
    if not (0.0 < theta < 1.0):
        raise ThetaOutOfRange(f"theta must lie in (0, 1), got {theta}")
    return SubshiftSpec(alphabet_size=n, transition=t.astype(np.uint8), theta=float(theta))


def check_mixing(spec: SubshiftSpec, max_power: int = 64) -> MixingCertificate | None:
    """Return the smallest exponent with T^exp > 0 entrywise, else None."""
    if max_power < 1:
        raise SftError("max_power must be >= 1")
    # Boolean powers suffice: only positivity matters.
    power = spec.transition.astype(bool)
    step = spec.transition.astype(bool)
    for exponent in range(1, max_power + 1):
        if power.all():
            return MixingCertificate(exponent=exponent)
        power = power @ step
    return None


def enumerate_cylinders(spec: SubshiftSpec, depth: int) -> list[Word]:
    """All admissible words of the given length, lexicographically sorted."""
    if depth < 1:
        raise DepthZero(f"cylinder depth must be >= 1, got {depth}")
    succ = [spec.successors(j) for j in range(spec.alphabet_size)]
    words: list[Word] = [(j,) for j in range(spec.alphabet_size)]
    for _ in range(depth - 1):
        words = [w + (k,) for w in words for k in succ[w[-1]]]
    return words


def d_theta(x: Word, y: Word, spec: SubshiftSpec) -> float:
    """theta^(first index of disagreement); 0 for identical words."""
    if len(x) != len(y):
        raise LengthMismatch(f"word lengths differ: {len(x)} vs {len(y)}")
    for j, (a, b) in enumerate(zip(x, y)):
        if a != b:
            return spec.theta**j
    return 0.0


def forced_run(spec: SubshiftSpec, symbol: int) -> int | None:
    """Steps from `symbol` along forced transitions until a branching symbol.

    Returns None when no branching symbol is ever reached (the forward
    orbit is a rigid cycle, so cylinders ending there are single points).
    """
    seen = set()
    cur = symbol
    steps = 0
    while cur not in seen:
        succ = spec.successors(cur)
        if len(succ) >= 2:
            return steps
        seen.add(cur)
        cur = succ[0]
        steps += 1
    return None


def cylinder_diameter(spec: SubshiftSpec, word: Word) -> float:
    """Exact d_theta diameter of the cylinder of the given word.

    Two points of the cylinder can first disagree at index
    len(word) + forced_run(last symbol); if no branching is reachable the
    cylinder is a singleton with diameter 0.
    """
    run = forced_run(spec, word[-1])
    if run is None:
        return 0.0
    return spec.theta ** (len(word) + run)


def omega_continuation(spec: SubshiftSpec, symbol: int, length: int) -> Word:
    """Lexicographically smallest admissible continuation after `symbol`.

    Realizes the deterministic choice of a forward extension: the
    returned word w satisfies (symbol, w_0, w_1, ...) admissible.
    """
    out = []
    cur = symbol
    for _ in range(length):
        cur = spec.successors(cur)[0]
        out.append(cur)
    return tuple(out)


def representative(spec: SubshiftSpec, word: Word, length: int) -> Word:
    """Extend `word` to `length` symbols: periodic wrap when admissible,
    else the lexicographically smallest admissible continuation."""
    if length <= len(word):
        return word[:length]
    if spec.transition[word[-1], word[0]]:
        reps = -(-length // len(word))
        return (word * reps)[:length]
    return word + omega_continuation(spec, word[-1], length - len(word))


class DepthIndex:
    """Lexicographic index of admissible words at one depth.

    Precomputes the structural maps needed by transfer kernels:
    for the (depth+1)-word list, `src` is the index of the first-depth
    prefix, `dst` the index of the last-depth suffix, so that one
    application of a transfer operator is a gather/scatter over the
    (depth+1)-word list grouped by leading symbol.
    """

    def __init__(self, spec: SubshiftSpec, depth: int):
        self.spec = spec
        self.depth = depth
        self.words = enumerate_cylinders(spec, depth)
        self.index = {w: i for i, w in enumerate(self.words)}
        self.n = len(self.words)
        self.words_deep = enumerate_cylinders(spec, depth + 1)
        self.n_deep = len(self.words_deep)
        self.deep_index = {w: i for i, w in enumerate(self.words_deep)}
        self.src = np.array([self.index[w[:-1]] for w in self.words_deep], dtype=np.int64)
        self.dst = np.array([self.index[w[1:]] for w in self.words_deep], dtype=np.int64)
        self.lead = np.array([w[0] for w in self.words_deep], dtype=np.int64)
        self.edge_pair = [(w[0], w[1]) for w in self.words_deep]
        # Contiguous slices of words_deep per leading symbol (lexicographic order).
        self.lead_slices = []
        for a in range(spec.alphabet_size):
            sel = np.flatnonzero(self.lead == a)
            if sel.size:
                self.lead_slices.append((a, sel))
        self._diam_cache: dict[Word, float] = {}

    def idx(self, word: Word) -> int:
        try:
            return self.index[word]
        except KeyError:
            raise InadmissibleWord(f"{word} is not an admissible depth-{self.depth} word")

    def diameter(self, word: Word) -> float:
        d = self._diam_cache.get(word)
        if d is None:
            d = cylinder_diameter(self.spec, word)
            self._diam_cache[word] = d
        return d

    def pairwise_d(self) -> np.ndarray:
        """Dense matrix of d_theta distances between representative points."""
        w = np.array(self.words)
        theta = self.spec.theta
        out = np.zeros((self.n, self.n))
        agree = np.ones((self.n, self.n), dtype=bool)
        for j in range(self.depth):
            eq = w[:, j][:, None] == w[:, j][None, :]
            first_diff = agree & ~eq
            out[first_diff] = theta**j
            agree &= eq
        return out

    def metric_D_matrix(self) -> np.ndarray:
        """Dense matrix of the cylinder metric D (diameter of the smallest
        common cylinder; 1 across distinct leading symbols; the depth-K
        cylinder diameter on the diagonal)."""
        w = np.array(self.words)
        out = np.ones((self.n, self.n))
        agree = w[:, 0][:, None] == w[:, 0][None, :]
        # Common-prefix length for agreeing pairs, then the diameter of
        # that prefix cylinder.  The smallest common cylinder of two
        # distinct words is their longest common prefix.
        prefix_len = np.zeros((self.n, self.n), dtype=np.int64)
        running = np.ones((self.n, self.n), dtype=bool)
        for j in range(self.depth):
            eq = w[:, j][:, None] == w[:, j][None, :]
            running &= eq
            prefix_len[running] = j + 1
        for i, wi in enumerate(self.words):
            for k in range(self.n):
                if not agree[i, k]:
                    continue
                plen = prefix_len[i, k]
                out[i, k] = self.diameter(wi[:plen])
        return out

    def shift_idx(self, shorter: "DepthIndex") -> np.ndarray:
        """Index map word -> shorter.idx(word[1:]) (one shift application)."""
        assert shorter.depth == self.depth - 1
        return np.array([shorter.index[w[1:]] for w in self.words], dtype=np.int64)


@lru_cache(maxsize=None)
def depth_index(spec: SubshiftSpec, depth: int) -> DepthIndex:
    return DepthIndex(spec, depth)
