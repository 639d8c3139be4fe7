"""Binary linear codes: parity-check construction, syndrome decoding, coset coordinates."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from math import comb

import numpy as np

from vlkey.errors import ContractError, InfeasibleCodeError

MAX_EXHAUSTIVE_N = 24
MAX_COSET_TABLE = 1 << 22


def as_bits(v, n: int | None = None) -> np.ndarray:
    a = np.asarray(v, dtype=np.uint8) & 1
    if n is not None and a.shape[-1] != n:
        raise ContractError(f"expected {n} bits, got {a.shape[-1]}")
    return a


def rref(m) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form over GF(2) and the pivot columns."""
    a = as_bits(m).copy()
    rows, cols = a.shape
    pivots = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        hit = np.flatnonzero(a[r:, c])
        if hit.size == 0:
            continue
        p = r + hit[0]
        if p != r:
            a[[r, p]] = a[[p, r]]
        others = np.flatnonzero(a[:, c])
        others = others[others != r]
        a[others] ^= a[r]
        pivots.append(c)
        r += 1
    return a, pivots


def rank(m) -> int:
    return len(rref(m)[1])


def nullspace_basis(m) -> np.ndarray:
    """Kernel basis, one vector per free column in ascending order."""
    r, pivots = rref(m)
    n = r.shape[1]
    free = [c for c in range(n) if c not in set(pivots)]
    basis = np.zeros((len(free), n), dtype=np.uint8)
    for i, f in enumerate(free):
        basis[i, f] = 1
        for row, p in enumerate(pivots):
            basis[i, p] = r[row, f]
    return basis


def _span(basis: np.ndarray, chunk: int = 1 << 16):
    k = basis.shape[0]
    for start in range(0, 1 << k, chunk):
        idx = np.arange(start, min(start + chunk, 1 << k), dtype=np.int64)
        coeff = ((idx[:, None] >> np.arange(k - 1, -1, -1)) & 1).astype(np.uint8)
        yield (coeff @ basis) & 1


def min_distance(parity_check) -> int:
    """Minimum weight over nonzero codewords, by listing the whole code."""
    basis = nullspace_basis(parity_check)
    n = basis.shape[1]
    if basis.shape[0] == 0:
        return n + 1
    if n > MAX_EXHAUSTIVE_N:
        raise ContractError(f"exhaustive distance check is limited to n <= {MAX_EXHAUSTIVE_N}")
    best = n
    for words in _span(basis):
        w = words.sum(axis=1)
        w = w[w > 0]
        if w.size:
            best = min(best, int(w.min()))
    return best


def gv_feasible(n: int, k: int, d: int) -> bool:
    """Varshamov condition ``sum_{j <= d-2} C(n-1, j) < 2^(n-k)``."""
    if not (1 <= k <= n and 1 <= d <= n):
        return False
    return sum(comb(n - 1, j) for j in range(d - 1)) < 1 << (n - k)


def _int_columns(ints: list[int], r: int) -> np.ndarray:
    return np.array([[(v >> (r - 1 - i)) & 1 for v in ints] for i in range(r)], dtype=np.uint8)


def _greedy_columns(n: int, r: int, d: int, rng: np.random.Generator) -> list[int]:
    """Columns of ``GF(2)^r`` such that no ``d - 1`` of them sum to zero."""
    cols = [1 << (r - 1 - i) for i in range(r)]
    layers = [{0}]
    for c in cols:
        layers = _extend_layers(layers, c, d - 2)
    # a new column must avoid every sum of at most d-2 chosen columns
    sums = set().union(*layers)
    universe = np.arange(1, 1 << r)
    while len(cols) < n:
        allowed = np.setdiff1d(universe, np.fromiter(sums, dtype=np.int64), assume_unique=False)
        if allowed.size == 0:
            raise InfeasibleCodeError("greedy column search ran out of candidates")
        c = int(rng.choice(allowed))
        cols.append(c)
        layers = _extend_layers(layers, c, d - 2)
        sums = set().union(*layers)
    return cols


def _extend_layers(layers: list[set], c: int, depth: int) -> list[set]:
    """``layers[j]`` holds sums of exactly ``j`` chosen columns (up to ``depth``)."""
    out = [set(layers[0])]
    for j in range(1, depth + 1):
        prev = layers[j - 1] if j - 1 < len(layers) else set()
        cur = layers[j] if j < len(layers) else set()
        out.append(cur | {s ^ c for s in prev})
    return out


def _repetition_check(n: int) -> np.ndarray:
    h = np.zeros((n - 1, n), dtype=np.uint8)
    h[:, 0] = 1
    h[np.arange(n - 1), np.arange(1, n)] = 1
    return h


def _hamming_check(r: int) -> np.ndarray:
    n = (1 << r) - 1
    return _int_columns(list(range(1, n + 1)), r)


@dataclass(frozen=True, eq=False)
class BinaryCode:
    parity_check: np.ndarray
    min_distance: int

    @property
    def n(self) -> int:
        return self.parity_check.shape[1]

    @property
    def k(self) -> int:
        return self.n - self.parity_check.shape[0]

    def syndrome(self, word) -> np.ndarray:
        return (self.parity_check @ as_bits(word, self.n)) & 1

    def to_strings(self) -> list[str]:
        """Row-major bit strings."""
        return ["".join(map(str, row)) for row in self.parity_check.tolist()]

    @classmethod
    def from_strings(cls, rows: list[str], verify: bool = True) -> BinaryCode:
        h = np.array([[int(c) for c in row] for row in rows], dtype=np.uint8)
        if rank(h) != h.shape[0]:
            raise ContractError("parity-check rows must be independent")
        return cls(h, min_distance(h) if verify else 0)

    @cached_property
    def coordinates(self) -> AffineCoordinates:
        return AffineCoordinates(self.parity_check)

    @cached_property
    def _leaders(self) -> np.ndarray:
        """Coset leader per syndrome: minimum weight, then first support in combination order."""
        r = self.parity_check.shape[0]
        if 1 << r > MAX_COSET_TABLE:
            raise ContractError(f"coset table of 2^{r} entries is too large")
        weights = 1 << np.arange(r - 1, -1, -1)
        col_syn = (self.parity_check.T.astype(np.int64) @ weights)
        table = np.full(1 << r, -1, dtype=np.int64)
        supports: list = [None] * (1 << r)
        left = 1 << r
        for w in range(self.n + 1):
            for support in itertools.combinations(range(self.n), w):
                s = 0
                for i in support:
                    s ^= int(col_syn[i])
                if table[s] < 0:
                    table[s] = w
                    supports[s] = support
                    left -= 1
            if left == 0:
                break
        leaders = np.zeros((1 << r, self.n), dtype=np.uint8)
        for s, sup in enumerate(supports):
            leaders[s, list(sup)] = 1
        return leaders

    def _syndrome_int(self, syn) -> int:
        return int("".join(map(str, as_bits(syn).tolist())) or "0", 2)

    def decode(self, received, target_syndrome) -> np.ndarray:
        """Closest word to ``received`` whose syndrome is ``target_syndrome``."""
        rec = as_bits(received, self.n)
        gap = self.syndrome(rec) ^ as_bits(target_syndrome)
        return rec ^ self._leaders[self._syndrome_int(gap)]


def gv_parity_check(n: int, d: int, k: int | None = None, seed: int = 0,
                    retries: int = 8) -> BinaryCode:
    """Parity-check matrix of an ``[n, k]`` code with minimum distance at least ``d``.

    Without ``k`` the largest dimension meeting the Varshamov condition is
    used.  Columns are chosen greedily at random so that no ``d - 1`` of them
    sum to zero; the result is then checked by listing every codeword.
    """
    if d > n or d < 1 or n < 1:
        raise InfeasibleCodeError(f"no binary code of length {n} has distance {d}")
    if k is None:
        feasible = [kk for kk in range(1, n + 1) if gv_feasible(n, kk, d)]
        if not feasible:
            raise InfeasibleCodeError(f"Varshamov condition fails for every k at n={n}, d={d}")
        k = max(feasible)
    if not gv_feasible(n, k, d):
        raise InfeasibleCodeError(f"Varshamov condition fails for n={n}, k={k}, d={d}")
    r = n - k
    rng = np.random.default_rng(seed)
    for _ in range(retries):
        cols = _greedy_columns(n, r, d, rng)
        perm = rng.permutation(n)
        h = _int_columns([cols[i] for i in perm], r)
        dist = min_distance(h)
        if rank(h) == r and dist >= d:
            return BinaryCode(h, dist)
    if k == 1 and d == n:
        return BinaryCode(_repetition_check(n), n)
    if d <= 3 and n == (1 << r) - 1:
        h = _hamming_check(r)
        return BinaryCode(h, min_distance(h))
    raise InfeasibleCodeError(f"no [{n},{k},{d}] code found in {retries} attempts")


@dataclass(eq=False)
class AffineCoordinates:
    """Shared coordinates on the cosets ``{v : P v = s}``.

    The free columns of ``rref(P)`` (ascending) carry the coordinate bits;
    pivot bits are then determined by the syndrome.
    """

    parity_check: np.ndarray
    _ops: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        h = as_bits(self.parity_check)
        r, n = h.shape
        aug = np.concatenate([h, np.eye(r, dtype=np.uint8)], axis=1)
        red, piv = rref(aug)
        self.pivots = [p for p in piv if p < n]
        if len(self.pivots) != r:
            raise ContractError("parity-check matrix must have full row rank")
        self.reduced = red[:, :n]
        self._ops = red[:, n:]
        self.free = [c for c in range(n) if c not in set(self.pivots)]
        self.n = n

    @property
    def k(self) -> int:
        return len(self.free)

    def coordinate(self, word) -> int:
        """Index in ``[1:2^k]`` of ``word`` within its coset (MSB-first free bits)."""
        bits = as_bits(word, self.n)[self.free]
        return int("".join(map(str, bits.tolist())) or "0", 2) + 1

    def element(self, syndrome, index: int) -> np.ndarray:
        """Inverse of :meth:`coordinate` on the coset with the given syndrome."""
        if not 1 <= index <= 1 << self.k:
            raise ContractError(f"coordinate {index} outside [1:2^{self.k}]")
        free_bits = np.array([(index - 1) >> (self.k - 1 - i) & 1 for i in range(self.k)], dtype=np.uint8)
        rhs = (self._ops @ as_bits(syndrome)) & 1
        word = np.zeros(self.n, dtype=np.uint8)
        word[self.free] = free_bits
        for row, p in enumerate(self.pivots):
            word[p] = (rhs[row] + self.reduced[row, self.free] @ free_bits) & 1
        return word
