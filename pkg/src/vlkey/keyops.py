"""Operations on finished variable-length keys.

Keys become bit strings MSB-first: key ``a`` of length ``l`` is the ``l``-bit
encoding of ``a - 1``.
"""

from __future__ import annotations

import math
from collections import defaultdict
from collections.abc import Callable, Hashable, Sequence
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from vlkey.errors import ContractError, EnumerationLimitError
from vlkey.gf2 import BinaryCode
from vlkey.prob import KeyLaw, Prob, distance_from_ideal, entropy, is_exact, total

MAX_PRODUCT = 5_000_000


def key_bits(a: int, l: int) -> tuple[int, ...]:
    if not 1 <= a <= 1 << l:
        raise ContractError(f"key {a} outside [1:2^{l}]")
    return tuple(((a - 1) >> (l - 1 - i)) & 1 for i in range(l))


def bits_key(bits: Sequence[int]) -> int:
    v = 0
    for b in bits:
        v = (v << 1) | int(b)
    return v + 1


def concat_keys(first: KeyLaw, second: KeyLaw, max_entries: int = MAX_PRODUCT) -> KeyLaw:
    """Law of running two independent schemes and concatenating their keys."""
    size = len(first.mass) * len(second.mass)
    if size > max_entries:
        raise EnumerationLimitError(f"product law would have {size} entries (limit {max_entries})")
    acc: dict = defaultdict(int)
    for (w1, l1, a1, b1), p1 in first.mass.items():
        for (w2, l2, a2, b2), p2 in second.mass.items():
            a = ((a1 - 1) << l2) + a2
            b = ((b1 - 1) << l2) + b2
            acc[(w1, w2), l1 + l2, a, b] += p1 * p2
    return KeyLaw(dict(acc))


@dataclass
class PerBitReport:
    """Bit error rates and conditional key entropies per key length."""

    eps: Prob
    bit_errors: dict
    entropy_a: dict
    entropy_b: dict

    def violations(self, tol: float = 0.0) -> list[str]:
        out = []
        for (l, i), e in self.bit_errors.items():
            if e > self.eps + tol:
                out.append(f"P(A[{i}] != B[{i}] | L={l}) = {float(e):.6g} > {float(self.eps):.6g}")
        for l in self.entropy_a:
            floor_ = l * (1 - 2 * float(self.eps))
            for who, h in (("A", self.entropy_a[l]), ("B", self.entropy_b[l])):
                if h < floor_ - 1e-9 - tol:
                    out.append(f"H({who}|W, L={l}) = {h:.6g} < {floor_:.6g}")
        return out

    @property
    def ok(self) -> bool:
        return not self.violations()


def _conditional_entropy(groups: dict) -> float:
    """``H(K | W)`` from ``{w: {k: mass}}`` with masses summing to one."""
    terms = []
    for masses in groups.values():
        pw = total(masses.values())
        if pw:
            terms.append(float(pw) * entropy({k: p / pw for k, p in masses.items()}))
    return math.fsum(terms)


def per_bit_guarantees(law: KeyLaw, eps: Prob | None = None) -> PerBitReport:
    """Exact per-bit disagreement and ``H(A | W, L = l)``, ``H(B | W, L = l)`` for ``l >= 1``.

    ``eps`` defaults to the law's measured distance from ideal.
    """
    if eps is None:
        eps = distance_from_ideal(law).value
    errors: dict = {}
    ha: dict = {}
    hb: dict = {}
    for l in law.lengths():
        if l == 0:
            continue
        cond = law.given_length(l)
        pl = total(cond.values())
        for i in range(l):
            bad = total(p for (w, a, b), p in cond.items() if key_bits(a, l)[i] != key_bits(b, l)[i])
            errors[l, i + 1] = bad / pl
        ga: dict = defaultdict(lambda: defaultdict(int))
        gb: dict = defaultdict(lambda: defaultdict(int))
        for (w, a, b), p in cond.items():
            ga[w][a] += p / pl
            gb[w][b] += p / pl
        ha[l] = _conditional_entropy(ga)
        hb[l] = _conditional_entropy(gb)
    return PerBitReport(eps, errors, ha, hb)


# fixed-length outer code -----------------------------------------------------

def outer_code_length(n: int, mu: Prob, xi: Prob) -> int:
    """``ceil(n (mu + xi))`` bits kept from ``n`` concatenated keys."""
    v = n * (mu + xi)
    return math.ceil(v) if is_exact(v) else math.ceil(v - 1e-12)


def outer_code_dimension(n: int, rate: Prob) -> int:
    """``floor(n R)``."""
    v = n * rate
    return math.floor(v) if is_exact(v) else math.floor(v + 1e-12)


def _truncate_pad(bits: list[int], length: int) -> np.ndarray:
    out = np.zeros(length, dtype=np.uint8)
    keep = bits[:length]
    out[:len(keep)] = keep
    return out


@dataclass(frozen=True)
class FixedLengthKeys:
    key_a: int
    key_b: int
    syndrome: tuple
    word_a: tuple
    word_b: tuple

    @property
    def agree(self) -> bool:
        return self.key_a == self.key_b


def syndrome_fixed_length(outcomes: Sequence[tuple], code: BinaryCode) -> FixedLengthKeys:
    """Combine ``n`` key outcomes ``(L, A, B)`` into one fixed-length key pair.

    Both sides concatenate their keys and keep the first ``code.n`` bits,
    padding with zeros.  Alice publishes her syndrome; Bob moves to the
    nearest word with that syndrome; each outputs its word's coordinate
    within the coset.
    """
    bits_a: list[int] = []
    bits_b: list[int] = []
    for l, a, b in outcomes:
        bits_a.extend(key_bits(a, l))
        bits_b.extend(key_bits(b, l))
    word_a = _truncate_pad(bits_a, code.n)
    word_b = _truncate_pad(bits_b, code.n)
    syn = code.syndrome(word_a)
    fixed_b = code.decode(word_b, syn)
    coords = code.coordinates
    return FixedLengthKeys(coords.coordinate(word_a), coords.coordinate(fixed_b),
                           tuple(syn.tolist()), tuple(word_a.tolist()), tuple(fixed_b.tolist()))


@dataclass(frozen=True)
class OuterCodeTrial:
    n: int
    code_length: int
    dimension: int
    min_distance: int
    trials: int
    failures: int

    @property
    def failure_rate(self) -> float:
        return self.failures / self.trials

    @property
    def stderr(self) -> float:
        p = self.failure_rate
        return math.sqrt(max(p * (1 - p), 1e-300) / self.trials)


def simulate_outer_code(law: KeyLaw, n: int, code: BinaryCode, seed: int, trials: int) -> OuterCodeTrial:
    """Monte Carlo estimate of ``P{K_A != K_B}`` after the outer code over ``n`` key draws."""
    rng = np.random.default_rng(seed)
    draws = law.sample(rng, trials * n)
    fails = 0
    for t in range(trials):
        batch = [(l, a, b) for (_, l, a, b) in draws[t * n:(t + 1) * n]]
        if not syndrome_fixed_length(batch, code).agree:
            fails += 1
    return OuterCodeTrial(n, code.n, code.k, code.min_distance, trials, fails)


# splitting and the repeated game ---------------------------------------------

def split_outcome(l: int, a: int, b: int, t: int) -> tuple[tuple, tuple]:
    """MSB-first ``t``-bit segments of both keys; leftover bits are dropped."""
    if t < 1:
        raise ContractError("segment length t must be at least 1")
    ba, bb = key_bits(a, l), key_bits(b, l)
    m = l // t
    return (tuple(bits_key(ba[i * t:(i + 1) * t]) for i in range(m)),
            tuple(bits_key(bb[i * t:(i + 1) * t]) for i in range(m)))


def join_segments(segments: Sequence[int], t: int, rest: Sequence[int] = ()) -> tuple[int, ...]:
    bits: list[int] = []
    for s in segments:
        bits.extend(key_bits(s, t))
    return tuple(bits) + tuple(rest)


def split_key(law: KeyLaw, t: int) -> dict:
    """Law of ``(transcript, M, segments of A, segments of B)`` with ``M = floor(L / t)``."""
    acc: dict = defaultdict(int)
    for (w, l, a, b), p in law.mass.items():
        sa, sb = split_outcome(l, a, b, t)
        acc[w, len(sa), sa, sb] += p
    return dict(acc)


def segment_law(law: KeyLaw, t: int) -> KeyLaw:
    """The segments as one key of ``M t`` bits, so distance per ``M`` can be measured."""
    acc: dict = defaultdict(int)
    for (w, m, sa, sb), p in split_key(law, t).items():
        acc[w, m * t, bits_key(join_segments(sa, t)), bits_key(join_segments(sb, t))] += p
    return KeyLaw(dict(acc))


def segment_distance(law: KeyLaw, t: int) -> Prob:
    return distance_from_ideal(segment_law(law, t)).value


@dataclass(frozen=True)
class PayoffGame:
    """Repeated game on ``t``-bit segments with payoff ``g(a, b, v)``."""

    t: int
    g: Callable[[int, int, Hashable], Prob]
    actions: tuple
    g_min: Prob
    g_max: Prob

    def __post_init__(self):
        if self.t < 1:
            raise ContractError("t must be at least 1")
        if self.g_min > self.g_max:
            raise ContractError("g_min exceeds g_max")

    @property
    def g_star(self) -> Prob:
        """Worst case over ``v`` of the expected payoff under a perfect segment."""
        n = 1 << self.t
        return min(total(Fraction(1, n) * self.g(c, c, v) for c in range(1, n + 1)) for v in self.actions)


def guessing_game(t: int) -> PayoffGame:
    """``g(a, b, v) = 1{v = a}``: one point whenever ``v`` names Alice's segment."""
    return PayoffGame(t, lambda a, b, v: 1 if v == a else 0, tuple(range(1, (1 << t) + 1)), 0, 1)


class HistoryView:
    """What the adversary may see before round ``i``: transcript and strictly earlier rounds."""

    def __init__(self, transcript, a: Sequence, b: Sequence, v: Sequence, round_index: int):
        self.transcript = transcript
        self.round = round_index
        self._a, self._b, self._v = a, b, v

    def _get(self, seq, j):
        if not 0 <= j < self.round:
            raise ContractError(f"round {self.round}: adversary asked for round {j}")
        return seq[j]

    def a(self, j: int):
        return self._get(self._a, j)

    def b(self, j: int):
        return self._get(self._b, j)

    def v(self, j: int):
        return self._get(self._v, j)


class Adversary:
    def reset(self, rng: np.random.Generator) -> None:
        self.rng = rng

    def act(self, view: HistoryView):
        raise NotImplementedError


@dataclass
class FixedGuess(Adversary):
    guess: Hashable = 1

    def act(self, view):
        return self.guess


@dataclass
class ReplayGuess(Adversary):
    """Guess the previous segment of Alice (fixed guess in the first round)."""

    first: Hashable = 1

    def act(self, view):
        return view.a(view.round - 1) if view.round else self.first


@dataclass
class RandomGuess(Adversary):
    actions: tuple = ()

    def act(self, view):
        return self.actions[int(self.rng.integers(len(self.actions)))]


@dataclass
class PeekingAdversary(Adversary):
    """Tries to read the current round; exists to exercise the causality check."""

    def act(self, view):
        return view.a(view.round)


@dataclass
class PayoffReport:
    mean: float
    stderr: float
    bound: float
    bound_text: float
    g_star: Prob
    eps: Prob
    expected_length: Prob
    trials: int

    @property
    def satisfied(self) -> bool:
        return self.mean >= self.bound - 3 * self.stderr


def payoff_bound(expected_length: Prob, t: int, g_star: Prob, eps: Prob, g_min: Prob, g_max: Prob,
                 text_variant: bool = False) -> float:
    """``((E[L] + 1)/t - 1)(g* - eps (g_max - g_min))``; ``text_variant`` uses ``E[L]/t - 1``."""
    rounds = float(expected_length) / t - 1 if text_variant else (float(expected_length) + 1) / t - 1
    return rounds * float(g_star - eps * (g_max - g_min))


def run_payoff_game(law: KeyLaw, game: PayoffGame, adversary: Adversary, seed: int, trials: int,
                    eps: Prob | None = None) -> PayoffReport:
    """Simulate the repeated game on segments of keys drawn from ``law``."""
    if trials < 2:
        raise ContractError("need at least two trials")
    if eps is None:
        eps = distance_from_ideal(law).value
    rng = np.random.default_rng(seed)
    adversary.reset(rng)
    draws = law.sample(rng, trials)
    totals = np.empty(trials)
    for n, (w, l, a, b) in enumerate(draws):
        sa, sb = split_outcome(l, a, b, game.t)
        vs: list = []
        s = 0.0
        for i in range(len(sa)):
            v = adversary.act(HistoryView(w, sa, sb, vs, i))
            vs.append(v)
            s += float(game.g(sa[i], sb[i], v))
        totals[n] = s
    el = law.expected_length()
    g_star = game.g_star
    return PayoffReport(
        mean=float(totals.mean()),
        stderr=float(totals.std(ddof=1) / math.sqrt(trials)),
        bound=payoff_bound(el, game.t, g_star, eps, game.g_min, game.g_max),
        bound_text=payoff_bound(el, game.t, g_star, eps, game.g_min, game.g_max, text_variant=True),
        g_star=g_star, eps=eps, expected_length=el, trials=trials)
