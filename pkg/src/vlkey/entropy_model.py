"""Candidate-set halving protocol for the entropy model.

Alice hides her symbol among ``2^m - 1`` dummies drawn i.i.d. from ``p_X`` and
publishes the candidate multiset; Bob stops as soon as one candidate holds at
least ``1 - eps`` of his posterior, otherwise Alice keeps a random half that
still contains her symbol.  Both sides output ranks in the final set, giving
tentative keys ``(K_A, K_B)`` scored by coinciding entropy.

Candidates are only distinguishable through their symbol (the discrete image of
the quantile map), so every set is published as its count vector aligned with
the positive-mass X alphabet.  Within a symbol, Alice's own candidate sorts
first; ranks therefore follow the canonical ``(symbol, index)`` order.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter, defaultdict
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from math import comb, factorial

import numpy as np

from vlkey.channel import (LocalRandomness, Party, from_jsonable, iter_protocol, prob_from_json,
                           prob_json, to_jsonable)
from vlkey.errors import ContractError, EnumerationLimitError
from vlkey.prob import JointSource, Prob, entropy, is_exact, log2, total

STOP, CONTINUE = "stop", "continue"
MAX_EXACT_M = 3
MAX_EXACT_ALPHABET = 8
MAX_EXACT_STATES = 2000


@dataclass(frozen=True)
class StopRule:
    """Bob stops when the MAP candidate's posterior reaches ``1 - eps``."""

    eps: Prob

    def __post_init__(self):
        if not 0 < self.eps < Fraction(1, 2):
            raise ContractError(f"stop rule needs 0 < eps < 1/2, got {self.eps}")

    def stops(self, top: Prob, mass: Prob) -> bool:
        return top >= (1 - self.eps) * mass


@dataclass(frozen=True)
class QuantileTable:
    """Step-function conditional density of the quantile-reduced X given Y.

    ``density[i][j]`` is ``p(x_i | y_j) / p(x_i)``, constant on the interval
    ``(F(x_{i-1}), F(x_i)]``.
    """

    symbols: tuple
    px: tuple
    ys: tuple
    py: tuple
    density: tuple
    intervals: tuple

    @property
    def exact(self) -> bool:
        return all(is_exact(p) for p in self.px)

    def f(self, x, y) -> Prob:
        return self.density[self.symbols.index(x)][self.ys.index(y)]

    def density_at(self, u: float, y) -> Prob:
        """Evaluate the density at a point ``u`` of ``(0, 1]``."""
        j = self.ys.index(y)
        for i, (lo, hi) in enumerate(self.intervals):
            if lo < u <= hi:
                return self.density[i][j]
        raise ValueError(f"{u} outside (0, 1]")

    def mutual_information(self) -> float:
        """``I(X_hat; Y) = sum_y p(y) int f log f``; each step has width ``p(x)``."""
        terms = []
        for j, pyj in enumerate(self.py):
            for i, pxi in enumerate(self.px):
                fv = self.density[i][j]
                if fv != 0:
                    terms.append(float(pyj * pxi * fv) * log2(fv))
        return max(0.0, math.fsum(terms))

    def matrix(self) -> np.ndarray:
        return np.array([[float(v) for v in row] for row in self.density])


def quantile_reduce(source: JointSource) -> QuantileTable:
    marg_x, marg_y = source.marginal_x(), source.marginal_y()
    symbols = tuple(x for x in source.alphabet_x if marg_x[x] > 0)
    ys = tuple(y for y in source.alphabet_y if marg_y[y] > 0)
    px = tuple(marg_x[x] for x in symbols)
    py = tuple(marg_y[y] for y in ys)
    density = tuple(
        tuple(source.mass.get((x, y), 0) / (marg_y[y] * marg_x[x]) for y in ys)
        for x in symbols)
    cdf = [0, *itertools.accumulate(px)]
    intervals = tuple(zip(cdf[:-1], cdf[1:]))
    return QuantileTable(symbols, px, ys, py, density, intervals)


@dataclass(frozen=True)
class CandidateSet:
    """A published candidate multiset: per-symbol counts at round ``round``."""

    counts: tuple
    round: int
    m: int

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise ContractError("negative candidate count")
        if sum(self.counts) != 1 << (self.m - self.round + 1):
            raise ContractError(f"round {self.round} set must hold 2^{self.m - self.round + 1} candidates")

    def candidates(self, own: int | None = None) -> list[tuple[int, int]]:
        """Canonical ``(symbol_index, copy_index)`` list; copy 0 of ``own`` is Alice's."""
        return [(s, j) for s, c in enumerate(self.counts) for j in range(c)]


def rank_in_set(candidates: Sequence[tuple], target: tuple) -> int:
    """1-based rank of ``target`` under the canonical candidate order."""
    ordered = sorted(candidates)
    try:
        return ordered.index(target) + 1
    except ValueError:
        raise ContractError(f"candidate {target!r} not in the set") from None


def _rank_of_symbol(counts: Sequence[int], s: int) -> int:
    return sum(counts[:s]) + 1


def bob_decision(table: QuantileTable, counts: Sequence[int], j: int,
                 rule: StopRule) -> tuple[bool, int]:
    """Bob's stop flag and MAP symbol index for observation index ``j``.

    Ties go to the canonically smallest candidate.  A symbol present ``c > 1``
    times never reaches posterior ``1 - eps > 1/2`` per copy, so a stop always
    names a singleton symbol.
    """
    best, top, mass = -1, None, 0
    for s, c in enumerate(counts):
        if c == 0:
            continue
        fv = table.density[s][j]
        mass += c * fv
        if top is None or fv > top:
            best, top = s, fv
    if mass == 0:
        raise ContractError("every candidate has zero density under Bob's observation")
    return rule.stops(top, mass), best


@dataclass
class EntropyModelKeys:
    """Law of ``(transcript, K_A, K_B)`` from an entropy-model scheme.

    In exact mode ``mass`` is the exact law.  In sampled mode it is a mixture
    over sampled transcripts of the exact conditional law given each transcript
    (empty unless requested), and ``samples`` holds the realized
    ``(K_A, K_B, T)`` per trial.
    """

    mass: dict
    m: int | None = None
    eps: Prob | None = None
    exact: bool = True
    samples: list | None = None
    trial_values: list | None = None

    def transcripts(self) -> dict:
        by_w: dict = defaultdict(dict)
        for (w, ka, kb), p in self.mass.items():
            by_w[w][ka, kb] = by_w[w].get((ka, kb), 0) + p
        return by_w

    def p_disagree(self) -> Prob:
        if self.samples is not None:
            return sum(1 for ka, kb, _ in self.samples if ka != kb) / len(self.samples)
        return total(p for (_, ka, kb), p in self.mass.items() if ka != kb)

    def stop_rounds(self) -> dict:
        """Distribution of Bob's stopping round ``T``."""
        if self.samples is not None:
            c = Counter(t for _, _, t in self.samples)
            return {t: n / len(self.samples) for t, n in sorted(c.items())}
        acc: dict = defaultdict(int)
        for (w, _, _), p in self.mass.items():
            acc[len(w) // 2] += p
        return dict(sorted(acc.items()))

    def expected_stop_round(self) -> Prob:
        return total(t * p for t, p in self.stop_rounds().items())


def _agreeing_entropy(joint: dict) -> float:
    """Unnormalized ``P{=} H(K_A | =)`` for one transcript's ``(K_A, K_B)`` masses."""
    diag = {ka: p for (ka, kb), p in joint.items() if ka == kb and p != 0}
    if not diag:
        return 0.0
    pd = total(diag.values())
    return float(pd) * entropy({k: p / pd for k, p in diag.items()})


def coinciding_entropy(keys: EntropyModelKeys) -> float:
    """``P{K_A = K_B} H(K_A | W, K_A = K_B)`` computed transcript by transcript."""
    return math.fsum(_agreeing_entropy(joint) for joint in keys.transcripts().values())


def coinciding_entropy_stderr(keys: EntropyModelKeys) -> float:
    """Standard error of a sampled :func:`coinciding_entropy` estimate (0 when exact)."""
    vals = keys.trial_values
    if not vals or len(vals) < 2:
        return 0.0
    return float(np.std(vals, ddof=1) / math.sqrt(len(vals)))


# exact enumeration over count vectors ---------------------------------------

def _multinomial(n: int, probs: Sequence[Prob]) -> Iterator[tuple[tuple, Prob]]:
    k = len(probs)

    def rec(i, left, acc):
        if i == k - 1:
            yield acc + (left,)
            return
        for c in range(left + 1):
            yield from rec(i + 1, left - c, acc + (c,))

    for counts in rec(0, n, ()):
        coef = factorial(n)
        p: Prob = 1
        for c, q in zip(counts, probs):
            coef //= factorial(c)
            p *= q ** c
        if p != 0:
            yield counts, coef * p


def _halvings(counts: Sequence[int], own: int) -> Iterator[tuple[tuple, Fraction]]:
    """Children of a set: keep Alice's candidate plus a uniform half-minus-one of the rest."""
    others = list(counts)
    others[own] -= 1
    n = sum(counts)
    keep = n // 2 - 1
    denom = comb(n - 1, keep)

    def rec(i, left, acc, ways):
        if i == len(others):
            if left == 0:
                yield acc, ways
            return
        for d in range(min(others[i], left) + 1):
            yield from rec(i + 1, left - d, acc + (d,), ways * comb(others[i], d))

    for picked, ways in rec(0, keep, (), 1):
        child = list(picked)
        child[own] += 1
        yield tuple(child), Fraction(ways, denom)


def enumerate_halving(source: JointSource, m: int, rule: StopRule,
                      max_states: int = MAX_EXACT_STATES) -> EntropyModelKeys:
    """Exact law of the halving protocol by recursion over count vectors.

    The number of initial states is ``|X| * C(2^m - 1 + |X| - 1, |X| - 1)``;
    beyond ``max_states`` the law has too many transcripts to list.
    """
    if m < 1:
        raise ContractError("halving protocol needs m >= 1")
    table = quantile_reduce(source)
    k = len(table.symbols)
    if m > MAX_EXACT_M or k > MAX_EXACT_ALPHABET:
        raise EnumerationLimitError(
            f"exact halving enumeration needs m <= {MAX_EXACT_M} and |X| <= {MAX_EXACT_ALPHABET}")
    states = k * comb((1 << m) - 1 + k - 1, k - 1)
    if states > max_states:
        raise EnumerationLimitError(
            f"{states} initial candidate sets exceed the exact limit {max_states}; use sampled mode")
    xi = {x: i for i, x in enumerate(table.symbols)}
    yj = {y: j for j, y in enumerate(table.ys)}
    by_x: dict = defaultdict(list)
    for (x, y), p in source.mass.items():
        by_x[xi[x]].append((yj[y], p))

    acc: dict = defaultdict(int)

    def visit(s, counts, rnd, weight, alive, w):
        w = w + (counts,)
        groups: dict = defaultdict(list)
        for j, pxy in alive:
            stop, best = bob_decision(table, counts, j, rule)
            groups[stop, best if stop else None].append((j, pxy))
        for (stop, best), members in groups.items():
            mass = weight * total(p for _, p in members)
            if stop:
                ka = _rank_of_symbol(counts, s)
                kb = _rank_of_symbol(counts, best)
                acc[w + (STOP,), ka, kb] += mass
            else:
                if rnd > m:
                    raise ContractError("Bob continued past the singleton round")
                for child, ph in _halvings(counts, s):
                    visit(s, child, rnd + 1, weight * ph, members, w + (CONTINUE,))

    for s in range(k):
        for dummies, pd in _multinomial((1 << m) - 1, table.px):
            counts = list(dummies)
            counts[s] += 1
            visit(s, tuple(counts), 1, pd, by_x[s], ())
    return EntropyModelKeys(dict(acc), m=m, eps=rule.eps, exact=True)


# channel-level parties -------------------------------------------------------

class _CountAlphabet:
    def __init__(self, k: int, size: int):
        self.k, self.size = k, size

    def __contains__(self, payload) -> bool:
        return (isinstance(payload, tuple) and len(payload) == self.k
                and min(payload) >= 0 and sum(payload) == self.size)


@dataclass(frozen=True)
class HalvingPlan:
    """Alice's private randomness: dummy symbols for positions 2..2^m and a permutation.

    Position 1 holds Alice's own candidate.  ``phi[j - 1]`` is the image of
    position ``j``; round ``i`` keeps positions with
    ``phi(j) = phi(1) (mod 2^(i-1))``.
    """

    dummies: tuple
    phi: tuple

    def __post_init__(self):
        n = len(self.phi)
        if sorted(self.phi) != list(range(1, n + 1)):
            raise ContractError("phi must be a permutation of [1:2^m]")
        if len(self.dummies) != n - 1:
            raise ContractError("need 2^m - 1 dummy symbols")

    @cached_property
    def _phi(self) -> np.ndarray:
        return np.asarray(self.phi)

    @cached_property
    def _dummies(self) -> np.ndarray:
        return np.asarray(self.dummies, dtype=np.int64)

    def mask(self, i: int) -> np.ndarray:
        """Boolean mask over positions ``1..2^m`` selecting ``S_i``."""
        mod = 1 << (i - 1)
        return self._phi % mod == self._phi[0] % mod

    def subset(self, i: int) -> frozenset:
        mod = 1 << (i - 1)
        ref = self.phi[0] % mod
        return frozenset(j + 1 for j, v in enumerate(self.phi) if v % mod == ref)


def halving_subset_counts(m: int) -> dict:
    """Tabulate, over every permutation of ``[1:2^m]``, which ``S_{i+1}`` follows each ``S_i``.

    Returns ``{i: {S_i: Counter({S_{i+1}: n})}}``.
    """
    n = 1 << m
    out: dict = {i: defaultdict(Counter) for i in range(1, m + 1)}
    dummy = (0,) * (n - 1)
    for perm in itertools.permutations(range(1, n + 1)):
        plan = HalvingPlan(dummy, perm)
        prev = plan.subset(1)
        for i in range(1, m + 1):
            nxt = plan.subset(i + 1)
            out[i][prev][nxt] += 1
            prev = nxt
    return out


class HalvingAlice(Party):
    def __init__(self, table: QuantileTable, m: int):
        self.table, self.m = table, m
        self.index = {x: i for i, x in enumerate(table.symbols)}
        n = 1 << m
        k = len(table.symbols)
        p = np.array([float(v) for v in table.px])
        p /= p.sum()

        def sampler(rng):
            return HalvingPlan(tuple(rng.choice(k, size=n - 1, p=p).tolist()),
                               tuple((rng.permutation(n) + 1).tolist()))

        def enumerator():
            perms = list(itertools.permutations(range(1, n + 1)))
            pperm = Fraction(1, len(perms))
            for dummies in itertools.product(range(k), repeat=n - 1):
                pd: Prob = 1
                for d in dummies:
                    pd *= table.px[d]
                if pd == 0:
                    continue
                for perm in perms:
                    yield HalvingPlan(dummies, perm), pd * pperm

        self.randomness = LocalRandomness(sampler=sampler, enumerator=enumerator,
                                          size=k ** (n - 1) * factorial(n))

    def _counts(self, obs, plan: HalvingPlan, i: int) -> tuple:
        mask = plan.mask(i)
        counts = np.bincount(plan._dummies[mask[1:]], minlength=len(self.table.symbols))
        counts[self.index[obs]] += 1
        return tuple(counts.tolist())

    def alphabet(self, round_index, transcript):
        return _CountAlphabet(len(self.table.symbols), 1 << (self.m - round_index // 2))

    def speak(self, obs, plan, transcript):
        if transcript and transcript[-1] == STOP:
            return None
        return self._counts(obs, plan, len(transcript) // 2 + 1)

    def output(self, obs, plan, transcript):
        return _rank_of_symbol(transcript[-2], self.index[obs])


class HalvingBob(Party):
    """Bob's stop-or-continue replies; ``fast`` evaluates posteriors in double precision."""

    def __init__(self, table: QuantileTable, rule: StopRule, fast: bool = False):
        self.table, self.rule = table, rule
        self.index = {y: j for j, y in enumerate(table.ys)}
        self.F = table.matrix() if fast else None

    def _decide(self, counts, j):
        if self.F is None:
            return bob_decision(self.table, counts, j, self.rule)
        c = np.asarray(counts)
        support = np.flatnonzero(c)
        col = self.F[support, j]
        mass = c[support] @ col
        i = int(np.argmax(col))
        return bool(col[i] >= (1 - float(self.rule.eps)) * mass), int(support[i])

    def alphabet(self, round_index, transcript):
        return (STOP, CONTINUE)

    def speak(self, obs, rand, transcript):
        stop, _ = self._decide(transcript[-1], self.index[obs])
        return STOP if stop else CONTINUE

    def output(self, obs, rand, transcript):
        counts = transcript[-2]
        _, best = self._decide(counts, self.index[obs])
        return _rank_of_symbol(counts, best)


def halving_parties(source: JointSource, m: int, rule: StopRule,
                    table: QuantileTable | None = None,
                    fast: bool = False) -> tuple[HalvingAlice, HalvingBob]:
    table = table or quantile_reduce(source)
    return HalvingAlice(table, m), HalvingBob(table, rule, fast)


def entropy_keys_from_protocol(law, m: int, eps: Prob) -> EntropyModelKeys:
    """Project a channel-level law with rank outputs to an entropy-model law."""
    acc: dict = defaultdict(int)
    for (_, _, w, ka, kb), p in law.mass.items():
        acc[w, ka, kb] += p
    return EntropyModelKeys(dict(acc), m=m, eps=eps, exact=all(is_exact(p) for p in acc.values()))


# sampled mode ----------------------------------------------------------------

class _FloatTable:
    """Float view of a quantile table for fast posterior evaluation."""

    def __init__(self, source: JointSource, table: QuantileTable):
        self.table = table
        self.F = table.matrix()
        self.joint = np.zeros_like(self.F)
        xi = {x: i for i, x in enumerate(table.symbols)}
        yj = {y: j for j, y in enumerate(table.ys)}
        for (x, y), p in source.mass.items():
            self.joint[xi[x], yj[y]] = float(p)

    def decisions(self, counts: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
        """Stop flags and MAP symbol for every y at once."""
        support = np.flatnonzero(counts)
        sub = self.F[support]
        mass = counts[support] @ sub
        best = support[np.argmax(sub, axis=0)]
        top = sub.max(axis=0)
        return top >= (1 - eps) * mass, best


def _transcript_conditional(ft: _FloatTable, w: tuple, eps: float) -> dict:
    """Exact ``P(K_A, K_B | w)`` for one transcript.

    Given the count chain, ``P(w | x, y)`` is proportional to
    ``c_T[x] / p(x)`` times the indicator that every one of Bob's declarations
    matches what ``y`` would have said; the multinomial and hypergeometric
    factors telescope.
    """
    chain = [np.asarray(c) for c in w[0::2]]
    declared = w[1::2]
    alive = np.ones(ft.F.shape[1], dtype=bool)
    best = None
    for c, d in zip(chain, declared):
        stop, best = ft.decisions(c, eps)
        alive &= stop if d == STOP else ~stop
    final = chain[-1]
    support = np.flatnonzero(final)
    px = np.array([float(ft.table.px[s]) for s in support])
    weight = ft.joint[support] * (final[support] / px)[:, None] * alive[None, :]
    ranks = np.cumsum(final) - final + 1
    ka = np.broadcast_to(ranks[support][:, None], weight.shape)
    kb = np.broadcast_to(ranks[best][None, :], weight.shape)
    hit = weight > 0
    pairs, inv = np.unique(np.stack([ka[hit], kb[hit]], axis=1), axis=0, return_inverse=True)
    mass = np.bincount(inv.ravel(), weights=weight[hit]) / weight.sum()
    return {(int(a), int(b)): float(v) for (a, b), v in zip(pairs, mass)}


def sample_halving(source: JointSource, m: int, rule: StopRule, seed: int, trials: int,
                   conditional_trials: int = 0) -> EntropyModelKeys:
    """Monte Carlo run through the channel harness.

    The first ``conditional_trials`` transcripts also contribute their exact
    conditional key law to ``mass`` (so :func:`coinciding_entropy` averages
    exact per-transcript values rather than plug-in estimates).
    """
    table = quantile_reduce(source)
    alice, bob = halving_parties(source, m, rule, table, fast=True)
    ft = _FloatTable(source, table) if conditional_trials else None
    eps = float(rule.eps)
    samples, values = [], []
    acc: dict = defaultdict(float)
    n_cond = min(conditional_trials, trials)
    for t, (_, _, w, ka, kb) in enumerate(iter_protocol(source, alice, bob, seed, trials)):
        samples.append((ka, kb, len(w) // 2))
        if t < n_cond:
            cond = _transcript_conditional(ft, w, eps)
            values.append(_agreeing_entropy(cond))
            for (a, b), p in cond.items():
                acc[w, a, b] += p / n_cond
    return EntropyModelKeys(dict(acc), m=m, eps=rule.eps, exact=False, samples=samples,
                            trial_values=values or None)


def run_halving_protocol(source: JointSource, m: int, rule: StopRule, *,
                         seed: int | None = None, trials: int | None = None,
                         conditional_trials: int = 0) -> EntropyModelKeys:
    """Exact enumeration when ``trials`` is None, Monte Carlo otherwise."""
    if trials is None:
        return enumerate_halving(source, m, rule)
    if seed is None:
        raise ContractError("sampled mode needs a seed")
    return sample_halving(source, m, rule, seed, trials, conditional_trials)


def write_entropy_keys(keys: EntropyModelKeys, fp) -> None:
    """One line per ``(transcript, K_A, K_B)`` with its mass."""
    for (w, ka, kb), p in keys.mass.items():
        fp.write(json.dumps({"transcript": to_jsonable(w), "K_A": int(ka), "K_B": int(kb),
                             "p": prob_json(p)}, separators=(",", ":")) + "\n")


def read_entropy_keys(fp) -> EntropyModelKeys:
    """Inverse of :func:`write_entropy_keys`; ``"p": null`` lines share mass equally."""
    acc: dict = defaultdict(int)
    unweighted = []
    for n, line in enumerate(fp):
        if not line.strip():
            continue
        rec = json.loads(line)
        try:
            key = (from_jsonable(rec["transcript"]), int(rec["K_A"]), int(rec["K_B"]))
        except KeyError as exc:
            raise ContractError(f"line {n + 1}: missing field {exc.args[0]!r}") from None
        if key[1] < 1 or key[2] < 1:
            raise ContractError(f"line {n + 1}: keys must be positive integers")
        p = prob_from_json(rec.get("p"))
        if p is None:
            unweighted.append(key)
        else:
            acc[key] += p
    if unweighted:
        if acc:
            raise ContractError("key log mixes weighted and unweighted lines")
        for key in unweighted:
            acc[key] += Fraction(1, len(unweighted))
    if not acc:
        raise ContractError("empty key log")
    s = total(acc.values())
    if (s != 1) if is_exact(s) else abs(s - 1) > 1e-9:
        raise ContractError(f"key log masses sum to {s}, not 1")
    return EntropyModelKeys(dict(acc), exact=all(is_exact(p) for p in acc.values()))
