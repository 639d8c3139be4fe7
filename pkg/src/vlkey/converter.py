"""Turn coinciding-entropy keys into a variable-length secret key.

For each prior transcript ``w`` the agreeing-key law ``p(k | w, K_A = K_B)`` is
sliced into probability levels, each level is cut into power-of-two subsets,
and each subset into equal sub-blocks of ``2^{m_i}`` keys chosen so that two
keys falling into one sub-block rarely disagree.  Both parties announce the
(subset, sub-block) of their key; on a match the key's index inside the
sub-block is the output, otherwise ``L = 0``.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from collections import defaultdict
from collections.abc import Hashable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from math import factorial

import numpy as np

from vlkey.channel import FAILURE
from vlkey.entropy_model import EntropyModelKeys, coinciding_entropy
from vlkey.errors import ContractError
from vlkey.prob import (IdealDistance, KeyLaw, Prob, canonical_order, distance_from_ideal,
                        floor_log2, is_exact, log2, total)

LOG2E = math.log2(math.e)
EXHAUSTIVE_LIMIT = 10**6
RANDOM_BUDGET = 10**4
_SNAP = 1e-12


def converter_parameters(eps_prime: Prob) -> tuple[Prob, float]:
    """``(eps, delta) = (3/5 eps', 2/5 eps' log2 e)``; the per-length distance is then at most eps'."""
    if not 0 < eps_prime < 1:
        raise ContractError(f"eps' must lie in (0, 1), got {eps_prime}")
    eps = Fraction(3, 5) * eps_prime if is_exact(eps_prime) else 0.6 * eps_prime
    return eps, 0.4 * float(eps_prime) * LOG2E


def length_lower_bound(h_eq: float, eps_prime: Prob) -> float:
    """Guaranteed ``E[L]`` of the converted key given input coinciding entropy ``h_eq``."""
    return h_eq - math.log2(h_eq + 1) - 2 * math.log2(1 / float(eps_prime)) - 7.082


def level_of(p: Prob, delta: Prob) -> int:
    """``floor(-log2(p) / delta)``.

    Exact when both arguments are rationals; otherwise a value within 1e-12 of
    an integer is snapped to it before flooring so boundary keys land stably.
    """
    if not 0 < p <= 1:
        raise ContractError(f"level needs 0 < p <= 1, got {p}")
    if not 0 < delta <= 1:
        raise ContractError(f"delta must lie in (0, 1], got {delta}")
    if is_exact(p) and is_exact(delta):
        # with delta = a/b: floor(-log2(p) / delta) = floor(-ceil(log2(p^b)) / a)
        d = Fraction(delta)
        q = Fraction(p) ** d.denominator
        e = floor_log2(q)
        ceil_log = e if q == Fraction(2) ** e else e + 1
        return -ceil_log // d.numerator
    x = -log2(p) / float(delta)
    r = round(x)
    return r if abs(x - r) < _SNAP else math.floor(x)


@dataclass(frozen=True)
class LevelMap:
    delta: Prob
    level: dict

    def classes(self) -> dict[int, list]:
        out: dict = defaultdict(list)
        for k, t in self.level.items():
            out[t].append(k)
        return dict(sorted(out.items()))


def level_map(cond: Mapping[Hashable, Prob], delta: Prob) -> LevelMap:
    return LevelMap(delta, {k: level_of(p, delta) for k, p in cond.items() if p > 0})


def binary_sizes(n: int) -> list[int]:
    """Powers of two in the binary expansion of ``n``, largest first."""
    return [1 << b for b in range(n.bit_length() - 1, -1, -1) if n >> b & 1]


def _by_descending_mass(keys: Sequence, cond: Mapping) -> list:
    order = {k: i for i, k in enumerate(canonical_order(keys))}
    return sorted(keys, key=lambda k: (-cond[k], order[k]))


def build_level_partition(cond: Mapping[Hashable, Prob], delta: Prob) -> list[tuple]:
    """Power-of-two subsets of each level class, heaviest keys first.

    Subsets are listed level by level (ascending level) and, within a class,
    in decreasing size.  Each subset's keys are in descending conditional mass.
    """
    subsets = []
    for keys in level_map(cond, delta).classes().values():
        ordered = _by_descending_mass(keys, cond)
        start = 0
        for size in binary_sizes(len(ordered)):
            subsets.append(tuple(ordered[start:start + size]))
            start += size
    return subsets


def choose_block_length(eps: Prob, rho: Prob, size: int) -> int:
    """``max(floor(log2(eps * rho * size)), 0)``."""
    if size < 1 or size & (size - 1):
        raise ContractError(f"subset size must be a power of two, got {size}")
    if not 0 < rho <= 1 or not 0 < eps < 1:
        raise ContractError("need 0 < eps < 1 and 0 < rho <= 1")
    v = eps * rho * size
    if is_exact(v):
        return max(floor_log2(v), 0)
    x = math.log2(v)
    r = round(x)
    return max(r if abs(x - r) < _SNAP else math.floor(x), 0)


def subblock_error(joint: Mapping[tuple, Prob], blocks: Sequence[Sequence]) -> Prob:
    """``P{K_A != K_B | K_A and K_B share a block}`` under ``joint`` (0 if no block is shared)."""
    where = {k: j for j, b in enumerate(blocks) for k in b}
    cross, same = [], []
    for (ka, kb), p in joint.items():
        ja, jb = where.get(ka), where.get(kb)
        if ja is None or ja != jb:
            continue
        (same if ka == kb else cross).append(p)
    hit = total(cross) + total(same)
    return total(cross) / hit if hit else 0


def count_partitions(n: int, b: int) -> int:
    """Number of ways to split ``n`` labelled items into unordered blocks of size ``b``."""
    if b < 1 or n % b:
        raise ContractError(f"{n} items do not split into blocks of {b}")
    g = n // b
    return factorial(n) // (factorial(b) ** g * factorial(g))


def _all_partitions(items: tuple, b: int) -> Iterator[list[tuple]]:
    if not items:
        yield []
        return
    head, rest = items[0], items[1:]
    for mates in itertools.combinations(range(len(rest)), b - 1):
        block = (head, *(rest[i] for i in mates))
        left = tuple(v for i, v in enumerate(rest) if i not in mates)
        for tail in _all_partitions(left, b):
            yield [block, *tail]


@dataclass(frozen=True)
class SubblockSearch:
    blocks: tuple
    error: Prob
    satisfied: bool
    tried: int
    exhaustive: bool


def find_subblock_partition(joint: Mapping[tuple, Prob], subset: Sequence, m_i: int, eps: Prob,
                            seed: int = 0, exhaustive_limit: int = EXHAUSTIVE_LIMIT,
                            budget: int = RANDOM_BUDGET) -> SubblockSearch:
    """Find equal blocks of ``2^{m_i}`` keys whose within-block disagreement is at most ``eps``.

    The consecutive split of ``subset`` is tried first.  Small search spaces are
    then enumerated in full; large ones are sampled uniformly at random.  When
    nothing qualifies the best partition seen is returned with
    ``satisfied=False``.
    """
    items = tuple(subset)
    b = 1 << m_i
    if len(items) % b:
        raise ContractError(f"subset of size {len(items)} is not divisible by 2^{m_i}")
    members = set(items)
    restricted = {(ka, kb): p for (ka, kb), p in joint.items() if ka in members and kb in members and p}

    def score(blocks):
        return subblock_error(restricted, blocks)

    first = tuple(items[i:i + b] for i in range(0, len(items), b))
    best, best_err, tried = first, score(first), 1
    if best_err <= eps:
        return SubblockSearch(best, best_err, True, tried, False)
    exhaustive = count_partitions(len(items), b) <= exhaustive_limit
    if exhaustive:
        candidates = (tuple(p) for p in _all_partitions(items, b))
    else:
        rng = np.random.default_rng(seed)

        def draws():
            for _ in range(budget):
                perm = rng.permutation(len(items))
                yield tuple(tuple(items[i] for i in perm[s:s + b]) for s in range(0, len(items), b))
        candidates = draws()
    for blocks in candidates:
        err = score(blocks)
        tried += 1
        if err < best_err:
            best, best_err = blocks, err
        if err <= eps:
            return SubblockSearch(blocks, err, True, tried, exhaustive)
    return SubblockSearch(best, best_err, False, tried, exhaustive)


@dataclass(frozen=True)
class SubsetPlan:
    keys: tuple
    level: int
    rho: Prob
    m: int
    search: SubblockSearch

    @property
    def blocks(self) -> tuple:
        return self.search.blocks


@dataclass
class PartitionPlan:
    """Two-layer partition of one transcript's agreeing keys."""

    subsets: list
    eps: Prob
    delta: Prob
    cond: dict
    position: dict = field(default_factory=dict)

    def __post_init__(self):
        for i, sp in enumerate(self.subsets, 1):
            for j, block in enumerate(sp.blocks, 1):
                for pos, k in enumerate(canonical_order(block)):
                    self.position[k] = (i, j, pos + 1)

    def announce(self, k):
        """``(subset index, block index)`` of ``k``, or the failure symbol off the agreeing support."""
        hit = self.position.get(k)
        return FAILURE if hit is None else hit[:2]

    def index(self, k) -> int:
        return self.position[k][2]

    @property
    def satisfied(self) -> bool:
        return all(sp.search.satisfied for sp in self.subsets)


def plan_transcript(joint: Mapping[tuple, Prob], eps: Prob, delta: Prob, seed: int = 0) -> PartitionPlan | None:
    """Build the partition for one transcript's ``(K_A, K_B)`` law; ``None`` if the keys never agree."""
    diag = {ka: p for (ka, kb), p in joint.items() if ka == kb and p > 0}
    pd = total(diag.values())
    if not diag:
        return None
    cond = {k: p / pd for k, p in diag.items()}
    subsets = []
    for i, keys in enumerate(build_level_partition(cond, delta)):
        members = set(keys)
        both = total(p for (ka, kb), p in joint.items() if ka in members and kb in members)
        rho = total(diag[k] for k in keys) / both
        m = choose_block_length(eps, rho, len(keys))
        search = find_subblock_partition(joint, keys, m, eps, seed=_child_seed(seed, i))
        subsets.append(SubsetPlan(tuple(keys), level_of(cond[keys[0]], delta), rho, m, search))
    return PartitionPlan(subsets, eps, delta, cond)


def _child_seed(seed: int, label) -> int:
    digest = hashlib.blake2b(repr((seed, label)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


@dataclass
class ConverterOutput:
    law: KeyLaw
    plans: dict
    eps_prime: Prob
    eps: Prob
    delta: float
    h_eq: float

    @property
    def distance(self) -> IdealDistance:
        return distance_from_ideal(self.law)

    @property
    def expected_length(self) -> Prob:
        return self.law.expected_length()

    @property
    def length_bound(self) -> float:
        return length_lower_bound(self.h_eq, self.eps_prime)

    @property
    def searches_satisfied(self) -> bool:
        return all(p.satisfied for p in self.plans.values() if p is not None)

    def error_mass(self) -> tuple[Prob, Prob]:
        """``(P{A != B, L > 0}, P{L > 0})``."""
        bad = total(p for (_, l, a, b), p in self.law.mass.items() if l > 0 and a != b)
        live = total(p for (_, l, _, _), p in self.law.mass.items() if l > 0)
        return bad, live


def convert(keys: EntropyModelKeys, eps_prime: Prob, seed: int = 0) -> ConverterOutput:
    """Convert an entropy-model key law into a variable-length key law."""
    eps, delta = converter_parameters(eps_prime)
    acc: dict = defaultdict(int)
    plans = {}
    for w, joint in keys.transcripts().items():
        if total(joint.values()) == 0:
            continue
        plan = plan_transcript(joint, eps, delta, seed=_child_seed(seed, w))
        plans[w] = plan
        for (ka, kb), p in joint.items():
            if p == 0:
                continue
            wa = FAILURE if plan is None else plan.announce(ka)
            wb = FAILURE if plan is None else plan.announce(kb)
            ext = (*w, wa, wb)
            if FAILURE in (wa, wb) or wa != wb:
                acc[ext, 0, 1, 1] += p
            else:
                l = plan.subsets[wa[0] - 1].m
                if l == 0:
                    acc[ext, 0, 1, 1] += p
                else:
                    acc[ext, l, plan.index(ka), plan.index(kb)] += p
    law = KeyLaw(dict(acc))
    return ConverterOutput(law, plans, eps_prime, eps, delta, coinciding_entropy(keys))


def grouping_terms(cond: Mapping[Hashable, Prob], delta: Prob) -> tuple[float, float]:
    """``(E[log2 |S_c(K)|], E[log2 |level class of K|])`` under the agreeing law.

    The construction keeps the first within 2 bits of the second.
    """
    subsets = build_level_partition(cond, delta)
    classes = level_map(cond, delta).classes()
    size_of = {k: len(s) for s in subsets for k in s}
    lm = level_map(cond, delta).level
    class_size = {t: len(v) for t, v in classes.items()}
    e_sub = math.fsum(float(p) * math.log2(size_of[k]) for k, p in cond.items() if p > 0)
    e_cls = math.fsum(float(p) * math.log2(class_size[lm[k]]) for k, p in cond.items() if p > 0)
    return e_sub, e_cls
