"""Public-discussion machinery.

A protocol is a pair of :class:`Party` objects.  Each party is a deterministic
function of its observation, a draw from its declared finite local randomness,
and the transcript so far.  Rounds alternate starting with Alice; the speaker
either returns a payload (appended to the public transcript) or ``None`` to end
the discussion.  Eve is not modelled as a party: her view is the transcript.

Transcripts are stored as plain tuples of payloads so they can key exact laws;
the sender of round ``r`` is implied by ``r % 2``.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from collections import defaultdict
from collections.abc import Callable, Hashable, Iterable, Iterator
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import accumulate
from typing import Any, TextIO

import numpy as np

from vlkey.errors import ContractError, EnumerationLimitError, NonTerminationError
from vlkey.prob import Dist, JointSource, KeyLaw, Prob, is_exact

FAILURE = "<fail>"
ALICE, BOB = "alice", "bob"
DEFAULT_ROUND_CAP = 64
MAX_BRANCHES = 5_000_000


@dataclass(frozen=True)
class Message:
    sender: str
    payload: Hashable

    @property
    def is_failure(self) -> bool:
        return self.payload == FAILURE


def messages(transcript: tuple) -> list[Message]:
    return [Message(ALICE if r % 2 == 0 else BOB, p) for r, p in enumerate(transcript)]


class _CdfSampler:
    def __init__(self, items: list, probs: list[float]):
        s = math.fsum(probs)
        self.items = items
        self.cdf = list(accumulate(p / s for p in probs))

    def __call__(self, rng: np.random.Generator):
        i = bisect_right(self.cdf, rng.random())
        return self.items[min(i, len(self.items) - 1)]


class LocalRandomness:
    """A party's private randomness: a finite alphabet with declared masses.

    Either give a :class:`Dist` (enumerable and samplable), or a ``sampler``
    for spaces too large to list, optionally with an ``enumerator`` yielding
    ``(value, mass)`` pairs and a declared ``size``.
    """

    def __init__(self, dist: Dist | None = None, *,
                 sampler: Callable[[np.random.Generator], Any] | None = None,
                 enumerator: Callable[[], Iterable[tuple[Any, Prob]]] | None = None,
                 size: int | None = None):
        if dist is None and sampler is None:
            raise ContractError("local randomness needs a distribution or a sampler")
        self.dist = dist
        self._enumerator = enumerator
        if dist is not None:
            self.size = len(dist.support)
            self._sampler = sampler or _CdfSampler(dist.support, [float(dist[v]) for v in dist.support])
        else:
            self.size = size
            self._sampler = sampler

    @classmethod
    def trivial(cls) -> LocalRandomness:
        return cls(Dist.point(None))

    @property
    def enumerable(self) -> bool:
        return self.dist is not None or self._enumerator is not None

    def support(self) -> Iterator[tuple[Any, Prob]]:
        if self.dist is not None:
            for v in self.dist.support:
                yield v, self.dist[v]
        elif self._enumerator is not None:
            yield from self._enumerator()
        else:
            raise EnumerationLimitError("this randomness space can only be sampled")

    def sample(self, rng: np.random.Generator):
        return self._sampler(rng)


TRIVIAL = LocalRandomness.trivial()


class Party:
    """Base class for protocol participants.

    Subclasses implement :meth:`speak` and :meth:`output`; they may override
    :meth:`alphabet` to declare the finite payload alphabet of a round.
    """

    randomness: LocalRandomness = TRIVIAL

    def alphabet(self, round_index: int, transcript: tuple):
        """Allowed payloads for this round, or ``None`` for no declared restriction."""
        return None

    def speak(self, obs, rand, transcript: tuple):
        raise NotImplementedError

    def output(self, obs, rand, transcript: tuple):
        raise NotImplementedError


def run_discussion(alice: Party, bob: Party, x, y, ra, rb,
                   round_cap: int = DEFAULT_ROUND_CAP) -> tuple[tuple, Any, Any]:
    """Run one branch to completion; return ``(transcript, alice_output, bob_output)``."""
    transcript: tuple = ()
    seats = ((alice, x, ra), (bob, y, rb))
    r = 0
    while True:
        party, obs, rand = seats[r % 2]
        payload = party.speak(obs, rand, transcript)
        if payload is None:
            break
        if r >= round_cap:
            raise NonTerminationError(f"protocol exceeded the round cap of {round_cap}")
        allowed = party.alphabet(r, transcript)
        if allowed is not None and payload != FAILURE and payload not in allowed:
            raise ContractError(f"round {r}: payload {payload!r} not in the declared alphabet")
        transcript = transcript + (payload,)
        r += 1
    return transcript, alice.output(x, ra, transcript), bob.output(y, rb, transcript)


@dataclass
class KeyOutcome:
    """One realization of a variable-length key scheme."""

    length: int
    a: int
    b: int
    transcript: tuple
    probability: Prob | None = None

    def __post_init__(self):
        n = 1 << self.length
        if self.length < 0 or not (1 <= self.a <= n and 1 <= self.b <= n):
            raise ContractError(f"key outcome (L={self.length}, A={self.a}, B={self.b}) outside [1:2^L]")


@dataclass
class ProtocolLaw:
    """Exact (or empirical) law of ``(x, y, transcript, alice_out, bob_out)``."""

    mass: dict = field(default_factory=dict)

    def transcripts(self) -> set:
        return {k[2] for k in self.mass}

    def check_prefix_free(self) -> None:
        ts = self.transcripts()
        for w in ts:
            for n in range(len(w)):
                if w[:n] in ts:
                    raise ContractError(f"transcript {w[:n]!r} is a strict prefix of {w!r}")

    def key_law(self) -> KeyLaw:
        """Project to the key law, asserting both parties agree on ``L``.

        Party outputs must be ``(L, key)`` pairs.  ``L`` must be a function of
        ``(x, transcript)`` and of ``(y, transcript)``.
        """
        by_x: dict = {}
        by_y: dict = {}
        acc: dict = defaultdict(int)
        for (x, y, w, oa, ob), p in self.mass.items():
            (la, a), (lb, b) = oa, ob
            if la != lb:
                raise ContractError(f"length disagreement on transcript {w!r}: {la} vs {lb}")
            if by_x.setdefault((x, w), la) != la or by_y.setdefault((y, w), lb) != lb:
                raise ContractError(f"key length is not a function of (observation, transcript) at {w!r}")
            acc[w, la, a, b] += p
        law = KeyLaw(dict(acc))
        for w, l, a, b in law.mass:
            KeyOutcome(l, a, b, w)
        return law


def enumerate_protocol(source: JointSource, alice: Party, bob: Party,
                       round_cap: int = DEFAULT_ROUND_CAP,
                       max_branches: int = MAX_BRANCHES) -> ProtocolLaw:
    """Exhaustively run every branch, weighting by source and local-randomness mass."""
    ra_space = list(alice.randomness.support())
    rb_space = list(bob.randomness.support())
    branches = len(source.mass) * len(ra_space) * len(rb_space)
    if branches > max_branches:
        raise EnumerationLimitError(
            f"{branches} branches exceed the enumeration limit {max_branches}; use sampled mode")
    acc: dict = defaultdict(int)
    for (x, y), pxy in source.mass.items():
        for ra, pa in ra_space:
            for rb, pb in rb_space:
                w, oa, ob = run_discussion(alice, bob, x, y, ra, rb, round_cap)
                acc[x, y, w, oa, ob] += pxy * pa * pb
    law = ProtocolLaw(dict(acc))
    law.check_prefix_free()
    return law


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Per-trial generator derived from ``(seed, trial)`` only."""
    return np.random.default_rng([seed, trial])


@dataclass
class SampleResult:
    outcomes: list
    law: ProtocolLaw

    def stream_jsonl(self) -> str:
        return "".join(json.dumps(to_jsonable(o), separators=(",", ":")) + "\n" for o in self.outcomes)


def sample_protocol(source: JointSource, alice: Party, bob: Party, seed: int, trials: int,
                    round_cap: int = DEFAULT_ROUND_CAP) -> SampleResult:
    """Reproducible Monte Carlo execution; trial ``i`` uses ``trial_rng(seed, i)``."""
    outcomes = list(iter_protocol(source, alice, bob, seed, trials, round_cap))
    counts: dict = defaultdict(int)
    for o in outcomes:
        counts[o] += 1
    law = ProtocolLaw({k: c / trials for k, c in counts.items()})
    return SampleResult(outcomes, law)


def iter_protocol(source: JointSource, alice: Party, bob: Party, seed: int, trials: int,
                  round_cap: int = DEFAULT_ROUND_CAP) -> Iterator[tuple]:
    """Stream ``(x, y, transcript, alice_out, bob_out)`` per trial without retaining them."""
    if trials < 1:
        raise ContractError("trials must be at least 1")
    pairs = list(source.mass)
    pick = _CdfSampler(pairs, [float(source.mass[k]) for k in pairs])
    for t in range(trials):
        rng = trial_rng(seed, t)
        x, y = pick(rng)
        ra = alice.randomness.sample(rng)
        rb = bob.randomness.sample(rng)
        w, oa, ob = run_discussion(alice, bob, x, y, ra, rb, round_cap)
        yield x, y, w, oa, ob


def to_jsonable(v):
    if isinstance(v, tuple):
        return [to_jsonable(u) for u in v]
    if isinstance(v, Fraction):
        return [v.numerator, v.denominator]
    if isinstance(v, np.integer):
        return int(v)
    return v


def from_jsonable(v):
    if isinstance(v, list):
        return tuple(from_jsonable(u) for u in v)
    return v


def prob_json(p: Prob):
    if is_exact(p):
        q = Fraction(p)
        return [q.numerator, q.denominator]
    return float(p)


def prob_from_json(v) -> Prob | None:
    if v is None:
        return None
    if isinstance(v, list):
        return Fraction(v[0], v[1])
    return float(v)


def write_key_law(law: KeyLaw, fp: TextIO) -> None:
    """One outcome per line: ``{"transcript", "L", "A", "B", "p"}``."""
    for (w, l, a, b), p in law.mass.items():
        fp.write(json.dumps({"transcript": to_jsonable(w), "L": l, "A": a, "B": b,
                             "p": prob_json(p)}, separators=(",", ":")) + "\n")


def read_key_law(fp: TextIO) -> KeyLaw:
    """Read a JSONL key log; lines with ``"p": null`` are weighted equally."""
    acc: dict = defaultdict(int)
    unweighted = []
    for n, line in enumerate(fp):
        if not line.strip():
            continue
        rec = json.loads(line)
        try:
            key = (from_jsonable(rec["transcript"]), int(rec["L"]), int(rec["A"]), int(rec["B"]))
        except KeyError as exc:
            raise ContractError(f"line {n + 1}: missing field {exc.args[0]!r}") from None
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
    law = KeyLaw(dict(acc))
    law.validate()
    return law


def key_outcomes(law: KeyLaw) -> list[KeyOutcome]:
    return [KeyOutcome(l, a, b, w, p) for (w, l, a, b), p in law.mass.items()]
