"""Exact finite-alphabet probability.

Probabilities are either :class:`fractions.Fraction` (rational mode, used by
every exact enumeration) or ``float`` (Monte Carlo paths).  All logarithms are
base 2 and ``0 log 0 = 0``.  Entropies are always returned as floats since they
are irrational in general; total variation distances stay rational when their
inputs are.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import defaultdict
from collections.abc import Hashable, Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Union

from vlkey.errors import ContractError

Prob = Union[Fraction, float, int]

FLOAT_TOL = 1e-12


def canonical_order(labels: Iterable[Hashable]) -> list:
    """Sort labels lexicographically, falling back to ``repr`` for mixed types."""
    labels = list(labels)
    try:
        return sorted(labels)
    except TypeError:
        return sorted(labels, key=lambda v: (type(v).__name__, repr(v)))


def is_exact(p: Prob) -> bool:
    return isinstance(p, (Fraction, int)) and not isinstance(p, bool)


def total(values: Iterable[Prob]) -> Prob:
    """Sum probabilities, exactly when every term is rational."""
    values = list(values)
    if all(is_exact(v) for v in values):
        return sum(values, Fraction(0))
    return math.fsum(float(v) for v in values)


def log2(p: Prob) -> float:
    """Base-2 logarithm that stays accurate for huge rational numerators/denominators."""
    if isinstance(p, Fraction):
        if p <= 0:
            raise ValueError("log2 of a nonpositive number")
        return math.log2(p.numerator) - math.log2(p.denominator)
    return math.log2(p)


def floor_log2(q: Prob) -> int:
    """Exact ``floor(log2(q))`` for positive rationals (floats are converted exactly)."""
    q = Fraction(q)
    if q <= 0:
        raise ValueError("floor_log2 needs a positive argument")
    e = q.numerator.bit_length() - q.denominator.bit_length()
    # 2**e <= q < 2**(e+1) after at most one correction step
    if e >= 0:
        if q < (1 << e):
            e -= 1
    elif q < Fraction(1, 1 << -e):
        e -= 1
    return e


def plogp(p: Prob) -> float:
    return 0.0 if p == 0 else float(p) * log2(p)


def _check_masses(masses: Iterable[Prob], what: str) -> None:
    masses = list(masses)
    for p in masses:
        if p < 0:
            raise ContractError(f"{what}: negative probability {p}")
    s = total(masses)
    if all(is_exact(p) for p in masses):
        if s != 1:
            raise ContractError(f"{what}: masses sum to {s}, not 1")
    elif abs(s - 1.0) > 1e-9:
        raise ContractError(f"{what}: masses sum to {s!r}, not 1")


class Dist(Mapping):
    """A probability mass function on a finite, canonically ordered support."""

    __slots__ = ("_mass",)

    def __init__(self, mass: Mapping[Hashable, Prob] | Iterable[tuple[Hashable, Prob]], *, check: bool = True):
        items = dict(mass)
        if check:
            _check_masses(items.values(), "Dist")
        self._mass = {k: items[k] for k in canonical_order(items)}

    @classmethod
    def uniform(cls, labels: Iterable[Hashable]) -> Dist:
        labels = list(labels)
        if not labels:
            raise ContractError("uniform distribution needs a nonempty support")
        if len(set(labels)) != len(labels):
            raise ContractError("support labels must be unique")
        p = Fraction(1, len(labels))
        return cls({x: p for x in labels})

    @classmethod
    def point(cls, label: Hashable) -> Dist:
        return cls({label: Fraction(1)})

    @classmethod
    def bernoulli(cls, alpha: Prob) -> Dist:
        return cls({0: 1 - alpha, 1: alpha})

    def __getitem__(self, key):
        return self._mass.get(key, 0)

    def __contains__(self, key) -> bool:
        return key in self._mass

    def __iter__(self) -> Iterator:
        return iter(self._mass)

    def __len__(self) -> int:
        return len(self._mass)

    def __repr__(self) -> str:
        return f"Dist({self._mass!r})"

    @property
    def support(self) -> list:
        return [k for k, p in self._mass.items() if p > 0]

    @property
    def exact(self) -> bool:
        return all(is_exact(p) for p in self._mass.values())


def entropy(d: Mapping[Hashable, Prob] | Iterable[Prob]) -> float:
    """Shannon entropy in bits.

    Accepts a :class:`Dist`, any mapping of masses, or a bare iterable of
    probabilities.
    """
    values = d.values() if isinstance(d, Mapping) else d
    return max(0.0, -math.fsum(plogp(p) for p in values))


def binary_entropy(p: Prob) -> float:
    if not 0 <= p <= 1:
        raise ValueError(f"binary_entropy needs 0 <= p <= 1, got {p}")
    return entropy((p, 1 - p))


def tv_distance(p: Mapping[Hashable, Prob], q: Mapping[Hashable, Prob]) -> Prob:
    """Half the l1 distance between two pmfs over the union of their supports."""
    keys = set(p) | set(q)
    diff = [abs(p.get(k, 0) - q.get(k, 0)) for k in keys]
    return total(diff) / 2


@dataclass(frozen=True)
class JointSource:
    """Exact joint pmf of the pair observed by Alice (``x``) and Bob (``y``)."""

    alphabet_x: tuple
    alphabet_y: tuple
    mass: Mapping[tuple, Prob]

    def __post_init__(self):
        ax, ay = tuple(self.alphabet_x), tuple(self.alphabet_y)
        if len(set(ax)) != len(ax) or len(set(ay)) != len(ay):
            raise ContractError("alphabet labels must be unique")
        sx, sy = set(ax), set(ay)
        for x, y in self.mass:
            if x not in sx or y not in sy:
                raise ContractError(f"mass entry ({x!r}, {y!r}) outside the alphabets")
        _check_masses(self.mass.values(), "JointSource")
        object.__setattr__(self, "alphabet_x", ax)
        object.__setattr__(self, "alphabet_y", ay)
        object.__setattr__(self, "mass", {k: v for k, v in self.mass.items() if v != 0})

    @classmethod
    def from_function(cls, alphabet_x, alphabet_y, fn) -> JointSource:
        return cls(tuple(alphabet_x), tuple(alphabet_y),
                   {(x, y): fn(x, y) for x in alphabet_x for y in alphabet_y})

    @property
    def exact(self) -> bool:
        return all(is_exact(p) for p in self.mass.values())

    def marginal_x(self) -> Dist:
        acc: dict = defaultdict(int)
        for (x, _), p in self.mass.items():
            acc[x] += p
        return Dist({x: acc[x] for x in self.alphabet_x if acc[x] != 0}, check=False)

    def marginal_y(self) -> Dist:
        acc: dict = defaultdict(int)
        for (_, y), p in self.mass.items():
            acc[y] += p
        return Dist({y: acc[y] for y in self.alphabet_y if acc[y] != 0}, check=False)

    def conditional_x(self, y) -> Dist:
        """``p_{X|Y=y}``; ``y`` must have positive mass."""
        py = self.marginal_y()[y]
        if py == 0:
            raise ContractError(f"conditioning on zero-mass y={y!r}")
        return Dist({x: self.mass.get((x, y), 0) / py for x in self.alphabet_x
                     if self.mass.get((x, y), 0) != 0}, check=False)

    def coarsen(self, fx=None, fy=None) -> JointSource:
        """Push the pmf through symbol maps ``fx``, ``fy`` (merging symbols)."""
        fx = fx or (lambda v: v)
        fy = fy or (lambda v: v)
        acc: dict = defaultdict(int)
        for (x, y), p in self.mass.items():
            acc[fx(x), fy(y)] += p
        ax = canonical_order({fx(x) for x in self.alphabet_x})
        ay = canonical_order({fy(y) for y in self.alphabet_y})
        return JointSource(tuple(ax), tuple(ay), dict(acc))

    def to_json(self) -> dict:
        ix = {x: i for i, x in enumerate(self.alphabet_x)}
        iy = {y: i for i, y in enumerate(self.alphabet_y)}
        rows = []
        for (x, y), p in self.mass.items():
            q = Fraction(p)
            rows.append([ix[x], iy[y], q.numerator, q.denominator])
        return {"alphabet_x": list(self.alphabet_x), "alphabet_y": list(self.alphabet_y),
                "mass": rows}

    @classmethod
    def from_json(cls, doc: Mapping[str, Any] | str) -> JointSource:
        if isinstance(doc, str):
            doc = json.loads(doc)
        try:
            ax = [_freeze(v) for v in doc["alphabet_x"]]
            ay = [_freeze(v) for v in doc["alphabet_y"]]
            rows = doc["mass"]
        except KeyError as exc:
            raise ContractError(f"source JSON missing field {exc.args[0]!r}") from None
        mass: dict = {}
        warned = False
        for n, row in enumerate(rows):
            if len(row) == 4 and all(isinstance(v, int) for v in row):
                p: Prob = Fraction(row[2], row[3])
            elif len(row) == 3 and isinstance(row[2], (int, float)):
                if not warned:
                    warnings.warn("source JSON uses floating-point masses; exact mode unavailable",
                                  stacklevel=2)
                    warned = True
                p = float(row[2])
            else:
                raise ContractError(f"mass[{n}]: expected [x_index, y_index, num, den]")
            key = (ax[row[0]], ay[row[1]])
            mass[key] = mass.get(key, 0) + p
        return cls(tuple(ax), tuple(ay), mass)


def _freeze(v):
    """JSON lists back to tuples so they can serve as labels."""
    if isinstance(v, list):
        return tuple(_freeze(u) for u in v)
    return v


def mutual_information(s: JointSource) -> float:
    """``I(X;Y)`` in bits, via ``sum p(x,y) log p(x,y)/(p(x)p(y))``."""
    px, py = s.marginal_x(), s.marginal_y()
    terms = []
    for (x, y), p in s.mass.items():
        if p == 0:
            continue
        ratio = p / (px[x] * py[y])
        terms.append(float(p) * log2(ratio))
    return max(0.0, math.fsum(terms))


@dataclass
class KeyLaw:
    """Joint law of (transcript, L, A, B) for a variable-length key scheme.

    ``mass`` maps ``(w, l, a, b)`` to probability, where ``w`` is the (hashable)
    public transcript and ``a, b`` lie in ``[1 : 2**l]``.
    """

    mass: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mass = {k: v for k, v in self.mass.items() if v != 0}

    def validate(self) -> None:
        _check_masses(self.mass.values(), "KeyLaw")
        for (_, l, a, b) in self.mass:
            if l < 0 or not (1 <= a <= 1 << l and 1 <= b <= 1 << l):
                raise ContractError(f"key outcome (L={l}, A={a}, B={b}) outside [1:2^L]")

    @property
    def exact(self) -> bool:
        return all(is_exact(p) for p in self.mass.values())

    def lengths(self) -> list[int]:
        return sorted({k[1] for k in self.mass})

    def length_dist(self) -> Dist:
        acc: dict = defaultdict(int)
        for (_, l, _, _), p in self.mass.items():
            acc[l] += p
        return Dist(acc, check=False)

    def expected_length(self) -> Prob:
        return total(p * k[1] for k, p in self.mass.items())

    def given_length(self, l: int) -> dict:
        """Unnormalized slice ``{(w, a, b): p}`` with ``L = l``."""
        return {(w, a, b): p for (w, ll, a, b), p in self.mass.items() if ll == l}

    def outcomes(self) -> Iterator[tuple]:
        yield from self.mass.items()

    def sample(self, rng, size: int) -> list[tuple]:
        """Draw ``size`` outcomes ``(w, l, a, b)`` with a numpy Generator."""
        keys = list(self.mass)
        probs = [float(self.mass[k]) for k in keys]
        s = math.fsum(probs)
        idx = rng.choice(len(keys), size=size, p=[q / s for q in probs])
        return [keys[i] for i in idx]


@dataclass(frozen=True)
class IdealDistance:
    """Distance from the ideal key distribution, with its per-length breakdown."""

    value: Prob
    per_length: dict

    def average(self, law: KeyLaw) -> Prob:
        ld = law.length_dist()
        return total(ld[l] * d for l, d in self.per_length.items())


def distance_from_ideal(law: KeyLaw) -> IdealDistance:
    """Sup over key lengths of ``d_TV(p_{A,B,W|L=l}, U_2[1:2^l] x p_{W|L=l})``.

    The ideal law puts mass ``p(w|l) 2^-l`` on each diagonal pair ``(a, a)``; it is
    never materialized, so long keys cost only their observed support.
    """
    by_len: dict = defaultdict(lambda: defaultdict(list))
    for (w, l, a, b), p in law.mass.items():
        if p == 0:
            continue
        if l < 0 or not (1 <= a <= 1 << l and 1 <= b <= 1 << l):
            raise ContractError(f"key outcome (L={l}, A={a}, B={b}) outside [1:2^L]")
        by_len[l][w].append((a, b, p))

    per: dict = {}
    for l, groups in sorted(by_len.items()):
        size = 1 << l
        pl = total(p for entries in groups.values() for _, _, p in entries)
        acc = []
        for entries in groups.values():
            pw = total(p for _, _, p in entries)
            ideal = pw / size
            diag = 0
            for a, b, p in entries:
                if a == b:
                    diag += 1
                    acc.append(abs(p - ideal))
                else:
                    acc.append(p)
            acc.append((size - diag) * ideal)
        per[l] = total(acc) / (2 * pl)
    sup = max(per.values()) if per else Fraction(0)
    return IdealDistance(sup, per)
