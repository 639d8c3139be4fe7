"""Concrete key schemes and the fixed-length impossibility gadget."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from vlkey.channel import LocalRandomness, Party
from vlkey.errors import ContractError
from vlkey.prob import Dist
from vlkey.sources import ERASURE


def int_bits(value: int, width: int) -> tuple[int, ...]:
    """MSB-first ``width``-bit encoding of ``value`` (0-based)."""
    return tuple((value >> (width - 1 - i)) & 1 for i in range(width))


@dataclass(frozen=True)
class PrefixSchemeConfig:
    m: int
    t: int

    def __post_init__(self):
        if not 0 <= self.t <= self.m:
            raise ContractError(f"prefix scheme needs 0 <= t <= m, got m={self.m}, t={self.t}")


class _PrefixParty(Party):
    def __init__(self, cfg: PrefixSchemeConfig, speaks_at: int):
        self.cfg = cfg
        self.speaks_at = speaks_at
        self._prefixes = range(1 << cfg.t)

    def _split(self, v: int) -> tuple[int, int]:
        rest = self.cfg.m - self.cfg.t
        return (v - 1) >> rest, ((v - 1) & ((1 << rest) - 1)) + 1

    def alphabet(self, round_index, transcript):
        return self._prefixes

    def speak(self, obs, rand, transcript):
        if len(transcript) == self.speaks_at:
            return self._split(obs)[0]
        return None

    def output(self, obs, rand, transcript):
        if transcript[0] != transcript[1]:
            return 0, 1
        return self.cfg.m - self.cfg.t, self._split(obs)[1]


def prefix_matching_scheme(cfg: PrefixSchemeConfig) -> tuple[Party, Party]:
    """Both parties publish the top ``t`` bits of their ``m``-bit symbol.

    On a match the key is the remaining ``m - t`` bits (MSB-first), otherwise
    ``L = 0``.  Symbols are integers in ``[1:2^m]``.
    """
    return _PrefixParty(cfg, 0), _PrefixParty(cfg, 1)


class _ErasureAlice(Party):
    def __init__(self, m: int):
        self.m = m

    def speak(self, obs, rand, transcript):
        return None

    def output(self, obs, rand, transcript):
        return self.m, obs


class _ErasureBob(Party):
    def __init__(self, m: int):
        self.m = m
        self.randomness = LocalRandomness(Dist.uniform(range(1, (1 << m) + 1)))

    def speak(self, obs, rand, transcript):
        return None

    def output(self, obs, rand, transcript):
        return self.m, rand if obs == ERASURE else obs


def erasure_scheme(m: int, eps=None) -> tuple[Party, Party]:
    """No discussion; Alice keys on X, Bob on Y or a private uniform guess on erasure.

    ``eps`` only documents the matching source; the parties do not use it.
    """
    return _ErasureAlice(m), _ErasureBob(m)


def gap_objective(alpha, beta):
    """``max(1/2 - ab, 0) + max(1/2 - (1-a)(1-b), 0)``; vectorizes over numpy arrays."""
    return (np.maximum(0.5 - alpha * beta, 0.0)
            + np.maximum(0.5 - (1 - alpha) * (1 - beta), 0.0))


@dataclass(frozen=True)
class GapConstant:
    inner_min: float
    alpha: float
    beta: float

    @property
    def constant(self) -> float:
        return self.inner_min - 0.25


def _zoom_2d(a: float, b: float, step: float, tol: float) -> tuple[float, float, float]:
    offsets = np.linspace(-4, 4, 9)
    best = float(gap_objective(a, b))
    while step > tol:
        ga = np.clip(a + offsets * step, 0.0, 1.0)
        gb = np.clip(b + offsets * step, 0.0, 1.0)
        A, B = np.meshgrid(ga, gb, indexing="ij")
        vals = gap_objective(A, B)
        i, j = np.unravel_index(np.argmin(vals), vals.shape)
        if vals[i, j] < best:
            a, b, best = float(A[i, j]), float(B[i, j]), float(vals[i, j])
        step /= 4
    return a, b, best


def fixed_length_gap_constant(resolution: float = 1e-3, tol: float = 1e-15) -> GapConstant:
    """Minimize the two-bit agreement gap over ``alpha, beta in [0,1]``.

    A grid of spacing ``resolution`` seeds a shrinking-stencil pattern search.
    The minimum is ``sqrt(2) - 1``; subtracting ``1/4`` gives the lower bound on
    the distance any one-bit fixed-length key reaches on the partial-copy source.
    """
    if not 0 < resolution <= 0.25:
        raise ValueError("resolution must lie in (0, 1/4]")
    n = int(math.ceil(1 / resolution)) + 1
    grid = np.linspace(0.0, 1.0, n)
    A, B = np.meshgrid(grid, grid, indexing="ij")
    vals = gap_objective(A, B)
    i, j = np.unravel_index(np.argmin(vals), vals.shape)
    a, b, best = _zoom_2d(float(A[i, j]), float(B[i, j]), grid[1] - grid[0], tol)
    return GapConstant(best, a, b)

