"""Builtin pair sources used by the schemes, tests and CLI."""

from __future__ import annotations

from fractions import Fraction

from vlkey.prob import JointSource, Prob

ERASURE = "e"


def partial_copy_source(m: int, copy_prob: Prob = Fraction(1, 8)) -> JointSource:
    """X ~ Unif[1:2^m]; Y = X with probability ``copy_prob``, else a fresh uniform draw.

    With the default ``copy_prob = 1/8`` this is the motivating source for
    variable-length keys (the fresh-draw indicator is Bern(7/8)).
    """
    n = 1 << m
    fresh = 1 - copy_prob
    px = Fraction(1, n) if isinstance(copy_prob, Fraction) else 1.0 / n

    def p(x, y):
        return px * ((copy_prob if x == y else 0) + fresh * px)

    return JointSource.from_function(range(1, n + 1), range(1, n + 1), p)


def erasure_source(m: int, eps: Prob) -> JointSource:
    """X ~ Unif[1:2^m]; Y = X w.p. ``1 - eps`` and the erasure symbol ``"e"`` otherwise."""
    n = 1 << m
    px = Fraction(1, n) if isinstance(eps, Fraction) else 1.0 / n
    ys = [*range(1, n + 1), ERASURE]

    def p(x, y):
        if y == ERASURE:
            return px * eps
        return px * (1 - eps) if x == y else 0

    return JointSource.from_function(range(1, n + 1), ys, p)


def identity_source(m: int) -> JointSource:
    """X = Y ~ Unif[1:2^m]."""
    n = 1 << m
    return JointSource.from_function(range(1, n + 1), range(1, n + 1),
                                     lambda x, y: Fraction(1, n) if x == y else 0)


def independent_source(nx: int, ny: int) -> JointSource:
    """X ~ Unif[1:nx] independent of Y ~ Unif[1:ny]."""
    p = Fraction(1, nx * ny)
    return JointSource.from_function(range(1, nx + 1), range(1, ny + 1), lambda x, y: p)


BUILTIN = {
    "partial-copy": partial_copy_source,
    "erasure": erasure_source,
    "identity": identity_source,
}
