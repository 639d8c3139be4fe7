"""Closed-form key-length bounds and checks of measured schemes against them."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from vlkey.errors import ContractError
from vlkey.prob import JointSource, KeyLaw, distance_from_ideal, mutual_information

TOLERANCE = 1e-9
LOG3 = math.log2(3)


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if not 0 < eps < 1:
        raise ContractError(f"eps must lie in (0, 1), got {eps}")
    return eps


def _check_info(i: float, name: str = "I") -> float:
    i = float(i)
    if not (i >= 0 and math.isfinite(i)):
        raise ContractError(f"{name} must be finite and nonnegative, got {i}")
    return i


def key_length_bounds(info: float, eps: float) -> tuple[float, float]:
    """Lower and upper bounds on the best expected key length at distance ``eps``."""
    i, e = _check_info(info), _check_eps(eps)
    lower = i - 3 * math.log2(i + 1) - 2 * math.log2(1 / e) - 15
    upper = (i + LOG3 + 1) / (1 - e)
    return lower, upper


def regime_bounds(info: float, *, lam: float | None = None, nu: float | None = None) -> tuple[float, float]:
    """Bounds for ``eps = (I + 1)^(-lam)`` (``lam >= 1``, ``I >= 2``) or ``eps = nu`` (``I >= 1/nu``)."""
    i = _check_info(info)
    if (lam is None) == (nu is None):
        raise ContractError("give exactly one of lam or nu")
    if lam is not None:
        if lam < 1 or i < 2:
            raise ContractError("the lambda regime needs lam >= 1 and I >= 2")
        return i - (3 + 2 * lam) * math.log2(i + 1) - 15, i + 8
    if not nu > 0 or i < 1 / nu:
        raise ContractError("the nu regime needs nu > 0 and I >= 1/nu")
    return (1 - 2 * nu) * i - 3 * math.log2(i + 1) - 15, i + 1 / nu + 6


def coinciding_key_bounds(kappa: float, eps: float) -> tuple[float, float]:
    """Key length versus coinciding entropy ``kappa``.

    The upper value only binds when ``kappa`` is an upper bound on the best
    achievable coinciding entropy, which a measured proxy never is.
    """
    k, e = _check_info(kappa, "kappa"), _check_eps(eps)
    return k - math.log2(k + 1) - 2 * math.log2(1 / e) - 7.082, (k + LOG3) / (1 - e)


def coinciding_entropy_range(info: float) -> tuple[float, float]:
    """Coinciding entropy versus mutual information."""
    i = _check_info(info)
    return i - 2 * math.log2(i + 1) - 7.034, i + 1


@dataclass
class BoundReport:
    name: str
    kind: str
    bound: float
    measured: float
    inputs: dict = field(default_factory=dict)
    tolerance: float = TOLERANCE
    note: str = ""
    advisory: bool = False

    def __post_init__(self):
        if self.kind not in ("lower", "upper"):
            raise ContractError(f"bound kind must be lower or upper, got {self.kind}")

    @property
    def slack(self) -> float:
        return self.measured - self.bound if self.kind == "lower" else self.bound - self.measured

    @property
    def satisfied(self) -> bool:
        return self.slack >= -self.tolerance

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(slack=self.slack, satisfied=self.satisfied)
        return d


def audit_scheme(source: JointSource | None, law: KeyLaw, *, info: float | None = None,
                 h_eq: float | None = None, eps_prime: float | None = None,
                 tolerance: float = TOLERANCE) -> list[BoundReport]:
    """Check one key law against every bound that applies to it.

    Always: measured ``E[L]`` against the mutual-information upper bound at the
    measured distance.  With ``h_eq`` and ``eps_prime`` (a converter output):
    the guaranteed length and the distance target.  Reports flagged
    ``advisory`` are informational and never count as violations.
    """
    if info is None:
        if source is None:
            raise ContractError("need a source or its mutual information")
        info = mutual_information(source)
    dist = distance_from_ideal(law).value
    el = float(law.expected_length())
    reports = []
    eps = float(dist)
    inputs = {"I": info, "eps": eps, "E[L]": el}
    if eps < 1:
        upper = (info + LOG3 + 1) / (1 - eps)
        reports.append(BoundReport("mutual-information upper bound", "upper", upper, el, inputs, tolerance))
    if h_eq is not None and eps_prime is not None:
        ep = _check_eps(eps_prime)
        lower = h_eq - math.log2(h_eq + 1) - 2 * math.log2(1 / ep) - 7.082
        reports.append(BoundReport("converter length guarantee", "lower", lower, el,
                                   {"H_eq": h_eq, "eps_prime": ep, "E[L]": el}, tolerance))
        reports.append(BoundReport("converter distance target", "upper", ep, eps,
                                   {"eps_prime": ep}, tolerance))
        reports.append(BoundReport("coinciding-entropy upper bound", "upper", coinciding_key_bounds(h_eq, ep)[1], el,
                                   {"kappa_proxy": h_eq, "eps": ep}, tolerance,
                                   note="binding only if the proxy upper-bounds the best coinciding entropy",
                                   advisory=True))
    return reports
