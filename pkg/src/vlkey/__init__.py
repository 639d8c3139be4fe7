"""One-shot variable-length secret key agreement with public discussion.

Exact (rational) and Monte Carlo tooling for finite pair sources: key
schemes, the entropy-model halving protocol, the tentative-key to secret-key
converter, key concatenation/splitting/outer coding, and bound checks.
"""

from vlkey.errors import (
    ContractError,
    EnumerationLimitError,
    InfeasibleCodeError,
    NonTerminationError,
)
from vlkey.prob import (
    Dist,
    JointSource,
    KeyLaw,
    binary_entropy,
    distance_from_ideal,
    entropy,
    mutual_information,
    tv_distance,
)

__all__ = [
    "ContractError",
    "Dist",
    "EnumerationLimitError",
    "InfeasibleCodeError",
    "JointSource",
    "KeyLaw",
    "NonTerminationError",
    "binary_entropy",
    "distance_from_ideal",
    "entropy",
    "mutual_information",
    "tv_distance",
]

__version__ = "0.1.0"
