import json
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from strategies import joint_sources, key_laws, pmfs
from vlkey import ContractError
from vlkey.prob import (Dist, JointSource, KeyLaw, binary_entropy, canonical_order, distance_from_ideal,
                        entropy, floor_log2, mutual_information, tv_distance)
from vlkey.sources import erasure_source, identity_source, independent_source, partial_copy_source

F = Fraction


def test_dist_rejects_bad_mass():
    with pytest.raises(ContractError):
        Dist({0: F(1, 2), 1: F(1, 3)})
    with pytest.raises(ContractError):
        Dist.uniform([])
    with pytest.raises(ContractError):
        Dist.uniform([1, 1])


def test_dist_basics():
    d = Dist.uniform(range(4))
    assert d[2] == F(1, 4) and d[7] == 0
    assert d.exact and len(d) == 4
    assert Dist.bernoulli(F(1, 3))[1] == F(1, 3)
    assert Dist.point("z").support == ["z"]


def test_canonical_order_mixes_types():
    assert canonical_order([3, "a", 1, (0, 1)]) == canonical_order([(0, 1), "a", 1, 3])


def test_entropy_values():
    assert entropy(Dist.uniform(range(8))) == pytest.approx(3.0, abs=1e-15)
    assert entropy([F(1)]) == 0.0
    assert binary_entropy(F(1, 2)) == 1.0
    assert binary_entropy(0) == 0.0
    with pytest.raises(ValueError):
        binary_entropy(F(3, 2))


def test_floor_log2_exact():
    assert floor_log2(F(1, 8)) == -3
    assert floor_log2(F(1, 7)) == -3
    assert floor_log2(F(9, 8)) == 0
    assert floor_log2(F(16)) == 4


def test_tv_distance_trivial():
    p = {0: F(1, 2), 1: F(1, 2)}
    assert tv_distance(p, p) == 0
    assert tv_distance({0: F(1)}, {1: F(1)}) == 1


def test_mutual_information_instances():
    assert mutual_information(identity_source(3)) == pytest.approx(3.0, abs=1e-12)
    assert mutual_information(independent_source(3, 5)) == 0.0
    assert mutual_information(erasure_source(4, F(1, 4))) == 3.0


def test_source_json_round_trip():
    s = erasure_source(2, F(1, 3))
    back = JointSource.from_json(json.dumps(s.to_json()))
    assert back.mass == s.mass
    assert back.alphabet_y == s.alphabet_y


def test_source_json_floats_warn():
    doc = {"alphabet_x": [0, 1], "alphabet_y": [0], "mass": [[0, 0, 0.25], [1, 0, 0.75]]}
    with pytest.warns(UserWarning):
        s = JointSource.from_json(doc)
    assert not s.exact


def test_source_json_errors():
    with pytest.raises(ContractError):
        JointSource.from_json({"alphabet_x": [0]})
    with pytest.raises(ContractError):
        JointSource.from_json({"alphabet_x": [0], "alphabet_y": [0], "mass": [[0, 0, "half"]]})
    with pytest.raises(ContractError):
        JointSource.from_json({"alphabet_x": [0], "alphabet_y": [0], "mass": [[0, 0, 1, 2]]})


def test_source_rejects_foreign_labels():
    with pytest.raises(ContractError):
        JointSource((0,), (0,), {(1, 0): F(1)})


def test_conditional_and_marginals():
    s = partial_copy_source(1)
    assert s.marginal_x()[1] == F(1, 2)
    assert s.conditional_x(1)[1] == F(1, 8) + F(7, 16)


def test_keylaw_validate_and_length():
    law = KeyLaw({((), 2, 1, 1): F(1, 2), ((), 0, 1, 1): F(1, 2)})
    law.validate()
    assert law.expected_length() == 1
    with pytest.raises(ContractError):
        KeyLaw({((), 1, 3, 1): F(1)}).validate()


def test_distance_perfect_and_constant_keys():
    perfect = KeyLaw({((), 3, a, a): F(1, 8) for a in range(1, 9)})
    assert distance_from_ideal(perfect).value == 0
    constant = KeyLaw({((), 1, 1, 1): F(1)})
    assert distance_from_ideal(constant).value == F(1, 2)


def test_distance_is_sup_over_lengths():
    law = KeyLaw({("a", 1, 1, 1): F(1, 4), ("a", 1, 2, 2): F(1, 4), ("b", 2, 1, 2): F(1, 2)})
    d = distance_from_ideal(law)
    assert d.per_length == {1: 0, 2: 1}
    assert d.value == 1


def test_keylaw_sample_reproducible():
    import numpy as np
    law = KeyLaw({((), 1, 1, 1): F(1, 3), ((), 1, 2, 2): F(2, 3)})
    a = law.sample(np.random.default_rng(1), 50)
    b = law.sample(np.random.default_rng(1), 50)
    assert a == b


@settings(max_examples=100, deadline=None)
@given(key_laws())
def test_distance_matches_full_ideal(law):
    sup, per = oracles.ideal_distance(law.mass)
    d = distance_from_ideal(law)
    assert d.value == sup
    assert d.per_length == per


@settings(max_examples=100, deadline=None)
@given(joint_sources())
def test_mutual_information_matches_oracle(s):
    assert mutual_information(s) == pytest.approx(oracles.mutual_information(s.mass), abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(pmfs())
def test_entropy_bounded_by_log_support(p):
    h = entropy(p)
    support = sum(1 for v in p.values() if v > 0)
    assert -1e-12 <= h <= math.log2(support) + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.fractions(0, 1).map(lambda f: f.limit_denominator(16)))
def test_partial_copy_source_is_normalized(m, c):
    s = partial_copy_source(m, c)
    assert sum(s.mass.values()) == 1
    assert s.marginal_x() == Dist.uniform(range(1, 2**m + 1))
