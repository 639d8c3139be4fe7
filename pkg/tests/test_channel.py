import io
from fractions import Fraction

import pytest

from vlkey import ContractError, EnumerationLimitError, NonTerminationError
from vlkey.channel import (FAILURE, KeyOutcome, LocalRandomness, Party, ProtocolLaw, enumerate_protocol,
                           key_outcomes, messages, read_key_law, sample_protocol, write_key_law)
from vlkey.prob import Dist, KeyLaw, distance_from_ideal, tv_distance
from vlkey.schemes import PrefixSchemeConfig, prefix_matching_scheme
from vlkey.sources import identity_source, partial_copy_source

F = Fraction


class Silent(Party):
    def speak(self, obs, rand, transcript):
        return None

    def output(self, obs, rand, transcript):
        return 0, 1


class Chatty(Party):
    def speak(self, obs, rand, transcript):
        return 0

    def output(self, obs, rand, transcript):
        return 0, 1


class OffAlphabet(Silent):
    def alphabet(self, round_index, transcript):
        return (0, 1)

    def speak(self, obs, rand, transcript):
        return 5 if not transcript else None


class CoinAlice(Party):
    """Publishes a private coin, then keys on X."""

    randomness = LocalRandomness(Dist.uniform([0, 1]))

    def speak(self, obs, rand, transcript):
        return rand if not transcript else None

    def output(self, obs, rand, transcript):
        return 1, obs


class EchoBob(Party):
    def speak(self, obs, rand, transcript):
        return None

    def output(self, obs, rand, transcript):
        return 1, obs


class LengthFromX(Party):
    def speak(self, obs, rand, transcript):
        return None

    def output(self, obs, rand, transcript):
        return (1, 1) if obs == 1 else (0, 1)


def test_trivial_protocol_has_zero_distance():
    law = enumerate_protocol(partial_copy_source(2), Silent(), Silent())
    kl = law.key_law()
    assert law.transcripts() == {()}
    assert distance_from_ideal(kl).value == 0
    assert kl.expected_length() == 0


def test_round_cap_raises():
    with pytest.raises(NonTerminationError):
        enumerate_protocol(identity_source(1), Chatty(), Chatty(), round_cap=10)


def test_undeclared_payload_raises():
    with pytest.raises(ContractError):
        enumerate_protocol(identity_source(1), OffAlphabet(), Silent())


def test_length_must_be_computable_by_both():
    law = enumerate_protocol(partial_copy_source(1), LengthFromX(), Silent())
    with pytest.raises(ContractError):
        law.key_law()


def test_local_randomness_is_weighted():
    law = enumerate_protocol(identity_source(1), CoinAlice(), EchoBob()).key_law()
    assert sum(law.mass.values()) == 1
    assert distance_from_ideal(law).value == 0
    assert {w for w, *_ in law.mass} == {(0,), (1,)}


def test_prefix_free_check():
    law = ProtocolLaw({(1, 1, (0,), (0, 1), (0, 1)): F(1, 2), (1, 1, (0, 1), (0, 1), (0, 1)): F(1, 2)})
    with pytest.raises(ContractError):
        law.check_prefix_free()


def test_branch_limit():
    with pytest.raises(EnumerationLimitError):
        enumerate_protocol(partial_copy_source(3), Silent(), Silent(), max_branches=10)


def test_messages_alternate():
    ms = messages((3, 4, FAILURE))
    assert [m.sender for m in ms] == ["alice", "bob", "alice"]
    assert ms[2].is_failure and not ms[0].is_failure


def test_key_outcome_range():
    with pytest.raises(ContractError):
        KeyOutcome(2, 5, 1, ())


def test_sample_requires_trials():
    with pytest.raises(ContractError):
        sample_protocol(identity_source(1), Silent(), Silent(), seed=1, trials=0)


def test_sample_stream_is_deterministic():
    alice, bob = prefix_matching_scheme(PrefixSchemeConfig(4, 2))
    a = sample_protocol(partial_copy_source(4), alice, bob, seed=5, trials=300)
    b = sample_protocol(partial_copy_source(4), alice, bob, seed=5, trials=300)
    assert a.stream_jsonl() == b.stream_jsonl()
    c = sample_protocol(partial_copy_source(4), alice, bob, seed=6, trials=300)
    assert a.stream_jsonl() != c.stream_jsonl()


def test_sampled_law_converges_to_enumerated():
    alice, bob = prefix_matching_scheme(PrefixSchemeConfig(3, 1))
    src = partial_copy_source(3)
    exact = enumerate_protocol(src, alice, bob).key_law()
    trials = 20_000
    est = sample_protocol(src, alice, bob, seed=3, trials=trials).law.key_law()
    gap = tv_distance(exact.mass, est.mass)
    assert gap <= 5 * (len(exact.mass) / trials) ** 0.5


def test_key_law_jsonl_round_trip():
    alice, bob = prefix_matching_scheme(PrefixSchemeConfig(3, 1))
    law = enumerate_protocol(partial_copy_source(3), alice, bob).key_law()
    buf = io.StringIO()
    write_key_law(law, buf)
    back = read_key_law(io.StringIO(buf.getvalue()))
    assert back.mass == law.mass
    assert len(key_outcomes(law)) == len(law.mass)


def test_key_log_without_weights():
    text = '{"transcript": [], "L": 1, "A": 1, "B": 1, "p": null}\n' \
           '{"transcript": [], "L": 1, "A": 2, "B": 2, "p": null}\n'
    law = read_key_law(io.StringIO(text))
    assert law.mass == {((), 1, 1, 1): F(1, 2), ((), 1, 2, 2): F(1, 2)}


def test_key_log_rejects_mixed_and_invalid():
    mixed = '{"transcript": [], "L": 0, "A": 1, "B": 1, "p": null}\n' \
            '{"transcript": [], "L": 0, "A": 1, "B": 1, "p": [1, 2]}\n'
    with pytest.raises(ContractError):
        read_key_law(io.StringIO(mixed))
    with pytest.raises(ContractError):
        read_key_law(io.StringIO('{"transcript": [], "L": 1, "A": 3, "B": 1, "p": [1, 1]}\n'))
    with pytest.raises(ContractError):
        read_key_law(io.StringIO('{"transcript": [], "A": 1, "B": 1, "p": [1, 1]}\n'))


def test_key_law_type_is_keylaw():
    law = enumerate_protocol(identity_source(1), Silent(), Silent()).key_law()
    assert isinstance(law, KeyLaw)
