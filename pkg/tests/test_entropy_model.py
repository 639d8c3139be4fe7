import io
from collections import defaultdict
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings

import oracles
from strategies import joint_sources
from vlkey import ContractError, EnumerationLimitError
from vlkey.channel import enumerate_protocol
from vlkey.entropy_model import (CandidateSet, HalvingPlan, StopRule, bob_decision, coinciding_entropy,
                                 coinciding_entropy_stderr, entropy_keys_from_protocol, enumerate_halving,
                                 halving_parties, halving_subset_counts, quantile_reduce, rank_in_set,
                                 read_entropy_keys, run_halving_protocol, write_entropy_keys)
from vlkey.prob import JointSource, mutual_information
from vlkey.sources import identity_source, independent_source, partial_copy_source

F = Fraction


def conditional_disagreement(keys):
    out = {}
    for w, joint in keys.transcripts().items():
        tot = sum(joint.values())
        out[w] = sum(p for (a, b), p in joint.items() if a != b) / tot
    return out


def test_stop_rule_range():
    for bad in (F(0), F(1, 2), F(3, 4)):
        with pytest.raises(ContractError):
            StopRule(bad)
    assert StopRule(F(1, 4)).stops(F(3, 4), 1)
    assert not StopRule(F(1, 4)).stops(F(3, 4) - F(1, 100), 1)


def test_quantile_table_steps():
    t = quantile_reduce(partial_copy_source(2))
    assert t.intervals[0] == (0, F(1, 4)) and t.intervals[-1] == (F(3, 4), 1)
    assert t.density[0] == (F(11, 8), F(7, 8), F(7, 8), F(7, 8))
    assert t.density_at(0.1, 1) == F(11, 8)
    with pytest.raises(ValueError):
        t.density_at(1.5, 1)


@settings(max_examples=100, deadline=None)
@given(joint_sources())
def test_quantile_reduction_keeps_information(s):
    assert quantile_reduce(s).mutual_information() == pytest.approx(mutual_information(s), abs=1e-9)


def test_candidate_set_size_contract():
    CandidateSet((1, 2, 1), round=1, m=2)
    with pytest.raises(ContractError):
        CandidateSet((1, 1), round=1, m=2)
    with pytest.raises(ContractError):
        CandidateSet((-1, 5), round=1, m=2)


def test_rank_in_set():
    cands = CandidateSet((2, 0, 1, 1), round=1, m=2).candidates()
    assert rank_in_set(cands, (2, 0)) == 3
    assert rank_in_set(cands, (0, 0)) == 1
    with pytest.raises(ContractError):
        rank_in_set(cands, (1, 0))


def test_bob_decision_ties_go_to_first_symbol():
    t = quantile_reduce(identity_source(1))
    stop, best = bob_decision(t, (1, 1), 0, StopRule(F(1, 4)))
    assert (stop, best) == (True, 0)
    t = quantile_reduce(independent_source(2, 2))
    stop, best = bob_decision(t, (1, 1), 1, StopRule(F(1, 4)))
    assert (stop, best) == (False, 0)


@pytest.mark.parametrize("source,eps", [
    (partial_copy_source(2), F(9, 20)),
    (identity_source(2), F(1, 10)),
    (partial_copy_source(2, F(3, 4)), F(1, 5)),
])
def test_enumeration_matches_position_bruteforce(source, eps):
    keys = enumerate_halving(source, 2, StopRule(eps))
    ref = oracles.halving_law(dict(source.mass), list(source.alphabet_x), 2, eps)
    assert keys.mass == ref
    assert coinciding_entropy(keys) == pytest.approx(oracles.coinciding_entropy(ref), abs=1e-12)


def test_enumeration_matches_channel_harness():
    src, rule = partial_copy_source(2, F(3, 4)), StopRule(F(1, 5))
    law = enumerate_protocol(src, *halving_parties(src, 2, rule))
    via_channel = entropy_keys_from_protocol(law, 2, rule.eps)
    assert via_channel.mass == enumerate_halving(src, 2, rule).mass


def test_identity_source_frozen_values():
    keys = enumerate_halving(identity_source(2), 2, StopRule(F(1, 10)))
    assert keys.p_disagree() == 0
    assert coinciding_entropy(keys) == 0.5625


def test_partial_copy_frozen_values():
    keys = enumerate_halving(partial_copy_source(2), 2, StopRule(F(9, 20)))
    assert keys.p_disagree() == F(21, 128)
    assert coinciding_entropy(keys) == pytest.approx(0.2578125, abs=1e-15)
    assert sum(keys.stop_rounds().values()) == 1
    assert 1 <= keys.expected_stop_round() <= 3


@pytest.mark.parametrize("m", [1, 2, 3])
@pytest.mark.parametrize("eps", [F(1, 10), F(1, 5), F(2, 5)])
def test_every_transcript_meets_stop_rule(m, eps):
    keys = enumerate_halving(partial_copy_source(2, F(1, 2)), m, StopRule(eps))
    assert sum(keys.mass.values()) == 1
    assert all(d <= eps for d in conditional_disagreement(keys).values())


def test_exact_mode_limits():
    with pytest.raises(EnumerationLimitError):
        enumerate_halving(partial_copy_source(2), 4, StopRule(F(1, 10)))
    with pytest.raises(EnumerationLimitError):
        enumerate_halving(partial_copy_source(4), 2, StopRule(F(1, 10)))
    with pytest.raises(EnumerationLimitError):
        enumerate_halving(partial_copy_source(3), 3, StopRule(F(1, 10)))
    with pytest.raises(ContractError):
        enumerate_halving(partial_copy_source(1), 0, StopRule(F(1, 10)))


def test_halving_plan_subsets():
    plan = HalvingPlan((0, 0, 0), (3, 1, 4, 2))
    assert plan.subset(1) == {1, 2, 3, 4}
    assert plan.subset(2) == {1, 2}
    assert plan.subset(3) == {1}
    assert list(plan.mask(2)) == [True, True, False, False]
    with pytest.raises(ContractError):
        HalvingPlan((0, 0, 0), (1, 1, 2, 3))


@pytest.mark.parametrize("m", [1, 2])
def test_halving_subsets_are_uniform(m):
    counts = halving_subset_counts(m)
    for i, table in counts.items():
        for parent, children in table.items():
            assert len(set(children.values())) == 1
            assert all(1 in c and c <= parent and len(c) == len(parent) // 2 for c in children)


def test_sampled_mode_needs_seed():
    with pytest.raises(ContractError):
        run_halving_protocol(partial_copy_source(2), 2, StopRule(F(1, 10)), trials=10)


def test_sampled_mode_is_reproducible():
    src, rule = partial_copy_source(3), StopRule(F(2, 5))
    a = run_halving_protocol(src, 4, rule, seed=3, trials=200, conditional_trials=20)
    b = run_halving_protocol(src, 4, rule, seed=3, trials=200, conditional_trials=20)
    assert a.samples == b.samples
    assert a.mass == b.mass
    assert len(a.trial_values) == 20
    assert coinciding_entropy_stderr(a) > 0


def test_sampled_agrees_with_exact():
    src, rule = partial_copy_source(2), StopRule(F(9, 20))
    exact = enumerate_halving(src, 2, rule)
    trials = 20_000
    est = run_halving_protocol(src, 2, rule, seed=1, trials=trials, conditional_trials=4000)
    p = float(exact.p_disagree())
    assert abs(est.p_disagree() - p) <= 4 * (p * (1 - p) / trials) ** 0.5
    h = coinciding_entropy(exact)
    assert abs(coinciding_entropy(est) - h) <= 4 * coinciding_entropy_stderr(est)


def test_conditional_law_matches_exact_per_transcript():
    src, rule = partial_copy_source(2), StopRule(F(9, 20))
    exact = enumerate_halving(src, 2, rule).transcripts()
    est = run_halving_protocol(src, 2, rule, seed=4, trials=50, conditional_trials=50).transcripts()
    for w, joint in est.items():
        ref = exact[w]
        tot = sum(ref.values())
        mass = sum(joint.values())
        for k, p in joint.items():
            assert p / mass == pytest.approx(float(ref[k] / tot), abs=1e-9)


def test_entropy_keys_round_trip():
    keys = enumerate_halving(partial_copy_source(2), 2, StopRule(F(9, 20)))
    buf = io.StringIO()
    write_entropy_keys(keys, buf)
    back = read_entropy_keys(io.StringIO(buf.getvalue()))
    assert back.mass == keys.mass and back.exact


def test_entropy_key_log_errors():
    with pytest.raises(ContractError):
        read_entropy_keys(io.StringIO(""))
    with pytest.raises(ContractError):
        read_entropy_keys(io.StringIO('{"transcript": [], "K_A": 1, "K_B": 1, "p": [1, 2]}\n'))
    with pytest.raises(ContractError):
        read_entropy_keys(io.StringIO('{"transcript": [], "K_A": 0, "K_B": 1, "p": [1, 1]}\n'))
    text = '{"transcript": [], "K_A": 1, "K_B": 1, "p": null}\n{"transcript": [], "K_A": 2, "K_B": 1, "p": null}\n'
    keys = read_entropy_keys(io.StringIO(text))
    assert keys.p_disagree() == F(1, 2)


def test_coinciding_entropy_definition():
    mass = {(("w",), 1, 1): F(1, 4), (("w",), 2, 2): F(1, 4), (("v",), 1, 2): F(1, 2)}
    from vlkey.entropy_model import EntropyModelKeys
    assert coinciding_entropy(EntropyModelKeys(mass)) == 0.5


def test_float_source_runs_sampled():
    src = JointSource((1, 2), (1, 2), {(1, 1): 0.45, (2, 2): 0.45, (1, 2): 0.05, (2, 1): 0.05})
    keys = run_halving_protocol(src, 3, StopRule(F(1, 5)), seed=2, trials=500)
    assert 0 <= keys.p_disagree() <= 1
    by = defaultdict(int)
    for _, _, t in keys.samples:
        by[t] += 1
    assert set(by) <= {1, 2, 3, 4}
    assert np.isclose(sum(keys.stop_rounds().values()), 1)
