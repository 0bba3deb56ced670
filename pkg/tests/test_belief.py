from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles as O
from conftest import weighted_low
from dsgolog import GroundBAT, builtin, parse_formula
from dsgolog.belief import (BeliefUndefined, CompatibleSet, Distribution, EpistemicState, EvalConfig, Evaluator,
                            NormUndefined, belief_degrees, compatible_states, evaluate, norm,
                            oi_trace_alternatives)
from dsgolog.lang import Belief, Knows, Not
from strategies import objective, static

F = Fraction
SPOT = (("sonar", 3), ("move", -1, 0), ("sonar", 3))
BUNDLE = builtin()
LOW = GroundBAT(BUNDLE.theory_low)
E0 = EpistemicState.from_bat(LOW)
W0 = LOW.initial_worlds()[0][0]
D0 = E0.distributions[0]
PRIOR = {2: 1, 3: 2, 4: 1}
WLOW = GroundBAT(weighted_low(BUNDLE, PRIOR))
WE = EpistemicState.from_bat(WLOW)
WORLDS = {next(iter(w.atoms))[1]: w for w, _ in WLOW.initial_worlds()}


def fml(text):
    return parse_formula(text, BUNDLE.theory_low)


def weights(cs: CompatibleSet, d):
    out = {}
    for s, lik in cs.members:
        (loc,) = [x for x in range(10) if ("Loc", x) in LOW.valuation(s.world, s.trace)]
        out[loc] = out.get(loc, 0) + d(s.world) * lik
    return out


def test_alternatives_of_a_move():
    alts = set(oi_trace_alternatives(LOW, W0, (("move", -1, 0),)))
    assert alts == {(("move", -1, y),) for y in (-2, -1, 0)}


def test_alternatives_of_a_reading_and_of_nothing():
    assert oi_trace_alternatives(LOW, W0, (("sonar", 3),)) == ((("sonar", 3),),)
    assert oi_trace_alternatives(LOW, W0, ()) == ((),)


def test_keep_zero_retains_structural_alternatives():
    alts = oi_trace_alternatives(LOW, W0, (("move", -1, 0),), keep_zero=True)
    assert len(alts) == 5


def test_compatible_states_after_a_move():
    s_true = compatible_states(LOW, E0, D0, W0, (("move", -1, 0),))
    assert weights(s_true, D0) == {1: F(1, 5), 2: F(3, 5), 3: F(1, 5)}
    s_loc2 = compatible_states(LOW, E0, D0, W0, (("move", -1, 0),), fml("Loc(2)"))
    assert weights(s_loc2, D0) == {2: F(3, 5)}


def test_compatible_states_at_the_start():
    s = compatible_states(LOW, E0, D0, W0, ())
    assert [(st.world, st.trace, lik) for st, lik in s.members] == [(W0, (), 1)]


def test_spot_degree():
    s_true = compatible_states(LOW, E0, D0, W0, SPOT)
    s_loc3 = compatible_states(LOW, E0, D0, W0, SPOT, fml("Loc(3)"))
    assert norm(D0, s_true, s_true) == 1
    assert norm(D0, s_loc3, s_true) == F(1, 5) * F(4, 5) / (F(3, 5) * F(1, 10) + F(1, 5) * F(4, 5)) == F(8, 11)


def test_norm_of_empty_reference_is_undefined():
    z = (("sonar", 9),)
    s = compatible_states(LOW, E0, D0, W0, z)
    with pytest.raises(NormUndefined):
        norm(D0, s, s)


def test_evaluation_examples(high):
    assert evaluate(LOW, E0, W0, (), fml("B(Loc(3) : 1)"))
    assert evaluate(LOW, E0, W0, SPOT, fml("B(Loc(3) : 8/11)"))
    hb, he, hw = high
    assert evaluate(hb, he, hw, (("goto", "near"),), parse_formula("At(near)", BUNDLE.theory_high))


def test_undefined_belief_is_false_unless_strict():
    z = (("sonar", 9),)
    assert belief_degrees(LOW, E0, W0, z, fml("Loc(0)")) == [None]
    assert not evaluate(LOW, E0, W0, z, fml("B(Loc(0) : 0)"))
    with pytest.raises(BeliefUndefined):
        evaluate(LOW, E0, W0, z, fml("B(Loc(0) : 0)"), EvalConfig(strict_belief=True))


def test_belief_must_hold_in_every_distribution():
    d1 = Distribution.of({W0: 1})
    w5 = [w for w, _ in GroundBAT(weighted_low(BUNDLE, {5: 1})).initial_worlds()][0]
    d2 = Distribution.of({W0: 1, w5: 1})
    e = EpistemicState.of(d1, d2)
    assert evaluate(LOW, EpistemicState.of(d1), W0, (), fml("K(Loc(3))"))
    assert not evaluate(LOW, e, W0, (), fml("K(Loc(3))"))
    assert belief_degrees(LOW, e, W0, (), fml("Loc(3)")) == [1, F(1, 2)]


def test_program_modality_ranges_over_all_executions():
    assert evaluate(LOW, E0, W0, (), fml("[move(-1)] B(Loc(2) : 3/5)"), EvalConfig(star_bound=2))
    # a reading of 9 from 3 m has likelihood 0 and leaves belief undefined
    assert not evaluate(LOW, E0, W0, (), fml("[sonar()] K(Loc(3))"))
    assert evaluate(LOW, E0, W0, (), fml("[sonar()] K(Loc(3))"), EvalConfig(positive_traces=True))


def test_box_uses_horizon():
    assert not evaluate(LOW, E0, W0, (), fml("box Loc(3)"), EvalConfig(box_horizon=1))
    assert evaluate(LOW, E0, W0, (), fml("box (Loc(3) | !Loc(3))"), EvalConfig(box_horizon=2))


def test_weighted_prior_matches_oracle_exhaustively():
    for z in O.positive_traces(3, 2):
        post = O.posterior(PRIOR, z)
        for x in range(10):
            got = belief_degrees(WLOW, WE, WORLDS[3], z, fml(f"Loc({x})"))[0]
            assert got == (None if post is None else post.get(x, 0)), (z, x)


traces = st.lists(st.sampled_from(O.ground_actions()), max_size=5).map(tuple)
positive = st.sampled_from(O.positive_traces(3, 3))


@given(positive, st.sampled_from(sorted(PRIOR)))
def test_degrees_sum_to_one(z, start):
    degs = [belief_degrees(WLOW, WE, WORLDS[start], z, fml(f"Loc({x})"))[0] for x in range(10)]
    if O.posterior(PRIOR, z) is None:
        assert degs == [None] * 10
    else:
        assert sum(degs) == 1


@given(positive, objective(None, 2))
def test_norm_is_additive_over_a_split(z, alpha):
    s_true = compatible_states(LOW, E0, D0, W0, z)
    s_a = compatible_states(LOW, E0, D0, W0, z, alpha)
    s_na = compatible_states(LOW, E0, D0, W0, z, Not(alpha))
    assert s_a.weight(D0) + s_na.weight(D0) == s_true.weight(D0)
    assert norm(D0, s_a, s_true) + norm(D0, s_na, s_true) == 1
    assert norm(D0, s_true, s_true) == 1
    assert not set(s_a.states()) & set(s_na.states())


@given(traces, static(2))
def test_pruning_does_not_change_truth(z, f):
    plain = evaluate(LOW, E0, W0, z, f)
    kept = evaluate(LOW, E0, W0, z, f, EvalConfig(keep_zero=True))
    assert plain == kept


@given(traces, objective(None, 2))
def test_knowledge_is_belief_one(z, f):
    assert Knows(f) == Belief(f, 1)
    assert evaluate(LOW, E0, W0, z, Knows(f)) == evaluate(LOW, E0, W0, z, Belief(f, F(1)))


@given(positive, st.sampled_from(sorted(PRIOR)), static(3))
def test_static_truth_matches_oracle(z, start, f):
    assert evaluate(WLOW, WE, WORLDS[start], z, f) == O.holds_static(f, PRIOR, z, start)


def test_filter_and_direct_enumeration_agree():
    ev = Evaluator(LOW, E0)
    for z in O.positive_traces(3, 2)[:200]:
        for x in (1, 2, 3):
            f = fml(f"Loc({x})")
            direct = compatible_states(LOW, E0, D0, W0, z, f)
            ref = compatible_states(LOW, E0, D0, W0, z)
            assert ev.degree(D0, W0, z, f) == norm(D0, direct, ref)


@given(traces)
def test_pruned_and_exhaustive_oracles_agree(z):
    assert O.posterior(PRIOR, z) == O.posterior_exhaustive(PRIOR, z)
