from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles as O
from conftest import weighted_low
from dsgolog import GroundBAT, builtin, parse_formula, parse_program, parse_theory
from dsgolog.abstraction import (CONDITIONS, AbstractionError, Model,
                                 RefinementMapping, UnmappedSymbol, build_bisim, check_complete, check_sound,
                                 epistemic_iso, map_formula, map_program, map_trace, objective_iso,
                                 theorem_harness)
from dsgolog.belief import Distribution, EpistemicState, EvalConfig, evaluate
from dsgolog.examples import MUTANTS, mutant_mapping
from dsgolog.interpreter import Sample, sample_trace, traces
from dsgolog.lang import And, Atom, Not
from dsgolog.model import State

F = Fraction
B = builtin()
M = B.mapping
LOW = GroundBAT(B.theory_low)
HIGH = GroundBAT(B.theory_high)
EL, EH = EpistemicState.from_bat(LOW), EpistemicState.from_bat(HIGH)
WL, WH = LOW.initial_worlds()[0][0], HIGH.initial_worlds()[0][0]
NEAR = (("goto", "near"),)


def hi(text):
    return parse_formula(text, B.theory_high)


@pytest.fixture(scope="module")
def rel():
    r = build_bisim(M, HIGH, GroundBAT(B.theory_low), EH, WH, EL, WL, 2, 6)
    assert r.certified
    return r


def everywhere_low():
    """One world per start position, to evaluate translated formulas position by position."""
    bat = GroundBAT(weighted_low(B, {x: 1 for x in range(10)}))
    return bat, {next(iter(w.atoms))[1]: w for w, _ in bat.initial_worlds()}


# --- translation

@pytest.mark.parametrize("place, pred", [("near", O.near), ("far", O.far),
                                         ("mid", lambda l: 2 < l <= 5)])
def test_fluent_translation_matches_position_ranges(place, pred):
    bat, worlds = everywhere_low()
    f = map_formula(M, hi(f"At({place})"))
    for x, w in worlds.items():
        e = EpistemicState.of(Distribution.point(w))
        assert evaluate(bat, e, w, (), f) == pred(x), (place, x)


def test_translation_is_homomorphic():
    a, b = hi("At(near)"), hi("At(far)")
    assert map_formula(M, And(a, Not(b))) == And(map_formula(M, a), Not(map_formula(M, b)))


def test_trace_translation_is_elementwise():
    z = (("goto", "near"), ("goto", "far"))
    assert map_trace(M, z) == (map_program(M, parse_program("goto(near)", B.theory_high)),
                               map_program(M, parse_program("goto(far)", B.theory_high)))


def test_atoms_outside_the_mapping_have_no_translation():
    with pytest.raises(UnmappedSymbol):
        map_formula(M, Atom("Poss", ()))


def test_incomplete_mapping_is_rejected():
    text = B.texts["mapping"]
    cut = text[:text.index("  action goto")] + "}\n"
    with pytest.raises(UnmappedSymbol):
        RefinementMapping.parse(cut, B.theory_high, B.theory_low)


# --- isomorphisms

def test_objective_iso_at_the_start():
    assert objective_iso(M, HIGH, LOW, State(WH, ()), State(WL, ()))


def test_objective_iso_fails_when_position_disagrees():
    assert not objective_iso(M, HIGH, LOW, State(WH, NEAR), State(WL, (("move", 1, 1),)))
    assert objective_iso(M, HIGH, LOW, State(WH, NEAR), State(WL, (("move", -1, -1),)))


@given(st.lists(st.sampled_from(sorted(HIGH.ground_actions)), max_size=3))
def test_identity_mapping_is_reflexive(z):
    ident = RefinementMapping.identity(B.theory_high)
    z = tuple(z)
    if HIGH.exec(WH, z):
        assert objective_iso(ident, HIGH, HIGH, State(WH, z), State(WH, z))


def _two_cell_setup():
    # high: two start places weighted 3:2, so the actual one has normalised weight 3/5
    high = parse_theory(B.texts["theory_high"].replace("At(l) <-> l = mid;",
                                                       "world 3 {At(near)}; world 2 {At(far)};"))
    bh = GroundBAT(high)
    (wn,) = [w for w, _ in bh.initial_worlds() if ("At", "near") in w.atoms]
    d_h = Distribution.of(dict(bh.initial_worlds()))
    bl = GroundBAT(weighted_low(B, {2: 1, 3: 1}))
    w2, w3 = [w for w, _ in bl.initial_worlds()]
    d_l = Distribution.of(dict(bl.initial_worlds()))
    down, up = (("move", -1, -1),), (("move", 1, 1),)
    cells = [State(w2, down), State(w3, down), State(w3, up), State(w2, up)]
    return bh, bl, d_h, State(wn, ()), d_l, cells


def test_epistemic_iso_with_two_cells():
    bh, bl, d_h, s_h, d_l, cells = _two_cell_setup()
    res = epistemic_iso(bh, bl, d_h, s_h, d_l, cells)
    assert res.ok and res.representative_independent
    assert res.high_norm == F(3, 5)
    assert sorted(n for _, n in res.cells) == [F(3, 5), F(3, 5)]


def test_dropping_a_member_breaks_epistemic_iso():
    bh, bl, d_h, s_h, d_l, cells = _two_cell_setup()
    res = epistemic_iso(bh, bl, d_h, s_h, d_l, cells[1:])
    assert not res.ok
    assert F(3, 10) in [n for _, n in res.cells]


def test_point_masses_with_a_single_full_cell():
    res = epistemic_iso(HIGH, LOW, EH.distributions[0], State(WH, ()), EL.distributions[0], [State(WL, ())])
    assert res.ok and res.high_norm == 1


# --- bisimulation

def test_builtin_mapping_is_certified(rel):
    assert rel.definite and rel.counterexample is None
    assert rel.horizon == 2 and rel.star_bound == 6
    highs = {s.trace for s in rel.high_states()}
    assert highs == {(), NEAR, (("goto", "far"),), NEAR + NEAR, NEAR + (("goto", "far"),),
                     (("goto", "far"),) + NEAR, (("goto", "far"),) * 2}


@pytest.mark.parametrize("name", sorted(MUTANTS))
def test_mutants_are_caught(name):
    cond, m = mutant_mapping(name, B)
    r = build_bisim(m, HIGH, GroundBAT(B.theory_low), EH, WH, EL, WL, 2, 6)
    assert not r.certified
    assert r.counterexample.condition == cond
    assert CONDITIONS[cond] in r.counterexample.describe()


def test_identity_mapping_gives_the_diagonal():
    ident = RefinementMapping.identity(B.theory_high)
    r = build_bisim(ident, HIGH, GroundBAT(B.theory_high), EH, WH, EH, WH, 2, 2)
    assert r.certified
    assert all(g.high == g.low for g in r.groups)


def test_related_states_match_the_approach_oracle(rel):
    finished, cut = O.approach_executions({3: 1}, 3, O.near, -1, 3)
    assert cut
    target = State(WH, NEAR)
    for z in finished:
        assert rel.related(WL, z) == frozenset({target}), z
        assert O.final_loc(3, z) <= 2


def test_translated_approach_has_the_oracle_executions():
    p = map_program(M, parse_program("goto(near)", B.theory_high))
    finished, _ = O.approach_executions({3: 1}, 3, O.near, -1, 3)
    ts = traces(LOW, EL, WL, (), p, 3, positive_only=True)
    assert ts.as_set() == set(finished)


def test_middle_place_has_no_low_level_execution():
    p = map_program(M, parse_program("goto(mid)", B.theory_high))
    assert traces(LOW, EL, WL, (), p, 3).traces == ()


def test_high_program_executions_correspond(rel):
    p_low = map_program(M, B.program_high)
    (z_h,) = traces(HIGH, EH, WH, (), B.program_high, 0).traces
    done = 0
    for seed in range(20):
        # runs needing more loop iterations than the bound are cut off
        s = sample_trace(LOW, EL, WL, (), p_low, seed=seed, policy="random", star_bound=6)
        if isinstance(s, Sample) and s.likelihood > 0:
            done += 1
            assert State(WH, z_h) in rel.related(WL, s.trace)
    assert done >= 10


def test_knowledge_after_reaching_the_wall(rel):
    cfg = EvalConfig(star_bound=4, positive_traces=True)
    f = hi("[goto(near)] B(At(near) : 1)")
    assert evaluate(HIGH, EH, WH, (), f, cfg)
    assert evaluate(LOW, EL, WL, (), map_formula(M, f), cfg)


def test_contradiction_fails_on_both_sides(rel):
    f = hi("At(near) & At(far)")
    for g in rel.groups:
        assert not evaluate(HIGH, EH, g.high.world, g.high.trace, f)
        assert not evaluate(LOW, EL, g.low.world, g.low.trace, map_formula(M, f))


def test_zero_likelihood_executions_break_the_program_equivalence():
    # Under the unrestricted semantics a run with an impossible outcome still
    # finishes the translated approach loop, at 5 m.
    f = hi("[goto(near)] At(near)")
    low_f = map_formula(M, f)
    assert evaluate(HIGH, EH, WH, (), f, EvalConfig(star_bound=1))
    assert not evaluate(LOW, EL, WL, (), low_f, EvalConfig(star_bound=1))
    assert evaluate(LOW, EL, WL, (), low_f, EvalConfig(star_bound=1, positive_traces=True))


# --- soundness and completeness

def test_builtins_are_sound_and_complete():
    s = check_sound(M, B.theory_high, B.theory_low, [Model.point(WL)], 1, 4)
    c = check_complete(M, B.theory_high, B.theory_low, [Model.point(WH)], 1, 4)
    assert s.holds and c.holds


def test_wrong_initial_place_is_not_sound():
    far = parse_theory(B.texts["theory_high"].replace("l = mid;", "l = far;"))
    v = check_sound(M, far, B.theory_low, [Model.point(WL)], 1, 4)
    assert not v.holds
    (mv,) = v.verdicts
    assert not mv.matched and mv.attempts[0][2].condition == "1"


def test_no_low_models_is_vacuously_sound():
    assert check_sound(M, B.theory_high, B.theory_low, [], 1, 4).holds


def test_harness_needs_a_certified_relation():
    cond, m = mutant_mapping("near-too-narrow", B)
    r = build_bisim(m, HIGH, GroundBAT(B.theory_low), EH, WH, EL, WL, 1, 4)
    with pytest.raises(AbstractionError):
        theorem_harness(m, r)


def test_small_harness_run(rel):
    rep = theorem_harness(M, rel, n_static=60, n_bounded=20, n_traces=10, seed=3)
    assert rep.ok
    assert 0 < rep.static_true < rep.static_checked
    assert 0 < rep.bounded_true < rep.bounded_checked
