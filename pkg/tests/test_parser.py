from fractions import Fraction

import pytest
from hypothesis import given

from dsgolog import (builtin, DSLSemanticError, DSLSyntaxError, GroundBAT, format_theory, parse_formula, parse_program,
                     parse_theory, parse_trace, pretty)
from dsgolog.lang import Atom, Belief, Equal, While, term_of, walk
from dsgolog.model import AxiomNotFunctional, InvalidTheory
from strategies import programs, static

LOW = builtin().theory_low


def test_init_clause_becomes_equality_constraint(bundle):
    (c,) = bundle.theory_high.init_constraints
    assert any(isinstance(n, Equal) for n in walk(c))
    assert any(isinstance(n, Atom) and n.pred == "At" for n in walk(c))


def test_while_program_with_knowledge_test(bundle):
    p = parse_program("while (!K(exists x (Loc(x) & x <= 2))) do move(-1); sonar() done", bundle.theory_low)
    assert isinstance(p, While)
    assert isinstance(p.cond.body, Belief) and p.cond.body.degree == 1


def test_belief_literal(bundle):
    assert parse_formula("B(Loc(2) : 1/2)", bundle.theory_low) == Belief(Atom("Loc", (term_of(2),)),
                                                                         Fraction(1, 2))


def test_syntax_error_reports_position(bundle):
    with pytest.raises(DSLSyntaxError) as info:
        parse_formula("Loc(3) &", bundle.theory_low)
    assert (info.value.line, info.value.col) == (1, 9)
    with pytest.raises(DSLSyntaxError) as info:
        parse_program("sonar();\nmove(-1) move(1)", bundle.theory_low)
    assert info.value.line == 2


@pytest.mark.parametrize("text, needle", [
    ("Foo(3)", "unknown"),
    ("Loc(3, 4)", "expects 1"),
])
def test_semantic_errors(bundle, text, needle):
    with pytest.raises(DSLSemanticError, match=needle):
        parse_formula(text, bundle.theory_low)


def test_tests_must_be_static(bundle):
    with pytest.raises(DSLSemanticError, match="static"):
        parse_program("([sonar()] Loc(3))?", bundle.theory_low)


def test_unknown_sort_in_theory():
    with pytest.raises(DSLSemanticError):
        parse_theory("sorts { A = {a}; }\nfluents { F(Q); }")


def test_trace_syntax(bundle):
    z = parse_trace("sonar(3), move(-1, 0), sonar(3)", bundle.theory_low)
    assert tuple(z) == (("sonar", 3), ("move", -1, 0), ("sonar", 3))
    assert tuple(parse_trace("<>", bundle.theory_low)) == ()


def test_canonical_theory_text_is_a_fixpoint(bundle):
    for th in (bundle.theory_low, bundle.theory_high):
        text = format_theory(th)
        assert format_theory(parse_theory(text)) == text


def test_bundle_programs_round_trip(bundle):
    for th, p in ((bundle.theory_low, bundle.program_low), (bundle.theory_high, bundle.program_high)):
        assert parse_program(pretty(p, th), th) == p


@given(static(3))
def test_formula_round_trip(f):
    assert parse_formula(pretty(f, LOW), LOW) == f


@given(programs(3))
def test_program_round_trip(p):
    assert parse_program(pretty(p, LOW), LOW) == p


def test_overlapping_likelihood_cases_are_rejected(bundle):
    text = bundle.texts["theory_low"].replace(
        "case sonar(z) where !exists l (Loc(l)) => 0;", "case sonar(z) where true => 0;")
    with pytest.raises(AxiomNotFunctional):
        GroundBAT(parse_theory(text))


def test_non_equivalence_oi_is_rejected(bundle):
    text = bundle.texts["theory_low"].replace(
        "oi(a, b) := a = b | exists x, y, z (a = move(x, y) & b = move(x, z));",
        "oi(a, b) := a = b | exists x, y (a = move(x, y) & b = move(x, y + 1));")
    with pytest.raises(InvalidTheory):
        GroundBAT(parse_theory(text))
