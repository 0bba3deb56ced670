"""Hypothesis strategies for formulas and programs over the robot theory."""

from fractions import Fraction

from hypothesis import strategies as st

from dsgolog.lang import (TRUE, Act, And, Atom, Belief, Choice, Cmp, Forall, If, Not, Pick, Rigid, Seq,
                          Star, Test, Var, While, term_of)

consts = st.integers(0, 9).map(term_of)
cmp_ops = st.sampled_from(["<", "<=", ">", ">="])
degrees = st.sampled_from([Fraction(0), Fraction(1, 2), Fraction(1, 3), Fraction(1)])


def _atoms(var):
    closed = st.one_of(
        consts.map(lambda c: Atom("Loc", (c,))),
        st.just(TRUE),
    )
    if var is None:
        return closed
    x = Var(var)
    return st.one_of(
        closed,
        st.just(Atom("Loc", (x,))),
        st.builds(lambda op, c: Cmp(op, x, c), cmp_ops, consts),
    )


def objective(var=None, depth=3):
    base = _atoms(var)
    if depth == 0:
        return base
    sub = objective(var, depth - 1)
    return st.one_of(
        base,
        sub.map(Not),
        st.builds(And, sub, sub),
        objective("x", depth - 1).map(lambda b: Forall("x", "Dist", b)),
    )


def static(depth=3):
    """Closed static formulas, possibly with belief operators."""
    if depth == 0:
        return objective(None, 1)
    sub = static(depth - 1)
    return st.one_of(
        objective(None, 2),
        sub.map(Not),
        st.builds(And, sub, sub),
        st.builds(Belief, objective(None, 2), degrees),
    )


open_formulas = objective("x", 2)

moves = st.builds(lambda x, y: Act(Rigid("move", (term_of(x), term_of(y)))),
                  st.sampled_from([-1, 1]), st.integers(-2, 2))
sonars = st.integers(0, 9).map(lambda z: Act(Rigid("sonar", (term_of(z),))))
nature_move = st.sampled_from([-1, 1]).map(
    lambda x: Pick("y", "Delta", Act(Rigid("move", (term_of(x), Var("y"))))))


def programs(depth=2, star=True, tests=None):
    tests = tests if tests is not None else objective(None, 1)
    base = st.one_of(moves, sonars, nature_move, tests.map(Test))
    if depth == 0:
        return base
    sub = programs(depth - 1, star, tests)
    options = [base, st.builds(Seq, sub, sub), st.builds(Choice, sub, sub),
               st.builds(lambda c, a, b: If(((c, a),), b), tests, sub, sub)]
    if star:
        options += [sub.map(Star), st.builds(While, tests, sub)]
    return st.one_of(*options)
