"""Abstract syntax for terms, formulas and programs.

All nodes are immutable.  Ground rigid terms evaluate to plain Python
values (see :func:`value_of`), which is what the semantic modules pass
around: numbers are ``int`` or ``Fraction``, names are ``str`` and
compound terms such as ``move(-1, 0)`` are tuples ``('move', -1, 0)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Union

__all__ = [
    "Var", "Const", "Rigid", "Term",
    "Atom", "Equal", "Cmp", "Top", "And", "Not", "Forall", "Box", "After", "Belief",
    "Formula", "Or", "Exists", "Implies", "Iff", "Knows", "TRUE", "FALSE",
    "Act", "Test", "Seq", "Choice", "Pick", "Star", "If", "While", "Program", "NIL",
    "substitute", "expand_sugar", "classify", "free_vars", "is_ground",
    "value_of", "term_of", "normalize_number", "format_value", "NotStatic",
    "ARITH_FUNCTIONS", "CMP_OPS", "seq_all", "choice_all",
]


class NotStatic(ValueError):
    """A test formula mentions a box or program modality."""


def normalize_number(q) -> Union[int, Fraction]:
    q = Fraction(q)
    return q.numerator if q.denominator == 1 else q


# --------------------------------------------------------------------- terms

@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Const:
    """An exact rational constant, kept in canonical (reduced) form."""
    value: Fraction

    def __post_init__(self) -> None:
        if not isinstance(self.value, Fraction):
            object.__setattr__(self, "value", Fraction(self.value))

    def __str__(self) -> str:
        return format_value(normalize_number(self.value))


@dataclass(frozen=True)
class Rigid:
    functor: str
    args: tuple = ()

    def __post_init__(self) -> None:
        if not isinstance(self.args, tuple):
            object.__setattr__(self, "args", tuple(self.args))

    def __str__(self) -> str:
        from .parser import format_term
        return format_term(self)


Term = Union[Var, Const, Rigid]

ARITH_FUNCTIONS = frozenset({"+", "-", "theta"})
CMP_OPS = ("<", "<=", ">", ">=")


def theta(u, v, c, d):
    if u == v:
        return c
    if abs(u - v) == 1:
        return d
    return 0


def value_of(t: Term, env=None):
    """Evaluate a term to a ground value; variables are looked up in ``env``."""
    if isinstance(t, Const):
        return normalize_number(t.value)
    if isinstance(t, Var):
        if env is not None and t.name in env:
            return env[t.name]
        raise KeyError(f"unbound variable {t.name!r}")
    if not t.args:
        return t.functor
    vals = [value_of(a, env) for a in t.args]
    f = t.functor
    if f in ARITH_FUNCTIONS:
        for v in vals:
            if not isinstance(v, (int, Fraction)):
                raise TypeError(f"{f} applied to non-number {format_value(v)}")
        if f == "+":
            return normalize_number(vals[0] + vals[1])
        if f == "-":
            if len(vals) == 1:
                return -vals[0]
            return normalize_number(vals[0] - vals[1])
        return normalize_number(theta(*vals))
    return (f, *vals)


def term_of(value) -> Term:
    """Inverse of :func:`value_of` for ground values."""
    if isinstance(value, bool):
        raise TypeError("booleans are not rigid designators")
    if isinstance(value, (int, Fraction)):
        return Const(Fraction(value))
    if isinstance(value, str):
        return Rigid(value, ())
    if isinstance(value, tuple):
        return Rigid(value[0], tuple(term_of(v) for v in value[1:]))
    raise TypeError(f"not a ground value: {value!r}")


def format_value(value) -> str:
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}" if value.denominator != 1 else str(value.numerator)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return value
    if isinstance(value, tuple):
        return f"{value[0]}({', '.join(format_value(v) for v in value[1:])})"
    return repr(value)


# ------------------------------------------------------------------ formulas

class _Node:
    def __str__(self) -> str:
        from .parser import pretty
        return pretty(self)


@dataclass(frozen=True)
class Atom(_Node):
    pred: str
    args: tuple = ()

    def __post_init__(self) -> None:
        if not isinstance(self.args, tuple):
            object.__setattr__(self, "args", tuple(self.args))


@dataclass(frozen=True)
class Equal(_Node):
    left: Term
    right: Term


@dataclass(frozen=True)
class Cmp(_Node):
    """Numeric comparison between rigid terms."""
    op: str
    left: Term
    right: Term

    def __post_init__(self) -> None:
        if self.op not in CMP_OPS:
            raise ValueError(f"unknown comparison {self.op!r}")


@dataclass(frozen=True)
class Top(_Node):
    pass


@dataclass(frozen=True)
class And(_Node):
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Not(_Node):
    body: "Formula"


@dataclass(frozen=True)
class Forall(_Node):
    var: str
    sort: str
    body: "Formula"


@dataclass(frozen=True)
class Box(_Node):
    body: "Formula"


@dataclass(frozen=True)
class After(_Node):
    program: "Program"
    body: "Formula"


@dataclass(frozen=True)
class Belief(_Node):
    body: "Formula"
    degree: Fraction

    def __post_init__(self) -> None:
        if not isinstance(self.degree, Fraction):
            object.__setattr__(self, "degree", Fraction(self.degree))


Formula = Union[Atom, Equal, Cmp, Top, And, Not, Forall, Box, After, Belief]

TRUE = Top()
FALSE = Not(Top())


def Or(a: Formula, b: Formula) -> Formula:
    return Not(And(Not(a), Not(b)))


def Exists(var: str, sort: str, body: Formula) -> Formula:
    return Not(Forall(var, sort, Not(body)))


def Implies(a: Formula, b: Formula) -> Formula:
    return Not(And(a, Not(b)))


def Iff(a: Formula, b: Formula) -> Formula:
    return And(Implies(a, b), Implies(b, a))


def Knows(f: Formula) -> Belief:
    return Belief(f, Fraction(1))


# ------------------------------------------------------------------ programs

@dataclass(frozen=True)
class Act(_Node):
    term: Term


@dataclass(frozen=True)
class Test(_Node):
    cond: Formula

    def __post_init__(self) -> None:
        if "static" not in classify(self.cond):
            raise NotStatic(f"test formula must be static: {self.cond}")


@dataclass(frozen=True)
class Seq(_Node):
    first: "Program"
    second: "Program"


@dataclass(frozen=True)
class Choice(_Node):
    left: "Program"
    right: "Program"


@dataclass(frozen=True)
class Pick(_Node):
    var: str
    sort: str
    body: "Program"


@dataclass(frozen=True)
class Star(_Node):
    body: "Program"


# sugar; removed by expand_sugar

@dataclass(frozen=True)
class If(_Node):
    branches: tuple          # ((cond, program), ...)
    orelse: "Program | None" = None


@dataclass(frozen=True)
class While(_Node):
    cond: Formula
    body: "Program"


Program = Union[Act, Test, Seq, Choice, Pick, Star, If, While]

def seq_all(programs) -> Program:
    programs = list(programs)
    if not programs:
        return NIL
    out = programs[-1]
    for p in reversed(programs[:-1]):
        out = Seq(p, out)
    return out


def choice_all(programs) -> Program:
    programs = list(programs)
    out = programs[-1]
    for p in reversed(programs[:-1]):
        out = Choice(p, out)
    return out


# -------------------------------------------------------------- operations

def is_ground(t: Term) -> bool:
    if isinstance(t, Var):
        return False
    if isinstance(t, Rigid):
        return all(is_ground(a) for a in t.args)
    return True


def _subst_term(t: Term, var: str, value: Term) -> Term:
    if isinstance(t, Var):
        return value if t.name == var else t
    if isinstance(t, Rigid) and t.args:
        return Rigid(t.functor, tuple(_subst_term(a, var, value) for a in t.args))
    return t


def substitute(node, var: str, value: Term):
    """Replace free occurrences of ``var`` by the ground term ``value``."""
    if not is_ground(value):
        raise ValueError(f"substituted value must be ground: {value}")
    return _subst(node, var, value)


def _subst(node, var, value):
    match node:
        case Var() | Const() | Rigid():
            return _subst_term(node, var, value)
        case Atom(pred, args):
            return Atom(pred, tuple(_subst_term(a, var, value) for a in args))
        case Equal(l, r):
            return Equal(_subst_term(l, var, value), _subst_term(r, var, value))
        case Cmp(op, l, r):
            return Cmp(op, _subst_term(l, var, value), _subst_term(r, var, value))
        case Top():
            return node
        case And(l, r):
            return And(_subst(l, var, value), _subst(r, var, value))
        case Not(b):
            return Not(_subst(b, var, value))
        case Forall(x, s, b):
            return node if x == var else Forall(x, s, _subst(b, var, value))
        case Box(b):
            return Box(_subst(b, var, value))
        case After(p, b):
            return After(_subst(p, var, value), _subst(b, var, value))
        case Belief(b, r):
            return Belief(_subst(b, var, value), r)
        case Act(t):
            return Act(_subst_term(t, var, value))
        case Test(c):
            return Test(_subst(c, var, value))
        case Seq(a, b):
            return Seq(_subst(a, var, value), _subst(b, var, value))
        case Choice(a, b):
            return Choice(_subst(a, var, value), _subst(b, var, value))
        case Pick(x, s, b):
            return node if x == var else Pick(x, s, _subst(b, var, value))
        case Star(b):
            return Star(_subst(b, var, value))
        case If(branches, orelse):
            return If(tuple((_subst(c, var, value), _subst(p, var, value)) for c, p in branches),
                      None if orelse is None else _subst(orelse, var, value))
        case While(c, b):
            return While(_subst(c, var, value), _subst(b, var, value))
    raise TypeError(f"cannot substitute into {node!r}")


def expand_sugar(p: Program) -> Program:
    """Rewrite if/elif/else/while into the six core program constructors.

    ``if`` with a single branch and no ``else`` skips when the condition
    fails; a multi-branch ``if`` without ``else`` blocks when no condition
    holds.
    """
    match p:
        case Act() | Test():
            return p
        case Seq(a, b):
            return Seq(expand_sugar(a), expand_sugar(b))
        case Choice(a, b):
            return Choice(expand_sugar(a), expand_sugar(b))
        case Pick(x, s, b):
            return Pick(x, s, expand_sugar(b))
        case Star(b):
            return Star(expand_sugar(b))
        case While(c, b):
            return Seq(Star(Seq(Test(c), expand_sugar(b))), Test(Not(c)))
        case If(branches, orelse):
            arms = []
            negated: Formula | None = None
            for cond, body in branches:
                guard = cond if negated is None else And(negated, cond)
                arms.append(Seq(Test(guard), expand_sugar(body)))
                negated = Not(cond) if negated is None else And(negated, Not(cond))
            if orelse is not None:
                arms.append(Seq(Test(negated), expand_sugar(orelse)))
            elif len(branches) == 1:
                arms.append(Test(negated))
            return choice_all(arms)
    raise TypeError(f"not a program: {p!r}")


def _mentions(node, kinds: tuple) -> bool:
    return any(isinstance(n, kinds) for n in walk(node))


def walk(node) -> Iterator:
    """Pre-order traversal over formula and program nodes (terms excluded)."""
    yield node
    match node:
        case And(l, r):
            yield from walk(l)
            yield from walk(r)
        case Not(b) | Box(b) | Belief(b, _) | Forall(_, _, b):
            yield from walk(b)
        case After(p, b):
            yield from walk(p)
            yield from walk(b)
        case Test(c):
            yield from walk(c)
        case Seq(a, b) | Choice(a, b):
            yield from walk(a)
            yield from walk(b)
        case Pick(_, _, b) | Star(b):
            yield from walk(b)
        case If(branches, orelse):
            for c, b in branches:
                yield from walk(c)
                yield from walk(b)
            if orelse is not None:
                yield from walk(orelse)
        case While(c, b):
            yield from walk(c)
            yield from walk(b)


def classify(f: Formula) -> frozenset:
    """Return the syntactic classes of ``f``.

    Classes are ``static``, ``fluent``, ``bounded``, ``objective`` and
    ``general`` (the latter for formulas mentioning a box).
    """
    has_box = _mentions(f, (Box,))
    has_prog = _mentions(f, (After,))
    has_belief = _mentions(f, (Belief,))
    has_poss = any(isinstance(n, Atom) and n.pred == "Poss" for n in walk(f))
    out = set()
    if not has_box:
        out.add("bounded")
        if not has_prog:
            out.add("static")
            if not has_belief and not has_poss:
                out.add("fluent")
    else:
        out.add("general")
    if not has_belief:
        out.add("objective")
    return frozenset(out)


def _term_vars(t: Term, out: set) -> None:
    if isinstance(t, Var):
        out.add(t.name)
    elif isinstance(t, Rigid):
        for a in t.args:
            _term_vars(a, out)


def free_vars(node) -> frozenset:
    out: set = set()
    _free(node, frozenset(), out)
    return frozenset(out)


def _free(node, bound, out):
    match node:
        case Var() | Const() | Rigid():
            vs: set = set()
            _term_vars(node, vs)
            out.update(vs - bound)
        case Atom(_, args) | Act(Rigid(_, args)):
            for a in args:
                _free(a, bound, out)
        case Act(t):
            _free(t, bound, out)
        case Equal(l, r) | Cmp(_, l, r):
            _free(l, bound, out)
            _free(r, bound, out)
        case Top():
            pass
        case Forall(x, _, b) | Pick(x, _, b):
            _free(b, bound | {x}, out)
        case _:
            for child in _children(node):
                _free(child, bound, out)


def _children(node):
    match node:
        case And(l, r):
            return (l, r)
        case Not(b) | Box(b) | Belief(b, _) | Star(b):
            return (b,)
        case After(p, b):
            return (p, b)
        case Test(c):
            return (c,)
        case Seq(a, b) | Choice(a, b):
            return (a, b)
        case If(branches, orelse):
            kids = [x for pair in branches for x in pair]
            return tuple(kids) + (() if orelse is None else (orelse,))
        case While(c, b):
            return (c, b)
    raise TypeError(f"unexpected node {node!r}")


NIL = Test(TRUE)
