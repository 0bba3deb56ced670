"""Parser and pretty-printer for the ``.dsg`` theory/program/formula language.

A theory file looks like::

    sorts { Dist = 0..9; Delta = -2..2; Offset = {-1, 1}; }
    fluents { Loc(Dist) functional; }
    actions { move(Offset, outcome Delta); sonar(outcome Dist); }
    poss(a) := exists x, y (a = move(x, y)) | exists z (a = sonar(z));
    ssa [a] Loc(x) := ... ;
    likelihood(a) {
      case move(x, y) => theta(x, y, 3/5, 1/5);
      case sonar(z) for l where Loc(l) => theta(l, z, 4/5, 1/10);
    }
    oi(a, b) := a = b;
    init { Loc(x) <-> x = 3; }

Free variables of ``init`` constraints are closed universally; anywhere
else an unbound identifier must be a declared constant.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .lang import (
    NIL, TRUE, Act, After, And, Atom, Belief, Box, Choice, Cmp, Const, Equal,
    Forall, If, NotStatic, Not, Pick, Rigid, Seq, Star, Test, Top, Var, While,
    classify, normalize_number, format_value,
)

__all__ = [
    "DSLError", "DSLSyntaxError", "DSLSemanticError",
    "SortDecl", "FluentDecl", "ActionDecl", "SSA", "LikelihoodCase", "TheoryFile",
    "MappingFile", "parse_theory", "parse_program", "parse_formula", "parse_term",
    "parse_mapping", "parse_trace", "pretty", "format_term", "format_theory",
    "format_mapping", "load_theory", "ACTION_SORT",
]

ACTION_SORT = "Action"


class DSLError(Exception):
    def __init__(self, message: str, line: int = 0, col: int = 0, end: Optional[tuple] = None):
        self.message = message
        self.line = line
        self.col = col
        self.end = end
        loc = f"{line}:{col}: " if line else ""
        super().__init__(loc + message)


class DSLSyntaxError(DSLError):
    pass


class DSLSemanticError(DSLError):
    pass


# ------------------------------------------------------------------ lexer

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<number>\d+\.\d+|\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_']*)
  | (?P<sym><->|:=|=>|->|==|!=|<=|>=|\.\.|[()\[\]{},;:=<>&|!?*+\-/.])
""", re.VERBOSE)

KEYWORDS = frozenset("""
    sorts fluents actions poss ssa likelihood oi init world functional outcome
    case for where exists forall K B box true false nil if then elif else fi
    while do done pi mapping fluent action
""".split())


@dataclass(frozen=True)
class Token:
    kind: str       # 'ident', 'kw', 'number', 'sym', 'eof'
    text: str
    line: int
    col: int


def tokenize(text: str) -> list:
    tokens = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise DSLSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        tok = m.group()
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind in ("ident", "number", "sym"):
            if kind == "ident" and tok in KEYWORDS:
                kind = "kw"
            tokens.append(Token(kind, tok, line, pos - line_start + 1))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# ------------------------------------------------------------ theory types

@dataclass(frozen=True)
class SortDecl:
    name: str
    values: tuple
    range_form: bool = False      # declared as lo..hi


@dataclass(frozen=True)
class FluentDecl:
    name: str
    arg_sorts: tuple
    functional: bool = False


@dataclass(frozen=True)
class ActionDecl:
    name: str
    arg_sorts: tuple
    outcome: tuple                # bool per argument: picked by nature

    @property
    def arity(self) -> int:
        return len(self.arg_sorts)


@dataclass(frozen=True)
class SSA:
    fluent: str
    params: tuple
    action_var: str
    body: object


@dataclass(frozen=True)
class LikelihoodCase:
    functor: str
    params: tuple                 # variable names bound by the action pattern
    extra: tuple                  # ((var, sort), ...) enumerated over carriers
    cond: object
    value: object                 # term


@dataclass
class TheoryFile:
    sorts: dict = field(default_factory=dict)
    fluents: dict = field(default_factory=dict)
    actions: dict = field(default_factory=dict)
    poss: Optional[tuple] = None           # (action var, formula)
    ssa: dict = field(default_factory=dict)
    likelihood: Optional[tuple] = None     # (action var, cases)
    oi: Optional[tuple] = None             # (var, var', formula)
    init_constraints: list = field(default_factory=list)
    init_worlds: Optional[list] = None     # [(weight, (Atom, ...)), ...]
    spans: dict = field(default_factory=dict)

    # name resolution helpers

    def carrier(self, sort: str) -> tuple:
        if sort == ACTION_SORT:
            return self.ground_actions()
        try:
            return self.sorts[sort].values
        except KeyError:
            raise DSLSemanticError(f"unknown sort {sort!r}") from None

    def constants(self) -> set:
        names = set()
        for s in self.sorts.values():
            names.update(v for v in s.values if isinstance(v, str))
        names.update(a.name for a in self.actions.values() if a.arity == 0)
        return names

    def ground_actions(self) -> tuple:
        import itertools
        out = []
        for name in sorted(self.actions):
            decl = self.actions[name]
            if decl.arity == 0:
                out.append(name)
                continue
            for args in itertools.product(*(self.sorts[s].values for s in decl.arg_sorts)):
                out.append((name, *args))
        return tuple(out)

    def sort_of_value(self, value) -> Optional[str]:
        for s in self.sorts.values():
            if value in s.values:
                return s.name
        return None


@dataclass
class MappingFile:
    fluents: dict = field(default_factory=dict)    # name -> (params, formula)
    actions: dict = field(default_factory=dict)    # name -> (params, program)


# ----------------------------------------------------------------- parser

class _Scope:
    """Variables in scope (name -> sort or None) plus the active theories."""

    def __init__(self, theories=(), variables=None):
        self.theories = tuple(t for t in theories if t is not None)
        self.vars = dict(variables or {})

    def bind(self, name, sort):
        s = _Scope(self.theories, self.vars)
        s.vars[name] = sort
        return s

    @property
    def checked(self) -> bool:
        return bool(self.theories)

    def fluent(self, name):
        for t in self.theories:
            if name in t.fluents:
                return t.fluents[name]
        return None

    def action(self, name):
        for t in self.theories:
            if name in t.actions:
                return t.actions[name]
        return None

    def is_constant(self, name) -> bool:
        return any(name in t.constants() for t in self.theories)

    def sort_exists(self, name) -> bool:
        return name == ACTION_SORT or any(name in t.sorts for t in self.theories)

    def carrier_sort_of(self, value) -> Optional[str]:
        for t in self.theories:
            s = t.sort_of_value(value)
            if s is not None:
                return s
        return None


class Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    # token helpers

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k=1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, *texts) -> bool:
        t = self.tok
        return t.kind in ("sym", "kw") and t.text in texts

    def accept(self, *texts) -> Optional[Token]:
        if self.at(*texts):
            t = self.tok
            self.i += 1
            return t
        return None

    def expect(self, text) -> Token:
        t = self.accept(text)
        if t is None:
            self.fail(f"expected {text!r}, found {self.tok.text or 'end of input'!r}")
        return t

    def ident(self) -> Token:
        t = self.tok
        if t.kind != "ident":
            self.fail(f"expected identifier, found {t.text or 'end of input'!r}")
        self.i += 1
        return t

    def fail(self, msg, tok=None):
        t = tok or self.tok
        raise DSLSyntaxError(msg, t.line, t.col)

    def semantic(self, msg, tok=None):
        t = tok or self.tok
        raise DSLSemanticError(msg, t.line, t.col)

    def eof(self):
        if self.tok.kind != "eof":
            self.fail(f"unexpected {self.tok.text!r}")

    # -- numbers and terms

    def number(self) -> Fraction:
        neg = bool(self.accept("-"))
        t = self.tok
        if t.kind != "number":
            self.fail("expected number")
        self.i += 1
        q = Fraction(t.text)
        if self.at("/") and self.peek().kind == "number":
            self.i += 1
            d = Fraction(self.tok.text)
            self.i += 1
            if d == 0:
                self.semantic("division by zero in rational literal", t)
            q = q / d
        return -q if neg else q

    def term(self, scope: _Scope, allow_short=False):
        left = self.term_unary(scope, allow_short)
        while self.at("+", "-"):
            op = self.tok.text
            self.i += 1
            right = self.term_unary(scope)
            left = Rigid(op, (left, right))
        return left

    def term_unary(self, scope, allow_short=False):
        if self.at("-"):
            if self.peek().kind == "number":
                return Const(self.number())
            self.i += 1
            inner = self.term_unary(scope)
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Rigid("-", (inner,))
        return self.term_primary(scope, allow_short)

    def term_primary(self, scope, allow_short=False):
        t = self.tok
        if t.kind == "number":
            return Const(self.number())
        if self.accept("("):
            inner = self.term(scope)
            self.expect(")")
            return inner
        if t.kind != "ident":
            self.fail(f"expected term, found {t.text or 'end of input'!r}")
        self.i += 1
        name = t.text
        if self.at("("):
            self.i += 1
            args = []
            if not self.at(")"):
                args.append(self.term(scope))
                while self.accept(","):
                    args.append(self.term(scope))
            self.expect(")")
            return self.check_call(name, tuple(args), scope, t, allow_short)
        if name in scope.vars:
            return Var(name)
        if not scope.checked or scope.is_constant(name):
            if scope.checked:
                decl = scope.action(name)
                if decl is not None and decl.arity:
                    self.semantic(f"action {name} expects {decl.arity} arguments", t)
            return Rigid(name, ())
        self.semantic(f"unbound name {name!r}", t)

    def check_call(self, name, args, scope, tok, allow_short):
        if name == "theta":
            if len(args) != 4:
                self.semantic("theta expects 4 arguments", tok)
            return Rigid(name, args)
        if scope.checked:
            decl = scope.action(name)
            if decl is None:
                if scope.fluent(name) is not None:
                    return Rigid(name, args)          # caller decides it's an atom
                self.semantic(f"unknown function or action {name!r}", tok)
            if len(args) != decl.arity:
                short_ok = (allow_short and len(args) < decl.arity
                            and all(decl.outcome[len(args):]))
                if not short_ok:
                    self.semantic(f"action {name} expects {decl.arity} arguments, got {len(args)}", tok)
        return Rigid(name, args)

    # -- formulas

    def formula(self, scope: _Scope):
        return self.f_iff(scope)

    def f_iff(self, scope):
        left = self.f_implies(scope)
        while self.at("<->", "=="):
            self.i += 1
            right = self.f_implies(scope)
            left = And(_implies(left, right), _implies(right, left))
        return left

    def f_implies(self, scope):
        left = self.f_or(scope)
        if self.accept("->"):
            right = self.f_implies(scope)
            return _implies(left, right)
        return left

    def f_or(self, scope):
        left = self.f_and(scope)
        while self.accept("|"):
            right = self.f_and(scope)
            left = Not(And(Not(left), Not(right)))
        return left

    def f_and(self, scope):
        left = self.f_unary(scope)
        while self.accept("&"):
            right = self.f_unary(scope)
            left = And(left, right)
        return left

    def f_unary(self, scope):
        t = self.tok
        if self.accept("!"):
            return Not(self.f_unary(scope))
        if self.accept("true"):
            return TRUE
        if self.accept("false"):
            return Not(TRUE)
        if self.at("exists", "forall"):
            return self.quantifier(scope)
        if self.accept("box"):
            return Box(self.f_unary(scope))
        if self.accept("K"):
            self.expect("(")
            body = self.formula(scope)
            self.expect(")")
            return Belief(body, Fraction(1))
        if self.accept("B"):
            self.expect("(")
            body = self.formula(scope)
            self.expect(":")
            q = self.number()
            if q < 0:
                self.semantic("belief degree must be non-negative", t)
            self.expect(")")
            return Belief(body, q)
        if self.accept("["):
            prog = self.program(scope)
            self.expect("]")
            return After(prog, self.f_unary(scope))
        if self.at("("):
            save = self.i
            self.i += 1
            try:
                inner = self.formula(scope)
                self.expect(")")
                if not self.at("=", "!=", "<", "<=", ">", ">=", "+", "-"):
                    return inner
            except DSLError:
                pass
            self.i = save
        return self.atomic(scope)

    def atomic(self, scope):
        t = self.tok
        left = self.term(scope)
        if self.at("=", "!=", "<", "<=", ">", ">="):
            op = self.tok.text
            self.i += 1
            right = self.term(scope)
            if op == "=":
                return Equal(left, right)
            if op == "!=":
                return Not(Equal(left, right))
            return Cmp(op, left, right)
        if isinstance(left, Var):
            self.semantic(f"variable {left.name} used as a formula", t)
        if not isinstance(left, Rigid) or left.functor in ("+", "-", "theta"):
            self.fail("expected formula", t)
        name = left.functor
        if name == "Poss":
            if len(left.args) != 1:
                self.semantic("Poss expects one argument", t)
        elif scope.checked:
            decl = scope.fluent(name)
            if decl is None:
                self.semantic(f"unknown fluent {name!r}", t)
            if len(left.args) != len(decl.arg_sorts):
                self.semantic(f"fluent {name} expects {len(decl.arg_sorts)} arguments", t)
        return Atom(name, left.args)

    def binder_list(self, scope):
        """Parse ``x[:S], y[:S] ...``; returns [(name, sort or None, tok)]."""
        out = []
        while True:
            t = self.ident()
            sort = None
            if self.accept(":"):
                st = self.ident()
                if scope.checked and not scope.sort_exists(st.text):
                    self.semantic(f"unknown sort {st.text!r}", st)
                sort = st.text
            if scope.is_constant(t.text):
                self.semantic(f"{t.text!r} is a declared constant and cannot be bound", t)
            out.append((t.text, sort, t))
            if not self.accept(","):
                return out

    def quantifier(self, scope):
        kw = self.tok.text
        self.i += 1
        binders = self.binder_list(scope)
        inner = scope
        for name, sort, _ in binders:
            inner = inner.bind(name, sort)
        self.expect("(")
        body = self.formula(inner)
        self.expect(")")
        for name, sort, tok in reversed(binders):
            sort = sort or self.infer_sort(name, body, scope, tok)
            body = Forall(name, sort, body) if kw == "forall" else Not(Forall(name, sort, Not(body)))
        return body

    def infer_sort(self, name, node, scope, tok):
        found = set()
        _collect_sorts(name, node, scope, found)
        if len(found) == 1:
            return found.pop()
        if not found:
            self.semantic(f"cannot infer sort of {name!r}; write {name}:Sort", tok)
        self.semantic(f"ambiguous sort for {name!r}: {sorted(found)}", tok)

    # -- programs

    def program(self, scope):
        left = self.p_seq(scope)
        if self.accept("|"):
            return Choice(left, self.program(scope))
        return left

    def p_seq(self, scope):
        left = self.p_postfix(scope)
        if self.accept(";"):
            return Seq(left, self.p_seq(scope))
        return left

    def p_postfix(self, scope):
        p = self.p_primary(scope)
        while self.accept("*"):
            p = Star(p)
        return p

    def p_primary(self, scope):
        t = self.tok
        if self.accept("nil"):
            return NIL
        if self.accept("if"):
            branches = []
            cond = self.formula(scope)
            self.expect("then")
            branches.append((cond, self.program(scope)))
            orelse = None
            while True:
                if self.accept("elif"):
                    cond = self.formula(scope)
                    self.expect("then")
                    branches.append((cond, self.program(scope)))
                elif self.accept("else"):
                    orelse = self.program(scope)
                    self.expect("fi")
                    break
                else:
                    self.expect("fi")
                    break
            try:
                return If(tuple((self.static(c, t), b) for c, b in branches), orelse)
            except NotStatic as e:
                self.semantic(str(e), t)
        if self.accept("while"):
            cond = self.static(self.formula(scope), t)
            self.expect("do")
            body = self.program(scope)
            self.expect("done")
            return While(cond, body)
        if self.accept("pi"):
            (name, sort, vt), = self.binder_list(scope)[:1] or [None]
            self.expect("(")
            body = self.program(scope.bind(name, sort))
            self.expect(")")
            if sort is None:
                sort = self.infer_sort(name, body, scope, vt)
            return Pick(name, sort, body)
        # a test: formula followed by '?'
        save = self.i
        try:
            cond = self.f_unary(scope)
            if self.accept("?"):
                try:
                    return Test(cond)
                except NotStatic as e:
                    self.semantic(str(e), t)
        except DSLSemanticError as e:
            if "static" in e.message:
                raise
        except DSLError:
            pass
        self.i = save
        if self.accept("("):
            p = self.program(scope)
            self.expect(")")
            return p
        term = self.term(scope, allow_short=True)
        return self.action(term, scope, t)

    def static(self, f, tok):
        if "static" not in classify(f):
            self.semantic(f"test formula must be static: {pretty(f)}", tok)
        return f

    def action(self, term, scope, tok):
        if not isinstance(term, Rigid) or term.functor in ("+", "-", "theta"):
            if isinstance(term, Var):
                return Act(term)
            self.fail("expected action", tok)
        decl = scope.action(term.functor) if scope.checked else None
        if decl is not None and len(term.args) < decl.arity:
            return _outcome_picks(term, decl)
        return Act(term)


def _outcome_picks(term: Rigid, decl: ActionDecl):
    """Expand ``move(-1)`` into ``pi _o2:Delta (move(-1, _o2))``."""
    missing = range(len(term.args), decl.arity)
    names = [f"_o{i + 1}" for i in missing]
    body = Act(Rigid(term.functor, term.args + tuple(Var(n) for n in names)))
    for i, n in reversed(list(zip(missing, names))):
        body = Pick(n, decl.arg_sorts[i], body)
    return body


def _implies(a, b):
    return Not(And(a, Not(b)))


def _collect_sorts(name, node, scope, found):
    """Sorts implied by occurrences of ``name`` as a fluent/action argument."""
    from .lang import Forall as _Fa

    def term(t):
        if isinstance(t, Rigid) and t.args:
            decl = scope.action(t.functor)
            if decl is not None:
                for i, a in enumerate(t.args):
                    if a == Var(name) and i < len(decl.arg_sorts):
                        found.add(decl.arg_sorts[i])
            for a in t.args:
                term(a)

    def visit(n):
        if isinstance(n, (_Fa, Pick)) and n.var == name:
            return
        if isinstance(n, Atom):
            decl = scope.fluent(n.pred)
            for i, a in enumerate(n.args):
                if decl is not None and a == Var(name):
                    found.add(decl.arg_sorts[i])
                term(a)
            return
        if isinstance(n, (Equal, Cmp)):
            for a, b in ((n.left, n.right), (n.right, n.left)):
                term(a)
                if a == Var(name):
                    if isinstance(b, Var) and scope.vars.get(b.name):
                        found.add(scope.vars[b.name])
                    elif isinstance(b, Rigid) and not b.args:
                        s = scope.carrier_sort_of(b.functor)
                        if s:
                            found.add(s)
            return
        if isinstance(n, Act):
            term(n.term)
            return
        for child in _kids(n):
            visit(child)

    visit(node)


def _kids(n):
    from .lang import _children
    if isinstance(n, (Atom, Equal, Cmp, Top, Act)):
        return ()
    if isinstance(n, (Forall, Pick)):
        return (n.body,)
    return _children(n)


# ---------------------------------------------------------- theory parsing

class TheoryParser(Parser):

    def theory(self) -> TheoryFile:
        th = TheoryFile()
        self.th = th
        while self.tok.kind != "eof":
            t = self.tok
            if self.accept("sorts"):
                self.sorts_block(th)
            elif self.accept("fluents"):
                self.fluents_block(th)
            elif self.accept("actions"):
                self.actions_block(th)
            elif self.accept("poss"):
                if th.poss is not None:
                    self.semantic("duplicate poss axiom", t)
                self.expect("(")
                a = self.ident().text
                self.expect(")")
                self.expect(":=")
                body = self.formula(self.scope({a: ACTION_SORT}))
                self.expect(";")
                self.check_fluent(body, t, "poss axiom")
                th.poss = (a, body)
                th.spans["poss"] = (t.line, t.col)
            elif self.accept("ssa"):
                self.ssa_decl(th, t)
            elif self.accept("likelihood"):
                self.likelihood_block(th, t)
            elif self.accept("oi"):
                if th.oi is not None:
                    self.semantic("duplicate oi axiom", t)
                self.expect("(")
                a = self.ident().text
                self.expect(",")
                b = self.ident().text
                self.expect(")")
                self.expect(":=")
                body = self.formula(self.scope({a: ACTION_SORT, b: ACTION_SORT}))
                self.expect(";")
                self.check_fluent(body, t, "oi axiom")
                th.oi = (a, b, body)
                th.spans["oi"] = (t.line, t.col)
            elif self.accept("init"):
                self.init_block(th)
            else:
                self.fail(f"unexpected {t.text!r} at top level")
        self.finish(th)
        return th

    def scope(self, variables=None):
        return _Scope((self.th,), variables)

    def check_fluent(self, f, tok, what):
        if "fluent" not in classify(f):
            self.semantic(f"{what} must be a fluent formula", tok)

    def sorts_block(self, th):
        self.expect("{")
        while not self.accept("}"):
            t = self.ident()
            if t.text in th.sorts or t.text == ACTION_SORT:
                self.semantic(f"duplicate sort {t.text!r}", t)
            self.expect("=")
            if self.accept("{"):
                vals = [self.sort_value()]
                while self.accept(","):
                    vals.append(self.sort_value())
                self.expect("}")
                decl = SortDecl(t.text, tuple(vals))
            else:
                lo = self.number()
                self.expect("..")
                hi = self.number()
                if lo.denominator != 1 or hi.denominator != 1 or hi < lo:
                    self.semantic("range sorts need integer bounds lo..hi", t)
                decl = SortDecl(t.text, tuple(range(int(lo), int(hi) + 1)), True)
            if len(set(decl.values)) != len(decl.values):
                self.semantic(f"duplicate values in sort {t.text}", t)
            th.sorts[t.text] = decl
            th.spans["sort " + t.text] = (t.line, t.col)
            self.expect(";")

    def sort_value(self):
        if self.tok.kind == "ident":
            return self.ident().text
        return normalize_number(self.number())

    def sort_name(self):
        t = self.ident()
        if t.text not in self.th.sorts:
            self.semantic(f"unknown sort {t.text!r}", t)
        return t.text

    def fluents_block(self, th):
        self.expect("{")
        while not self.accept("}"):
            t = self.ident()
            if t.text in th.fluents or t.text == "Poss":
                self.semantic(f"duplicate fluent {t.text!r}", t)
            sorts = []
            if self.accept("("):
                if not self.at(")"):
                    sorts.append(self.sort_name())
                    while self.accept(","):
                        sorts.append(self.sort_name())
                self.expect(")")
            functional = bool(self.accept("functional"))
            if functional and len(sorts) != 1:
                self.semantic("only unary fluents can be functional", t)
            th.fluents[t.text] = FluentDecl(t.text, tuple(sorts), functional)
            th.spans["fluent " + t.text] = (t.line, t.col)
            self.expect(";")

    def actions_block(self, th):
        self.expect("{")
        while not self.accept("}"):
            t = self.ident()
            if t.text in th.actions:
                self.semantic(f"duplicate action {t.text!r}", t)
            sorts, outcome = [], []
            if self.accept("("):
                while not self.at(")"):
                    outcome.append(bool(self.accept("outcome")))
                    sorts.append(self.sort_name())
                    if not self.accept(","):
                        break
                self.expect(")")
            th.actions[t.text] = ActionDecl(t.text, tuple(sorts), tuple(outcome))
            th.spans["action " + t.text] = (t.line, t.col)
            self.expect(";")

    def ssa_decl(self, th, t):
        self.expect("[")
        a = self.ident().text
        self.expect("]")
        ft = self.ident()
        decl = th.fluents.get(ft.text)
        if decl is None:
            self.semantic(f"ssa for unknown fluent {ft.text!r}", ft)
        if ft.text in th.ssa:
            self.semantic(f"duplicate ssa for {ft.text}", ft)
        params = []
        if self.accept("("):
            if not self.at(")"):
                params.append(self.ident().text)
                while self.accept(","):
                    params.append(self.ident().text)
            self.expect(")")
        if len(params) != len(decl.arg_sorts):
            self.semantic(f"ssa for {ft.text} needs {len(decl.arg_sorts)} parameters", ft)
        self.expect(":=")
        variables = {a: ACTION_SORT, **dict(zip(params, decl.arg_sorts))}
        body = self.formula(self.scope(variables))
        self.expect(";")
        self.check_fluent(body, t, "successor state axiom")
        th.ssa[ft.text] = SSA(ft.text, tuple(params), a, body)
        th.spans["ssa " + ft.text] = (t.line, t.col)

    def likelihood_block(self, th, t):
        if th.likelihood is not None:
            self.semantic("duplicate likelihood axiom", t)
        self.expect("(")
        a = self.ident().text
        self.expect(")")
        self.expect("{")
        cases = []
        while not self.accept("}"):
            ct = self.expect("case")
            ft = self.ident()
            decl = th.actions.get(ft.text)
            if decl is None:
                self.semantic(f"unknown action {ft.text!r}", ft)
            params = []
            if self.accept("("):
                if not self.at(")"):
                    params.append(self.ident().text)
                    while self.accept(","):
                        params.append(self.ident().text)
                self.expect(")")
            if len(params) != decl.arity:
                self.semantic(f"action {ft.text} expects {decl.arity} arguments", ft)
            variables = dict(zip(params, decl.arg_sorts))
            variables[a] = ACTION_SORT
            extra = []
            if self.accept("for"):
                for name, sort, vt in self.binder_list(self.scope(variables)):
                    extra.append((name, sort, vt))
            inner = self.scope({**variables, **{n: s for n, s, _ in extra}})
            cond = TRUE
            if self.accept("where"):
                cond = self.formula(inner)
                self.check_fluent(cond, ct, "likelihood condition")
            self.expect("=>")
            value = self.term(inner)
            self.expect(";")
            resolved = []
            for name, sort, vt in extra:
                resolved.append((name, sort or self.infer_sort(name, cond, self.scope(variables), vt)))
            cases.append(LikelihoodCase(ft.text, tuple(params), tuple(resolved), cond, value))
        th.likelihood = (a, tuple(cases))
        th.spans["likelihood"] = (t.line, t.col)

    def init_block(self, th):
        self.expect("{")
        while not self.accept("}"):
            t = self.tok
            if self.accept("world"):
                weight = self.number()
                if weight < 0:
                    self.semantic("world weights must be non-negative", t)
                self.expect("{")
                atoms = []
                scope = self.scope()
                while not self.at("}"):
                    f = self.atomic(scope)
                    if not isinstance(f, Atom) or f.pred == "Poss":
                        self.semantic("world entries must be fluent atoms", t)
                    atoms.append(f)
                    if not self.accept(","):
                        break
                self.expect("}")
                self.expect(";")
                if th.init_worlds is None:
                    th.init_worlds = []
                th.init_worlds.append((weight, tuple(atoms)))
                continue
            f = self.closed_formula(t)
            self.expect(";")
            self.check_fluent(f, t, "initial constraint")
            th.init_constraints.append(f)

    def closed_formula(self, t):
        """Parse a formula whose unknown lowercase names are universally closed."""
        save = self.i
        free = []
        while True:
            try:
                body = self.formula(self.scope({n: None for n in free}))
                break
            except DSLSemanticError as e:
                m = re.match(r"unbound name '([^']+)'", e.message)
                if not m or m.group(1) in free:
                    raise
                free.append(m.group(1))
                self.i = save
        for name in reversed(free):
            sort = self.infer_sort(name, body, self.scope(), t)
            body = Forall(name, sort, body)
        return body

    def finish(self, th):
        if th.poss is None:
            self.semantic("theory has no poss axiom")
        missing = [f for f in th.fluents if f not in th.ssa]
        if missing:
            self.semantic(f"missing successor state axiom for {', '.join(missing)}")
        if th.likelihood is None:
            self.semantic("theory has no likelihood axiom")
        if th.oi is None:
            self.semantic("theory has no oi axiom")


def parse_theory(text: str) -> TheoryFile:
    return TheoryParser(text).theory()


def load_theory(path, validate: bool = True) -> TheoryFile:
    with open(path, encoding="utf-8") as fh:
        th = parse_theory(fh.read())
    if validate:
        from .model import GroundBAT
        GroundBAT(th)
    return th


def parse_formula(text: str, theory: Optional[TheoryFile] = None, *, variables=None, extra=()):
    p = Parser(text)
    f = p.formula(_Scope((theory, *extra), variables))
    p.eof()
    return f


def parse_term(text: str, theory: Optional[TheoryFile] = None, *, variables=None):
    p = Parser(text)
    t = p.term(_Scope((theory,), variables))
    p.eof()
    return t


def parse_program(text: str, theory: Optional[TheoryFile] = None, *, variables=None, extra=()):
    p = Parser(text)
    prog = p.program(_Scope((theory, *extra), variables))
    p.eof()
    return prog


def parse_trace(text: str, theory: Optional[TheoryFile] = None) -> tuple:
    """Parse ``<a1, a2, ...>`` (brackets optional) into a tuple of ground values."""
    from .lang import value_of
    text = text.strip()
    if text.startswith("<") and text.endswith(">"):
        text = text[1:-1]
    if not text.strip():
        return ()
    p = Parser(text)
    scope = _Scope((theory,))
    out = [value_of(p.term(scope))]
    while p.accept(","):
        out.append(value_of(p.term(scope)))
    p.eof()
    return tuple(out)


def parse_mapping(text: str, high: TheoryFile, low: TheoryFile) -> MappingFile:
    p = Parser(text)
    mf = MappingFile()
    p.expect("mapping")
    p.expect("{")
    while not p.accept("}"):
        t = p.tok
        if p.accept("fluent"):
            nt = p.ident()
            decl = high.fluents.get(nt.text)
            if decl is None:
                p.semantic(f"unknown high-level fluent {nt.text!r}", nt)
            params = p.param_list()
            if len(params) != len(decl.arg_sorts):
                p.semantic(f"fluent {nt.text} has {len(decl.arg_sorts)} parameters", nt)
            p.expect(":=")
            body = p.formula(_Scope((low, high), dict(zip(params, decl.arg_sorts))))
            p.expect(";")
            if "static" not in classify(body):
                p.semantic(f"mapping of {nt.text} must be a static formula", t)
            _check_vocabulary(body, low, p, t)
            mf.fluents[nt.text] = (tuple(params), body)
        elif p.accept("action"):
            nt = p.ident()
            decl = high.actions.get(nt.text)
            if decl is None:
                p.semantic(f"unknown high-level action {nt.text!r}", nt)
            params = p.param_list()
            if len(params) != decl.arity:
                p.semantic(f"action {nt.text} has {decl.arity} parameters", nt)
            p.expect(":=")
            p.expect("{")
            prog = p.program(_Scope((low, high), dict(zip(params, decl.arg_sorts))))
            p.expect("}")
            p.expect(";")
            _check_vocabulary(prog, low, p, t)
            mf.actions[nt.text] = (tuple(params), prog)
        else:
            p.fail(f"expected 'fluent' or 'action', found {t.text!r}")
    p.eof()
    return mf


def _check_vocabulary(node, low, p, tok):
    from .lang import walk
    for n in walk(node):
        if isinstance(n, Atom) and n.pred != "Poss" and n.pred not in low.fluents:
            p.semantic(f"{n.pred} is not a low-level fluent", tok)
        if isinstance(n, Act) and isinstance(n.term, Rigid) and n.term.functor not in low.actions:
            p.semantic(f"{n.term.functor} is not a low-level action", tok)


def _param_list(self):
    params = []
    if self.accept("("):
        if not self.at(")"):
            params.append(self.ident().text)
            while self.accept(","):
                params.append(self.ident().text)
        self.expect(")")
    return params


Parser.param_list = _param_list


# ----------------------------------------------------------- pretty-print

def format_term(t, prec: int = 0) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Const):
        s = format_value(normalize_number(t.value))
        return f"({s})" if prec > 1 and t.value < 0 else s
    if t.functor in ("+", "-") and len(t.args) == 2:
        s = f"{format_term(t.args[0], 1)} {t.functor} {format_term(t.args[1], 2)}"
        return f"({s})" if prec > 1 else s
    if t.functor == "-" and len(t.args) == 1:
        return f"-{format_term(t.args[0], 3)}"
    if not t.args:
        return t.functor
    return f"{t.functor}({', '.join(format_term(a) for a in t.args)})"


def _is_or(f):
    return (isinstance(f, Not) and isinstance(f.body, And)
            and isinstance(f.body.left, Not) and isinstance(f.body.right, Not))


def _is_implies(f):
    return isinstance(f, Not) and isinstance(f.body, And) and isinstance(f.body.right, Not)


def _is_iff(f):
    if isinstance(f, And) and _is_implies(f.left) and _is_implies(f.right):
        a, b = f.left.body.left, f.left.body.right.body
        return f.right.body.left == b and f.right.body.right.body == a
    return False


def _is_exists(f):
    return (isinstance(f, Not) and isinstance(f.body, Forall) and isinstance(f.body.body, Not))


# precedence: 1 iff, 2 implies, 3 or, 4 and, 5 unary
def _fmt(f, prec, theory) -> str:
    def wrap(s, p):
        return f"({s})" if p < prec else s

    if _is_iff(f):
        a, b = f.left.body.left, f.left.body.right.body
        return wrap(f"{_fmt(a, 2, theory)} <-> {_fmt(b, 2, theory)}", 1)
    if _is_or(f):
        a, b = f.body.left.body, f.body.right.body
        return wrap(f"{_fmt(a, 3, theory)} | {_fmt(b, 4, theory)}", 3)
    if _is_exists(f):
        binders = []
        g = f
        while _is_exists(g):
            binders.append(f"{g.body.var}:{g.body.sort}")
            g = g.body.body.body
        return f"exists {', '.join(binders)} ({_fmt(g, 0, theory)})"
    if isinstance(f, Not) and isinstance(f.body, Top):
        return "false"
    if _is_implies(f):
        a, b = f.body.left, f.body.right.body
        return wrap(f"{_fmt(a, 3, theory)} -> {_fmt(b, 2, theory)}", 2)
    match f:
        case Top():
            return "true"
        case Atom(pred, args):
            return f"{pred}({', '.join(format_term(a) for a in args)})"
        case Equal(l, r):
            return f"{format_term(l)} = {format_term(r)}"
        case Cmp(op, l, r):
            return f"{format_term(l)} {op} {format_term(r)}"
        case And(l, r):
            return wrap(f"{_fmt(l, 4, theory)} & {_fmt(r, 5, theory)}", 4)
        case Not(Equal(l, r)):
            return f"{format_term(l)} != {format_term(r)}"
        case Not(b):
            return f"!{_fmt(b, 5, theory)}"
        case Forall(x, s, b):
            binders = [f"{x}:{s}"]
            while isinstance(b, Forall):
                binders.append(f"{b.var}:{b.sort}")
                b = b.body
            return f"forall {', '.join(binders)} ({_fmt(b, 0, theory)})"
        case Box(b):
            return f"box {_fmt(b, 5, theory)}"
        case After(p, b):
            return f"[{_pfmt(p, 0, theory)}] {_fmt(b, 5, theory)}"
        case Belief(b, r):
            if r == 1:
                return f"K({_fmt(b, 0, theory)})"
            return f"B({_fmt(b, 0, theory)} : {format_value(normalize_number(r))})"
    raise TypeError(f"not a formula: {f!r}")


def _short_action(p, theory):
    """Recognise the expansion produced by :func:`_outcome_picks`."""
    if theory is None:
        return None
    names = []
    body = p
    while isinstance(body, Pick) and body.var.startswith("_o"):
        names.append((body.var, body.sort))
        body = body.body
    if not names or not isinstance(body, Act) or not isinstance(body.term, Rigid):
        return None
    decl = theory.actions.get(body.term.functor)
    args = body.term.args
    k = len(names)
    if decl is None or len(args) != decl.arity or k > len(args):
        return None
    tail = args[len(args) - k:]
    for i, ((n, s), a) in enumerate(zip(names, tail)):
        pos = len(args) - k + i
        if a != Var(n) or n != f"_o{pos + 1}" or not decl.outcome[pos] or decl.arg_sorts[pos] != s:
            return None
    if any(isinstance(a, Var) and a.name.startswith("_o") for a in args[:len(args) - k]):
        return None
    head = ", ".join(format_term(a) for a in args[:len(args) - k])
    return f"{body.term.functor}({head})"


# precedence: 0 choice, 1 seq, 2 postfix/primary
def _pfmt(p, prec, theory) -> str:
    def wrap(s, q):
        return f"({s})" if q < prec else s

    short = _short_action(p, theory)
    if short is not None:
        return short
    match p:
        case Act(t):
            return format_term(t)
        case Test(Top()):
            return "nil"
        case Test(c):
            return f"{_fmt(c, 5, theory)}?"
        case Seq(a, b):
            return wrap(f"{_pfmt(a, 2, theory)}; {_pfmt(b, 1, theory)}", 1)
        case Choice(a, b):
            return wrap(f"{_pfmt(a, 1, theory)} | {_pfmt(b, 0, theory)}", 0)
        case Star(b):
            return f"{_pfmt(b, 3, theory)}*"
        case Pick(x, s, b):
            return f"pi {x}:{s} ({_pfmt(b, 0, theory)})"
        case If(branches, orelse):
            parts = []
            for i, (c, b) in enumerate(branches):
                parts.append(f"{'if' if i == 0 else 'elif'} {_fmt(c, 0, theory)} then {_pfmt(b, 0, theory)}")
            if orelse is not None:
                parts.append(f"else {_pfmt(orelse, 0, theory)}")
            return " ".join(parts) + " fi"
        case While(c, b):
            return f"while {_fmt(c, 0, theory)} do {_pfmt(b, 0, theory)} done"
    raise TypeError(f"not a program: {p!r}")


def pretty(node, theory: Optional[TheoryFile] = None) -> str:
    """Canonical text for a formula, program or term."""
    if isinstance(node, (Var, Const, Rigid)):
        return format_term(node)
    if isinstance(node, (Act, Test, Seq, Choice, Pick, Star, If, While)):
        return _pfmt(node, 0, theory)
    return _fmt(node, 0, theory)


def _sort_value_text(v):
    return format_value(v)


def format_theory(th: TheoryFile) -> str:
    """Canonical text of a theory: sorted declarations, single spaces."""
    lines = ["sorts {"]
    for name in sorted(th.sorts):
        s = th.sorts[name]
        if s.range_form:
            lines.append(f"  {name} = {s.values[0]}..{s.values[-1]};")
        else:
            lines.append(f"  {name} = {{{', '.join(_sort_value_text(v) for v in s.values)}}};")
    lines.append("}")
    lines.append("fluents {")
    for name in sorted(th.fluents):
        d = th.fluents[name]
        args = f"({', '.join(d.arg_sorts)})"
        lines.append(f"  {name}{args}{' functional' if d.functional else ''};")
    lines.append("}")
    lines.append("actions {")
    for name in sorted(th.actions):
        d = th.actions[name]
        args = ", ".join(("outcome " if o else "") + s for s, o in zip(d.arg_sorts, d.outcome))
        lines.append(f"  {name}({args});")
    lines.append("}")
    a, body = th.poss
    lines.append(f"poss({a}) := {pretty(body)};")
    for name in sorted(th.ssa):
        s = th.ssa[name]
        params = f"({', '.join(s.params)})"
        lines.append(f"ssa [{s.action_var}] {name}{params} := {pretty(s.body)};")
    a, cases = th.likelihood
    lines.append(f"likelihood({a}) {{")
    for c in cases:
        head = f"case {c.functor}({', '.join(c.params)})"
        if c.extra:
            head += " for " + ", ".join(f"{n}:{s}" for n, s in c.extra)
        if c.cond != TRUE:
            head += f" where {pretty(c.cond)}"
        lines.append(f"  {head} => {format_term(c.value)};")
    lines.append("}")
    a, b, body = th.oi
    lines.append(f"oi({a}, {b}) := {pretty(body)};")
    lines.append("init {")
    for f in th.init_constraints:
        lines.append(f"  {pretty(f)};")
    for w, atoms in th.init_worlds or ():
        lines.append(f"  world {format_value(normalize_number(w))} {{{', '.join(pretty(x) for x in atoms)}}};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def format_mapping(mf: MappingFile, low: Optional[TheoryFile] = None) -> str:
    lines = ["mapping {"]
    for name in sorted(mf.fluents):
        params, body = mf.fluents[name]
        ps = f"({', '.join(params)})" if params else ""
        lines.append(f"  fluent {name}{ps} := {pretty(body, low)};")
    for name in sorted(mf.actions):
        params, prog = mf.actions[name]
        ps = f"({', '.join(params)})" if params else ""
        lines.append(f"  action {name}{ps} := {{ {pretty(prog, low)} }};")
    lines.append("}")
    return "\n".join(lines) + "\n"
