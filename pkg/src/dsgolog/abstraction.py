"""Refinement mappings and bounded bisimulation between two action theories.

A refinement mapping translates each high-level fluent into a static
low-level formula and each high-level action into a low-level program.
:func:`build_bisim` constructs the relation that pairs a high-level state
``(w_h, a1...an)`` with every positive-likelihood low-level trace of
``m(a1); ...; m(an)`` (up to ``horizon`` high-level actions) and checks the
seven bisimulation conditions plus definiteness on it.

The low-level side is explored one observation class at a time rather than
trace by trace.  All traces of one class share the agent's belief, so a
class node carries the filtered weights of the compatible states plus the
program configurations reached by the concrete traces, grouped by world and
valuation.  When every test in the mapped programs only asks whether a
formula has degree 0 or 1, the future of a node depends on the *support* of
those weights rather than on their exact values; nodes that agree on
support, coverage and configurations are then checked once and the verdict
reused.  Reuse is only recorded for subtrees whose checks did not depend on
exact weights, so the result is the same as a full enumeration.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .belief import (
    Distribution, EpistemicState, EvalConfig, Evaluator, oi_trace_alternatives, worlds_oi_agree,
    zero_one_beliefs,
)
from .interpreter import Sample, _Runner, _items_key, _start, reachable, sample_trace, traces
from .lang import (
    Act, After, And, Atom, Belief, Box, Choice, Cmp, Equal, Forall, If, Not, Pick, Rigid,
    NIL, Seq, Star, Test, Top, Var, While, _term_vars, free_vars, normalize_number, seq_all,
    term_of, walk,
)
from .model import GroundBAT, State, World, format_trace
from .parser import MappingFile, TheoryFile, parse_mapping

__all__ = [
    "UnmappedSymbol", "AbstractionError", "RefinementMapping", "map_formula", "map_program",
    "map_trace", "objective_iso", "epistemic_iso", "IsoResult", "Violation", "RelationGroup",
    "BisimRelation", "build_bisim", "Model", "ModelVerdict", "AbstractionVerdict",
    "check_sound", "check_complete", "TheoremReport", "theorem_harness",
    "random_static_formula", "random_high_program",
]


class UnmappedSymbol(KeyError):
    """A high-level symbol has no entry in the refinement mapping."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unmapped symbol"


class AbstractionError(ValueError):
    pass


# ------------------------------------------------------------------ mapping

@dataclass(frozen=True)
class RefinementMapping:
    """Fluent templates ``name -> (params, formula)`` and action templates ``name -> (params, program)``."""
    fluents: dict
    actions: dict

    @classmethod
    def from_file(cls, mf: MappingFile, high: Optional[TheoryFile] = None) -> "RefinementMapping":
        m = cls(dict(mf.fluents), dict(mf.actions))
        if high is not None:
            m.check_complete(high)
        return m

    @classmethod
    def parse(cls, text: str, high: TheoryFile, low: TheoryFile) -> "RefinementMapping":
        return cls.from_file(parse_mapping(text, high, low), high)

    @classmethod
    def identity(cls, theory: TheoryFile) -> "RefinementMapping":
        fl = {}
        for name, decl in theory.fluents.items():
            ps = tuple(f"_p{i}" for i in range(len(decl.arg_sorts)))
            fl[name] = (ps, Atom(name, tuple(Var(p) for p in ps)))
        ac = {}
        for name, decl in theory.actions.items():
            ps = tuple(f"_p{i}" for i in range(decl.arity))
            ac[name] = (ps, Act(Rigid(name, tuple(Var(p) for p in ps)) if ps else Rigid(name)))
        return cls(fl, ac)

    def check_complete(self, high: TheoryFile) -> None:
        for name in high.fluents:
            if name not in self.fluents:
                raise UnmappedSymbol(f"high-level fluent {name} has no mapping")
        for name in high.actions:
            if name not in self.actions:
                raise UnmappedSymbol(f"high-level action {name} has no mapping")

    def fluent(self, name: str, args: tuple):
        try:
            params, body = self.fluents[name]
        except KeyError:
            raise UnmappedSymbol(f"fluent {name} has no mapping") from None
        return _instantiate(body, dict(zip(params, args)))

    def action(self, name: str, args: tuple):
        try:
            params, body = self.actions[name]
        except KeyError:
            raise UnmappedSymbol(f"action {name} has no mapping") from None
        return _instantiate(body, dict(zip(params, args)))

    def action_value(self, a):
        """The low-level program for a ground high-level action value."""
        name, args = (a[0], a[1:]) if isinstance(a, tuple) else (a, ())
        return self.action(name, tuple(term_of(x) for x in args))


def _fresh(name: str, avoid: set) -> str:
    for i in itertools.count(1):
        cand = f"{name}{i}"
        if cand not in avoid:
            return cand


def _inst_term(t, sub):
    if isinstance(t, Var):
        return sub.get(t.name, t)
    if isinstance(t, Rigid) and t.args:
        return Rigid(t.functor, tuple(_inst_term(a, sub) for a in t.args))
    return t


def _instantiate(node, sub: dict):
    """Replace free variables by (possibly open) terms, renaming binders that would capture."""
    if not sub:
        return node
    incoming: set = set()
    for t in sub.values():
        _term_vars(t, incoming)
    return _inst(node, dict(sub), incoming)


def _binder(var, body, sub, incoming, rebuild):
    inner = {k: v for k, v in sub.items() if k != var}
    if var in incoming and inner:
        new = _fresh(var, incoming | set(free_vars(body)) | set(inner))
        inner[var] = Var(new)
        return rebuild(new, _inst(body, inner, incoming | {new}))
    return rebuild(var, _inst(body, inner, incoming) if inner else body)


def _inst(node, sub, incoming):
    it = lambda n: _inst(n, sub, incoming)  # noqa: E731
    tm = lambda t: _inst_term(t, sub)  # noqa: E731
    match node:
        case Atom(pred, args):
            return Atom(pred, tuple(tm(a) for a in args))
        case Equal(l, r):
            return Equal(tm(l), tm(r))
        case Cmp(op, l, r):
            return Cmp(op, tm(l), tm(r))
        case Top():
            return node
        case And(l, r):
            return And(it(l), it(r))
        case Not(b):
            return Not(it(b))
        case Forall(x, s, b):
            return _binder(x, b, sub, incoming, lambda v, bb: Forall(v, s, bb))
        case Box(b):
            return Box(it(b))
        case After(p, b):
            return After(it(p), it(b))
        case Belief(b, r):
            return Belief(it(b), r)
        case Act(t):
            return Act(tm(t))
        case Test(c):
            return Test(it(c))
        case Seq(a, b):
            return Seq(it(a), it(b))
        case Choice(a, b):
            return Choice(it(a), it(b))
        case Pick(x, s, b):
            return _binder(x, b, sub, incoming, lambda v, bb: Pick(v, s, bb))
        case Star(b):
            return Star(it(b))
        case If(branches, orelse):
            return If(tuple((it(c), it(p)) for c, p in branches), None if orelse is None else it(orelse))
        case While(c, b):
            return While(it(c), it(b))
    raise TypeError(f"cannot instantiate {node!r}")


def map_formula(m: RefinementMapping, f):
    """Translate a high-level formula by replacing each fluent atom with its template."""
    match f:
        case Atom("Poss", _):
            raise UnmappedSymbol("Poss has no refinement")
        case Atom(pred, args):
            return m.fluent(pred, args)
        case Equal() | Cmp() | Top():
            return f
        case And(l, r):
            return And(map_formula(m, l), map_formula(m, r))
        case Not(b):
            return Not(map_formula(m, b))
        case Forall(x, s, b):
            return Forall(x, s, map_formula(m, b))
        case Box(b):
            return Box(map_formula(m, b))
        case After(p, b):
            return After(map_program(m, p), map_formula(m, b))
        case Belief(b, r):
            return Belief(map_formula(m, b), r)
    raise TypeError(f"not a formula: {f!r}")


def map_program(m: RefinementMapping, p):
    """Translate a high-level program by replacing each action with its template."""
    match p:
        case Act(Rigid(name, args)):
            return m.action(name, args)
        case Act(t):
            raise UnmappedSymbol(f"cannot map action term {t}")
        case Test(c):
            return Test(map_formula(m, c))
        case Seq(a, b):
            return Seq(map_program(m, a), map_program(m, b))
        case Choice(a, b):
            return Choice(map_program(m, a), map_program(m, b))
        case Pick(x, s, b):
            return Pick(x, s, map_program(m, b))
        case Star(b):
            return Star(map_program(m, b))
        case If(branches, orelse):
            return If(tuple((map_formula(m, c), map_program(m, q)) for c, q in branches),
                      None if orelse is None else map_program(m, orelse))
        case While(c, b):
            return While(map_formula(m, c), map_program(m, b))
    raise TypeError(f"not a program: {p!r}")


def map_trace(m: RefinementMapping, z) -> tuple:
    """The low-level programs ``(m(a1), m(a2), ...)`` for a high-level trace."""
    return tuple(m.action_value(a) for a in z)


def _atom_node(ga) -> Atom:
    if isinstance(ga, tuple):
        return Atom(ga[0], tuple(term_of(x) for x in ga[1:]))
    return Atom(ga)


def _share_sorts(bat_h: GroundBAT, bat_l: GroundBAT) -> None:
    for name, decl in bat_h.theory.sorts.items():
        if name not in bat_l.theory.sorts:
            bat_l.extra_sorts[name] = decl.values


# ------------------------------------------------------------- isomorphisms

def _disagree(ga, high: bool) -> str:
    side = "true" if high else "false"
    other = "false" if high else "true"
    return f"{_fmt_atom(ga)} is {side} at the high level but its translation is {other} at the low level"


class _AtomTable:
    """High-level ground atoms with their mapped low-level formulas."""

    def __init__(self, m: RefinementMapping, bat_h: GroundBAT):
        self.rows = [(ga, map_formula(m, _atom_node(ga))) for ga in bat_h.atoms]
        self.objective = all(
            not any(isinstance(n, (Belief, Box, After)) for n in walk(f)) for _, f in self.rows)

    def mismatch(self, bat_h: GroundBAT, s_h: State, ev_l: Evaluator, w_l: World, z_l) -> Optional[str]:
        val_h = bat_h.valuation(s_h.world, s_h.trace)
        if self.objective:
            val_l = ev_l.bat.valuation(w_l, z_l)
            for ga, f in self.rows:
                if (ga in val_h) != ev_l.holds_at(val_l, f, {}):
                    return _disagree(ga, ga in val_h)
            return None
        for ga, f in self.rows:
            if (ga in val_h) != ev_l.holds(w_l, z_l, f):
                return _disagree(ga, ga in val_h)
        return None


def _fmt_atom(ga) -> str:
    from .lang import format_value
    if isinstance(ga, tuple):
        return f"{ga[0]}(" + ", ".join(format_value(x) for x in ga[1:]) + ")"
    return str(ga)


def objective_iso(m: RefinementMapping, bat_h: GroundBAT, bat_l: GroundBAT, s_h: State, s_l: State,
                  e_l=None) -> bool:
    """Every high-level ground atom holds at ``s_h`` iff its translation holds at ``s_l``."""
    _share_sorts(bat_h, bat_l)
    e_l = e_l if e_l is not None else EpistemicState.of(Distribution.point(s_l.world))
    ev_l = Evaluator(bat_l, e_l)
    return _AtomTable(m, bat_h).mismatch(bat_h, s_h, ev_l, s_l.world, tuple(s_l.trace)) is None


@dataclass
class IsoResult:
    ok: bool
    high_norm: object
    cells: list                # [(representative, norm), ...]
    detail: str = ""
    representative_independent: bool = True

    def __bool__(self) -> bool:
        return self.ok


def _low_oi(bat: GroundBAT, s: State, t: State) -> bool:
    if len(s.trace) != len(t.trace) or not worlds_oi_agree(bat, s.world, t.world, s.trace):
        return False
    return tuple(t.trace) in oi_trace_alternatives(bat, t.world, s.trace, ref_world=s.world, keep_zero=True)


def epistemic_iso(bat_h: GroundBAT, bat_l: GroundBAT, d_h: Distribution, s_h: State,
                  d_l: Distribution, S_l) -> IsoResult:
    """Each oi-cell of ``S_l`` has the same normalised weight as ``{s_h}`` among its compatible states.

    The cell norm is computed once per member used as representative; a
    disagreement between representatives is reported as a failure with an
    explanatory ``detail``.
    """
    ev_h = Evaluator(bat_h, EpistemicState.of(d_h))
    ev_l = Evaluator(bat_l, EpistemicState.of(d_l))
    hs = ev_h.compatible(d_h, s_h.world, s_h.trace)
    total_h = hs.weight(d_h)
    if total_h == 0:
        return IsoResult(False, None, [], "high-level norm undefined")
    own = d_h(s_h.world) * bat_h.seq_likelihood(s_h.world, s_h.trace)
    high = normalize_number(Fraction(own) / total_h)
    cells: list = []
    for s in S_l:
        for c in cells:
            if _low_oi(bat_l, c[0], s):
                c.append(s)
                break
        else:
            cells.append([s])
    out = []
    ok, independent, detail = True, True, ""
    for cell in cells:
        norms = set()
        cell_w = sum((d_l(s.world) * bat_l.seq_likelihood(s.world, s.trace) for s in cell), Fraction(0))
        for rep in cell:
            ref = ev_l.compatible(d_l, rep.world, rep.trace).weight(d_l)
            norms.add(None if ref == 0 else normalize_number(Fraction(cell_w) / ref))
        if len(norms) > 1:
            independent = False
            ok = False
            detail = detail or f"cell of {cell[0]} has representative-dependent norms"
        n = next(iter(norms))
        out.append((cell[0], n))
        if n is None:
            ok = False
            detail = detail or f"norm of the cell of {cell[0]} is undefined"
        elif n != high:
            ok = False
            detail = detail or f"cell of {cell[0]} has norm {n}, high-level norm is {high}"
    return IsoResult(ok, high, out, detail, independent)


# ------------------------------------------------------------ bisimulation

CONDITIONS = {
    "1": "objective isomorphism",
    "2": "epistemic isomorphism",
    "3": "executability",
    "4": "high-level action without low-level counterpart",
    "5": "low-level execution without enabled high-level action",
    "6": "high-level companion state unmatched",
    "7": "low-level companion state unmatched",
    "definite": "low-level state related to two high-level states",
}


@dataclass(frozen=True)
class Violation:
    condition: str
    high: State
    low: State
    detail: str = ""

    def describe(self) -> str:
        return (f"condition {self.condition} ({CONDITIONS[self.condition]}) fails for high {self.high} "
                f"and low {self.low}" + (f": {self.detail}" if self.detail else ""))


@dataclass(frozen=True)
class RelationGroup:
    """Low-level traces of one observation class and world/valuation related to ``high``.

    ``low`` is one representative trace and ``weight`` the summed
    prior-times-likelihood mass of the group.
    """
    high: State
    low: State
    weight: object
    class_key: tuple


@dataclass
class BisimRelation:
    groups: list
    definite: bool
    horizon: int
    star_bound: int
    verdict: str                        # "certified-to-bound" or "counterexample"
    counterexample: Optional[Violation]
    truncated: bool
    stats: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    _explorer: object = field(default=None, repr=False, compare=False)

    @property
    def certified(self) -> bool:
        return self.verdict == "certified-to-bound"

    def pairs(self):
        for g in self.groups:
            yield g.high, g.low

    def high_states(self) -> list:
        seen = []
        for g in self.groups:
            if g.high not in seen:
                seen.append(g.high)
        return seen

    def related(self, w_l: World, z_l) -> frozenset:
        """High-level states related to the low-level state ``(w_l, z_l)``.

        Decided by replaying ``z_l`` through the mapped programs, so it also
        answers for members of reused subtrees.
        """
        return self._explorer.related(w_l, tuple(z_l))

    def representative(self, high: State) -> Optional[State]:
        for g in self.groups:
            if g.high == high:
                return g.low
        return None


class _Found(Exception):
    def __init__(self, violation: Violation):
        super().__init__(violation.describe())
        self.violation = violation


class _Explorer:
    def __init__(self, m, bat_h, bat_l, e_h, w_h, e_l, w_l, horizon, star_bound, record=True):
        if len(e_h.distributions) != 1 or len(e_l.distributions) != 1:
            raise AbstractionError("bisimulation construction needs singleton epistemic states")
        if not bat_l.oi_fluent_free:
            raise AbstractionError("the low-level oi axiom must not mention fluents")
        if horizon < 0:
            raise AbstractionError("horizon must be non-negative")
        _share_sorts(bat_h, bat_l)
        self.m, self.bat_h, self.bat_l = m, bat_h, bat_l
        self.d_h, self.d_l = e_h.distributions[0], e_l.distributions[0]
        self.w_h, self.w_l = w_h, w_l
        self.horizon, self.bound = horizon, star_bound
        self.record = record
        self.ev_h = Evaluator(bat_h, e_h)
        self.ev_l = Evaluator(bat_l, e_l)
        self.atoms = _AtomTable(m, bat_h)
        self.runners: dict = {}
        self.items: dict = {}
        self.starts: dict = {}
        progs = []
        for a in bat_h.ground_actions:
            prog = m.action_value(a)
            progs.append(prog)
            items = _start(prog)
            self.starts[a] = self._reg(items)
        self.support_ok = zero_one_beliefs(*progs, *(f for _, f in self.atoms.rows))
        self.memo: dict = {}
        self.groups: list = []
        self.stats = {"class_nodes": 0, "reused_nodes": 0, "member_groups": 0}
        self._iso_cache: dict = {}
        self._norm_cache: dict = {}
        self._companions: dict = {}
        self.low_worlds = list(self.d_l.support())
        if w_l not in self.low_worlds:
            self.low_worlds.append(w_l)
        self.high_worlds = list(self.d_h.support())
        if w_h not in self.high_worlds:
            self.high_worlds.append(w_h)

    # -- helpers

    def _reg(self, items) -> tuple:
        k = _items_key(items)
        self.items.setdefault(k, items)
        return k

    def runner(self, w: World) -> _Runner:
        r = self.runners.get(w)
        if r is None:
            r = self.runners[w] = _Runner(self.bat_l, self.ev_l.e, w, star_bound=self.bound,
                                          evaluator=self.ev_l, positive_only=True)
        return r

    @property
    def truncated(self) -> bool:
        return any(r.truncated for r in self.runners.values())

    def initial_tags(self, w: World) -> frozenset:
        if w == self.w_l or set(self.d_h.support()) <= {self.w_h}:
            return frozenset({State(self.w_h, ())})
        found = [wh for wh in self.high_worlds
                 if self.atoms.mismatch(self.bat_h, State(wh, ()), self.ev_l, w, ()) is None]
        return frozenset(State(wh, ()) for wh in found)

    def closure(self, conf, w: World, z: tuple, out: set) -> None:
        if conf in out:
            return
        out.add(conf)
        if conf[0] == "i":
            hs = conf[1]
            if len(hs.trace) < self.horizon:
                for a in self.bat_h.ground_actions:
                    self.closure(("r", hs, a, self.starts[a]), w, z, out)
            return
        _, hs, a, ik = conf
        if self.runner(w).final(self.items[ik], z):
            if not self.bat_h.poss(hs.world, hs.trace, a):
                raise _Found(Violation("5", hs, State(w, z),
                                       f"m({_fmt_action(a)}) completes but {_fmt_action(a)} is not possible"))
            self.closure(("i", State(hs.world, hs.trace + (a,))), w, z, out)

    def high_norm(self, hs: State):
        hit = self._norm_cache.get(hs, False)
        if hit is not False:
            return hit
        comp = self.ev_h.compatible(self.d_h, hs.world, hs.trace)
        total = comp.weight(self.d_h)
        own = self.d_h(hs.world) * self.bat_h.seq_likelihood(hs.world, hs.trace)
        res = None if total == 0 else normalize_number(Fraction(own) / total)
        self._norm_cache[hs] = res
        return res

    def companions(self, hs: State) -> frozenset:
        hit = self._companions.get(hs)
        if hit is None:
            comp = self.ev_h.compatible(self.d_h, hs.world, hs.trace)
            hit = frozenset(s for s, q in comp.members if self.d_h(s.world) * q > 0) | {hs}
            self._companions[hs] = hit
        return hit

    def iso(self, hs: State, w: World, v, z) -> Optional[str]:
        if self.atoms.objective:
            k = (hs, w, v)
            if k not in self._iso_cache:
                self._iso_cache[k] = self.atoms.mismatch(self.bat_h, hs, self.ev_l, w, z)
            return self._iso_cache[k]
        return self.atoms.mismatch(self.bat_h, hs, self.ev_l, w, z)

    # -- exploration

    def run(self) -> None:
        members: dict = {}
        for w in self.low_worlds:
            S: set = set()
            for hs in self.initial_tags(w):
                self.closure(("i", hs), w, (), S)
            key = ((w, w.atoms), frozenset(S))
            q = self.d_l(w)
            if key in members:
                members[key][0] += q
            else:
                members[key] = [q, ()]
        self.explore((), members)

    def explore(self, ck: tuple, members: dict):
        filt = self.ev_l.filter_state(self.d_l, ck)
        total = sum(filt.values(), Fraction(0))
        per: dict = {}
        for (wv, _), (q, _) in members.items():
            per[wv] = per.get(wv, 0) + q
        sat = frozenset((wv, per.get(wv, 0) == q) for wv, q in filt.items() if q > 0)
        if self.support_ok:
            post = frozenset(wv for wv, q in filt.items() if q > 0)
        else:
            post = frozenset((wv, q / total) for wv, q in filt.items() if q > 0) if total else frozenset()
        key = (post, sat, frozenset(members))
        hit = self.memo.get(key)
        if hit is not None:
            self.stats["reused_nodes"] += 1
            return hit
        self.stats["class_nodes"] += 1
        cacheable = True

        tagged: dict = {}
        for (wv, S), (q, rep) in members.items():
            w, v = wv
            idle = [c[1] for c in S if c[0] == "i"]
            for hs in idle:
                tagged.setdefault(hs, []).append((wv, q, rep))
                low = State(w, rep)
                if self.record:
                    self.groups.append(RelationGroup(hs, low, normalize_number(q), ck))
                self.stats["member_groups"] += 1
                bad = self.iso(hs, w, v, rep)
                if bad:
                    raise _Found(Violation("1", hs, low, bad))
        for hs, rows in tagged.items():
            low = State(rows[0][0][0], rows[0][2])
            hn = self.high_norm(hs)
            num = sum((q for _, q, _ in rows), Fraction(0))
            if total == 0 or hn is None:
                if num > 0 or hn is not None:
                    raise _Found(Violation("2", hs, low, "normalised weight undefined on one side"))
                continue
            ratio = normalize_number(num / total)
            if ratio != hn:
                raise _Found(Violation("2", hs, low, f"cell norm {ratio}, high-level norm {hn}"))
            if ratio != 1:
                cacheable = False
        for hs, rows in tagged.items():
            if not self.bat_h.exec(hs.world, hs.trace):
                raise _Found(Violation("3", hs, State(rows[0][0][0], rows[0][2]), "high-level trace not executable"))
        for hs, rows in tagged.items():
            for other in self.companions(hs):
                if other not in tagged:
                    raise _Found(Violation("6", other, State(rows[0][0][0], rows[0][2]),
                                           f"companion of {hs} has no related low-level state in this class"))
        for hs, rows in tagged.items():
            comp = self.companions(hs)
            covered: dict = {}
            for (wv, S), (q, rep) in members.items():
                if any(c[0] == "i" and c[1] in comp for c in S):
                    covered[wv] = covered.get(wv, 0) + q
            for wv, q in filt.items():
                if q > 0 and covered.get(wv, 0) != q:
                    raise _Found(Violation("7", hs, State(rows[0][0][0], rows[0][2]),
                                           f"compatible state in world {wv[0]} with valuation "
                                           f"{_fmt_val(wv[1])} is not related"))
        for (wv, S), (q, rep) in members.items():
            idle = sorted({c[1] for c in S if c[0] == "i"}, key=str)
            if len(idle) > 1:
                raise _Found(Violation("definite", idle[0], State(wv[0], rep),
                                       f"also related to {idle[1]}"))

        # successors, one child node per observation class
        children: dict = {}
        links: list = []
        finals: set = set()
        for (wv, S), (q, rep) in members.items():
            w, v = wv
            r = self.runner(w)
            per_b: dict = {}
            for conf in S:
                if conf[0] != "r":
                    continue
                items = self.items[conf[3]]
                if r.final(items, rep):
                    finals.add((wv, conf))
                for b, res in r.trans(items, rep):
                    c2 = ("r", conf[1], conf[2], self._reg(res))
                    per_b.setdefault(b, {}).setdefault(c2, set()).add(conf)
            for b, confs in per_b.items():
                z2 = rep + (b,)
                v2 = self.bat_l.progress(v, b)
                S2: set = set()
                for c2 in confs:
                    self.closure(c2, w, z2, S2)
                cb = self.ev_l.class_key((b,))[0]
                q2 = q * self.bat_l.likelihood_at(v, b)
                kid = children.setdefault(cb, {})
                mk = ((w, v2), frozenset(S2))
                if mk in kid:
                    kid[mk][0] += q2
                else:
                    kid[mk] = [q2, z2]
                for c2, origins in confs.items():
                    for o in origins:
                        links.append((wv, o, cb, (w, v2), c2))
        child_live: dict = {}
        for cb in sorted(children, key=repr):
            live, ok = self.explore(ck + (cb,), children[cb])
            child_live[cb] = live
            cacheable = cacheable and ok
        live = set(finals)
        for wv, o, cb, wv2, c2 in links:
            if (wv2, c2) in child_live[cb]:
                live.add((wv, o))

        for (wv, S), (q, rep) in members.items():
            for c in S:
                if c[0] != "i" or len(c[1].trace) >= self.horizon:
                    continue
                hs = c[1]
                for a in self.bat_h.ground_actions:
                    if not self.bat_h.poss(hs.world, hs.trace, a):
                        continue
                    if (wv, ("r", hs, a, self.starts[a])) not in live:
                        note = " within the star bound" if self.truncated else ""
                        raise _Found(Violation("4", hs, State(wv[0], rep),
                                               f"{_fmt_action(a)} is possible but m({_fmt_action(a)}) "
                                               f"has no positive-likelihood execution{note}"))
        result = (frozenset(live), cacheable)
        if cacheable:
            self.memo[key] = result
        return result

    # -- replay of a single low-level trace

    def related(self, w: World, z: tuple) -> frozenset:
        S: set = set()
        for hs in self.initial_tags(w):
            self.closure(("i", hs), w, (), S)
        r = self.runner(w)
        for i, b in enumerate(z):
            prefix = z[:i]
            val = self.bat_l.valuation(w, prefix)
            if not self.bat_l.poss_at(val, b) or self.bat_l.likelihood_at(val, b) == 0:
                return frozenset()
            S2: set = set()
            for conf in S:
                if conf[0] != "r":
                    continue
                for b2, res in r.trans(self.items[conf[3]], prefix):
                    if b2 == b:
                        self.closure(("r", conf[1], conf[2], self._reg(res)), w, prefix + (b,), S2)
            S = S2
            if not S:
                return frozenset()
        return frozenset(c[1] for c in S if c[0] == "i")


def _fmt_action(a) -> str:
    return format_trace((a,))[1:-1]


def _fmt_val(v) -> str:
    from .lang import format_value
    return "{" + ", ".join(sorted(format_value(x) for x in v)) + "}"


def build_bisim(m: RefinementMapping, bat_h: GroundBAT, bat_l: GroundBAT, e_h, w_h: World, e_l,
                w_l: World, horizon: int, star_bound: int, *, record: bool = True) -> BisimRelation:
    """Construct and check the relation induced by ``m`` up to ``horizon`` high-level actions.

    Low-level traces are those of positive likelihood; companion states of
    weight zero are ignored by conditions 6 and 7.  The verdict is
    ``certified-to-bound`` only for the given horizon and star bound.
    """
    e_h = e_h if isinstance(e_h, EpistemicState) else EpistemicState.of(e_h)
    e_l = e_l if isinstance(e_l, EpistemicState) else EpistemicState.of(e_l)
    ex = _Explorer(m, bat_h, bat_l, e_h, w_h, e_l, w_l, horizon, star_bound, record)
    violation = None
    try:
        ex.run()
    except _Found as f:
        violation = f.violation
    warnings = []
    if ex.truncated:
        warnings.append(f"some executions of mapped programs were cut at star bound {star_bound}")
    definite = violation is None or violation.condition != "definite"
    return BisimRelation(
        groups=ex.groups, definite=definite, horizon=horizon, star_bound=star_bound,
        verdict="certified-to-bound" if violation is None else "counterexample",
        counterexample=violation, truncated=ex.truncated, stats=dict(ex.stats),
        warnings=warnings, _explorer=ex)


# ------------------------------------------------------- sound / complete

@dataclass(frozen=True)
class Model:
    e: EpistemicState
    w: World
    name: str = "model"

    @classmethod
    def point(cls, w: World, name: Optional[str] = None) -> "Model":
        return cls(EpistemicState.of(Distribution.point(w)), w, name or w.name)

    @classmethod
    def enumerate(cls, bat: GroundBAT) -> list:
        """One model per initial world, each with the theory's initial distribution."""
        e = EpistemicState.from_bat(bat)
        return [cls(e, w, w.name) for w, _ in bat.initial_worlds()]


@dataclass
class ModelVerdict:
    model: Model
    partner: Optional[Model]
    relation: Optional[BisimRelation]
    attempts: list = field(default_factory=list)

    @property
    def matched(self) -> bool:
        return self.partner is not None


@dataclass
class AbstractionVerdict:
    holds: bool
    verdicts: list
    horizon: int
    star_bound: int


def _as_bat(t) -> GroundBAT:
    return t if isinstance(t, GroundBAT) else GroundBAT(t)


def _high_candidates(bat_h: GroundBAT) -> list:
    out = [Model.point(w) for w, _ in bat_h.initial_worlds()]
    full = Model.enumerate(bat_h)
    if len(bat_h.initial_worlds()) > 1:
        out.extend(full)
    return out


def check_sound(m, theory_h, theory_l, models_l: list, horizon: int, star_bound: int) -> AbstractionVerdict:
    """Every low-level model must be bisimilar to some high-level model."""
    bat_h, bat_l = _as_bat(theory_h), _as_bat(theory_l)
    verdicts = []
    for ml in models_l:
        v = ModelVerdict(ml, None, None)
        for mh in _high_candidates(bat_h):
            rel = build_bisim(m, bat_h, bat_l, mh.e, mh.w, ml.e, ml.w, horizon, star_bound, record=False)
            v.attempts.append((mh, rel.verdict, rel.counterexample))
            if rel.certified:
                v.partner, v.relation = mh, rel
                break
            v.relation = v.relation or rel
        verdicts.append(v)
    return AbstractionVerdict(all(v.matched for v in verdicts), verdicts, horizon, star_bound)


def check_complete(m, theory_h, theory_l, models_h: list, horizon: int, star_bound: int,
                   models_l: Optional[list] = None) -> AbstractionVerdict:
    """Every high-level model must be bisimilar to some low-level model."""
    bat_h, bat_l = _as_bat(theory_h), _as_bat(theory_l)
    candidates = models_l if models_l is not None else (
        [Model.point(w) for w, _ in bat_l.initial_worlds()] + Model.enumerate(bat_l))
    verdicts = []
    for mh in models_h:
        v = ModelVerdict(mh, None, None)
        for ml in candidates:
            rel = build_bisim(m, bat_h, bat_l, mh.e, mh.w, ml.e, ml.w, horizon, star_bound, record=False)
            v.attempts.append((ml, rel.verdict, rel.counterexample))
            if rel.certified:
                v.partner, v.relation = ml, rel
                break
            v.relation = v.relation or rel
        verdicts.append(v)
    return AbstractionVerdict(all(v.matched for v in verdicts), verdicts, horizon, star_bound)


# ------------------------------------------------- equivalence harness

def random_static_formula(rng: random.Random, theory: TheoryFile, depth: int, *, bound_vars=(),
                          degrees=(0, Fraction(1, 2), 1)):
    """A random static formula over the fluents of ``theory`` with nesting at most ``depth``."""
    def atom():
        names = sorted(theory.fluents)
        choice = rng.random()
        if choice < 0.15:
            sorts = [s for s in sorted(theory.sorts) if theory.sorts[s].values]
            s = rng.choice(sorts)
            vals = theory.sorts[s].values
            return Equal(term_of(rng.choice(vals)), term_of(rng.choice(vals)))
        f = rng.choice(names)
        args = []
        for s in theory.fluents[f].arg_sorts:
            usable = [x for x, xs in bound_vars if xs == s]
            if usable and rng.random() < 0.6:
                args.append(Var(rng.choice(usable)))
            else:
                args.append(term_of(rng.choice(theory.carrier(s))))
        return Atom(f, tuple(args))

    if depth <= 0:
        return atom()
    k = rng.random()
    if k < 0.2:
        return atom()
    if k < 0.4:
        return Not(random_static_formula(rng, theory, depth - 1, bound_vars=bound_vars, degrees=degrees))
    if k < 0.6:
        return And(random_static_formula(rng, theory, depth - 1, bound_vars=bound_vars, degrees=degrees),
                   random_static_formula(rng, theory, depth - 1, bound_vars=bound_vars, degrees=degrees))
    if k < 0.75:
        sorts = sorted({s for d in theory.fluents.values() for s in d.arg_sorts})
        s = rng.choice(sorts)
        x = f"v{len(bound_vars)}"
        return Forall(x, s, random_static_formula(rng, theory, depth - 1, bound_vars=bound_vars + ((x, s),),
                                                  degrees=degrees))
    body = random_static_formula(rng, theory, depth - 1, bound_vars=bound_vars, degrees=degrees)
    return Belief(body, Fraction(rng.choice(degrees)))


def random_high_program(rng: random.Random, bat_h: GroundBAT, size: int = 3, *, allow_star: bool = True):
    """A small random program over the high-level ground actions."""
    acts = list(bat_h.ground_actions)

    def gen(n):
        if n <= 1:
            a = rng.choice(acts)
            return Act(term_of(a))
        k = rng.random()
        if k < 0.4:
            return Seq(gen(n - 1), gen(1))
        if k < 0.65:
            return Choice(gen(n - 1), gen(1))
        if k < 0.85:
            cond = random_static_formula(rng, bat_h.theory, 1, degrees=(0, 1))
            return If(((cond, gen(n - 1)),), gen(1))
        if allow_star:
            return Star(gen(n - 1))
        return Seq(gen(n - 1), gen(1))
    return gen(size)


@dataclass
class TheoremReport:
    static_checked: int = 0
    static_true: int = 0
    static_failures: list = field(default_factory=list)
    bounded_checked: int = 0
    bounded_true: int = 0
    bounded_failures: list = field(default_factory=list)
    trace_checked: int = 0
    trace_failures: list = field(default_factory=list)
    seed: int = 0

    @property
    def ok(self) -> bool:
        return not (self.static_failures or self.bounded_failures or self.trace_failures)


def theorem_harness(m: RefinementMapping, rel: BisimRelation, *, formula_depth: int = 3,
                    n_static: int = 500, n_bounded: int = 200, n_traces: int = 100,
                    program_star_bound: int = 4, seed: int = 0) -> TheoremReport:
    """Check the equivalence consequences of a certified relation on random inputs.

    * static formulas: truth at a related pair agrees with truth of the
      translation;
    * formulas ``[delta] beta``: same, with programs ranging over
      positive-likelihood executions on both levels;
    * sampled high-level executions of random programs have related
      low-level executions of the translated program and vice versa.
    """
    if not rel.certified:
        raise AbstractionError("theorem checks need a certified relation")
    ex: _Explorer = rel._explorer
    rng = random.Random(seed)
    rep = TheoremReport(seed=seed)
    bat_h, bat_l = ex.bat_h, ex.bat_l
    cfg = EvalConfig(star_bound=program_star_bound, positive_traces=True)
    ev_h = Evaluator(bat_h, ex.ev_h.e, cfg)
    ev_l = Evaluator(bat_l, ex.ev_l.e, cfg)
    pairs = []
    seen = set()
    for g in rel.groups:
        if g.high not in seen:
            seen.add(g.high)
            pairs.append((g.high, g.low))
    for g in rel.groups:
        if len(pairs) >= 64:
            break
        if (g.high, g.low) not in pairs:
            pairs.append((g.high, g.low))

    for i in range(n_static):
        f = random_static_formula(rng, bat_h.theory, formula_depth)
        hs, ls = pairs[i % len(pairs)]
        lf = map_formula(m, f)
        a = ev_h.holds(hs.world, hs.trace, f)
        b = ev_l.holds(ls.world, ls.trace, lf)
        rep.static_checked += 1
        rep.static_true += bool(a)
        if a != b:
            rep.static_failures.append((f, hs, ls, a, b))

    shallow = [(h, l) for h, l in pairs if len(h.trace) < ex.horizon] or pairs
    for i in range(n_bounded):
        prog = random_high_program(rng, bat_h, rng.randint(1, 3))
        beta = random_static_formula(rng, bat_h.theory, max(0, formula_depth - 1), degrees=(0, 1))
        f = After(prog, beta)
        hs, ls = shallow[i % len(shallow)]
        a = ev_h.holds(hs.world, hs.trace, f)
        b = ev_l.holds(ls.world, ls.trace, map_formula(m, f))
        rep.bounded_checked += 1
        rep.bounded_true += bool(a)
        if a != b:
            rep.bounded_failures.append((f, hs, ls, a, b))

    for i in range(n_traces):
        hs, ls = shallow[i % len(shallow)]
        room = max(1, ex.horizon - len(hs.trace))
        prog = random_high_program(rng, bat_h, rng.randint(1, room), allow_star=False)
        problem = _trace_check(ex, m, hs, ls, prog, rng, program_star_bound)
        rep.trace_checked += 1
        if problem:
            rep.trace_failures.append((prog, hs, ls, problem))
    return rep


def _trace_check(ex: _Explorer, m, hs: State, ls: State, prog, rng: random.Random, bound: int) -> Optional[str]:
    bat_h, bat_l = ex.bat_h, ex.bat_l
    ts = traces(bat_h, ex.ev_h.e, hs.world, hs.trace, prog, bound, evaluator=ex.ev_h)
    low_prog = map_program(m, prog)
    low_bound = max(bound, ex.bound)
    if ts.traces:
        zh = rng.choice(ts.traces)
        target = State(hs.world, hs.trace + zh)
        seq = map_trace(m, zh)
        witness = None
        for _ in range(20):
            s = sample_trace(bat_l, ex.ev_l.e, ls.world, ls.trace, seq_all(seq) if seq else NIL,
                             rng=rng, policy="random", star_bound=ex.bound, evaluator=ex.ev_l)
            if isinstance(s, Sample) and target in ex.related(ls.world, ls.trace + s.trace):
                witness = s.trace
                break
        if witness is None:
            return f"no related low-level execution found for high-level trace {format_trace(zh)}"
        r = reachable(bat_l, ex.ev_l.e, ls.world, ls.trace, low_prog, witness, low_bound, evaluator=ex.ev_l)
        if not r.final:
            return f"witness {format_trace(witness)} is not an execution of the translated program"
    s = sample_trace(bat_l, ex.ev_l.e, ls.world, ls.trace, low_prog, rng=rng, policy="random",
                     star_bound=low_bound, evaluator=ex.ev_l)
    if isinstance(s, Sample) and s.likelihood > 0:
        highs = ts.as_set()
        related = ex.related(ls.world, ls.trace + s.trace)
        if not any(h.trace[:len(hs.trace)] == hs.trace and h.trace[len(hs.trace):] in highs for h in related):
            return f"low-level execution {format_trace(s.trace)} matches no high-level execution"
    return None
