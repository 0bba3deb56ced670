"""Ground semantics of a single basic action theory.

A :class:`World` is an initial valuation (the set of true ground atoms).
Values after a trace are obtained by folding the successor state axioms
over the trace; every fold step is memoised on the pair (valuation,
action), so long traces through few distinct valuations stay cheap.

Ground atoms and ground actions are both plain tuples such as
``('Loc', 3)`` and ``('move', -1, 0)``; nullary ones are bare strings.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional

from .lang import (
    And, Atom, Cmp, Equal, Forall, Not, Top, Var, Rigid, Const, value_of,
    format_value, normalize_number, theta as _theta, walk,
)
from .parser import ACTION_SORT, TheoryFile, parse_theory

__all__ = [
    "ModelError", "ImpossibleAction", "AxiomNotFunctional", "NoModel", "IllTyped",
    "InvalidTheory", "World", "State", "GroundBAT", "theta", "ground_atom",
    "format_trace", "holds_atom", "poss", "likelihood", "oi_actions", "exec_trace",
    "seq_likelihood", "enumerate_initial_worlds",
]


class ModelError(Exception):
    pass


class ImpossibleAction(ModelError):
    def __init__(self, step: int, action):
        self.step = step
        self.action = action
        super().__init__(f"action {format_value(action)} at step {step} is not possible")


class AxiomNotFunctional(ModelError):
    pass


class NoModel(ModelError):
    pass


class IllTyped(ModelError):
    pass


class InvalidTheory(ModelError):
    pass


def theta(u, v, c, d):
    """``c`` if ``u = v``, ``d`` if they differ by one, else 0 (exact)."""
    return normalize_number(_theta(Fraction(u), Fraction(v), Fraction(c), Fraction(d)))


def ground_atom(pred: str, args: Iterable = ()):
    args = tuple(args)
    return (pred, *args) if args else pred


def format_trace(z) -> str:
    return "<" + ", ".join(format_value(a) for a in z) + ">"


@dataclass(frozen=True)
class World:
    atoms: frozenset
    name: str = field(default="w", compare=False)

    def __str__(self) -> str:
        return self.name

    def describe(self) -> str:
        return "{" + ", ".join(sorted(format_value(a) for a in self.atoms)) + "}"


@dataclass(frozen=True)
class State:
    world: World
    trace: tuple = ()

    def __str__(self) -> str:
        return f"({self.world}, {format_trace(self.trace)})"


class GroundBAT:
    """Compiled evaluators for one theory over its finite carriers."""

    def __init__(self, theory, *, validate: bool = True):
        if isinstance(theory, str):
            theory = parse_theory(theory)
        self.theory: TheoryFile = theory
        self.ground_actions = theory.ground_actions()
        self._action_set = frozenset(self.ground_actions)
        self.atoms = tuple(
            ground_atom(name, args)
            for name in sorted(theory.fluents)
            for args in itertools.product(*(theory.carrier(s) for s in theory.fluents[name].arg_sorts))
        )
        self._progress_cache: dict = {}
        self._val_cache: dict = {}
        self._poss_cache: dict = {}
        self._lik_cache: dict = {}
        self._oi_cache: dict = {}
        self._class_cache: dict = {}
        oi_body = theory.oi[2]
        self.oi_fluent_free = not any(isinstance(n, Atom) for n in walk(oi_body))
        self._worlds: Optional[list] = None
        self.extra_sorts: dict = {}      # carriers borrowed from another theory
        if validate:
            self.validate()

    # -- formula evaluation over a valuation

    def carrier(self, sort: str) -> tuple:
        if sort == ACTION_SORT:
            return self.ground_actions
        if sort in self.extra_sorts and sort not in self.theory.sorts:
            return self.extra_sorts[sort]
        return self.theory.carrier(sort)

    def eval_fluent(self, f, val: frozenset, env: dict) -> bool:
        """Truth of an objective, Poss-free formula in valuation ``val``."""
        if isinstance(f, Atom):
            if f.pred == "Poss":
                raise IllTyped("Poss is not allowed inside axioms")
            return ground_atom(f.pred, (value_of(a, env) for a in f.args)) in val
        if isinstance(f, And):
            return self.eval_fluent(f.left, val, env) and self.eval_fluent(f.right, val, env)
        if isinstance(f, Not):
            return not self.eval_fluent(f.body, val, env)
        if isinstance(f, Equal):
            return _value(f.left, env) == _value(f.right, env)
        if isinstance(f, Forall):
            inner = dict(env)
            for v in self.carrier(f.sort):
                inner[f.var] = v
                if not self.eval_fluent(f.body, val, inner):
                    return False
            return True
        if isinstance(f, Cmp):
            return compare(f.op, _value(f.left, env), _value(f.right, env))
        if isinstance(f, Top):
            return True
        raise IllTyped(f"not a fluent formula: {f}")

    # -- progression

    def progress(self, val: frozenset, action) -> frozenset:
        key = (val, action)
        hit = self._progress_cache.get(key)
        if hit is not None:
            return hit
        out = []
        for name, ssa in self.theory.ssa.items():
            sorts = self.theory.fluents[name].arg_sorts
            for args in itertools.product(*(self.carrier(s) for s in sorts)):
                env = dict(zip(ssa.params, args))
                env[ssa.action_var] = action
                if self.eval_fluent(ssa.body, val, env):
                    out.append(ground_atom(name, args))
        res = frozenset(out)
        self._progress_cache[key] = res
        return res

    def valuation(self, w: World, z: tuple) -> frozenset:
        """True atoms after ``z``; raises :class:`ImpossibleAction`."""
        z = tuple(z)
        key = (w.atoms, z)
        hit = self._val_cache.get(key)
        if hit is not None:
            return hit
        if not z:
            return w.atoms
        prev = self.valuation(w, z[:-1])
        a = z[-1]
        if not self.poss_at(prev, a):
            raise ImpossibleAction(len(z) - 1, a)
        res = self.progress(prev, a)
        self._val_cache[key] = res
        return res

    # -- axioms at a valuation

    def poss_at(self, val: frozenset, action) -> bool:
        key = (val, action)
        hit = self._poss_cache.get(key)
        if hit is None:
            var, body = self.theory.poss
            hit = self.eval_fluent(body, val, {var: action})
            self._poss_cache[key] = hit
        return hit

    def check_action(self, action) -> None:
        if action not in self._action_set:
            raise IllTyped(f"{format_value(action)} is not a declared ground action")

    def likelihood_at(self, val: frozenset, action):
        key = (val, action)
        hit = self._lik_cache.get(key)
        if hit is not None:
            return hit
        self.check_action(action)
        avar, cases = self.theory.likelihood
        functor = action[0] if isinstance(action, tuple) else action
        args = action[1:] if isinstance(action, tuple) else ()
        values = set()
        for case in cases:
            if case.functor != functor:
                continue
            env = dict(zip(case.params, args))
            env[avar] = action
            names = [n for n, _ in case.extra]
            for combo in itertools.product(*(self.carrier(s) for _, s in case.extra)):
                env.update(zip(names, combo))
                if self.eval_fluent(case.cond, val, env):
                    q = value_of(case.value, env)
                    if not isinstance(q, (int, Fraction)) or q < 0:
                        raise AxiomNotFunctional(
                            f"likelihood of {format_value(action)} is not a non-negative number: {format_value(q)}")
                    values.add(normalize_number(q))
        if len(values) != 1:
            shown = ", ".join(sorted(format_value(v) for v in values)) or "none"
            raise AxiomNotFunctional(
                f"likelihood of {format_value(action)} is not unique (values: {shown})")
        q = values.pop()
        self._lik_cache[key] = q
        return q

    def oi_at(self, val: frozenset, a, b) -> bool:
        key = (None if self.oi_fluent_free else val, a, b)
        hit = self._oi_cache.get(key)
        if hit is None:
            self.check_action(a)
            self.check_action(b)
            va, vb, body = self.theory.oi
            hit = self.eval_fluent(body, val, {va: a, vb: b})
            self._oi_cache[key] = hit
        return hit

    def oi_class(self, val: frozenset, a) -> tuple:
        """Ground actions oi-related to ``a`` at ``val``, in declaration order."""
        key = (None if self.oi_fluent_free else val, a)
        hit = self._class_cache.get(key)
        if hit is None:
            hit = tuple(b for b in self.ground_actions if self.oi_at(val, a, b))
            if self.oi_fluent_free:
                for b in hit:
                    self._class_cache.setdefault((None, b), hit)
            self._class_cache[key] = hit
        return hit

    # -- state-level API

    def holds_atom(self, w: World, z, atom) -> bool:
        if isinstance(atom, Atom):
            atom = ground_atom(atom.pred, (value_of(t) for t in atom.args))
        return atom in self.valuation(w, z)

    def poss(self, w: World, z, action) -> bool:
        return self.poss_at(self.valuation(w, z), action)

    def likelihood(self, w: World, z, action):
        return self.likelihood_at(self.valuation(w, z), action)

    def oi(self, w: World, z, a, b) -> bool:
        return self.oi_at(self.valuation(w, z), a, b)

    def exec(self, w: World, z) -> bool:
        try:
            self.valuation(w, z)
            return True
        except ImpossibleAction:
            return False

    def seq_likelihood(self, w: World, z):
        z = tuple(z)
        q = 1
        for i, a in enumerate(z):
            val = self.valuation(w, z[:i])
            if not self.poss_at(val, a):
                raise ImpossibleAction(i, a)
            q = q * self.likelihood_at(val, a)
            if q == 0:
                # remaining factors cannot change the product, but still check exec
                self.valuation(w, z)
                return 0
        return normalize_number(q)

    # -- initial worlds

    def initial_worlds(self) -> list:
        """Weighted initial worlds ``[(World, weight), ...]`` in a fixed order."""
        if self._worlds is None:
            self._worlds = _enumerate_worlds(self)
        return list(self._worlds)

    # -- validation

    def validate(self) -> None:
        worlds = self.initial_worlds()
        vals = {w.atoms for w, _ in worlds}
        for name, decl in self.theory.fluents.items():
            if decl.functional:
                for w, _ in worlds:
                    n = sum(1 for a in w.atoms if isinstance(a, tuple) and a[0] == name)
                    if n != 1:
                        raise InvalidTheory(f"functional fluent {name} has {n} values in world {w.describe()}")
        frontier = set(vals)
        for val in list(vals):
            for a in self.ground_actions:
                if self.poss_at(val, a):
                    frontier.add(self.progress(val, a))
        for val in frontier:
            for a in self.ground_actions:
                self.likelihood_at(val, a)
        check = [next(iter(frontier))] if self.oi_fluent_free else frontier
        for val in check:
            self._check_equivalence(val)

    def _check_equivalence(self, val) -> None:
        acts = self.ground_actions
        for a in acts:
            if not self.oi_at(val, a, a):
                raise InvalidTheory(f"oi is not reflexive on {format_value(a)}")
        for a in acts:
            cls = set(b for b in acts if self.oi_at(val, a, b))
            for b in cls:
                if not self.oi_at(val, b, a):
                    raise InvalidTheory(
                        f"oi is not symmetric: {format_value(a)} ~ {format_value(b)}")
                other = set(c for c in acts if self.oi_at(val, b, c))
                if other != cls:
                    raise InvalidTheory(
                        f"oi is not transitive around {format_value(a)} and {format_value(b)}")


def _value(t, env):
    if isinstance(t, Var):
        try:
            return env[t.name]
        except KeyError:
            raise IllTyped(f"unbound variable {t.name}") from None
    if isinstance(t, Const):
        return normalize_number(t.value)
    if isinstance(t, Rigid) and not t.args:
        return t.functor
    try:
        return value_of(t, env)
    except TypeError as e:
        raise IllTyped(str(e)) from None


def compare(op, x, y) -> bool:
    if not isinstance(x, (int, Fraction)) or not isinstance(y, (int, Fraction)):
        raise IllTyped(f"comparison {op} between non-numbers {format_value(x)} and {format_value(y)}")
    if op == "<":
        return x < y
    if op == "<=":
        return x <= y
    if op == ">":
        return x > y
    return x >= y


_MAX_WORLDS = 1 << 16


def _enumerate_worlds(bat: GroundBAT) -> list:
    th = bat.theory
    if th.init_worlds is not None:
        out = []
        for i, (weight, atoms) in enumerate(th.init_worlds):
            vals = frozenset(ground_atom(a.pred, (value_of(t) for t in a.args)) for a in atoms)
            unknown = vals - set(bat.atoms)
            if unknown:
                raise IllTyped(f"world {i} mentions undeclared atoms: "
                               + ", ".join(format_value(u) for u in sorted(unknown, key=str)))
            for c in th.init_constraints:
                if not bat.eval_fluent(c, vals, {}):
                    raise NoModel(f"declared world {i} violates an initial constraint")
            out.append((World(vals, f"w{i}"), normalize_number(weight)))
        if not out:
            raise NoModel("no initial worlds declared")
        return out
    # choose one value per functional fluent, any subset otherwise
    choices = []
    size = 1
    for name in sorted(th.fluents):
        decl = th.fluents[name]
        atoms = [ground_atom(name, args)
                 for args in itertools.product(*(bat.carrier(s) for s in decl.arg_sorts))]
        if decl.functional:
            choices.append([(a,) for a in atoms])
            size *= len(atoms)
        else:
            subsets = [tuple(a for a, bit in zip(atoms, bits) if bit)
                       for bits in itertools.product((False, True), repeat=len(atoms))]
            choices.append(subsets)
            size *= len(subsets)
        if size > _MAX_WORLDS:
            raise InvalidTheory("too many candidate initial valuations; declare worlds explicitly")
    models = []
    for combo in itertools.product(*choices):
        vals = frozenset(a for part in combo for a in part)
        if all(bat.eval_fluent(c, vals, {}) for c in th.init_constraints):
            models.append(vals)
    if not models:
        raise NoModel("the initial constraints are unsatisfiable")
    weight = Fraction(1, len(models))
    return [(World(v, f"w{i}"), normalize_number(weight)) for i, v in enumerate(models)]


# module-level conveniences mirroring the method API

def holds_atom(bat: GroundBAT, w: World, z, atom) -> bool:
    return bat.holds_atom(w, z, atom)


def poss(bat: GroundBAT, w: World, z, action) -> bool:
    return bat.poss(w, z, action)


def likelihood(bat: GroundBAT, w: World, z, action):
    return bat.likelihood(w, z, action)


def oi_actions(bat: GroundBAT, w: World, z, a, b) -> bool:
    return bat.oi(w, z, a, b)


def exec_trace(bat: GroundBAT, w: World, z) -> bool:
    return bat.exec(w, z)


def seq_likelihood(bat: GroundBAT, w: World, z):
    return bat.seq_likelihood(w, z)


def enumerate_initial_worlds(theory) -> list:
    bat = theory if isinstance(theory, GroundBAT) else GroundBAT(theory, validate=False)
    return bat.initial_worlds()
