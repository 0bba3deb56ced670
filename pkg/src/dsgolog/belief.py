"""Degrees of belief and truth of arbitrary formulas.

The agent's uncertainty about a state ``(w, z)`` is the set of states it
cannot tell apart from it: worlds it considers possible, each paired with
every trace whose actions are pairwise indistinguishable from those of
``z``.  A state's weight is its prior times the product of the
likelihoods along its trace; degrees of belief are ratios of such weights.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .lang import (
    After, And, Atom, Belief, Box, Cmp, Equal, Forall, Not, Star, Top,
    classify, expand_sugar, free_vars, normalize_number, walk,
)
from .model import GroundBAT, IllTyped, ImpossibleAction, State, World, _value, compare, ground_atom

__all__ = [
    "Distribution", "EpistemicState", "CompatibleSet", "NormUndefined", "BeliefUndefined",
    "ConfigError", "EvalConfig", "Evaluator", "oi_trace_alternatives", "worlds_oi_agree",
    "compatible_states", "norm", "evaluate", "belief_degrees", "zero_one_beliefs",
]


def zero_one_beliefs(*nodes) -> bool:
    """Whether every degree of belief mentioned in ``nodes`` is 0 or 1.

    Such formulas only depend on which compatible states have positive
    weight, not on the weights themselves.
    """
    return all(n.degree in (0, 1) for root in nodes for n in walk(root) if isinstance(n, Belief))


class NormUndefined(ArithmeticError):
    """The reference set has total weight zero."""


class BeliefUndefined(Exception):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Distribution:
    """Finite map from worlds to non-negative exact weights (not normalised)."""
    items: tuple

    def __post_init__(self):
        seen = {}
        for w, q in self.items:
            q = normalize_number(q)
            if q < 0:
                raise ValueError("distribution weights must be non-negative")
            seen[w] = seen.get(w, 0) + q
        object.__setattr__(self, "items", tuple(seen.items()))
        object.__setattr__(self, "_map", seen)

    @classmethod
    def of(cls, mapping) -> "Distribution":
        return cls(tuple(mapping.items()) if isinstance(mapping, dict) else tuple(mapping))

    @classmethod
    def point(cls, w: World) -> "Distribution":
        return cls(((w, 1),))

    def __call__(self, w: World):
        return self._map.get(w, 0)

    def worlds(self) -> tuple:
        return tuple(w for w, _ in self.items)

    def support(self) -> tuple:
        return tuple(w for w, q in self.items if q > 0)


@dataclass(frozen=True)
class EpistemicState:
    distributions: tuple

    def __post_init__(self):
        if not self.distributions:
            raise ValueError("an epistemic state needs at least one distribution")

    @classmethod
    def of(cls, *ds) -> "EpistemicState":
        return cls(tuple(ds))

    @classmethod
    def from_bat(cls, bat: GroundBAT) -> "EpistemicState":
        return cls((Distribution(tuple(bat.initial_worlds())),))

    def __iter__(self):
        return iter(self.distributions)


@dataclass(frozen=True)
class CompatibleSet:
    """States with their sequence likelihoods; weights under ``d`` are ``d(w) * l*``."""
    members: tuple        # ((State, likelihood), ...)

    def states(self) -> tuple:
        return tuple(s for s, _ in self.members)

    def weight(self, d: Distribution):
        return normalize_number(sum((d(s.world) * q for s, q in self.members), Fraction(0)))

    def __len__(self):
        return len(self.members)

    def __contains__(self, state) -> bool:
        return any(s == state for s, _ in self.members)

    def issubset(self, other: "CompatibleSet") -> bool:
        mine = dict(other.members)
        return all(s in mine for s, _ in self.members)

    def union(self, other: "CompatibleSet") -> "CompatibleSet":
        seen = dict(self.members)
        for s, q in other.members:
            seen.setdefault(s, q)
        return CompatibleSet(tuple(seen.items()))

    def restrict(self, pred) -> "CompatibleSet":
        return CompatibleSet(tuple((s, q) for s, q in self.members if pred(s)))


def norm(d: Distribution, U: CompatibleSet, V: CompatibleSet):
    """Normalised weight of ``U`` relative to ``V`` (``U`` must be a subset)."""
    if not U.issubset(V):
        raise ValueError("norm expects U to be a subset of V")
    total = V.weight(d)
    if total == 0:
        raise NormUndefined("reference set has weight zero")
    return normalize_number(Fraction(U.weight(d)) / total)


def oi_trace_alternatives(bat: GroundBAT, w: World, z, *, ref_world: Optional[World] = None,
                          keep_zero: bool = False) -> tuple:
    """Traces indistinguishable from ``z``, viewed from world ``w``.

    Indistinguishability of individual actions is evaluated in
    ``ref_world`` (default ``w``) after the matching prefix of ``z``.  By
    default alternatives that are not executable in ``w`` or have
    likelihood zero there are dropped; ``keep_zero`` keeps every
    structurally related trace.
    """
    z = tuple(z)
    ref = w if ref_world is None else ref_world
    alts = [()]
    for i, r in enumerate(z):
        ref_val = bat.valuation(ref, z[:i])
        cls = bat.oi_class(ref_val, r)
        nxt = []
        for p in alts:
            if keep_zero:
                nxt.extend(p + (b,) for b in cls)
                continue
            val = bat.valuation(w, p)
            for b in cls:
                if bat.poss_at(val, b) and bat.likelihood_at(val, b) > 0:
                    nxt.append(p + (b,))
        alts = nxt
    return tuple(alts)


def worlds_oi_agree(bat: GroundBAT, w: World, w2: World, z=(), horizon: Optional[int] = None) -> bool:
    """Whether ``w`` and ``w2`` classify actions alike along the prefixes of ``z``.

    Exact when the oi axiom mentions no fluents; otherwise only the
    prefixes of ``z`` (up to ``horizon`` steps) are compared.
    """
    if w == w2 or bat.oi_fluent_free:
        return True
    z = tuple(z)
    n = len(z) if horizon is None else min(horizon, len(z))
    acts = bat.ground_actions
    for i in range(n + 1):
        try:
            v1, v2 = bat.valuation(w, z[:i]), bat.valuation(w2, z[:i])
        except ImpossibleAction:
            break
        for a, b in itertools.product(acts, acts):
            if bat.oi_at(v1, a, b) != bat.oi_at(v2, a, b):
                return False
    return True


@dataclass
class EvalConfig:
    strict_belief: bool = False
    box_horizon: Optional[int] = None
    star_bound: Optional[int] = None
    keep_zero: bool = False
    positive_traces: bool = False     # [program] ranges over positive-likelihood traces only


class Evaluator:
    """Truth of formulas at states of one theory under one epistemic state."""

    def __init__(self, bat: GroundBAT, e: EpistemicState, config: Optional[EvalConfig] = None):
        self.bat = bat
        self.e = e if isinstance(e, EpistemicState) else EpistemicState.of(e)
        self.config = config or EvalConfig()
        self.warnings: list = []
        self._class_cache: dict = {}
        self._degree_cache: dict = {}
        self._fv_cache: dict = {}
        self._filter_cache: dict = {}
        self._class_of: dict = {}
        self._static_cache: dict = {}

    # -- compatible states

    def compatible(self, d: Distribution, w: World, z) -> CompatibleSet:
        """S_TRUE for reference state ``(w, z)`` under ``d``."""
        z = tuple(z)
        bat = self.bat
        key = (d, None if bat.oi_fluent_free else w, z)
        hit = self._class_cache.get(key)
        if hit is not None:
            return hit
        keep = self.config.keep_zero
        members = []
        worlds = d.worlds() if keep else d.support()
        for w2 in worlds:
            if not worlds_oi_agree(bat, w, w2, z):
                continue
            for z2 in oi_trace_alternatives(bat, w2, z, ref_world=w, keep_zero=keep):
                if keep and not bat.exec(w2, z2):
                    continue
                q = bat.seq_likelihood(w2, z2)
                if keep or q > 0:
                    members.append((State(w2, z2), q))
        res = CompatibleSet(tuple(members))
        self._class_cache[key] = res
        return res

    def compatible_states(self, d: Distribution, w: World, z, alpha=None, env=None) -> CompatibleSet:
        full = self.compatible(d, w, z)
        if alpha is None or isinstance(alpha, Top):
            return full
        env = env or {}
        return full.restrict(lambda s: self.holds(s.world, s.trace, alpha, env))

    # -- filtering over observation classes

    @property
    def uses_filter(self) -> bool:
        return self.bat.oi_fluent_free and not self.config.keep_zero

    def class_key(self, z) -> tuple:
        """Canonical name of the oi-class of trace ``z`` (needs a fluent-free oi axiom)."""
        out = []
        empty = frozenset()
        for r in z:
            rep = self._class_of.get(r)
            if rep is None:
                rep = self._class_of[r] = self.bat.oi_class(empty, r)[0]
            out.append(rep)
        return tuple(out)

    def filter_state(self, d: Distribution, key: tuple) -> dict:
        """Weights ``{(world, valuation): d(w) * l*}`` of the compatible states of class ``key``."""
        hit = self._filter_cache.get((d, key))
        if hit is not None:
            return hit
        bat = self.bat
        if not key:
            out = {}
            for w2 in d.support():
                out[(w2, w2.atoms)] = out.get((w2, w2.atoms), 0) + d(w2)
        else:
            prev = self.filter_state(d, key[:-1])
            cls = bat.oi_class(frozenset(), key[-1])
            out = {}
            for (w2, v), q in prev.items():
                for b in cls:
                    if not bat.poss_at(v, b):
                        continue
                    lik = bat.likelihood_at(v, b)
                    if lik > 0:
                        k = (w2, bat.progress(v, b))
                        out[k] = out.get(k, 0) + q * lik
        self._filter_cache[(d, key)] = out
        return out

    def degree(self, d: Distribution, w: World, z, alpha, env=None):
        """Normalised weight of ``alpha`` among compatible states, or None if undefined."""
        z = tuple(z)
        env = env or {}
        fv = self._fv_cache.get(id(alpha))
        if fv is None:
            cls = classify(alpha)
            fv = self._fv_cache[id(alpha)] = (alpha, tuple(sorted(free_vars(alpha))),
                                              "objective" in cls and "static" in cls)
        names = fv[1]
        if self.uses_filter and (fv[2] or self._class_static(alpha)):
            return self._filtered_degree(d, z, alpha, env, names)
        key = (d, None if self.bat.oi_fluent_free else w, z, id(alpha),
               tuple(env.get(n) for n in names))
        if key in self._degree_cache:
            return self._degree_cache[key]
        full = self.compatible(d, w, z)
        total = full.weight(d)
        if total == 0:
            res = None
        else:
            num = sum((d(s.world) * q for s, q in full.members
                       if self.holds(s.world, s.trace, alpha, env)), Fraction(0))
            res = normalize_number(Fraction(num) / total)
        self._degree_cache[key] = res
        return res

    def _class_static(self, f) -> bool:
        hit = self._static_cache.get(id(f))
        if hit is None:
            hit = self._static_cache[id(f)] = (f, "static" in classify(f))
        return hit[1]

    def _filtered_degree(self, d, z, alpha, env, names, ck=None):
        ck = self.class_key(z) if ck is None else ck
        key = (d, ck, id(alpha), tuple(env.get(n) for n in names))
        if key in self._degree_cache:
            return self._degree_cache[key]
        states = self.filter_state(d, ck)
        total = sum(states.values(), Fraction(0))
        if total == 0:
            res = None
        else:
            num = sum((q for (_, v), q in states.items() if self.holds_class(v, ck, alpha, env)), Fraction(0))
            res = normalize_number(num / total)
        self._degree_cache[key] = res
        return res

    def holds_class(self, val: frozenset, ck: tuple, f, env) -> bool:
        """Truth of a static formula at any state with valuation ``val`` and observation class ``ck``.

        Degrees of belief only depend on the observation class when the oi
        axiom mentions no fluents, so nested beliefs are evaluated through
        the class filter as well.
        """
        if isinstance(f, Belief):
            names = self._fv_cache.get(id(f.body))
            if names is None:
                names = self._fv_cache[id(f.body)] = (f.body, tuple(sorted(free_vars(f.body))),
                                                      "objective" in classify(f.body) and "static" in classify(f.body))
            for d in self.e:
                deg = self._filtered_degree(d, None, f.body, env, names[1], ck)
                if deg is None:
                    if self.config.strict_belief:
                        raise BeliefUndefined(f"degree of belief in {f.body} is undefined")
                    return False
                if deg != f.degree:
                    return False
            return True
        if isinstance(f, And):
            return self.holds_class(val, ck, f.left, env) and self.holds_class(val, ck, f.right, env)
        if isinstance(f, Not):
            return not self.holds_class(val, ck, f.body, env)
        if isinstance(f, Forall):
            inner = dict(env)
            for v in self.bat.carrier(f.sort):
                inner[f.var] = v
                if not self.holds_class(val, ck, f.body, inner):
                    return False
            return True
        return self.holds_at(val, f, env)

    def holds_at(self, val: frozenset, f, env) -> bool:
        """Truth of an objective static formula in valuation ``val``."""
        bat = self.bat
        if isinstance(f, Atom):
            if f.pred == "Poss":
                return bat.poss_at(val, _value(f.args[0], env))
            return ground_atom(f.pred, (_value(a, env) for a in f.args)) in val
        if isinstance(f, And):
            return self.holds_at(val, f.left, env) and self.holds_at(val, f.right, env)
        if isinstance(f, Not):
            return not self.holds_at(val, f.body, env)
        if isinstance(f, Forall):
            inner = dict(env)
            for v in bat.carrier(f.sort):
                inner[f.var] = v
                if not self.holds_at(val, f.body, inner):
                    return False
            return True
        if isinstance(f, Equal):
            return _value(f.left, env) == _value(f.right, env)
        if isinstance(f, Cmp):
            return compare(f.op, _value(f.left, env), _value(f.right, env))
        if isinstance(f, Top):
            return True
        raise IllTyped(f"not an objective static formula: {f}")

    # -- truth

    def holds(self, w: World, z, f, env=None) -> bool:
        z = tuple(z)
        env = env or {}
        bat = self.bat
        if isinstance(f, Atom):
            if f.pred == "Poss":
                return bat.poss(w, z, _value(f.args[0], env))
            return ground_atom(f.pred, (_value(a, env) for a in f.args)) in bat.valuation(w, z)
        if isinstance(f, And):
            return self.holds(w, z, f.left, env) and self.holds(w, z, f.right, env)
        if isinstance(f, Not):
            return not self.holds(w, z, f.body, env)
        if isinstance(f, Equal):
            return _value(f.left, env) == _value(f.right, env)
        if isinstance(f, Cmp):
            return compare(f.op, _value(f.left, env), _value(f.right, env))
        if isinstance(f, Top):
            return True
        if isinstance(f, Forall):
            inner = dict(env)
            for v in bat.carrier(f.sort):
                inner[f.var] = v
                if not self.holds(w, z, f.body, inner):
                    return False
            return True
        if isinstance(f, Belief):
            for d in self.e:
                deg = self.degree(d, w, z, f.body, env)
                if deg is None:
                    if self.config.strict_belief:
                        raise BeliefUndefined(f"degree of belief in {f.body} is undefined")
                    return False
                if deg != f.degree:
                    return False
            return True
        if isinstance(f, Box):
            k = self.config.box_horizon
            if k is None:
                raise ConfigError("evaluating a box formula needs an explicit box horizon")
            return all(self.holds(w, z + ext, f.body, env) for ext in self.extensions(w, z, k))
        if isinstance(f, After):
            from .interpreter import traces
            prog = expand_sugar(f.program)
            bound = self.config.star_bound
            if bound is None:
                if any(isinstance(n, Star) for n in walk(prog)):
                    raise ConfigError("evaluating [program] with iteration needs a star bound")
                bound = 0
            if self.config.positive_traces and self.uses_filter and self._class_static(f.body):
                from .interpreter import belief_endpoints
                ends, exact = belief_endpoints(bat, self.e, w, z, prog, bound, env=env, evaluator=self,
                                               by_support=zero_one_beliefs(prog, f.body))
                if not exact:
                    self.warnings.append(f"traces of {f.program} truncated at star bound {bound}")
                return all(self.holds_class(v, ck, f.body, env) for v, ck, _ in ends)
            ts = traces(bat, self.e, w, z, prog, bound, env=env, evaluator=self,
                        positive_only=self.config.positive_traces)
            if not ts.exact:
                self.warnings.append(f"traces of {f.program} truncated at star bound {bound}")
            return all(self.holds(w, z + t, f.body, env) for t in ts.traces)
        raise IllTyped(f"cannot evaluate {f!r}")

    def extensions(self, w: World, z, k: int):
        """All executable extensions of ``z`` with at most ``k`` actions."""
        bat = self.bat
        frontier = [()]
        out = [()]
        for _ in range(k):
            nxt = []
            for ext in frontier:
                val = bat.valuation(w, z + ext)
                nxt.extend(ext + (a,) for a in bat.ground_actions if bat.poss_at(val, a))
            out.extend(nxt)
            frontier = nxt
        return out


def compatible_states(bat: GroundBAT, e, d: Distribution, w: World, z, alpha=None, *,
                      config: Optional[EvalConfig] = None) -> CompatibleSet:
    return Evaluator(bat, e, config).compatible_states(d, w, z, alpha)


def evaluate(bat: GroundBAT, e, w: World, z, f, config: Optional[EvalConfig] = None) -> bool:
    """Truth of ``f`` at ``(w, z)``; ``z`` must be executable in ``w``."""
    ev = Evaluator(bat, e, config)
    bat.valuation(w, z)
    return ev.holds(w, tuple(z), f)


def belief_degrees(bat: GroundBAT, e, w: World, z, f, config: Optional[EvalConfig] = None) -> list:
    """Degree of belief in ``f`` under each distribution of ``e`` (None where undefined)."""
    ev = Evaluator(bat, e, config)
    return [ev.degree(d, w, z, f) for d in ev.e]


eval = evaluate
