"""Transition semantics of programs.

Internally a configuration's remaining program is a tuple of *items*
executed left to right.  An item is either ``('p', node, env)``, a core
program node under a variable environment, or ``('*', body, env, k)``, an
iteration whose body has been entered ``k`` times on the current branch.
Keeping environments instead of substituting keeps residual programs
shared, which makes configurations cheap to hash.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .belief import EpistemicState, EvalConfig, Evaluator
from .lang import (
    NIL, Act, Choice, Pick, Seq, Star, Test, expand_sugar, normalize_number, seq_all,
    substitute, term_of, walk,
)
from .model import GroundBAT, World, _value

__all__ = [
    "Configuration", "TraceSet", "Blocked", "Sample", "Reachability", "GroupedTrace",
    "step", "is_final", "traces", "reachable", "sample_trace", "grouped_traces", "belief_endpoints",
    "program_size",
]


@dataclass(frozen=True)
class Configuration:
    trace: tuple
    program: object


@dataclass(frozen=True)
class TraceSet:
    traces: tuple
    exact: bool

    def __contains__(self, z) -> bool:
        return tuple(z) in set(self.traces)

    def __len__(self) -> int:
        return len(self.traces)

    def as_set(self) -> frozenset:
        return frozenset(self.traces)


@dataclass(frozen=True)
class Blocked:
    trace: tuple
    reason: str


@dataclass(frozen=True)
class Sample:
    trace: tuple
    likelihood: object


@dataclass
class Reachability:
    reachable: bool
    final: bool
    failed_at: Optional[int]
    likelihoods: list
    truncated: bool = False


@dataclass
class GroupedTrace:
    """Extensions sharing final valuation and observation class."""
    valuation: frozenset
    class_key: tuple
    weight: object          # sum of the extensions' likelihood products
    count: int
    representative: tuple


def program_size(p) -> int:
    return sum(1 for _ in walk(p))


def _env_key(env: tuple) -> tuple:
    return env


def _items_key(items: tuple) -> tuple:
    out = []
    for it in items:
        if it[0] == "*":
            out.append(("*", id(it[1]), it[2], it[3]))
        else:
            out.append(("p", id(it[1]), it[2]))
    return tuple(out)


class _Runner:
    """Shared transition machinery for one theory, world and epistemic state."""

    def __init__(self, bat: GroundBAT, e, w: World, *, star_bound: Optional[int],
                 evaluator: Optional[Evaluator] = None, positive_only: bool = False,
                 config: Optional[EvalConfig] = None):
        self.bat = bat
        self.w = w
        self.ev = evaluator or Evaluator(bat, e if isinstance(e, EpistemicState) else EpistemicState.of(e),
                                         config)
        self.bound = star_bound
        self.positive_only = positive_only
        self.truncated = False
        self._keep = []       # nodes created on the fly must outlive their ids

    def holds(self, z, cond, env) -> bool:
        return self.ev.holds(self.w, z, cond, dict(env))

    def trans(self, items: tuple, z: tuple):
        """Yield ``(action, residual_items)`` for every licensed transition."""
        if not items:
            return
        head, rest = items[0], items[1:]
        if head[0] == "*":
            _, body, env, k = head
            sub = list(self.trans((("p", body, env),), z))
            if sub:
                if self.bound is not None and k >= self.bound:
                    self.truncated = True
                else:
                    loop = ("*", body, env, k + 1)
                    for a, res in sub:
                        yield a, res + (loop,) + rest
            yield from self.trans(rest, z)
            return
        _, node, env = head
        if isinstance(node, Act):
            a = _value(node.term, dict(env))
            val = self.bat.valuation(self.w, z)
            if self.bat.poss_at(val, a):
                if not self.positive_only or self.bat.likelihood_at(val, a) > 0:
                    yield a, rest
        elif isinstance(node, Test):
            if self.holds(z, node.cond, env):
                yield from self.trans(rest, z)
        elif isinstance(node, Seq):
            yield from self.trans((("p", node.first, env), ("p", node.second, env)) + rest, z)
        elif isinstance(node, Choice):
            yield from self.trans((("p", node.left, env),) + rest, z)
            yield from self.trans((("p", node.right, env),) + rest, z)
        elif isinstance(node, Pick):
            for v in self.bat.carrier(node.sort):
                yield from self.trans((("p", node.body, env + ((node.var, v),)),) + rest, z)
        elif isinstance(node, Star):
            yield from self.trans((("*", node.body, env, 0),) + rest, z)
        else:
            raise TypeError(f"not a core program: {node!r}")

    def final_item(self, item, z) -> bool:
        if item[0] == "*":
            return True
        _, node, env = item
        if isinstance(node, Act):
            return False
        if isinstance(node, Test):
            return self.holds(z, node.cond, env)
        if isinstance(node, Seq):
            return (self.final_item(("p", node.first, env), z)
                    and self.final_item(("p", node.second, env), z))
        if isinstance(node, Choice):
            return (self.final_item(("p", node.left, env), z)
                    or self.final_item(("p", node.right, env), z))
        if isinstance(node, Pick):
            return any(self.final_item(("p", node.body, env + ((node.var, v),)), z)
                       for v in self.bat.carrier(node.sort))
        if isinstance(node, Star):
            return True
        raise TypeError(f"not a core program: {node!r}")

    def final(self, items, z) -> bool:
        return all(self.final_item(it, z) for it in items)


def _start(prog, env=None) -> tuple:
    env = tuple((env or {}).items())
    return (("p", expand_sugar(prog), env),)


def _materialize(items: tuple):
    progs = []
    for it in items:
        if it[0] == "*":
            progs.append(Star(_bind(it[1], it[2])))
        else:
            progs.append(_bind(it[1], it[2]))
    return seq_all(progs) if progs else NIL


def _bind(node, env):
    done = set()
    for name, value in reversed(env):
        if name not in done:
            node = substitute(node, name, term_of(value))
            done.add(name)
    return node


def step(bat: GroundBAT, e, w: World, cfg: Configuration) -> list:
    """Successor configurations of ``cfg`` (empty when blocked)."""
    r = _Runner(bat, e, w, star_bound=None)
    out, seen = [], set()
    for a, res in r.trans(_start(cfg.program), tuple(cfg.trace)):
        c = Configuration(tuple(cfg.trace) + (a,), _materialize(res))
        if c not in seen:
            seen.add(c)
            out.append(c)
    return out


def is_final(bat: GroundBAT, e, w: World, cfg: Configuration) -> bool:
    r = _Runner(bat, e, w, star_bound=None)
    return r.final(_start(cfg.program), tuple(cfg.trace))


def traces(bat: GroundBAT, e, w: World, z0, prog, star_bound: int, *, env=None,
           evaluator: Optional[Evaluator] = None, positive_only: bool = False,
           config: Optional[EvalConfig] = None) -> TraceSet:
    """The traces of ``prog`` from ``z0`` (extensions only), iterations capped at ``star_bound``."""
    if star_bound is None or star_bound < 0:
        raise ValueError("star_bound must be a non-negative integer")
    z0 = tuple(z0)
    r = _Runner(bat, e, w, star_bound=star_bound, evaluator=evaluator,
                positive_only=positive_only, config=config)
    found, out = set(), []
    seen = set()
    stack = [((), _start(prog, env))]
    while stack:
        ext, items = stack.pop()
        key = (ext, _items_key(items))
        if key in seen:
            continue
        seen.add(key)
        z = z0 + ext
        if ext not in found and r.final(items, z):
            found.add(ext)
            out.append(ext)
        succ = list(r.trans(items, z))
        for a, res in reversed(succ):
            stack.append((ext + (a,), res))
    return TraceSet(tuple(sorted(out, key=_trace_order)), not r.truncated)


def _trace_order(z):
    return (len(z), repr(z))


def reachable(bat: GroundBAT, e, w: World, z0, prog, target, star_bound: int, *,
              evaluator: Optional[Evaluator] = None) -> Reachability:
    """Follow ``target`` action by action from ``prog``; report finality at the end."""
    z0, target = tuple(z0), tuple(target)
    r = _Runner(bat, e, w, star_bound=star_bound, evaluator=evaluator)
    frontier = {_items_key(it): it for it in [_start(prog)]}
    liks = []
    for i, a in enumerate(target):
        z = z0 + target[:i]
        nxt = {}
        for items in frontier.values():
            for b, res in r.trans(items, z):
                if b == a:
                    nxt.setdefault(_items_key(res), res)
        if not nxt:
            return Reachability(False, False, i, liks, r.truncated)
        liks.append(bat.likelihood(w, z, a))
        frontier = nxt
    z = z0 + target
    final = any(r.final(items, z) for items in frontier.values())
    return Reachability(True, final, None, liks, r.truncated)


def _nature_key(bat: GroundBAT, a):
    if not isinstance(a, tuple):
        return a
    decl = bat.theory.actions.get(a[0])
    if decl is None:
        return a
    return (a[0],) + tuple(None if o else v for v, o in zip(a[1:], decl.outcome))


def sample_trace(bat: GroundBAT, e, w: World, z0, prog, seed=None, policy: str = "first", *,
                 star_bound: int = 8, rng: Optional[random.Random] = None,
                 evaluator: Optional[Evaluator] = None):
    """One execution; outcome arguments are drawn by likelihood, the rest by ``policy``.

    Returns a :class:`Sample` or :class:`Blocked`.
    """
    if policy not in ("first", "random"):
        raise ValueError(f"unknown policy {policy!r}")
    rng = rng or random.Random(seed)
    z0 = tuple(z0)
    r = _Runner(bat, e, w, star_bound=star_bound, evaluator=evaluator)
    items = _start(prog)
    ext = ()
    lik = Fraction(1)
    limit = max(1, star_bound) * max(1, program_size(expand_sugar(prog)))
    for _ in range(limit + 1):
        z = z0 + ext
        final = r.final(items, z)
        groups: dict = {}
        val = bat.valuation(w, z)
        for a, res in r.trans(items, z):
            k = (_nature_key(bat, a), _items_key(res))
            g = groups.setdefault(k, {})
            g.setdefault(a, res)
        options = []
        for g in groups.values():
            weights = [(a, res, bat.likelihood_at(val, a)) for a, res in g.items()]
            if sum(q for _, _, q in weights) > 0:
                options.append(weights)
        if not options:
            if final:
                return Sample(ext, normalize_number(lik))
            return Blocked(ext, "no transition and not final")
        if policy == "first":
            if final:
                return Sample(ext, normalize_number(lik))
            chosen = options[0]
        else:
            n = len(options) + (1 if final else 0)
            i = rng.randrange(n)
            if i == len(options):
                return Sample(ext, normalize_number(lik))
            chosen = options[i]
        a, res, q = _draw(chosen, rng)
        lik *= q
        ext = ext + (a,)
        items = res
    if r.final(items, z0 + ext):
        return Sample(ext, normalize_number(lik))
    return Blocked(ext, f"step limit {limit} reached")


def _draw(weights, rng):
    """Pick an entry proportionally to its exact rational weight."""
    den = 1
    for _, _, q in weights:
        den = den * Fraction(q).denominator // _gcd(den, Fraction(q).denominator)
    ints = [int(Fraction(q) * den) for _, _, q in weights]
    x = rng.randrange(sum(ints))
    for entry, n in zip(weights, ints):
        if x < n:
            return entry
        x -= n
    raise AssertionError("unreachable")


def _gcd(a, b):
    while b:
        a, b = b, a % b
    return a


@dataclass
class GroupedResult:
    groups: list
    exact: bool
    ambiguous: bool


def grouped_traces(bat: GroundBAT, e, w: World, z0, prog, star_bound: int, *, env=None,
                   evaluator: Optional[Evaluator] = None) -> GroupedResult:
    """Positive-likelihood traces of ``prog`` grouped by (final valuation, observation class).

    Configurations that agree on valuation, observation class and residual
    program have identical futures, so they are merged and their likelihood
    mass summed.  ``ambiguous`` is set when two different residual programs
    share a valuation and observation class, in which case the merged
    masses may count a trace twice and callers should enumerate instead.
    Requires a fluent-free oi axiom.
    """
    if not bat.oi_fluent_free:
        raise ValueError("grouped enumeration needs an oi axiom without fluents")
    z0 = tuple(z0)
    r = _Runner(bat, e, w, star_bound=star_bound, evaluator=evaluator, positive_only=True)
    ev = r.ev
    v0 = bat.valuation(w, z0)
    start = _start(prog, env)
    layer = {(_items_key(start), v0, ()): [start, Fraction(1), 1, ()]}
    results: dict = {}
    ambiguous = False
    while layer:
        shared: dict = {}
        for (ik, v, ck), _ in layer.items():
            s = shared.setdefault((v, ck), ik)
            if s != ik:
                ambiguous = True
        nxt: dict = {}
        for (ik, v, ck), (items, wt, cnt, rep) in layer.items():
            z = z0 + rep
            if r.final(items, z):
                g = results.get((v, ck))
                if g is None:
                    results[(v, ck)] = GroupedTrace(v, ck, wt, cnt, rep)
                else:
                    ambiguous = True
                    g.weight += wt
                    g.count += cnt
            seen = set()
            for a, res in r.trans(items, z):
                rk = _items_key(res)
                if (a, rk) in seen:
                    continue
                seen.add((a, rk))
                q = bat.likelihood_at(v, a)
                v2 = bat.progress(v, a)
                ck2 = ck + ev.class_key((a,))
                key = (rk, v2, ck2)
                hit = nxt.get(key)
                if hit is None:
                    nxt[key] = [res, wt * q, cnt, rep + (a,)]
                else:
                    hit[1] += wt * q
                    hit[2] += cnt
        layer = nxt
    groups = sorted(results.values(), key=lambda g: (len(g.class_key), repr(g.class_key), repr(sorted(g.valuation, key=repr))))
    for g in groups:
        g.weight = normalize_number(g.weight)
    return GroupedResult(groups, not r.truncated, ambiguous)


def belief_endpoints(bat: GroundBAT, e, w: World, z0, prog, star_bound: int, *, env=None,
                     evaluator: Optional[Evaluator] = None, by_support: bool = False) -> tuple:
    """End states of the positive-likelihood traces of ``prog``, up to belief equivalence.

    Returns ``(endpoints, exact)`` where each endpoint is ``(valuation,
    class_key, trace)``: a reachable final valuation, the observation class
    of one trace reaching it and that trace.  Traces whose compatible states
    carry the same normalised weights are interchangeable for every static
    formula and every test, so configurations are merged on (residual
    program, valuation, normalised weights).  With ``by_support`` only the
    set of compatible states with positive weight is compared, which is
    exact when every degree of belief that will be evaluated is 0 or 1.
    Requires a fluent-free oi axiom.
    """
    if not bat.oi_fluent_free:
        raise ValueError("belief endpoints need an oi axiom without fluents")
    z0 = tuple(z0)
    r = _Runner(bat, e, w, star_bound=star_bound, evaluator=evaluator, positive_only=True)
    ev = r.ev
    dists = tuple(ev.e)

    def posterior(ck):
        out = []
        for d in dists:
            f = ev.filter_state(d, ck)
            if by_support:
                out.append(frozenset(k for k, q in f.items() if q))
                continue
            tot = sum(f.values(), Fraction(0))
            out.append(frozenset((k, q / tot) for k, q in f.items() if q) if tot else frozenset())
        return tuple(out)

    ck0 = ev.class_key(z0)
    v0 = bat.valuation(w, z0)
    start = _start(prog, env)
    layer = {(_items_key(start), v0, posterior(ck0)): (start, ck0, ())}
    seen_end = set()
    ends = []
    while layer:
        nxt: dict = {}
        for (ik, v, post), (items, ck, ext) in layer.items():
            z = z0 + ext
            if r.final(items, z) and (v, post) not in seen_end:
                seen_end.add((v, post))
                ends.append((v, ck, ext))
            for a, res in r.trans(items, z):
                ck2 = ck + ev.class_key((a,))
                key = (_items_key(res), bat.progress(v, a), posterior(ck2))
                if key not in nxt:
                    nxt[key] = (res, ck2, ext + (a,))
        layer = nxt
    return ends, not r.truncated
