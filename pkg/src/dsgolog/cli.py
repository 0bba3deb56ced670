"""Command-line front end: ``dsgolog {eval,traces,run,simulate,bisim,example}``."""

from __future__ import annotations

import argparse
import hashlib
import itertools
import random
import sys
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

from . import report as rp
from .abstraction import AbstractionError, RefinementMapping, UnmappedSymbol, build_bisim, theorem_harness
from .belief import (BeliefUndefined, ConfigError, EpistemicState, EvalConfig, Evaluator, NormUndefined)
from .examples import BUILTINS, MUTANTS, builtin, export, mutant_mapping
from .interpreter import Sample, reachable, sample_trace, traces
from .lang import And, Belief, Not, format_value, free_vars
from .model import GroundBAT, ModelError, format_trace
from .parser import DSLError, parse_formula, parse_program, parse_theory, parse_trace, pretty

EXIT_OK, EXIT_INPUT, EXIT_SEMANTIC, EXIT_COUNTEREXAMPLE = 0, 2, 3, 4


class InputError(Exception):
    """Bad command-line input that is not a parse error."""


class SemanticError(Exception):
    """Well-formed input that the theory rejects."""


# ---------------------------------------------------------------- inputs

def _read(arg: str, what: str) -> tuple:
    """Inline text, or file contents for ``@path``. Returns ``(label, text)``."""
    if arg.startswith("@"):
        path = Path(arg[1:])
        try:
            return str(path), path.read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read {what} file {path}: {exc.strerror}") from None
    return "inline", arg


def _theory(arg: str):
    """``builtin:low``, ``builtin:high`` or a path to a ``.dsg`` file."""
    if arg.startswith("builtin:"):
        level = arg.split(":", 1)[1]
        b = builtin()
        if level not in ("low", "high"):
            raise InputError(f"unknown built-in theory {arg!r}; use builtin:low or builtin:high")
        return arg, b.texts["theory_" + level], (b.theory_low if level == "low" else b.theory_high)
    path = Path(arg)
    if path.suffix != ".dsg":
        raise InputError(f"theory files must have the .dsg extension: {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read theory {path}: {exc.strerror}") from None
    return str(path), text, parse_theory(text)


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


class _Ctx:
    """Parsed theory plus the epistemic state and actual world it induces."""

    def __init__(self, args, inputs: dict):
        label, text, self.theory = _theory(args.theory)
        inputs["theory"] = label
        inputs["theory_sha256"] = _sha(text)
        self.bat = GroundBAT(self.theory)
        self.e = EpistemicState.from_bat(self.bat)
        worlds = self.bat.initial_worlds()
        idx = getattr(args, "world", 0)
        if not 0 <= idx < len(worlds):
            raise InputError(f"--world {idx} out of range: theory has {len(worlds)} initial world(s)")
        inputs["world"] = idx
        self.w = worlds[idx][0]
        self.z0 = ()
        if getattr(args, "trace", None):
            label, ttext = _read(args.trace, "trace")
            self.z0 = tuple(parse_trace(ttext, self.theory))
            inputs["trace"] = format_trace(self.z0)
            if not self.bat.exec(self.w, self.z0):
                raise SemanticError(f"trace {format_trace(self.z0)} is not executable in world {self.w.describe()}")

    def program(self, arg: str, inputs: dict):
        label, text = _read(arg, "program")
        prog = parse_program(text, self.theory)
        inputs["program"] = pretty(prog, self.theory)
        return prog


def _config(args) -> EvalConfig:
    return EvalConfig(strict_belief=args.strict_belief, box_horizon=args.box_horizon,
                      star_bound=args.star_bound, keep_zero=args.keep_zero)


def _outer_beliefs(f, out: list) -> list:
    """Closed belief atoms that are evaluated at the current trace."""
    match f:
        case Belief():
            if not free_vars(f):
                out.append(f)
        case And(a, b):
            _outer_beliefs(a, out)
            _outer_beliefs(b, out)
        case Not(b):
            _outer_beliefs(b, out)
    return out


# -------------------------------------------------------------- commands

def cmd_eval(args, rep: rp.Report) -> int:
    ctx = _Ctx(args, rep.inputs)
    label, text = _read(args.formula, "formula")
    f = parse_formula(text, ctx.theory)
    rep.inputs["formula"] = pretty(f, ctx.theory)
    ev = Evaluator(ctx.bat, ctx.e, _config(args))
    value = ev.holds(ctx.w, ctx.z0, f)
    rep.result["value"] = value
    rep.say(f"{pretty(f, ctx.theory)} at {format_trace(ctx.z0)}: {'true' if value else 'false'}")
    beliefs = []
    for b in _outer_beliefs(f, []):
        degs = [ev.degree(d, ctx.w, ctx.z0, b.body) for d in ev.e]
        beliefs.append({"formula": pretty(b.body, ctx.theory), "degrees": degs})
        rep.say(f"  degree of {pretty(b.body, ctx.theory)}: " + ", ".join(_fmt_degree(q) for q in degs))
    if beliefs:
        rep.result["beliefs"] = beliefs
    if args.belief_table:
        rows = _belief_table(ctx, ev, args.belief_table)
        rep.result["belief_table"] = [{"atom": a, "degree": q} for a, q in rows]
        rep.say(f"belief table for {args.belief_table}:")
        for a, q in rows:
            rep.say(f"  {a:<14} {_fmt_degree(q)}")
        if args.plot_dir:
            rep.figures.append(rp.plot_belief_table(
                rows, Path(args.plot_dir) / f"belief-{args.belief_table}.png",
                title=f"{args.belief_table} after {format_trace(ctx.z0)}"))
    return EXIT_OK


def _fmt_degree(q) -> str:
    return "undefined" if q is None else rp.rational(q)


def _belief_table(ctx: _Ctx, ev: Evaluator, fluent: str) -> list:
    decl = ctx.theory.fluents.get(fluent)
    if decl is None:
        raise InputError(f"unknown fluent {fluent!r}")
    carriers = [ctx.bat.carrier(s) for s in decl.arg_sorts]
    rows = []
    d = ev.e.distributions[0]
    for args in itertools.product(*carriers):
        atom = f"{fluent}({', '.join(format_value(a) for a in args)})" if args else fluent
        rows.append((atom, ev.degree(d, ctx.w, ctx.z0, parse_formula(atom, ctx.theory))))
    return rows


def cmd_traces(args, rep: rp.Report) -> int:
    ctx = _Ctx(args, rep.inputs)
    prog = ctx.program(args.program, rep.inputs)
    rep.inputs["star_bound"] = args.star_bound
    ts = traces(ctx.bat, ctx.e, ctx.w, ctx.z0, prog, args.star_bound, positive_only=args.positive_only,
                config=_config(args))
    rep.truncated = not ts.exact
    rows = []
    for z in ts.traces:
        lik = Fraction(ctx.bat.seq_likelihood(ctx.w, ctx.z0 + tuple(z))) / (ctx.bat.seq_likelihood(ctx.w, ctx.z0) or 1)
        rows.append({"trace": format_trace(z), "likelihood": lik})
    rep.result.update(exact=ts.exact, count=len(rows), traces=rows)
    rep.say(f"{len(rows)} execution(s){'' if ts.exact else ' (bounded)'}:")
    for r in rows:
        rep.say(f"  {r['trace']}  likelihood {rp.rational(r['likelihood'])}")
    return EXIT_OK


def cmd_run(args, rep: rp.Report) -> int:
    ctx = _Ctx(args, rep.inputs)
    prog = ctx.program(args.program, rep.inputs)
    rep.inputs.update(star_bound=args.star_bound)
    ev = Evaluator(ctx.bat, ctx.e, _config(args))
    if args.target:
        label, ttext = _read(args.target, "target trace")
        target = tuple(parse_trace(ttext, ctx.theory))
        rep.inputs["target"] = format_trace(target)
        r = reachable(ctx.bat, ctx.e, ctx.w, ctx.z0, prog, target, args.star_bound, evaluator=ev)
        rep.truncated = r.truncated
        rep.result.update(reachable=r.reachable, final=r.final, failed_at=r.failed_at,
                          likelihoods=list(r.likelihoods))
        if r.reachable:
            rep.say(f"reachable: every step licensed, likelihood {rp.rational(_prod(r.likelihoods))}")
            rep.say(f"final: {'yes' if r.final else 'no'}")
        else:
            rep.say(f"not reachable: step {r.failed_at} ({format_value(target[r.failed_at])}) is not licensed")
        return EXIT_OK
    rep.inputs.update(seed=args.seed, policy=args.policy)
    s = sample_trace(ctx.bat, ctx.e, ctx.w, ctx.z0, prog, seed=args.seed, policy=args.policy,
                     star_bound=args.star_bound, evaluator=ev)
    if isinstance(s, Sample):
        rep.result.update(status="final", trace=format_trace(s.trace), likelihood=s.likelihood)
        rep.say(f"final after {format_trace(s.trace)}  likelihood {rp.rational(s.likelihood)}")
    else:
        rep.result.update(status="blocked", trace=format_trace(s.trace), reason=s.reason)
        rep.say(f"blocked after {format_trace(s.trace)}: {s.reason}")
    return EXIT_OK


def _prod(xs):
    out = Fraction(1)
    for x in xs:
        out *= x
    return out


def _simulate_chunk(job):
    bat, e, w, z0, prog, seeds, policy, bound, config = job
    ev = Evaluator(bat, e, config)
    out = []
    for s in seeds:
        r = sample_trace(bat, e, w, z0, prog, policy=policy, star_bound=bound, rng=random.Random(s),
                         evaluator=ev)
        out.append((isinstance(r, Sample), r.trace, getattr(r, "likelihood", None)))
    return out


def cmd_simulate(args, rep: rp.Report) -> int:
    ctx = _Ctx(args, rep.inputs)
    prog = ctx.program(args.program, rep.inputs)
    if args.runs < 1:
        raise InputError("--runs must be positive")
    rep.inputs.update(runs=args.runs, seed=args.seed, policy=args.policy, star_bound=args.star_bound)
    # one seed per run keeps the outcome independent of --jobs
    seeds = [(args.seed << 32) | i for i in range(args.runs)]
    jobs = max(1, args.jobs)
    chunk = -(-len(seeds) // jobs)
    work = [(ctx.bat, ctx.e, ctx.w, ctx.z0, prog, seeds[i:i + chunk], args.policy, args.star_bound,
             _config(args)) for i in range(0, len(seeds), chunk)]
    if jobs == 1:
        results = [r for job in work for r in _simulate_chunk(job)]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = [r for part in pool.map(_simulate_chunk, work) for r in part]
    counts = Counter((ok, tuple(z)) for ok, z, _ in results)
    lik = {(ok, tuple(z)): q for ok, z, q in results}
    keys = sorted(counts, key=lambda k: (-counts[k], format_trace(k[1])))
    rows = []
    for k in keys:
        ok, z = k
        rows.append({"trace": format_trace(z), "status": "final" if ok else "blocked", "count": counts[k],
                     "frequency": Fraction(counts[k], args.runs), "likelihood": lik[k]})
    blocked = sum(r["count"] for r in rows if r["status"] == "blocked")
    rep.result.update(runs=args.runs, blocked=blocked, outcomes=rows)
    rep.say(f"{args.runs} run(s), seed {args.seed}, {blocked} blocked")
    for r in rows:
        extra = "" if r["likelihood"] is None else f"  likelihood {rp.rational(r['likelihood'])}"
        rep.say(f"  {r['trace']:<40} {r['count']:>7}  {float(r['frequency']):.4f}{extra}"
                + ("  [blocked]" if r["status"] == "blocked" else ""))
    if args.plot_dir:
        data = [(r["trace"], r["count"], args.runs, r["likelihood"] or 0) for r in rows[:20]]
        rep.figures.append(rp.plot_frequencies(data, Path(args.plot_dir) / "simulate.png"))
    return EXIT_OK


def _bisim_inputs(args, rep: rp.Report):
    b = builtin()
    hl, htext, high = _theory(args.high)
    ll, ltext, low = _theory(args.low)
    rep.inputs.update(high=hl, high_sha256=_sha(htext), low=ll, low_sha256=_sha(ltext))
    if args.mutant:
        if args.high != "builtin:high" or args.low != "builtin:low" or args.mapping:
            raise InputError("--mutant only applies to the built-in theories and mapping")
        cond, mapping = mutant_mapping(args.mutant, b)
        rep.inputs["mutant"] = args.mutant
        rep.result["expected_condition"] = cond
    elif args.mapping:
        label, mtext = _read(args.mapping, "mapping")
        mapping = RefinementMapping.parse(mtext, high, low)
        rep.inputs.update(mapping=label, mapping_sha256=_sha(mtext))
    elif args.high == "builtin:high" and args.low == "builtin:low":
        mapping = b.mapping
        rep.inputs["mapping"] = "builtin"
    else:
        raise InputError("--mapping is required for non-built-in theories")
    return high, low, mapping


def cmd_bisim(args, rep: rp.Report) -> int:
    high, low, mapping = _bisim_inputs(args, rep)
    rep.inputs.update(horizon=args.horizon, star_bound=args.star_bound)
    bat_h, bat_l = GroundBAT(high), GroundBAT(low)
    e_h, e_l = EpistemicState.from_bat(bat_h), EpistemicState.from_bat(bat_l)
    w_h, w_l = bat_h.initial_worlds()[0][0], bat_l.initial_worlds()[0][0]
    rel = build_bisim(mapping, bat_h, bat_l, e_h, w_h, e_l, w_l, args.horizon, args.star_bound)
    rep.truncated = rel.truncated
    rep.result.update(verdict=rel.verdict, definite=rel.definite, horizon=rel.horizon,
                      star_bound=rel.star_bound, stats=dict(rel.stats), warnings=list(rel.warnings))
    rep.say(f"verdict: {rel.verdict} (horizon {rel.horizon}, star bound {rel.star_bound})")
    code = EXIT_OK
    if rel.counterexample:
        cx = rel.counterexample
        rep.result["counterexample"] = {"condition": cx.condition, "high": str(cx.high), "low": str(cx.low),
                                        "detail": cx.detail}
        rep.say("counterexample: " + cx.describe())
        code = EXIT_COUNTEREXAMPLE
    else:
        rep.say(f"definite: {'yes' if rel.definite else 'no'}")
        per_high = Counter(str(g.high) for g in rel.groups)
        rep.result["related_high_states"] = len(per_high)
        rep.result["groups"] = len(rel.groups)
        rep.say(f"{len(rel.groups)} related groups over {len(per_high)} high-level states")
        if args.plot_dir:
            rep.figures.append(rp.plot_relation(sorted(per_high.items()), Path(args.plot_dir) / "relation.png"))
    for k, v in rel.stats.items():
        rep.say(f"  {k}: {v}")
    for wmsg in rel.warnings:
        rep.say(f"warning: {wmsg}")
    if args.harness and rel.certified:
        rep.inputs["seed"] = args.seed
        th = theorem_harness(mapping, rel, n_static=args.static, n_bounded=args.bounded,
                             n_traces=args.samples, seed=args.seed)
        rep.result["harness"] = {
            "seed": th.seed,
            "static": {"checked": th.static_checked, "true": th.static_true, "failures": len(th.static_failures)},
            "bounded": {"checked": th.bounded_checked, "true": th.bounded_true,
                        "failures": len(th.bounded_failures)},
            "traces": {"checked": th.trace_checked, "failures": len(th.trace_failures)},
        }
        rep.say(f"static formulas: {th.static_checked} checked, {len(th.static_failures)} disagreements")
        rep.say(f"program formulas: {th.bounded_checked} checked, {len(th.bounded_failures)} disagreements")
        rep.say(f"trace correspondence: {th.trace_checked} checked, {len(th.trace_failures)} failures")
        for f, hs, ls, a, b in (th.static_failures + th.bounded_failures)[:5]:
            rep.say(f"  disagreement on {pretty(f)} at {hs} / {ls}: {a} vs {b}")
        for prog, hs, ls, problem in th.trace_failures[:5]:
            rep.say(f"  {pretty(prog)} at {hs}: {problem}")
        if not th.ok:
            code = EXIT_COUNTEREXAMPLE
    return code


def cmd_example(args, rep: rp.Report) -> int:
    name = args.name
    if name not in BUILTINS:
        raise InputError(f"unknown example {name!r}; available: {', '.join(BUILTINS)}")
    rep.inputs["name"] = name
    b = builtin(name)
    if args.export:
        paths = export(name, args.export)
        rep.result["files"] = [p.name for p in paths]
        rep.say(f"wrote {len(paths)} file(s) to {args.export}")
        for p in paths:
            rep.say(f"  {p.name}")
        return EXIT_OK
    parts = [args.show] if args.show else list(b.texts)
    for part in parts:
        rep.result[part] = b.texts[part]
        rep.say(f"# {part}")
        rep.say(b.texts[part].rstrip("\n"))
        rep.say()
    if args.list_mutants:
        rep.result["mutants"] = {k: v[0] for k, v in MUTANTS.items()}
        for k, v in MUTANTS.items():
            rep.say(f"mutant {k}: expected to break condition {v[0]}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _common(p, *, program=False):
    p.add_argument("--theory", default="builtin:low",
                   help="a .dsg file, or builtin:low / builtin:high (default builtin:low)")
    p.add_argument("--trace", help="starting trace, e.g. 'sonar(3), move(-1,0)'; @FILE reads a file")
    p.add_argument("--world", type=int, default=0, help="index of the actual initial world")
    p.add_argument("--star-bound", type=int, default=8, help="maximum loop iterations per branch")
    p.add_argument("--strict-belief", action="store_true", help="error on undefined degrees of belief")
    p.add_argument("--keep-zero", action="store_true", help="keep zero-likelihood alternatives")
    p.add_argument("--box-horizon", type=int, default=None, help="depth bound for [] formulas")
    if program:
        p.add_argument("--program", required=True, help="program text, or @FILE")


def _globals(p, default):
    p.add_argument("--format", choices=("text", "json"), default=default or "text")
    p.add_argument("--timing", action="store_true", default=default or False,
                   help="include wall-clock time in the report")
    p.add_argument("--jobs", type=int, default=default or 1, help="worker processes for sampling")
    p.add_argument("--plot-dir", default=default, help="write figures into this directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dsgolog", description=__doc__)
    _globals(ap, None)
    # the same flags are accepted after the subcommand without clobbering earlier ones
    shared = argparse.ArgumentParser(add_help=False)
    _globals(shared, argparse.SUPPRESS)
    sub = ap.add_subparsers(dest="command", required=True)
    _add = sub.add_parser
    sub.add_parser = lambda *a, **k: _add(*a, parents=[shared], **k)

    p = sub.add_parser("eval", help="evaluate a formula after a trace")
    _common(p)
    p.add_argument("--formula", required=True, help="formula text, or @FILE")
    p.add_argument("--belief-table", metavar="FLUENT", help="also list degrees for every ground atom of FLUENT")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("traces", help="enumerate the executions of a program")
    _common(p, program=True)
    p.add_argument("--positive-only", action="store_true", help="drop zero-likelihood executions")
    p.set_defaults(func=cmd_traces)

    p = sub.add_parser("run", help="sample one execution, or check a given trace against the program")
    _common(p, program=True)
    p.add_argument("--target", help="trace to replay through the program instead of sampling")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", choices=("first", "random"), default="first")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("simulate", help="sample many executions and tabulate outcomes")
    _common(p, program=True)
    p.add_argument("--runs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", choices=("first", "random"), default="random")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bisim", help="check a refinement mapping up to a bound")
    p.add_argument("--high", default="builtin:high")
    p.add_argument("--low", default="builtin:low")
    p.add_argument("--mapping", help="mapping text, or @FILE (defaults to the built-in one)")
    p.add_argument("--mutant", choices=sorted(MUTANTS), help="use a deliberately broken built-in mapping")
    p.add_argument("--horizon", type=int, default=2)
    p.add_argument("--star-bound", type=int, default=6)
    p.add_argument("--harness", action="store_true", help="also run the randomized equivalence checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--static", type=int, default=500, help="static formulas for --harness")
    p.add_argument("--bounded", type=int, default=200, help="program formulas for --harness")
    p.add_argument("--samples", type=int, default=100, help="sampled executions for --harness")
    p.set_defaults(func=cmd_bisim)

    p = sub.add_parser("example", help="print or export a built-in example")
    p.add_argument("name", nargs="?", default="move-goto")
    p.add_argument("--show", choices=("theory_low", "theory_high", "mapping", "program_low", "program_high",
                                      "reference_trace"))
    p.add_argument("--export", metavar="DIR", help="write the example files into DIR")
    p.add_argument("--list-mutants", action="store_true")
    p.set_defaults(func=cmd_example)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "star_bound", 0) < 0 or args.jobs < 1 or getattr(args, "horizon", 0) < 0:
        ap.error("bounds must be non-negative and --jobs at least 1")
    rep = rp.Report(args.command, {})
    t0 = time.perf_counter()
    try:
        code = args.func(args, rep)
    except DSLError as exc:
        print(f"dsgolog: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, UnmappedSymbol, KeyError) as exc:
        msg = exc.args[0] if exc.args else exc
        print(f"dsgolog: input error: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except (SemanticError, ModelError, NormUndefined, BeliefUndefined, ConfigError, AbstractionError) as exc:
        print(f"dsgolog: semantic error: {exc}", file=sys.stderr)
        return EXIT_SEMANTIC
    if args.timing:
        rep.timing_ms = round((time.perf_counter() - t0) * 1000)
    print(rep.render(args.format))
    return code


if __name__ == "__main__":
    sys.exit(main())
