"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import json
import random
import time
from fractions import Fraction

import pytest

import oracles as O
from conftest import weighted_low
from dsgolog import GroundBAT, builtin, parse_formula
from dsgolog.abstraction import build_bisim, theorem_harness
from dsgolog.belief import (Distribution, EpistemicState, EvalConfig, belief_degrees,
                            compatible_states, norm)
from dsgolog.cli import main
from dsgolog.examples import MUTANTS, mutant_mapping
from dsgolog.interpreter import reachable, traces
from dsgolog.lang import Not

B = builtin()
LOW = GroundBAT(B.theory_low)
HIGH = GroundBAT(B.theory_high)
EL, EH = EpistemicState.from_bat(LOW), EpistemicState.from_bat(HIGH)
WL, WH = LOW.initial_worlds()[0][0], HIGH.initial_worlds()[0][0]
LOC = [parse_formula(f"Loc({x})", B.theory_low) for x in range(10)]
PASSED = set()


@pytest.fixture(scope="module")
def certified():
    return build_bisim(B.mapping, HIGH, LOW, EH, WH, EL, WL, 2, 6)


def test_1_abstract_program_has_one_trace(verdict):
    """1: high-level program has exactly the trace <goto(near), goto(far)>"""
    t0 = time.perf_counter()
    ts = traces(HIGH, EH, WH, (), B.program_high, 8)
    dt = time.perf_counter() - t0
    verdict(f"{dt:.3f}s")
    assert ts.exact
    assert ts.as_set() == {(("goto", "near"), ("goto", "far"))}
    assert dt < 1


def test_2_reference_trace_is_reachable(verdict):
    """2: reference trace reachable under star bound 8; finality agrees with the replay oracle"""
    t0 = time.perf_counter()
    z = B.reference_trace
    r = reachable(LOW, EL, WL, (), B.program_low, z, 8)
    licensed, final = O.replay_robot_program({3: 1}, z)
    verdict(f"final={r.final}, oracle final={final}")
    assert r.reachable and licensed
    assert all(q > 0 for q in r.likelihoods)
    assert r.final == final
    assert time.perf_counter() - t0 < 120


def test_3_belief_degrees_match_the_oracle(verdict):
    """3: every Loc degree after every positive trace of length <= 4 equals the brute-force posterior"""
    t0 = time.perf_counter()
    zs = O.positive_traces(3, 4)
    bad = 0
    for z in zs:
        post = O.posterior({3: 1}, z)
        for x in range(10):
            got = belief_degrees(LOW, EL, WL, z, LOC[x])[0]
            want = None if post is None else post.get(x, Fraction(0))
            bad += got != want
    spot = belief_degrees(LOW, EL, WL, (("sonar", 3), ("move", -1, 0), ("sonar", 3)), LOC[3])
    verdict(f"{len(zs)} traces, {bad} mismatches, spot {spot[0]}, {time.perf_counter() - t0:.1f}s")
    assert bad == 0
    assert spot == [Fraction(8, 11)]
    assert time.perf_counter() - t0 < 300
    PASSED.add(3)


def test_4_normalization_invariants(verdict):
    """4: norm, additivity, degrees summing to one and pruning invariance on 200 random cases"""
    bat = GroundBAT(weighted_low(B, {x: 1 for x in range(10)}))
    worlds = {next(iter(w.atoms))[1]: w for w, _ in bat.initial_worlds()}
    rng = random.Random(2024)
    acts = O.ground_actions()
    checked = 0
    while checked < 200:
        support = rng.sample(range(10), rng.randint(1, 4))
        d = Distribution.of({worlds[x]: rng.randint(1, 5) for x in support})
        e = EpistemicState.of(d)
        w = worlds[rng.choice(support)]
        loc = next(iter(w.atoms))[1]
        z = tuple(rng.choice(acts) for _ in range(rng.randint(0, 3)))
        if O.seq_likelihood(loc, z) == 0:
            continue
        checked += 1
        ref = compatible_states(bat, e, d, w, z)
        assert norm(d, ref, ref) == 1
        alpha = LOC[rng.randrange(10)]
        pos = compatible_states(bat, e, d, w, z, alpha)
        neg = compatible_states(bat, e, d, w, z, Not(alpha))
        assert not set(pos.states()) & set(neg.states())
        assert pos.weight(d) + neg.weight(d) == ref.weight(d)
        assert norm(d, pos, ref) + norm(d, neg, ref) == 1
        degs = [belief_degrees(bat, e, w, z, f)[0] for f in LOC]
        assert sum(degs) == 1
        kept = [belief_degrees(bat, e, w, z, f, EvalConfig(keep_zero=True))[0] for f in LOC]
        assert kept == degs
    verdict(f"{checked} cases")
    PASSED.add(4)


def test_5_bisimulation_and_mutants(verdict, certified):
    """5: built-in mapping certified at horizon 2, star bound 6; every mutant refuted by its condition"""
    t0 = time.perf_counter()
    assert certified.certified and certified.definite and certified.counterexample is None
    found = {}
    for name in sorted(MUTANTS):
        cond, m = mutant_mapping(name, B)
        r = build_bisim(m, HIGH, LOW, EH, WH, EL, WL, 2, 6)
        found[name] = r.counterexample.condition if r.counterexample else None
        assert found[name] == cond, name
    verdict(f"{len(certified.groups)} groups; mutants {found}; {time.perf_counter() - t0:.1f}s")
    assert len(set(found.values())) >= 3
    assert time.perf_counter() - t0 < 600
    PASSED.add(5)


def test_6_equivalence_properties(verdict, certified):
    """6: 500 static, 200 bounded and 100 sampled-trace checks on the certified pair"""
    rep = theorem_harness(B.mapping, certified, formula_depth=3, n_static=500, n_bounded=200, n_traces=100,
                          program_star_bound=4, seed=0)
    verdict(f"static {rep.static_checked} ({rep.static_true} true), bounded {rep.bounded_checked} "
            f"({rep.bounded_true} true), traces {rep.trace_checked}; failures "
            f"{len(rep.static_failures) + len(rep.bounded_failures) + len(rep.trace_failures)}")
    assert (rep.static_checked, rep.bounded_checked, rep.trace_checked) == (500, 200, 100)
    assert rep.ok
    PASSED.add(6)


def test_7_sampler_frequencies(verdict, capsys):
    """7: 10000 seeded samples of move(-1) within 0.03 of 0.6 / 0.2 / 0.2"""
    argv = ["--format", "json", "simulate", "--program", "move(-1)", "--runs", "10000", "--seed", "42"]
    assert main(argv) == 0
    first = capsys.readouterr().out
    assert main(argv) == 0
    assert capsys.readouterr().out == first
    freq = {o["trace"]: Fraction(o["frequency"]) for o in json.loads(first)["result"]["outcomes"]}
    want = {"<move(-1, -1)>": Fraction(3, 5), "<move(-1, 0)>": Fraction(1, 5), "<move(-1, -2)>": Fraction(1, 5)}
    verdict(", ".join(f"{k} {float(v):.4f}" for k, v in sorted(freq.items())))
    assert set(freq) == set(want)
    assert all(abs(freq[k] - want[k]) <= Fraction(3, 100) for k in want)


def test_8_desk_scale_substitutes(verdict):
    """8: unbounded-domain claims replaced by the exact finite checks 3 to 6, all passing"""
    verdict(f"passed: {sorted(PASSED)}")
    assert PASSED == {3, 4, 5, 6}
