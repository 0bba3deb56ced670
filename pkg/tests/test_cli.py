import json
import re

import pytest

from dsgolog.cli import main

SPOT = "sonar(3), move(-1,0), sonar(3)"


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def as_json(capsys, *argv):
    code, out, _ = run(capsys, "--format", "json", *argv)
    return code, json.loads(out)


def no_floats(x):
    if isinstance(x, float):
        return False
    if isinstance(x, dict):
        return all(no_floats(v) for v in x.values())
    if isinstance(x, list):
        return all(no_floats(v) for v in x)
    return True


def test_eval_reports_exact_degree(capsys):
    code, doc = as_json(capsys, "eval", "--formula", "B(Loc(3) : 8/11)", "--trace", SPOT)
    assert code == 0
    assert doc["schema"] == 1 and doc["result"]["value"] is True
    assert doc["result"]["beliefs"][0]["degrees"] == ["8/11"]
    assert no_floats(doc)


def test_global_flags_after_the_subcommand(capsys):
    code, out, _ = run(capsys, "eval", "--formula", "Loc(3)", "--format", "json")
    assert code == 0 and json.loads(out)["result"]["value"] is True


def test_belief_table_and_plot(capsys, tmp_path):
    code, out, _ = run(capsys, "--plot-dir", str(tmp_path), "eval", "--formula", "K(Loc(3))",
                       "--trace", SPOT, "--belief-table", "Loc")
    assert code == 0
    assert re.search(r"Loc\(3\)\s+8/11", out) and re.search(r"Loc\(2\)\s+3/11", out)
    assert [p.suffix for p in tmp_path.iterdir()] == [".png"]


def test_traces_of_the_high_program(capsys):
    code, doc = as_json(capsys, "traces", "--theory", "builtin:high",
                        "--program", "if !At(near) then goto(near) fi; goto(far)")
    assert code == 0
    assert [t["trace"] for t in doc["result"]["traces"]] == ["<goto(near), goto(far)>"]
    assert no_floats(doc)


def test_reference_trace_is_reachable(capsys):
    from dsgolog import builtin
    b = builtin()
    code, doc = as_json(capsys, "run", "--program", b.texts["program_low"], "--target", b.texts["reference_trace"])
    assert code == 0
    assert doc["result"]["reachable"] is True and doc["result"]["final"] is False


def test_simulate_is_deterministic_across_workers(capsys):
    args = ("simulate", "--program", "move(-1)", "--runs", "300", "--seed", "9")
    _, one, _ = run(capsys, "--format", "json", "--jobs", "1", *args)
    _, four, _ = run(capsys, "--format", "json", "--jobs", "4", *args)
    assert one == four
    doc = json.loads(one)
    assert sum(o["count"] for o in doc["result"]["outcomes"]) == 300
    assert no_floats(doc)


def test_simulate_plot(capsys, tmp_path):
    code, _, _ = run(capsys, "--plot-dir", str(tmp_path), "simulate", "--program", "move(-1)", "--runs", "20")
    assert code == 0 and any(tmp_path.glob("*.png"))


def test_bisim_certifies_the_builtin_mapping(capsys):
    code, doc = as_json(capsys, "bisim", "--horizon", "1", "--star-bound", "4")
    assert code == 0
    assert doc["result"]["verdict"] == "certified-to-bound"


@pytest.mark.parametrize("mutant, cond", [("near-too-narrow", "1"), ("mid-allowed", "5")])
def test_bisim_reports_mutants(capsys, mutant, cond):
    code, doc = as_json(capsys, "bisim", "--mutant", mutant, "--horizon", "1", "--star-bound", "4")
    assert code == 4
    assert doc["result"]["counterexample"]["condition"] == cond


def test_small_harness(capsys):
    code, doc = as_json(capsys, "bisim", "--horizon", "1", "--star-bound", "4", "--harness",
                        "--static", "20", "--bounded", "5", "--samples", "5")
    assert code == 0


def test_timing_is_opt_in(capsys):
    _, doc = as_json(capsys, "eval", "--formula", "Loc(3)")
    assert "timing_ms" not in doc
    _, doc = as_json(capsys, "--timing", "eval", "--formula", "Loc(3)")
    assert "timing_ms" in doc


def test_files_can_be_read_with_at(capsys, tmp_path):
    f = tmp_path / "f.txt"
    f.write_text("Loc(3)\n")
    assert run(capsys, "eval", "--formula", f"@{f}")[0] == 0


def test_example_export(capsys, tmp_path):
    assert run(capsys, "example", "--export", str(tmp_path))[0] == 0
    assert (tmp_path / "move.dsg").exists()


@pytest.mark.parametrize("argv", [
    ("eval", "--formula", "Loc(3"),
    ("eval", "--formula", "Loc(3)", "--theory", "theory.txt"),
    ("traces", "--program", "@/nonexistent/file"),
    ("eval", "--formula", "Nope(1)"),
])
def test_input_errors(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2 and err.startswith("dsgolog:")


def test_non_executable_trace_is_a_semantic_error(capsys):
    code, _, err = run(capsys, "eval", "--formula", "Loc(3)", "--trace", "move(2, 2)")
    assert code == 3 and "not executable" in err
    code, _, _ = run(capsys, "eval", "--formula", "Loc(3)", "--trace", "sonar(9)", "--strict-belief")
    assert code == 0
    code, _, _ = run(capsys, "eval", "--formula", "K(Loc(3))", "--trace", "sonar(9)", "--strict-belief")
    assert code == 3
