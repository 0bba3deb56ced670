import pytest

from dsgolog import GroundBAT, builtin, format_theory, parse_program, parse_theory, parse_trace
from dsgolog.examples import BUILTINS, MUTANTS, data_text, export, mutant_mapping
from dsgolog.model import exec_trace


def test_builtin_bundle_is_consistent():
    b = builtin()
    assert b.name in BUILTINS
    low = GroundBAT(b.theory_low)
    w = low.initial_worlds()[0][0]
    assert len(b.reference_trace) == 15
    assert exec_trace(low, w, b.reference_trace)
    assert [w.atoms for w, _ in GroundBAT(b.theory_high).initial_worlds()] == [frozenset({("At", "mid")})]


def test_unknown_example():
    with pytest.raises(KeyError):
        builtin("nope")


def test_exported_files_parse_to_the_bundle(tmp_path):
    b = builtin()
    export(b.name, tmp_path)
    low = parse_theory((tmp_path / "move.dsg").read_text())
    assert format_theory(low) == format_theory(b.theory_low)
    assert parse_program((tmp_path / "move.prog").read_text(), low) == b.program_low
    assert parse_trace((tmp_path / "move.trace").read_text(), low) == b.reference_trace


@pytest.mark.parametrize("name", sorted(MUTANTS))
def test_every_mutation_applies_and_changes_the_mapping(name):
    b = builtin()
    cond, m = mutant_mapping(name, b)
    assert cond in {"1", "2", "4", "5"}
    assert (m.fluents, m.actions) != (b.mapping.fluents, b.mapping.actions)


def test_expected_conditions_are_distinct():
    assert len({c for c, _, _ in MUTANTS.values()}) == len(MUTANTS)


def test_export_writes_every_source(tmp_path):
    paths = export("move-goto", tmp_path)
    assert {p.suffix for p in paths} == {".dsg", ".map", ".prog", ".trace"}
    for p in paths:
        assert p.read_text() == data_text(p.name)
