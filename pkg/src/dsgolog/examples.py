"""Built-in theories: a noisy robot moving towards a wall and its abstraction."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .abstraction import RefinementMapping
from .lang import Program
from .parser import TheoryFile, parse_mapping, parse_program, parse_theory, parse_trace

__all__ = ["ExampleBundle", "builtin", "BUILTINS", "data_text", "MUTANTS", "mutant_mapping", "export"]

BUILTINS = ("move-goto",)

_FILES = {
    "move-goto": {
        "theory_low": "move.dsg",
        "theory_high": "goto.dsg",
        "mapping": "move-goto.map",
        "program_low": "move.prog",
        "program_high": "goto.prog",
        "reference_trace": "move.trace",
    },
}

# Deliberately broken mappings; each should be rejected by a different condition.
MUTANTS = {
    "near-too-narrow": ("1", "l = near & exists x (Loc(x) & x <= 2)", "l = near & exists x (Loc(x) & x <= 1)"),
    "fixed-outcome": ("2", "do move(-1); sonar() done", "do move(-1, -1); sonar() done"),
    "near-never-ends": ("4", "do move(-1); sonar() done", "do move(-1); sonar() done; false?"),
    "mid-allowed": ("5", "done\n    fi", "done\n    else nil\n    fi"),
}


@dataclass(frozen=True)
class ExampleBundle:
    name: str
    theory_low: TheoryFile
    theory_high: TheoryFile
    mapping: RefinementMapping
    program_low: Program
    program_high: Program
    reference_trace: tuple
    texts: dict


def data_text(filename: str) -> str:
    return resources.files("dsgolog").joinpath("data", filename).read_text(encoding="utf-8")


def builtin(name: str = "move-goto") -> ExampleBundle:
    if name not in _FILES:
        raise KeyError(f"unknown example {name!r}; available: {', '.join(BUILTINS)}")
    files = _FILES[name]
    texts = {k: data_text(v) for k, v in files.items()}
    low = parse_theory(texts["theory_low"])
    high = parse_theory(texts["theory_high"])
    mapping = RefinementMapping.from_file(parse_mapping(texts["mapping"], high, low), high)
    return ExampleBundle(
        name=name,
        theory_low=low,
        theory_high=high,
        mapping=mapping,
        program_low=parse_program(texts["program_low"], low),
        program_high=parse_program(texts["program_high"], high),
        reference_trace=parse_trace(texts["reference_trace"], low),
        texts=texts,
    )


def mutant_mapping(name: str, bundle: ExampleBundle | None = None) -> tuple:
    """``(expected_condition, RefinementMapping)`` for one of :data:`MUTANTS`."""
    bundle = bundle or builtin()
    cond, old, new = MUTANTS[name]
    text = bundle.texts["mapping"]
    if old not in text:
        raise ValueError(f"mutation {name} does not apply")
    return cond, RefinementMapping.parse(text.replace(old, new, 1), bundle.theory_high, bundle.theory_low)


def export(name: str, directory) -> list:
    """Write the bundle's source files into ``directory``; returns the written paths."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for filename in _FILES[name].values():
        p = out / filename
        p.write_text(data_text(filename), encoding="utf-8")
        written.append(p)
    return written
