import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from dsgolog import EpistemicState, GroundBAT, builtin, parse_theory  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def bundle():
    return builtin("move-goto")


@pytest.fixture(scope="session")
def low(bundle):
    bat = GroundBAT(bundle.theory_low)
    return bat, EpistemicState.from_bat(bat), bat.initial_worlds()[0][0]


@pytest.fixture(scope="session")
def high(bundle):
    bat = GroundBAT(bundle.theory_high)
    return bat, EpistemicState.from_bat(bat), bat.initial_worlds()[0][0]


def low_variant(bundle, old: str, new: str):
    """The low-level theory with one textual change."""
    text = bundle.texts["theory_low"]
    assert old in text, old
    return parse_theory(text.replace(old, new, 1))


def weighted_low(bundle, weights: dict):
    """The low-level theory with an explicit weighted prior over start positions."""
    worlds = " ".join(f"world {w} {{Loc({x})}};" for x, w in weights.items())
    return low_variant(bundle, "Loc(x) <-> x = 3;", worlds)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.call_report = rep


@pytest.fixture
def verdict(request, capsys):
    """Print one PASS/FAIL line for the calling acceptance test once it finishes."""
    notes = []
    yield notes.append
    rep = getattr(request.node, "call_report", None)
    status = "PASS" if rep is not None and rep.passed else "FAIL"
    label = request.node.function.__doc__.strip().splitlines()[0]
    with capsys.disabled():
        print(f"\n[acceptance] {status}  {label}" + (f"  ({'; '.join(notes)})" if notes else ""))
