"""Exact interpreter and abstraction checker for noisy Golog programs."""

from .lang import *  # noqa: F401,F403
from .parser import (DSLError, DSLSemanticError, DSLSyntaxError, TheoryFile, format_theory,
                     load_theory, parse_formula, parse_mapping, parse_program, parse_term,
                     parse_theory, parse_trace, pretty)
from .model import GroundBAT, ModelError, World, State, format_trace
from .belief import (Distribution, EpistemicState, EvalConfig, Evaluator, belief_degrees,
                     compatible_states, evaluate, norm, oi_trace_alternatives)
from .interpreter import TraceSet, reachable, sample_trace, step, is_final, traces
from .abstraction import (BisimRelation, RefinementMapping, build_bisim, check_complete,
                          check_sound, map_formula, map_program, theorem_harness)
from .examples import builtin

__version__ = "0.1.0"
