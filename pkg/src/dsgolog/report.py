"""Structured reports and figures for command results."""

from __future__ import annotations

import hashlib
import json
from fractions import Fraction
from pathlib import Path

SCHEMA = 1

__all__ = ["SCHEMA", "Report", "rational", "to_jsonable", "plot_frequencies", "plot_belief_table",
           "plot_relation"]


def rational(q) -> str:
    q = Fraction(q)
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def to_jsonable(x):
    if isinstance(x, bool) or x is None or isinstance(x, str):
        return x
    if isinstance(x, int):
        return x
    if isinstance(x, Fraction):
        return rational(x)
    if isinstance(x, float):
        raise TypeError("floats are not allowed in reports")
    if isinstance(x, dict):
        return {str(k): to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    return str(x)


class Report:
    """Result of one command; renders as text or as versioned JSON."""

    def __init__(self, command: str, inputs: dict):
        self.command = command
        self.inputs = inputs
        self.result: dict = {}
        self.truncated = False
        self.lines: list = []
        self.timing_ms = None
        self.figures: list = []

    @property
    def digest(self) -> str:
        blob = json.dumps(to_jsonable(self.inputs), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def say(self, line: str = "") -> None:
        self.lines.append(line)

    def as_dict(self) -> dict:
        d = {
            "schema": SCHEMA,
            "command": self.command,
            "inputs": to_jsonable(self.inputs),
            "digest": self.digest,
            "result": to_jsonable(self.result),
            "truncated": self.truncated,
        }
        if self.figures:
            d["figures"] = [str(p) for p in self.figures]
        if self.timing_ms is not None:
            d["timing_ms"] = self.timing_ms
        return d

    def render(self, fmt: str = "text") -> str:
        if fmt == "json":
            return json.dumps(self.as_dict(), indent=2, sort_keys=True, ensure_ascii=False)
        out = list(self.lines)
        if self.truncated:
            out.append("note: exploration was cut off by the star bound; results are bounded")
        out.extend(f"figure: {p}" for p in self.figures)
        if self.timing_ms is not None:
            out.append(f"time: {self.timing_ms} ms")
        return "\n".join(out)


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    return path


def plot_frequencies(rows, path, title: str = "Sampled executions") -> Path:
    """Bar chart of empirical frequencies, with each trace's likelihood marked.

    ``rows`` holds ``(label, count, total, likelihood)`` tuples.
    """
    plt = _pyplot()
    labels = [r[0] for r in rows]
    freq = [r[1] / r[2] for r in rows]
    lik = [float(r[3]) for r in rows]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(rows) + 2), 3.6))
    xs = range(len(rows))
    ax.bar(xs, freq, color="#4c72b0", label="observed")
    ax.scatter(xs, lik, color="#c44e52", marker="_", s=600, linewidths=2.5, zorder=3, label="likelihood")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1)
    ax.set_ylabel("frequency")
    ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    try:
        return _save(fig, path)
    finally:
        plt.close(fig)


def plot_belief_table(rows, path, title: str = "Degrees of belief") -> Path:
    """``rows`` holds ``(label, degree)``; undefined degrees are drawn as gaps."""
    plt = _pyplot()
    labels = [r[0] for r in rows]
    vals = [0.0 if r[1] is None else float(r[1]) for r in rows]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(rows) + 2), 3.4))
    ax.bar(range(len(rows)), vals, color="#55a868")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1)
    ax.set_ylabel("degree")
    ax.set_title(title)
    try:
        return _save(fig, path)
    finally:
        plt.close(fig)


def plot_relation(rows, path, title: str = "Related low-level groups") -> Path:
    """``rows`` holds ``(high_label, n_groups)`` for each related high-level state."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.0, max(2.5, 0.3 * len(rows) + 1)))
    ax.barh(range(len(rows)), [r[1] for r in rows], color="#8172b2")
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels([r[0] for r in rows], fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("groups")
    ax.set_title(title)
    try:
        return _save(fig, path)
    finally:
        plt.close(fig)
