"""Helpers for running packaged scenarios and editing trace text in tests."""
from __future__ import annotations

from functools import lru_cache
from importlib import resources

from stockcast.runner import run_scenario
from stockcast.scenario import load_scenario, parse_scenario


def scenario_path(name: str):
    return resources.files("stockcast") / "scenarios" / f"{name}.scn"


def load(name: str):
    return parse_scenario(scenario_path(name).read_text())


@lru_cache(maxsize=None)
def trace_of(name: str) -> str:
    return run_scenario(load(name)).trace_text


def edit_lines(text: str, pick, change) -> str:
    """Apply ``change`` to the first line for which ``pick`` is true."""
    lines = text.splitlines()
    for i, line in enumerate(lines):
        cols = line.split("\t")
        if pick(cols):
            lines[i] = change(cols)
            break
    else:
        raise LookupError("no line matched")
    return "\n".join(lines) + "\n"


def insert_after(text: str, pick, new_line: str) -> str:
    lines = text.splitlines()
    idx = next(i for i, line in enumerate(lines) if pick(line.split("\t")))
    lines.insert(idx + 1, new_line)
    return "\n".join(lines) + "\n"


__all__ = ["edit_lines", "insert_after", "load", "load_scenario", "scenario_path", "trace_of"]
