"""Shared plumbing for evaluator-script tests: run the scripts exactly the way
the engine does (a subprocess with --code/--callbacks flags) and parse the
result block from stdout."""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

SCRIPTS_DIR = Path(__file__).parent.parent
TSP_EVAL = SCRIPTS_DIR / "tsp_eval.py"
BPP_EVAL = SCRIPTS_DIR / "bpp_eval.py"
DRIVING_EVAL = SCRIPTS_DIR / "driving_replay_eval.py"
FIXTURES = SCRIPTS_DIR / "fixtures"

RESULT_BEGIN = "[[ORA_RESULT]]"
RESULT_END = "[[/ORA_RESULT]]"


def run_script(script: Path, *args: str, timeout: float = 60.0):
    return subprocess.run(
        [sys.executable, str(script), *args],
        capture_output=True,
        text=True,
        timeout=timeout,
    )


def parse_block(stdout: str) -> dict:
    begin = stdout.rindex(RESULT_BEGIN) + len(RESULT_BEGIN)
    end = stdout.index(RESULT_END, begin)
    return json.loads(stdout[begin:end].strip())


def has_block(stdout: str) -> bool:
    return RESULT_BEGIN in stdout and RESULT_END in stdout


@pytest.fixture
def write_candidate(tmp_path):
    def _write(source: str, name: str = "candidate.py") -> Path:
        path = tmp_path / name
        path.write_text(source)
        return path

    return _write
