import json
import sys

import yaml

from helpers import ECHO_EVAL, code_entry, entry, summary_entry, terminate_entry
from ora.cli import main

CANVAS = {
    "problem_description": "Maximize the toy objective.",
    "function_description": "A module defining SCORE = <float>.",
    "evaluation_command": f"{sys.executable} {ECHO_EVAL} --code {{code}}",
    "evaluation_description": "Echoes the SCORE constant.",
    "seed_idea": "baseline constant",
    "seed_code": "SCORE = 0.5\n",
}

CONFIG = {
    "max_children": 1,
    "max_depth": 1,
    "elite_extra_children": 0,
    "base_experiment_repeats": 1,
    "summary_interval": 9,
    "crossover_rate": 0.0,
    "budget_llm_calls": 50,
    "budget_evaluations": 50,
}


def one_round_playbook():
    return [
        entry("idea_gen", "1. stronger constant"),
        code_entry("stronger constant", 0.8),
        terminate_entry(),
        summary_entry(),
    ]


def setup_inputs(tmp_path, playbook=None, canvas=None, config=None):
    canvas_path = tmp_path / "canvas.yaml"
    canvas_path.write_text(yaml.safe_dump(canvas or CANVAS, sort_keys=False))
    config_path = tmp_path / "config.yaml"
    config_path.write_text(yaml.safe_dump(config or CONFIG, sort_keys=False))
    playbook_path = tmp_path / "playbook.yaml"
    playbook_path.write_text(yaml.safe_dump(playbook if playbook is not None else one_round_playbook()))
    return canvas_path, config_path, playbook_path


def run_args(canvas, config, playbook, out, run_id="t1", rounds=1, seed=0):
    return [
        "run", "--spec", str(canvas), "--config", str(config),
        "--backend", "scripted", "--playbook", str(playbook),
        "--rounds", str(rounds), "--seed", str(seed),
        "--out", str(out), "--run-id", run_id,
    ]


class TestCmdRun:
    def test_improving_round_exits_zero_and_beats_seed(self, tmp_path, capsys):
        canvas, config, playbook = setup_inputs(tmp_path)
        code = main(run_args(canvas, config, playbook, tmp_path / "runs"))
        assert code == 0
        manifest = json.loads((tmp_path / "runs" / "t1" / "manifest.json").read_text())
        assert manifest["best_score"] == 0.8  # seed was 0.5
        assert manifest["llm_calls_used"] <= 50
        assert manifest["evaluations_used"] == 2  # seed + one child
        # per-solution code snapshots live under the database directory
        best_id = manifest["best_solution_id"]
        snapshot = tmp_path / "runs" / "t1" / "db" / "snapshots" / best_id / "attempt1" / "candidate.py"
        assert snapshot.read_text() == "SCORE = 0.8\n# for: stronger constant\n"

    def test_missing_canvas_exits_two(self, tmp_path):
        canvas, config, playbook = setup_inputs(tmp_path)
        code = main(run_args(tmp_path / "absent.yaml", config, playbook, tmp_path / "runs"))
        assert code == 2

    def test_invalid_canvas_exits_two(self, tmp_path):
        bad = dict(CANVAS, evaluation_command="python eval.py")  # no {code}
        canvas, config, playbook = setup_inputs(tmp_path, canvas=bad)
        assert main(run_args(canvas, config, playbook, tmp_path / "runs")) == 2

    def test_empty_playbook_exits_three(self, tmp_path):
        canvas, config, playbook = setup_inputs(tmp_path, playbook=[])
        assert main(run_args(canvas, config, playbook, tmp_path / "runs")) == 3

    def test_http_backend_without_env_exits_three(self, tmp_path, monkeypatch):
        monkeypatch.delenv("ORA_BASE_URL", raising=False)
        monkeypatch.delenv("ORA_MODEL", raising=False)
        canvas, config, _ = setup_inputs(tmp_path)
        code = main([
            "run", "--spec", str(canvas), "--config", str(config),
            "--backend", "http", "--out", str(tmp_path / "runs"), "--run-id", "t2",
        ])
        assert code == 3

    def test_scripted_backend_without_playbook_exits_two(self, tmp_path):
        canvas, config, _ = setup_inputs(tmp_path)
        code = main([
            "run", "--spec", str(canvas), "--config", str(config),
            "--backend", "scripted", "--out", str(tmp_path / "runs"), "--run-id", "t3",
        ])
        assert code == 2

    def test_budget_exhausted_before_any_valid_solution_exits_four(self, tmp_path):
        # the only evaluation goes to a crashing seed, so nothing valid exists
        starved = dict(CONFIG, budget_evaluations=1)
        bad_canvas = dict(CANVAS, seed_code="EXIT_CODE = 1\nSCORE = 0.0\n")
        canvas, config_path, playbook = setup_inputs(
            tmp_path, canvas=bad_canvas, config=starved
        )
        code = main(run_args(canvas, config_path, playbook, tmp_path / "runs"))
        assert code == 4

    def test_long_term_reflection_artifact_written(self, tmp_path):
        playbook = one_round_playbook() + [
            entry("long_term", "lesson: bigger constants win"),
        ]
        config = dict(CONFIG, ltm_refresh_interval=1)
        canvas, config_path, playbook_path = setup_inputs(
            tmp_path, playbook=playbook, config=config
        )
        assert main(run_args(canvas, config_path, playbook_path, tmp_path / "runs")) == 0
        ltm = (tmp_path / "runs" / "t1" / "lead1_ltm.txt").read_text()
        assert "== round 1 ==" in ltm
        assert "lesson: bigger constants win" in ltm

    def test_manifest_budgets_match_progress_log(self, tmp_path):
        canvas, config, playbook = setup_inputs(tmp_path)
        main(run_args(canvas, config, playbook, tmp_path / "runs"))
        run_dir = tmp_path / "runs" / "t1"
        manifest = json.loads((run_dir / "manifest.json").read_text())
        lines = [json.loads(l) for l in (run_dir / "progress.jsonl").read_text().splitlines()]
        assert lines[-1]["llm_calls"] <= manifest["llm_calls_used"]
        assert lines[-1]["evaluations"] <= manifest["evaluations_used"]
        assert len(lines) == 2  # one per inserted record


class TestReproducibility:
    def test_identical_rerun_is_byte_identical(self, tmp_path):
        canvas, config, playbook = setup_inputs(tmp_path)
        main(run_args(canvas, config, playbook, tmp_path / "runs_a", run_id="same"))
        main(run_args(canvas, config, playbook, tmp_path / "runs_b", run_id="same"))
        a, b = tmp_path / "runs_a" / "same", tmp_path / "runs_b" / "same"
        assert (a / "db" / "records.log").read_bytes() == (b / "db" / "records.log").read_bytes()
        trees_a = sorted(p.name for p in a.glob("*_tree.txt"))
        trees_b = sorted(p.name for p in b.glob("*_tree.txt"))
        assert trees_a == trees_b and trees_a
        for name in trees_a:
            assert (a / name).read_bytes() == (b / name).read_bytes()
        assert main(["report", "--runs", str(a), "--out", str(tmp_path / "rep_a")]) == 0
        assert main(["report", "--runs", str(b), "--out", str(tmp_path / "rep_b")]) == 0
        assert (
            (tmp_path / "rep_a" / "normalized_scores.csv").read_bytes()
            == (tmp_path / "rep_b" / "normalized_scores.csv").read_bytes()
        )


class TestCmdTree:
    def test_prints_stored_tree(self, tmp_path, capsys):
        canvas, config, playbook = setup_inputs(tmp_path)
        main(run_args(canvas, config, playbook, tmp_path / "runs"))
        capsys.readouterr()
        code = main(["tree", "--run", str(tmp_path / "runs" / "t1"), "--round", "1"])
        out = capsys.readouterr().out
        assert code == 0
        assert "Total expanded solutions:" in out
        stored = (tmp_path / "runs" / "t1" / "lead1_round1_tree.txt").read_text()
        assert out == stored

    def test_unknown_run_exits_two(self, tmp_path):
        assert main(["tree", "--run", str(tmp_path / "nope"), "--round", "1"]) == 2

    def test_missing_round_is_friendly(self, tmp_path, capsys):
        canvas, config, playbook = setup_inputs(tmp_path)
        main(run_args(canvas, config, playbook, tmp_path / "runs"))
        capsys.readouterr()
        code = main(["tree", "--run", str(tmp_path / "runs" / "t1"), "--round", "9"])
        assert code == 0
        assert "no tree recorded" in capsys.readouterr().out


class TestCmdReport:
    def run_twice(self, tmp_path):
        canvas, config, playbook = setup_inputs(tmp_path)
        main(run_args(canvas, config, playbook, tmp_path / "runs", run_id="weak"))
        better = [
            entry("idea_gen", "1. stronger constant"),
            code_entry("stronger constant", 0.95),
            terminate_entry(),
            summary_entry(),
        ]
        playbook2 = tmp_path / "playbook2.yaml"
        playbook2.write_text(yaml.safe_dump(better))
        main(run_args(canvas, config, playbook2, tmp_path / "runs", run_id="strong"))
        return tmp_path / "runs"

    def test_two_runs_table_has_endpoints(self, tmp_path):
        runs = self.run_twice(tmp_path)
        out = tmp_path / "report"
        code = main(["report", "--runs", str(runs / "weak"), str(runs / "strong"),
                     "--out", str(out)])
        assert code == 0
        table = (out / "normalized_scores.csv").read_text().splitlines()
        assert table[0] == "problem,algorithm,raw_score,normalized"
        values = {row.split(",")[1]: row.split(",")[3] for row in table[1:]}
        assert values["strong"] == "1.000"
        assert values["weak"] == "0.000"

    def test_curves_are_monotone(self, tmp_path):
        runs = self.run_twice(tmp_path)
        out = tmp_path / "report"
        main(["report", "--runs", str(runs / "weak"), "--out", str(out)])
        for axis in ("llm_calls", "evaluations"):
            rows = (out / f"weak_best_by_{axis}.csv").read_text().splitlines()[1:]
            scores = [float(r.split(",")[1]) for r in rows]
            assert scores == sorted(scores)
            budgets = [int(r.split(",")[0]) for r in rows]
            assert budgets == sorted(budgets)

    def test_unknown_run_exits_two(self, tmp_path):
        assert main(["report", "--runs", str(tmp_path / "nope"), "--out", str(tmp_path / "r")]) == 2

    def test_no_runs_is_a_usage_error(self):
        import pytest

        with pytest.raises(SystemExit) as exc:
            main(["report", "--out", "r"])
        assert exc.value.code == 2
