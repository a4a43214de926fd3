from __future__ import annotations

import json

import pytest

from cvlearn import __version__
from cvlearn.cli import EXIT_ERROR, EXIT_FAILED, EXIT_OK, main

FLAT_RULES = {
    "kind": "flat",
    "label_count": 2,
    "rules": [{"if": [{"feature": 0, "op": ">", "value": 0.0}], "forbid": [1, 2]}],
}


def write_json(path, doc) -> str:
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def write_lines(path, docs) -> str:
    path.write_text("".join(json.dumps(d) + "\n" for d in docs), encoding="utf-8")
    return str(path)


class TestExperiments:
    def test_counterexample(self, tmp_path):
        assert main(["counterexample", "--out", str(tmp_path), "--log-level", "WARNING"]) == EXIT_OK
        assert (tmp_path / "results.csv").exists()
        assert json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))["ok"] is True

    def test_itv_from_config(self, tmp_path):
        cfg = tmp_path / "itv.yml"
        cfg.write_text(
            "experiment: itv\nseed: 1\nn_instances: 2\nsupport_size: 5\nK: 2\nd: 2\nm: 10\n",
            encoding="utf-8",
        )
        out = tmp_path / "out"
        assert main(["itv", "--config", str(cfg), "--out", str(out), "--seed", "5"]) == EXIT_OK
        echoed = json.loads((out / "config.json").read_text(encoding="utf-8"))
        assert echoed["seed"] == 5
        assert echoed["n_instances"] == 2

    def test_config_for_another_experiment(self, tmp_path, config_dir):
        assert main(["complexity", "--config", str(config_dir / "itv.yml"), "--out", str(tmp_path)]) == EXIT_ERROR

    def test_missing_config(self, tmp_path):
        assert main(["itv", "--config", str(tmp_path / "nope.yml")]) == EXIT_ERROR

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["--version"])
        assert e.value.code == 0
        assert __version__ in capsys.readouterr().out

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            main(["train"])


class TestCheckRules:
    def test_infeasible_input(self, tmp_path):
        rules = write_json(tmp_path / "rules.json", FLAT_RULES)
        data = write_lines(tmp_path / "data.jsonl", [{"x": [-1.0]}, {"x": [1.0]}])
        assert main(["check-rules", "--rules", rules, "--dataset", data, "--out", str(tmp_path)]) == EXIT_FAILED
        report = json.loads((tmp_path / "feasibility.json").read_text(encoding="utf-8"))
        assert report["violations"] == [1]

    def test_feasible_inputs(self, tmp_path, capsys):
        rules = write_json(tmp_path / "rules.json", FLAT_RULES)
        data = write_lines(tmp_path / "data.jsonl", [{"x": [-1.0]}, {"x": [0.0]}])
        assert main(["check-rules", "--rules", rules, "--dataset", data]) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["violations"] == []

    def test_rules_only(self, config_dir):
        assert main(["check-rules", "--rules", str(config_dir / "rules" / "flat_example.json")]) == EXIT_OK

    def test_shipped_structured_rules(self, config_dir, tmp_path):
        argv = [
            "check-rules",
            "--rules", str(config_dir / "rules" / "structured_example.json"),
            "--dataset", str(config_dir / "datasets" / "chain_small.jsonl"),
            "--out", str(tmp_path),
        ]
        assert main(argv) == EXIT_OK

    def test_structured_line_without_length(self, config_dir, tmp_path):
        data = write_lines(tmp_path / "data.jsonl", [{"x": [0.1, 0.2, 0.3, 0.4]}])
        argv = ["check-rules", "--rules", str(config_dir / "rules" / "structured_example.json"), "--dataset", data]
        assert main(argv) == EXIT_ERROR

    def test_broken_rule_file(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"kind": "flat",\n "label_count": 2,\n "rules": [', encoding="utf-8")
        assert main(["check-rules", "--rules", str(bad)]) == EXIT_ERROR

    def test_schema_error(self, tmp_path):
        doc = {"kind": "flat", "label_count": 2, "rules": [{"if": [], "forbid": [1], "allow_only": [2]}]}
        assert main(["check-rules", "--rules", write_json(tmp_path / "r.json", doc)]) == EXIT_ERROR


class TestDecode:
    def _argv(self, config_dir):
        return [
            "decode",
            "--model", str(config_dir / "models" / "chain_small.json"),
            "--dataset", str(config_dir / "datasets" / "chain_small.jsonl"),
            "--rules", str(config_dir / "rules" / "structured_example.json"),
        ]

    def test_decode_to_file(self, config_dir, tmp_path):
        assert main(self._argv(config_dir) + ["--out", str(tmp_path)]) == EXIT_OK
        rows = [json.loads(line) for line in (tmp_path / "decoded.jsonl").read_text(encoding="utf-8").splitlines()]
        assert [len(r["y"]) for r in rows] == [3, 2, 4, 3]
        assert [r["index"] for r in rows] == [0, 1, 2, 3]
        assert all("hamming" in r for r in rows[:3])
        assert "hamming" not in rows[3]

    def test_decode_to_stdout(self, config_dir, capsys):
        assert main(self._argv(config_dir)) == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 4

    def test_plain_viterbi(self, config_dir, capsys):
        argv = self._argv(config_dir)[:5]
        assert main(argv) == EXIT_OK
        assert len(capsys.readouterr().out.splitlines()) == 4

    def test_missing_model(self, config_dir, tmp_path):
        argv = self._argv(config_dir)
        argv[2] = str(tmp_path / "none.json")
        assert main(argv) == EXIT_ERROR
