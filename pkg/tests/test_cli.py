import json
import subprocess
import sys

import pytest

from discurate.cli import build_parser, main
from discurate.fixture import write_fixture
from discurate.util import dump_jsonl


class TestParser:
    def test_subcommand_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_run_requires_config(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["run"])

    def test_stage_list_parsed(self):
        args = build_parser().parse_args(
            ["run", "--config", "c.yaml", "--stages", "clean,generate",
             "--seed", "3"])
        assert args.stages == "clean,generate"
        assert args.seed == 3


class TestRunCommand:
    def test_cached_run_exit_zero(self, fixture_run, capsys):
        code = main(["run", "--config",
                     str(fixture_run["config_path"])])
        captured = capsys.readouterr()
        assert code == 0
        for stage in ("clean", "annotate", "graph", "refer", "generate"):
            assert f"{stage}: cached" in captured.out
        assert "artifacts in" in captured.out

    def test_missing_config_exit_two(self, tmp_path, capsys):
        code = main(["run", "--config", str(tmp_path / "nope.yaml")])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_invalid_config_exit_two(self, tmp_path, capsys):
        path = tmp_path / "config.yaml"
        path.write_text("manifest: m.json\n", encoding="utf-8")
        code = main(["run", "--config", str(path)])
        assert code == 2
        assert "output_dir" in capsys.readouterr().err

    def test_stage_failure_exit_one(self, tmp_path, capsys):
        manifest_path, config_path = write_fixture(tmp_path)
        manifest_path.write_text("{", encoding="utf-8")
        code = main(["run", "--config", str(config_path)])
        assert code == 1
        assert "clean" in capsys.readouterr().err

    def test_seed_and_stage_overrides(self, tmp_path, capsys):
        _, config_path = write_fixture(tmp_path)
        assert main(["run", "--config", str(config_path)]) == 0
        capsys.readouterr()
        code = main(["run", "--config", str(config_path),
                     "--stages", "generate", "--seed", "1"])
        captured = capsys.readouterr()
        assert code == 0
        assert captured.out.startswith("generate: ran")
        assert "clean:" not in captured.out


class TestFixtureCommand:
    def test_writes_fixture(self, tmp_path, capsys):
        code = main(["fixture", "--out", str(tmp_path / "demo")])
        captured = capsys.readouterr()
        assert code == 0
        assert "manifest:" in captured.out and "config:" in captured.out
        assert (tmp_path / "demo" / "scenes" / "manifest.json").is_file()
        assert (tmp_path / "demo" / "config.yaml").is_file()


class TestEvalCommand:
    def eval_files(self, tmp_path, text):
        samples = [
            {"sample_id": "s-1", "task": "object_size",
             "question": "q", "answer": "20 x 10 x 5 cm"},
            {"sample_id": "s-2", "task": "attribute_recognition",
             "question": "q", "answer": "yes", "options": ["yes", "no"]},
        ]
        dataset = tmp_path / "dataset.jsonl"
        dataset.write_text(dump_jsonl(samples), encoding="utf-8")
        predictions = tmp_path / "predictions.jsonl"
        predictions.write_text(dump_jsonl(
            [{"sample_id": "s-1", "text": text},
             {"sample_id": "s-2", "text": "yes"}]), encoding="utf-8")
        return dataset, predictions

    def test_perfect_predictions(self, tmp_path, capsys):
        dataset, predictions = self.eval_files(tmp_path, "20 x 10 x 5 cm")
        out_json = tmp_path / "report.json"
        code = main(["eval", "--dataset", str(dataset),
                     "--predictions", str(predictions),
                     "--json", str(out_json)])
        captured = capsys.readouterr()
        assert code == 0
        assert "object_size" in captured.out
        assert "attribute_recognition" in captured.out
        assert "1.0000" in captured.out
        report = json.loads(out_json.read_text("utf-8"))
        assert report["tasks"]["object_size"]["count"] == 1
        assert report["missing_predictions"] == 0

    def test_missing_dataset_exit_two(self, tmp_path, capsys):
        code = main(["eval", "--dataset", str(tmp_path / "no.jsonl"),
                     "--predictions", str(tmp_path / "no2.jsonl")])
        assert code == 2
        assert "error:" in capsys.readouterr().err


class TestInstalledEntryPoint:
    def test_module_invocation(self, tmp_path):
        result = subprocess.run(
            [sys.executable, "-c",
             "from discurate.cli import main; import sys;"
             "sys.exit(main(['fixture', '--out', 'demo']))"],
            cwd=tmp_path, capture_output=True, text=True)
        assert result.returncode == 0, result.stderr
        assert (tmp_path / "demo" / "config.yaml").is_file()
