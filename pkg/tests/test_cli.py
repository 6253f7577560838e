import json

import pytest
from click.testing import CliRunner

from axeval.cli import cli
from axeval.dataset import write_generic_jsonl
from conftest import synthetic_instances, write_stub_script


@pytest.fixture
def runner():
    return CliRunner()


def _write_corpus(path, n=30):
    rows = []
    for i, inst in enumerate(synthetic_instances(n)):
        rows.append(json.dumps({
            "sentence1": inst.premise, "sentence2": inst.hypothesis,
            "gold_label": inst.gold_label.value, "pairID": inst.id,
        }))
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path


class TestSample:
    def test_writes_sample_and_prints_counts(self, runner, tmp_path):
        corpus = _write_corpus(tmp_path / "corpus.jsonl")
        out = tmp_path / "sample.jsonl"
        result = runner.invoke(cli, [
            "sample", "--dataset", str(corpus), "--format", "snli-jsonl",
            "--targets", "5,4,3", "--seed", "7", "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        assert "5/4/3 (total 12)" in result.output
        assert out.is_file() and len(out.read_text().splitlines()) == 12

    def test_seed_reproducibility(self, runner, tmp_path):
        corpus = _write_corpus(tmp_path / "corpus.jsonl")
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        for out in (a, b):
            result = runner.invoke(cli, [
                "sample", "--dataset", str(corpus), "--format", "snli-jsonl",
                "--targets", "4,4,4", "--seed", "7", "--out", str(out),
            ])
            assert result.exit_code == 0
        assert a.read_bytes() == b.read_bytes()

    def test_snli_default_targets(self, runner, tmp_path):
        # defaults for the snli layout are the published per-class sizes
        corpus = _write_corpus(tmp_path / "big.jsonl", n=2400)
        out = tmp_path / "sample.jsonl"
        result = runner.invoke(cli, [
            "sample", "--dataset", str(corpus), "--format", "snli-jsonl",
            "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        assert "689/651/660 (total 2000)" in result.output

    def test_shortfall_exits_nonzero_with_class_name(self, runner, tmp_path):
        corpus = _write_corpus(tmp_path / "corpus.jsonl", n=6)
        result = runner.invoke(cli, [
            "sample", "--dataset", str(corpus), "--format", "snli-jsonl",
            "--targets", "5,1,1", "--out", str(tmp_path / "s.jsonl"),
        ])
        assert result.exit_code == 1
        assert "entailment" in result.output
        assert "short" in result.output

    def test_generic_format_requires_targets(self, runner, tmp_path):
        corpus = tmp_path / "c.jsonl"
        write_generic_jsonl(corpus, synthetic_instances(3))
        result = runner.invoke(cli, [
            "sample", "--dataset", str(corpus), "--out", str(tmp_path / "s.jsonl"),
        ])
        assert result.exit_code == 1
        assert "--targets" in result.output


class TestRun:
    def _sample(self, tmp_path, n=4):
        sample = tmp_path / "sample.jsonl"
        write_generic_jsonl(sample, synthetic_instances(n))
        return sample

    def _invoke_run(self, runner, tmp_path, sample, script, extra=()):
        return runner.invoke(cli, [
            "run", "--dataset", str(sample), "--out", str(tmp_path / "run"),
            "--backend", "stub", "--stub-script", str(script), "--runs", "2",
            *extra,
        ])

    def test_full_run_counts_and_exit_code(self, runner, tmp_path):
        sample = self._sample(tmp_path)
        script = write_stub_script(tmp_path / "script.json", synthetic_instances(4), 2)
        result = self._invoke_run(runner, tmp_path, sample, script)
        assert result.exit_code == 0, result.output
        assert "summary: 0 pending, 0 excluded" in result.output
        for phase in ("p1", "p2", "p3"):
            assert phase in result.output

    def test_protocol_arithmetic_two_instances_five_runs(self, runner, tmp_path):
        instances = synthetic_instances(2)
        sample = tmp_path / "sample.jsonl"
        write_generic_jsonl(sample, instances)
        script = write_stub_script(tmp_path / "script.json", instances, 5)
        result = runner.invoke(cli, [
            "run", "--dataset", str(sample), "--out", str(tmp_path / "run"),
            "--backend", "stub", "--stub-script", str(script), "--runs", "5",
        ])
        assert result.exit_code == 0, result.output
        rows = {line.split()[0]: line.split()[1:] for line in result.output.splitlines()
                if line and line.split()[0].startswith(("p1", "p2", "p3", "judge"))}
        assert rows["p1"][0] == "10" and rows["p2"][0] == "10" and rows["p3"][0] == "10"
        for source in ("P1", "P3"):
            assert rows[f"judge_help[{source}]"][0] == "2"
            assert rows[f"judge_cons[{source}]"][0] == "8"

    def test_rerun_is_noop_with_zero_backend_calls(self, runner, tmp_path):
        sample = self._sample(tmp_path)
        script = write_stub_script(tmp_path / "script.json", synthetic_instances(4), 2)
        first = self._invoke_run(runner, tmp_path, sample, script)
        assert first.exit_code == 0
        second = self._invoke_run(runner, tmp_path, sample, script)
        assert second.exit_code == 0
        assert "summary: 0 pending" in second.output
        assert "backend calls this invocation: 0" in second.output

    def test_infer_before_generate_fails(self, runner, tmp_path):
        sample = self._sample(tmp_path)
        script = write_stub_script(tmp_path / "script.json", synthetic_instances(4), 2)
        result = self._invoke_run(runner, tmp_path, sample, script, extra=["--phase", "infer"])
        assert result.exit_code == 1
        assert "run the earlier phase first" in result.output

    def test_exclusions_exit_code_two(self, runner, tmp_path):
        instances = synthetic_instances(2)
        sample = tmp_path / "sample.jsonl"
        write_generic_jsonl(sample, instances)
        entries = json.loads(
            write_stub_script(tmp_path / "script.json", instances, 2).read_text()
        )
        # make one p3 slot permanently unparseable (initial try plus re-query)
        for entry in entries:
            if entry["contains"][0].startswith("Format the response"):
                entry["responses"] = ["gibberish", "gibberish", entry["responses"][1]]
                break
        script = tmp_path / "script2.json"
        script.write_text(json.dumps(entries))
        result = self._invoke_run(runner, tmp_path, sample, script)
        assert result.exit_code == 2, result.output
        # the excluded p3 run-1 slot also blanks that instance's judge slots
        assert "3 excluded" in result.output

    def test_stub_requires_script(self, runner, tmp_path):
        sample = self._sample(tmp_path)
        result = runner.invoke(cli, [
            "run", "--dataset", str(sample), "--out", str(tmp_path / "run"),
            "--backend", "stub",
        ])
        assert result.exit_code == 1
        assert "--stub-script" in result.output

    def test_config_file_with_flag_override(self, runner, tmp_path):
        instances = synthetic_instances(2)
        sample = tmp_path / "sample.jsonl"
        write_generic_jsonl(sample, instances)
        script = write_stub_script(tmp_path / "script.json", instances, 3)
        config = tmp_path / "config.toml"
        config.write_text(
            f'dataset = "{sample}"\n'
            f'out = "{tmp_path / "run"}"\n'
            f'stub_script = "{script}"\n'
            'backend = "stub"\n'
            "runs = 2\n"
        )
        # flag --runs 3 overrides the file's runs = 2
        result = runner.invoke(cli, ["run", "--config", str(config), "--runs", "3"])
        assert result.exit_code == 0, result.output
        manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
        assert manifest["runs"] == 3


class TestReport:
    def _completed_run(self, runner, tmp_path):
        instances = synthetic_instances(3)
        sample = tmp_path / "sample.jsonl"
        write_generic_jsonl(sample, instances)
        script = write_stub_script(tmp_path / "script.json", instances, 2)
        result = runner.invoke(cli, [
            "run", "--dataset", str(sample), "--out", str(tmp_path / "run"),
            "--backend", "stub", "--stub-script", str(script), "--runs", "2",
        ])
        assert result.exit_code == 0, result.output
        return tmp_path / "run"

    def test_emits_requested_formats(self, runner, tmp_path):
        run_dir = self._completed_run(runner, tmp_path)
        result = runner.invoke(cli, [
            "report", "--run", str(run_dir), "--emit", "json,csv",
        ])
        assert result.exit_code == 0, result.output
        reports = run_dir / "reports"
        assert (reports / "report.json").is_file()
        assert (reports / "accuracy.csv").is_file()
        assert not (reports / "report.md").exists()

    def test_partial_run_warns_but_succeeds(self, runner, tmp_path):
        instances = synthetic_instances(2)
        sample = tmp_path / "sample.jsonl"
        write_generic_jsonl(sample, instances)
        script = write_stub_script(tmp_path / "script.json", instances, 2)
        run_result = runner.invoke(cli, [
            "run", "--dataset", str(sample), "--out", str(tmp_path / "run"),
            "--backend", "stub", "--stub-script", str(script), "--runs", "2",
            "--phase", "generate",
        ])
        assert run_result.exit_code == 0
        result = runner.invoke(cli, ["report", "--run", str(tmp_path / "run")])
        assert result.exit_code == 0
        assert "warning" in result.output

    def test_threshold_validation(self, runner, tmp_path):
        run_dir = self._completed_run(runner, tmp_path)
        result = runner.invoke(cli, [
            "report", "--run", str(run_dir), "--help-threshold", "11",
        ])
        assert result.exit_code == 1
        assert "1..10" in result.output

    def test_consecutive_reports_byte_identical(self, runner, tmp_path):
        run_dir = self._completed_run(runner, tmp_path)
        for out in ("r1", "r2"):
            result = runner.invoke(cli, [
                "report", "--run", str(run_dir), "--out", str(tmp_path / out),
            ])
            assert result.exit_code == 0
        assert (tmp_path / "r1" / "report.json").read_bytes() == \
            (tmp_path / "r2" / "report.json").read_bytes()
