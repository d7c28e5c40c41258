"""End-to-end CLI tests driving every subcommand through main()."""

import json

import pytest
import yaml

from harness_fixtures import matrix_config, write_matrix_datasets
from synthdata import SCIENCE_FACTS, write_s2orc_file, write_sciq_file, write_squad_file

from eduqg.cli import main
from eduqg.datasets import read_documents, read_examples


def run_cli(*argv):
    return main([str(a) for a in argv])


class TestIngest:
    def test_s2orc_with_filter_and_sample(self, tmp_path, capsys):
        src = write_s2orc_file(tmp_path / "raw.jsonl", 50, seed=1)
        out = tmp_path / "docs.jsonl"
        assert run_cli("ingest", "--format", "s2orc", "--in", src, "--out", out,
                       "--fields", "Biology,Physics", "--sample", "10", "--seed", "3") == 0
        docs = list(read_documents(out))
        assert len(docs) == 10
        assert all(d.fields_of_study & {"Biology", "Physics"} for d in docs)
        assert "wrote 10 records" in capsys.readouterr().out

    def test_squad_to_canonical(self, tmp_path):
        src = write_squad_file(tmp_path / "squad.json", seed=0, n_paragraphs=3)
        out = tmp_path / "squad.jsonl"
        assert run_cli("ingest", "--format", "squad", "--in", src, "--out", out) == 0
        split = read_examples(out)
        assert len(split) == 6
        assert all(ex.source.value == "squad" for ex in split.examples)

    def test_sciq_split_name(self, tmp_path):
        src = write_sciq_file(tmp_path / "sciq.json", SCIENCE_FACTS, 12, seed=0)
        out = tmp_path / "sciq.jsonl"
        assert run_cli("ingest", "--format", "sciq", "--in", src, "--out", out,
                       "--split", "test") == 0
        split = read_examples(out)
        assert len(split) == 12
        assert split.examples[0].id.startswith("sciq-test-")

    def test_fields_rejected_for_qa_formats(self, tmp_path):
        src = write_squad_file(tmp_path / "squad.json", seed=0, n_paragraphs=1)
        with pytest.raises(SystemExit):
            run_cli("ingest", "--format", "squad", "--in", src,
                    "--out", tmp_path / "x.jsonl", "--fields", "Biology")


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    """Canonical files + a base checkpoint + train specs, built once."""
    root = tmp_path_factory.mktemp("cliws")
    raw = write_s2orc_file(root / "raw.jsonl", 60, seed=2)
    run_cli("ingest", "--format", "s2orc", "--in", raw, "--out", root / "docs.jsonl")
    sciq = write_sciq_file(root / "sciq.json", SCIENCE_FACTS, 24, seed=2)
    run_cli("ingest", "--format", "sciq", "--in", sciq, "--out", root / "qg.jsonl")
    run_cli("init", "--text-from", root / "docs.jsonl", "--text-from", root / "qg.jsonl",
            "--vocab-words", "1200", "--num-sentinels", "24",
            "--seed", "0", "--out", root / "base")
    (root / "pretrain.yaml").write_text(yaml.safe_dump({
        "stage": "pretrain", "dataset_id": "s2orc", "steps": 6,
        "batch_size": 4, "learning_rate": 1e-3, "max_input_len": 64,
    }))
    (root / "finetune.yaml").write_text(yaml.safe_dump({
        "stage": "finetune", "dataset_id": "sciq", "epochs": 30,
        "batch_size": 8, "learning_rate": 1e-3,
        "max_input_len": 64, "max_target_len": 24,
    }))
    return root


class TestTrainAndGenerate:
    def test_pretrain_writes_checkpoint_and_log(self, cli_workspace, capsys):
        root = cli_workspace
        assert run_cli("pretrain", "--base", root / "base", "--docs", root / "docs.jsonl",
                       "--spec", root / "pretrain.yaml", "--out", root / "pre") == 0
        assert (root / "pre" / "weights.pt").is_file()
        log_lines = (root / "pre" / "train_log.csv").read_text().splitlines()
        assert log_lines[0] == "step,loss,lr,wall_time"
        assert len(log_lines) >= 2

    def test_finetune_then_generate(self, cli_workspace):
        root = cli_workspace
        assert run_cli("finetune", "--base", root / "base", "--data", root / "qg.jsonl",
                       "--spec", root / "finetune.yaml", "--out", root / "ft") == 0
        contexts = root / "contexts.jsonl"
        with contexts.open("w") as fh:
            for ex in read_examples(root / "qg.jsonl").examples[:4]:
                fh.write(json.dumps({"id": ex.id, "context": ex.context}) + "\n")
        out = root / "questions.jsonl"
        assert run_cli("generate", "--model", root / "ft", "--in", contexts, "--out", out,
                       "--strategy", "greedy", "--beam-width", "1", "--max-len", "24") == 0
        rows = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(rows) == 4
        assert all(set(r) == {"id", "context", "question"} for r in rows)
        assert any(r["question"] for r in rows)


@pytest.fixture(scope="module")
def matrix_run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("climatrix")
    datasets = write_matrix_datasets(root, n_abstracts=60, squad_paragraphs=4,
                                     sciq_train_n=16, sciq_test_n=8)
    config = matrix_config(root / "run", datasets, models=["leaf", "leaf_plus"],
                           pretrain_steps=2, squad_epochs=2, sciq_epochs=2,
                           pretrain_small=10, pretrain_large=20)
    config_path = root / "config.yaml"
    config.to_yaml(config_path)
    assert run_cli("run-matrix", "--config", config_path) == 0
    return root / "run"


class TestMatrixCommands:
    def test_manifest_written(self, matrix_run_dir):
        manifest = json.loads((matrix_run_dir / "manifest.json").read_text())
        assert manifest["models"]["leaf"]["status"] == "complete"

    def test_report_command(self, matrix_run_dir, capsys):
        assert run_cli("report", "--manifest", matrix_run_dir, "--style", "table2") == 0
        out = capsys.readouterr().out
        assert "BLEU-1" in out and "| leaf" in out
        assert (matrix_run_dir / "report_table2.csv").is_file()

    def test_examples_command(self, matrix_run_dir, capsys):
        assert run_cli("examples", "--manifest", matrix_run_dir, "-k", "2", "--seed", "1") == 0
        out = capsys.readouterr().out
        assert out.count("\n") >= 3  # header, separator, two rows

    def test_human_baseline_command(self, matrix_run_dir, tmp_path, capsys):
        manifest = json.loads((matrix_run_dir / "manifest.json").read_text())
        sciq_test = manifest["config"]["datasets"]["sciq_test"]
        s2orc = manifest["config"]["datasets"]["s2orc"]
        assert run_cli("human-baseline", "--questions", sciq_test, "--format", "sciq",
                       "--split", "test", "--scorer-corpus", s2orc) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["perplexity"] > 0
        assert 0 < payload["diversity"] <= 1
        assert payload["scorer"].startswith("ngram2")


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli("--version")
    assert exc.value.code == 0
