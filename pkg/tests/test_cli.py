import json
from unittest.mock import patch

import pytest

from src.fda_ggann.cli import load_run_config, main_async, setup_parser
from src.fda_ggann.config import SynthConfig
from src.fda_ggann.synth import synthesize, write_corpus

PROGRAM = "int main(){ int a = 1; int b = a + 2; return b; }"


def _last_json(capsys):
    return json.loads(capsys.readouterr().out)


@pytest.fixture
def source_file(tmp_path):
    path = tmp_path / "prog.mc"
    path.write_text(PROGRAM)
    return path


@pytest.fixture
def corpus(tmp_path):
    config = SynthConfig(num_tasks=2, per_task=5, seed=3)
    return write_corpus(synthesize(config), tmp_path / "corpus", config)


TINY = ["--epochs", "1", "--d", "4", "--t", "1", "--batch", "4"]


@pytest.mark.asyncio
async def test_no_command():
    assert await main_async([]) == 2


@pytest.mark.asyncio
async def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        await main_async(["train", "--out", "model.json"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        await main_async(["graph"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        await main_async(["sweep-d", "--data", "x", "--d", "8,a"])
    assert exc.value.code == 2


@pytest.mark.asyncio
async def test_parse(source_file, tmp_path, capsys):
    out = tmp_path / "ast.json"
    assert await main_async(["--json", "parse", str(source_file), "--out", str(out)]) == 0
    assert _last_json(capsys)["nodes"] > 5
    assert json.loads(out.read_text())["nodes"]


@pytest.mark.asyncio
async def test_parse_error_reports_json(tmp_path, capsys):
    bad = tmp_path / "bad.mc"
    bad.write_text("int main( {")
    assert await main_async(["--json", "parse", str(bad)]) == 1
    assert "error" in _last_json(capsys)


@pytest.mark.asyncio
async def test_missing_file(tmp_path, capsys):
    assert await main_async(["--json", "graph", str(tmp_path / "absent.mc")]) == 1
    assert "absent.mc" in _last_json(capsys)["error"]


@pytest.mark.asyncio
async def test_graph_single_file(source_file, capsys):
    assert await main_async(["--json", "graph", str(source_file)]) == 0
    graph = _last_json(capsys)
    assert graph["num_nodes"] == len(graph["kinds"])


@pytest.mark.asyncio
async def test_graph_corpus_and_stats(corpus, tmp_path, capsys):
    capsys.readouterr()
    graphs = tmp_path / "graphs"
    assert await main_async(["--json", "graph", "--data", str(corpus), "--out", str(graphs)]) == 0
    assert _last_json(capsys)["graphs"] == 10
    assert await main_async(["--json", "stats", "--from-graphs", str(graphs)]) == 0
    rows = _last_json(capsys)
    assert [r["split"] for r in rows] == ["train", "valid", "test"]
    assert sum(r["graphs"] for r in rows) == 10


@pytest.mark.asyncio
async def test_train_eval_attention(corpus, tmp_path, source_file, capsys):
    capsys.readouterr()
    ckpt = tmp_path / "run" / "model.json"
    assert await main_async(["--json", "train", "--data", str(corpus), "--out", str(ckpt), *TINY]) == 0
    summary = _last_json(capsys)
    assert summary["epochs_run"] == 1
    metrics = (tmp_path / "run" / "metrics.csv").read_text().splitlines()
    assert metrics[0] == "epoch,split,loss,accuracy,seconds"
    assert len(metrics) == 3

    assert await main_async(["--json", "eval", "--ckpt", str(ckpt), "--data", str(corpus)]) == 0
    evaluation = _last_json(capsys)
    assert evaluation["accuracy"] == pytest.approx(summary["test_accuracy"])
    assert evaluation["count"] == 2

    out = tmp_path / "attention.csv"
    assert await main_async(["--json", "attention", "--ckpt", str(ckpt), str(source_file), "--out", str(out)]) == 0
    assert _last_json(capsys)["nodes"] == len(out.read_text().splitlines()) - 1


@pytest.mark.asyncio
async def test_bad_checkpoint(corpus, tmp_path, capsys):
    capsys.readouterr()
    ckpt = tmp_path / "broken.json"
    ckpt.write_text("[]")
    assert await main_async(["--json", "eval", "--ckpt", str(ckpt), "--data", str(corpus)]) == 1
    assert "error" in _last_json(capsys)


@pytest.mark.asyncio
async def test_progress_monitor_runs_without_json(corpus, tmp_path):
    ckpt = tmp_path / "model.json"
    with patch("src.fda_ggann.cli.console.print"):
        assert await main_async(["train", "--data", str(corpus), "--out", str(ckpt), *TINY]) == 0
    assert ckpt.exists()


def test_flags_override_config(tmp_path):
    config = tmp_path / "run.yaml"
    config.write_text("model:\n  d: 12\ntrain:\n  epochs: 9\n  lr: 0.5\n")
    args = setup_parser().parse_args(["--config", str(config), "train", "--data", "x", "--out", "m.json",
                                      "--lr", "0.01", "--unidirectional"])
    run = load_run_config(args)
    assert run.model.d == 12 and run.model.bidirectional is False
    assert run.train.epochs == 9 and run.train.lr == 0.01


def test_full_scale_defaults_flag():
    args = setup_parser().parse_args(["train", "--data", "x", "--out", "m.json", "--full-scale", "--epochs", "2"])
    run = load_run_config(args)
    assert run.model.d == 270 and run.train.epochs == 2


@pytest.mark.asyncio
async def test_synth_command(tmp_path, capsys):
    out = tmp_path / "generated"
    assert await main_async(["--json", "synth", "--tasks", "2", "--per-task", "5", "--out", str(out)]) == 0
    assert _last_json(capsys) == {"programs": 10, "tasks": 2, "out": str(out)}
    assert (out / "manifest.json").exists()
