import json

import pytest

from sedseg.cli import build_parser, main, resolve_config
from sedseg.imageio import read_label
from sedseg.train import CHECKPOINT_NAME


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A block dataset and a short training run, shared by the tests below."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "blocks", "--out", str(root / "data"), "--images", "3", "--seed", "1"]) == 0
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({"train": {"crop": 64, "iters": 3, "lr": 5e-4}}))
    assert main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(root / "run")]) == 0
    return root


class TestCli:
    def test_train_outputs(self, workspace):
        run_dir = workspace / "run"
        assert (run_dir / CHECKPOINT_NAME).exists()
        assert len((run_dir / "loss.tsv").read_text().splitlines()) == 3

    def test_resume_extends_the_run(self, workspace, capsys):
        code, out, _ = run(
            capsys, "train", "--data", workspace / "data", "--out", workspace / "more",
            "--config", workspace / "cfg.json", "--iters", 5, "--resume", workspace / "run" / CHECKPOINT_NAME,
        )
        assert code == 0 and json.loads(out)["iterations"] == 5

    def test_infer_writes_label_and_report(self, workspace, capsys):
        out_label = workspace / "pred"
        code, out, _ = run(
            capsys, "infer", "--checkpoint", workspace / "run" / CHECKPOINT_NAME,
            "--image", workspace / "data" / "images" / "0000.ppm",
            "--categories", workspace / "data" / "categories.txt", "--output", out_label, "--cer-k", 2,
        )
        assert code == 0
        report = json.loads(out)
        assert report["k"] == "2" and len(report["active_counts"]) == 3
        pred = read_label(out_label.with_suffix(".pgm"))
        assert pred.shape == (64, 64) and pred.max() < 4

    def test_eval_prints_miou(self, workspace, capsys):
        code, out, _ = run(capsys, "eval", "--checkpoint", workspace / "run" / CHECKPOINT_NAME, "--data", workspace / "data")
        result = json.loads(out)
        assert code == 0 and 0.0 <= result["miou"] <= 1.0 and result["images"] == 3

    def test_bench_json_lines(self, workspace, capsys):
        report = workspace / "bench.jsonl"
        code, _, _ = run(
            capsys, "bench", "--checkpoint", workspace / "run" / CHECKPOINT_NAME, "--data", workspace / "data",
            "--runs", 1, "--warmup", 0, "--limit", 2, "--cer-k", "all", "--report", report,
        )
        lines = [json.loads(l) for l in report.read_text().splitlines()]
        assert code == 0 and len(lines) == 2
        for r in lines:
            assert r["k"] == "all" and set(r["stage_ms"]) == {"encoder", "cost_map", "decoder", "head"}
            assert sum(r["stage_ms"].values()) <= r["end_to_end_ms"] * 1.05

    def test_checkpoint_config_mismatch_is_an_error(self, workspace, capsys):
        code, _, err = run(
            capsys, "eval", "--checkpoint", workspace / "run" / CHECKPOINT_NAME, "--data", workspace / "data",
            "--kernel", 11,
        )
        assert code == 2 and "error" in err

    def test_missing_dataset(self, tmp_path, capsys):
        code, _, err = run(capsys, "eval", "--checkpoint", tmp_path / "x.sedc", "--data", tmp_path)
        assert code == 2 and "error" in err

    def test_quadrant_synth_uses_sedl(self, tmp_path, capsys):
        code, out, _ = run(capsys, "synth", "quadrants", "--out", tmp_path, "--images", 1, "--categories", 300, "--size", 64)
        assert code == 0 and json.loads(out)["categories"] == 300
        assert (tmp_path / "labels" / "0000.sedl").exists() and (tmp_path / "embeddings.sede").exists()


class TestResolveConfig:
    def test_flags_override(self, tmp_path):
        args = build_parser().parse_args(
            ["bench", "--checkpoint", str(tmp_path / "c"), "--data", "d", "--kernel", "11", "--layers", "2",
             "--no-spatial", "--cer-k", "8"]
        )
        model, _, cer = resolve_config(args)
        assert model.fam.dw_kernel == 11 and model.decoder.layers == 2 and not model.fam.enable_spatial
        assert cer.enabled and cer.k == 8

    def test_cer_off_unless_requested(self, tmp_path):
        args = build_parser().parse_args(["eval", "--checkpoint", str(tmp_path / "c"), "--data", "d"])
        assert not resolve_config(args)[2].enabled

    def test_bad_kernel_rejected(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["eval", "--checkpoint", "c", "--data", "d", "--kernel", "5"])
