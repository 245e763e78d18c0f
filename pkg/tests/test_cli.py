import hashlib
import json

import pytest

from simplexdiff.cli import main

SMOKE_CONFIG = """
[run]
seed = 5
out_dir = {out}

[data]
train_path = {data}/train.tsv
format = tsv

[model]
layers = 2
heads = 2
d_model = 64
d_ff = 128
max_len = 16
dropout = 0.0
self_cond_mode = averaged

[schedule]
t_train = 1000

[train]
learning_rate = 1e-3
warmup_steps = 20
total_steps = {steps}
batch_size = 16
rho = 0.5
log_every = 20
checkpoint_every = {ckpt_every}
"""


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthdata")
    code = run_cli("synth", "--task", "copy", "--n", "200", "--len-min", "2",
                   "--len-max", "6", "--vocab-size", "64", "--seed", "0",
                   "--out", str(out))
    assert code == 0
    return out


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, synth_dir):
    out = tmp_path_factory.mktemp("smokerun")
    cfg = out / "cfg.ini"
    cfg.write_text(SMOKE_CONFIG.format(out=out, data=synth_dir, steps=500, ckpt_every=0))
    code = run_cli("train", "--config", str(cfg))
    assert code == 0
    return out


class TestSynth:
    def test_writes_all_files(self, synth_dir):
        for name in ("train.tsv", "valid.tsv", "test.tsv", "vocab.txt"):
            assert (synth_dir / name).exists()
        assert len((synth_dir / "train.tsv").read_text().splitlines()) == 160

    def test_vocab_has_reserved_first(self, synth_dir):
        lines = (synth_dir / "vocab.txt").read_text().splitlines()
        assert lines[:5] == ["<pad>", "<bos>", "<eos>", "<sep>", "<unk>"]


class TestTrain:
    def test_smoke_run_completes_and_loss_decreases(self, trained_dir):
        """Copy-task smoke config: completes, writes artifacts, loss drops."""
        assert (trained_dir / "model.bin").exists()
        assert (trained_dir / "config.resolved.ini").exists()
        assert (trained_dir / "vocab.txt").exists()
        assert (trained_dir / "loss.png").exists()
        rows = [line.split() for line in (trained_dir / "metrics.log").read_text().splitlines()
                if not line.startswith("#")]
        first, last = float(rows[0][1]), float(rows[-1][1])
        assert last < first * 0.5, f"loss did not decrease: {first} -> {last}"

    def test_unknown_key_rejected_naming_it(self, tmp_path, synth_dir, capsys):
        cfg = tmp_path / "cfg.ini"
        cfg.write_text("[train]\nfoo = 1\n")
        assert run_cli("train", "--config", str(cfg)) == 1
        err = capsys.readouterr().err
        assert err.startswith("error:") and "foo" in err

    def test_override_rejected_when_unknown(self, tmp_path, synth_dir, capsys):
        cfg = tmp_path / "cfg.ini"
        cfg.write_text("")
        assert run_cli("train", "--config", str(cfg), "--set", "train.bogus=1") == 1
        assert "bogus" in capsys.readouterr().err

    def test_resolved_config_reparses(self, trained_dir):
        from simplexdiff.config import load_config

        cfg = load_config(trained_dir / "config.resolved.ini")
        assert cfg.get("train", "total_steps") == 500
        assert cfg.get("run", "seed") == 5

    def test_deterministic_checkpoints(self, tmp_path, synth_dir):
        """Identical config + seed give byte-identical model files."""
        digests = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            cfg = tmp_path / f"{sub}.ini"
            cfg.write_text(SMOKE_CONFIG.format(out=out, data=synth_dir, steps=60, ckpt_every=0))
            assert run_cli("train", "--config", str(cfg)) == 0
            digests.append(hashlib.sha256((out / "model.bin").read_bytes()).hexdigest())
        assert digests[0] == digests[1]

    def test_resume_continues_to_total(self, tmp_path, synth_dir):
        out = tmp_path / "resume"
        cfg = tmp_path / "resume.ini"
        cfg.write_text(SMOKE_CONFIG.format(out=out, data=synth_dir, steps=40, ckpt_every=20))
        assert run_cli("train", "--config", str(cfg)) == 0
        ckpt = out / "checkpoint_0000020.bin"
        assert ckpt.exists()
        assert run_cli("train", "--config", str(cfg), "--resume", str(ckpt)) == 0
        assert (out / "model.bin").exists()


class TestGenerate:
    def test_empty_input_gives_empty_output(self, tmp_path, trained_dir):
        src = tmp_path / "empty.txt"
        src.write_text("")
        out = tmp_path / "preds.jsonl"
        code = run_cli("generate", "--checkpoint", str(trained_dir / "model.bin"),
                       "--vocab", str(trained_dir / "vocab.txt"),
                       "--input", str(src), "--out", str(out), "--steps", "3")
        assert code == 0
        assert out.read_text() == ""

    def test_predictions_have_all_fields(self, tmp_path, trained_dir, synth_dir):
        out = tmp_path / "preds.jsonl"
        code = run_cli("generate", "--checkpoint", str(trained_dir / "model.bin"),
                       "--vocab", str(trained_dir / "vocab.txt"),
                       "--input", str(synth_dir / "test.tsv"), "--out", str(out),
                       "--steps", "5", "--seed", "3")
        assert code == 0
        recs = [json.loads(line) for line in out.read_text().splitlines()]
        assert len(recs) == 20
        for rec in recs:
            assert set(rec) == {"source", "prediction", "steps", "seed", "wall_ms"}
            assert rec["steps"] == 5 and rec["seed"] == 3

    def test_fixed_seed_reproduces_output_bytes(self, tmp_path, trained_dir, synth_dir):
        outs = []
        for name in ("p1.jsonl", "p2.jsonl"):
            out = tmp_path / name
            assert run_cli("generate", "--checkpoint", str(trained_dir / "model.bin"),
                           "--vocab", str(trained_dir / "vocab.txt"),
                           "--input", str(synth_dir / "test.tsv"), "--out", str(out),
                           "--steps", "4", "--seed", "11") == 0
            recs = [json.loads(l) for l in out.read_text().splitlines()]
            outs.append([r["prediction"] for r in recs])
        assert outs[0] == outs[1]

    def test_block_mode_engages(self, tmp_path, trained_dir, synth_dir):
        out = tmp_path / "preds_block.jsonl"
        code = run_cli("generate", "--checkpoint", str(trained_dir / "model.bin"),
                       "--vocab", str(trained_dir / "vocab.txt"),
                       "--input", str(synth_dir / "test.tsv"), "--out", str(out),
                       "--steps", "3", "--mode", "block", "--block-size", "3")
        assert code == 0
        assert len(out.read_text().splitlines()) == 20

    def test_vocab_mismatch_fails(self, tmp_path, trained_dir, capsys):
        bad_vocab = tmp_path / "bad_vocab.txt"
        bad_vocab.write_text("\n".join(["<pad>", "<bos>", "<eos>", "<sep>", "<unk>", "zzz"]) + "\n")
        src = tmp_path / "x.txt"
        src.write_text("w01 w02\n")
        code = run_cli("generate", "--checkpoint", str(trained_dir / "model.bin"),
                       "--vocab", str(bad_vocab), "--input", str(src),
                       "--out", str(tmp_path / "p.jsonl"), "--steps", "2")
        assert code == 1
        assert "CompatibilityError" in capsys.readouterr().err


class TestEval:
    def test_perfect_predictions(self, tmp_path, capsys):
        preds = tmp_path / "p.txt"
        refs = tmp_path / "r.txt"
        preds.write_text("a b c\nd e\n")
        refs.write_text("a b c\nd e\n")
        out = tmp_path / "report.json"
        code = run_cli("eval", "--predictions", str(preds), "--references", str(refs),
                       "--task", "generation", "--out", str(out))
        assert code == 0
        report = json.loads(out.read_text())
        assert report["metrics"]["bleu"] == pytest.approx(100.0)
        assert report["metrics"]["rouge_l"] == pytest.approx(100.0)
        assert report["metrics"]["exact_match"] == 1.0
        assert (tmp_path / "report.png").exists()

    def test_jsonl_predictions_and_tsv_references(self, tmp_path):
        preds = tmp_path / "p.jsonl"
        preds.write_text(json.dumps({"prediction": "x y", "source": "s"}) + "\n")
        refs = tmp_path / "r.tsv"
        refs.write_text("s\tx y\n")
        out = tmp_path / "report.json"
        assert run_cli("eval", "--predictions", str(preds), "--references", str(refs),
                       "--out", str(out)) == 0
        assert json.loads(out.read_text())["metrics"]["exact_match"] == 1.0

    def test_classification_accuracy(self, tmp_path, capsys):
        preds = tmp_path / "p.txt"
        refs = tmp_path / "r.txt"
        preds.write_text("even\nodd\neven\neven\n")
        refs.write_text("even\nodd\neven\nodd\n")
        code = run_cli("eval", "--predictions", str(preds), "--references", str(refs),
                       "--task", "classification")
        assert code == 0
        assert "0.75" in capsys.readouterr().out

    def test_report_contains_every_metric_key(self, tmp_path):
        preds = tmp_path / "p.txt"
        preds.write_text("a\n")
        out = tmp_path / "report.json"
        assert run_cli("eval", "--predictions", str(preds), "--references", str(preds),
                       "--out", str(out)) == 0
        metrics = json.loads(out.read_text())["metrics"]
        assert set(metrics) == {"bleu", "rouge_l", "distinct_1", "distinct_4", "exact_match"}

    def test_alignment_error_reports_counts(self, tmp_path, capsys):
        preds = tmp_path / "p.txt"
        refs = tmp_path / "r.txt"
        preds.write_text("a\nb\n")
        refs.write_text("a\n")
        assert run_cli("eval", "--predictions", str(preds), "--references", str(refs)) == 1
        err = capsys.readouterr().err
        assert "2 predictions vs 1 references" in err


class TestBench:
    def test_csv_and_figure_written(self, tmp_path):
        out = tmp_path / "bench"
        code = run_cli("bench", "--lengths", "4,8", "--steps", "2,4", "--modes",
                       "full_nar,block", "--trials", "3", "--block-size", "4",
                       "--vocab-size", "32", "--layers", "1", "--d-model", "32",
                       "--d-ff", "64", "--source-len", "4", "--t-train", "100",
                       "--out", str(out))
        assert code == 0
        csv_lines = (out / "bench.csv").read_text().splitlines()
        assert csv_lines[0] == "mode,target_len,num_steps,trials,mean_ms,std_ms"
        assert len(csv_lines) == 1 + 8  # 2 modes x 2 lengths x 2 step counts
        modes = {line.split(",")[0] for line in csv_lines[1:]}
        assert modes == {"full_nar", "block"}
        assert (out / "bench.png").exists()

    def test_trials_recorded_in_every_row(self, tmp_path):
        out = tmp_path / "bench5"
        code = run_cli("bench", "--lengths", "4", "--steps", "2", "--modes", "full_nar",
                       "--trials", "5", "--vocab-size", "32", "--layers", "1",
                       "--d-model", "32", "--d-ff", "64", "--source-len", "4",
                       "--t-train", "100", "--out", str(out))
        assert code == 0
        rows = (out / "bench.csv").read_text().splitlines()[1:]
        assert all(row.split(",")[3] == "5" for row in rows)


class TestErrorContract:
    def test_single_line_machine_parseable_prefix(self, tmp_path, capsys):
        assert run_cli("train", "--config", str(tmp_path / "missing.ini")) == 1
        err = capsys.readouterr().err
        assert err.count("\n") == 1
        assert err.startswith("error: ConfigError:")
