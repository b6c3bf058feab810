"""End-to-end command behavior and exit codes."""

import json

import numpy as np
import pytest

from mirnn.checkpoint import save_checkpoint
from mirnn.cli import main
from mirnn.config import ExperimentConfig
from mirnn.data import synthesize_corpus
from mirnn.training import TrainingSession


def write_corpus(tmp_path, text="ab" * 1000, name="corpus.txt"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def write_config(tmp_path, corpus, name="cfg.json", **kw):
    kw.setdefault("cell", "rnn")
    kw.setdefault("mode", "mi_simple")
    kw.setdefault("hidden_dim", 8)
    kw.setdefault("seq_len", 8)
    kw.setdefault("batch_size", 8)
    kw.setdefault("lr", 0.01)
    kw.setdefault("epochs", 2)
    kw.setdefault("seed", 5)
    cfg = ExperimentConfig(corpus=str(corpus), **kw)
    path = tmp_path / name
    path.write_text(cfg.to_json(), encoding="utf-8")
    return path


class TestTrain:
    def test_full_run_writes_artifacts(self, tmp_path, capsys):
        corpus = write_corpus(tmp_path)
        cfg = write_config(tmp_path, corpus)
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "metrics.csv").exists()
        assert (out / "best.ckpt").exists()
        assert (out / "last.ckpt").exists()
        stdout = capsys.readouterr().out
        assert "epoch   0" in stdout
        assert "epoch   2" in stdout
        assert "metrics:" in stdout
        assert "best checkpoint" in stdout

    def test_two_runs_are_byte_identical(self, tmp_path):
        corpus = write_corpus(tmp_path)
        cfg = write_config(tmp_path, corpus)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", str(cfg), "--out", str(a)]) == 0
        assert main(["train", "--config", str(cfg), "--out", str(b)]) == 0
        for name in ("metrics.csv", "last.ckpt", "best.ckpt"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_unknown_characters_are_reported(self, tmp_path, capsys):
        corpus = write_corpus(tmp_path, text="ab" * 80 + "z" * 20)
        cfg = write_config(tmp_path, corpus, epochs=0)
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        assert "outside the training vocabulary" in capsys.readouterr().out

    def test_zero_epochs_emits_single_validation_row(self, tmp_path):
        corpus = write_corpus(tmp_path)
        cfg = write_config(tmp_path, corpus, epochs=0)
        out = tmp_path / "o"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "metrics.csv").read_text().splitlines()
        assert len(lines) == 2
        assert lines[1].startswith("0,,")

    def test_resume_continues_to_identical_results(self, tmp_path):
        text = "ab" * 1000
        corpus = write_corpus(tmp_path, text=text)
        cfg_path = write_config(tmp_path, corpus, epochs=2)

        straight = tmp_path / "straight"
        assert main(["train", "--config", str(cfg_path), "--out", str(straight)]) == 0

        # stop the same run after one epoch, then hand the checkpoint back
        session = TrainingSession(ExperimentConfig.from_file(cfg_path))
        session.run(epochs=1)
        mid = tmp_path / "mid.ckpt"
        save_checkpoint(mid, session)
        resumed = tmp_path / "resumed"
        assert main(["train", "--resume", str(mid), "--out", str(resumed)]) == 0
        assert (resumed / "metrics.csv").read_bytes() == (straight / "metrics.csv").read_bytes()
        assert (resumed / "last.ckpt").read_bytes() == (straight / "last.ckpt").read_bytes()

    def test_resume_with_matching_config_is_accepted(self, tmp_path):
        corpus = write_corpus(tmp_path)
        cfg_path = write_config(tmp_path, corpus, epochs=1)
        out = tmp_path / "o"
        assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
        rc = main(["train", "--resume", str(out / "last.ckpt"),
                   "--config", str(cfg_path), "--out", str(tmp_path / "o2")])
        assert rc == 0

    def test_resume_with_conflicting_config_exits_2(self, tmp_path):
        corpus = write_corpus(tmp_path)
        cfg_path = write_config(tmp_path, corpus, epochs=1)
        out = tmp_path / "o"
        assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
        other = write_config(tmp_path, corpus, name="other.json", epochs=1, hidden_dim=12)
        rc = main(["train", "--resume", str(out / "last.ckpt"),
                   "--config", str(other), "--out", str(tmp_path / "o2")])
        assert rc == 2

    def test_missing_config_and_resume_exits_2(self):
        assert main(["train"]) == 2

    def test_missing_corpus_exits_3(self, tmp_path):
        cfg = write_config(tmp_path, tmp_path / "nope.txt")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2 + 1

    def test_unknown_config_key_exits_2(self, tmp_path):
        corpus = write_corpus(tmp_path)
        payload = json.loads(write_config(tmp_path, corpus).read_text())
        payload["mystery"] = 1
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(payload), encoding="utf-8")
        assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2

    def test_divergence_exits_4_and_saves_state(self, tmp_path, capsys):
        corpus = write_corpus(tmp_path)
        cfg = write_config(tmp_path, corpus, mode="additive", activation="identity",
                           lr=1e200, epochs=1)
        out = tmp_path / "o"
        with np.errstate(over="ignore", invalid="ignore"):
            assert main(["train", "--config", str(cfg), "--out", str(out)]) == 4
        assert (out / "last.ckpt").exists()
        assert (out / "metrics.csv").exists()
        assert "divergence" in capsys.readouterr().err


class TestEval:
    def trained(self, tmp_path, **kw):
        corpus = write_corpus(tmp_path)
        cfg = write_config(tmp_path, corpus, **kw)
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        return out / "last.ckpt"

    def test_eval_prints_split_bpc(self, tmp_path, capsys):
        ckpt = self.trained(tmp_path, epochs=1)
        capsys.readouterr()  # drop training output
        assert main(["eval", "--ckpt", str(ckpt)]) == 0
        assert capsys.readouterr().out.startswith("test bpc ")
        assert main(["eval", "--ckpt", str(ckpt), "--split", "valid"]) == 0
        assert capsys.readouterr().out.startswith("valid bpc ")

    def test_eval_is_deterministic(self, tmp_path, capsys):
        ckpt = self.trained(tmp_path, epochs=1)
        capsys.readouterr()  # drop training output
        assert main(["eval", "--ckpt", str(ckpt)]) == 0
        first = capsys.readouterr().out
        assert main(["eval", "--ckpt", str(ckpt)]) == 0
        assert capsys.readouterr().out == first

    def test_missing_checkpoint_exits_3(self, tmp_path):
        assert main(["eval", "--ckpt", str(tmp_path / "none.ckpt")]) == 3

    def test_too_short_split_exits_3(self, tmp_path):
        corpus = write_corpus(tmp_path, text="ab" * 60)  # test split: 6 chars
        cfg = write_config(tmp_path, corpus, epochs=0,
                           split_fractions=(0.8, 0.15, 0.05))
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        assert main(["eval", "--ckpt", str(out / "last.ckpt")]) == 3


class TestDiagnose:
    def test_hist_report_files(self, tmp_path, capsys):
        corpus = write_corpus(tmp_path)
        cfg = write_config(tmp_path, corpus, epochs=1, activation="tanh")
        out = tmp_path / "reports"
        rc = main(["diagnose", "--config", str(cfg), "--experiment", "hist",
                   "--out", str(out)])
        assert rc == 0
        assert (out / "hist.csv").exists()
        summary = json.loads((out / "hist_summary.json").read_text())
        assert summary["experiment"] == "hist"
        assert summary["metadata"]["model"] == "rnn-mi_simple"
        assert "report:" in capsys.readouterr().out

    def test_sweep_with_cli_grids(self, tmp_path):
        corpus = write_corpus(tmp_path)
        cfg = write_config(tmp_path, corpus, epochs=1)
        out = tmp_path / "reports"
        rc = main(["diagnose", "--config", str(cfg), "--experiment", "sweep",
                   "--r-w", "0.02", "--seeds", "1", "--out", str(out)])
        assert rc == 0
        summary = json.loads((out / "sweep_summary.json").read_text())
        rows = summary["rows"]
        assert len(rows) == 2  # two models, one r_w, one seed
        assert {r[0] for r in rows} == {"vanilla-rnn", "mi-rnn"}

    def test_curves_report(self, tmp_path):
        corpus = write_corpus(tmp_path)
        cfg = write_config(tmp_path, corpus, epochs=1)
        out = tmp_path / "reports"
        rc = main(["diagnose", "--config", str(cfg), "--experiment", "curves",
                   "--seeds", "1,2", "--out", str(out)])
        assert rc == 0
        summary = json.loads((out / "curves_summary.json").read_text())
        assert set(summary["metadata"]["verdicts"]) == {"mi-rnn-general", "mi-rnn-simple"}

    def test_norms_report(self, tmp_path):
        corpus = write_corpus(tmp_path)
        cfg = write_config(tmp_path, corpus, epochs=1, seq_len=12)
        out = tmp_path / "reports"
        rc = main(["diagnose", "--config", str(cfg), "--experiment", "norms",
                   "--out", str(out)])
        assert rc == 0
        text = (out / "norms.csv").read_text()
        assert text.splitlines()[0] == "epoch,t,model,log_norm"
        assert "lin-mi-rnn" in text

    def test_report_dir_env_var(self, tmp_path, capsys, monkeypatch):
        corpus = write_corpus(tmp_path)
        cfg = write_config(tmp_path, corpus, epochs=1, activation="tanh")
        env_dir = tmp_path / "envdir"
        monkeypatch.setenv("MIRNN_REPORT_DIR", str(env_dir))
        rc = main(["diagnose", "--config", str(cfg), "--experiment", "hist"])
        assert rc == 0
        assert (env_dir / "hist.csv").exists()

    def test_out_flag_beats_env_var(self, tmp_path, monkeypatch):
        corpus = write_corpus(tmp_path)
        cfg = write_config(tmp_path, corpus, epochs=1, activation="tanh")
        monkeypatch.setenv("MIRNN_REPORT_DIR", str(tmp_path / "envdir"))
        out = tmp_path / "flagdir"
        rc = main(["diagnose", "--config", str(cfg), "--experiment", "hist",
                   "--out", str(out)])
        assert rc == 0
        assert (out / "hist.csv").exists()
        assert not (tmp_path / "envdir").exists()

    def test_bad_seed_list_exits_2(self, tmp_path):
        corpus = write_corpus(tmp_path)
        cfg = write_config(tmp_path, corpus, epochs=1)
        rc = main(["diagnose", "--config", str(cfg), "--experiment", "curves",
                   "--seeds", "1,x", "--out", str(tmp_path / "r")])
        assert rc == 2


class TestVerify:
    def test_verify_passes_and_writes_manifest(self, tmp_path, capsys):
        out = tmp_path / "v"
        assert main(["verify", "--seed", "3", "--out", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert stdout.count("[pass]") == 18
        assert "[FAIL]" not in stdout
        assert "all checks passed" in stdout
        manifest = json.loads((out / "verify_manifest.json").read_text())
        assert manifest["all_passed"] is True
        assert len(manifest["checks"]) == 18

    def test_verify_failure_exits_5(self, capsys, monkeypatch):
        from mirnn import cli

        def doomed(seed=0, thorough=False):
            return {"format": "mirnn-verify-v1", "seed": seed, "all_passed": False,
                    "checks": [{"name": "fd-gradients/rnn/additive", "passed": False,
                                "detail": "planted", "seed": 1}]}

        monkeypatch.setattr(cli, "run_all_checks", doomed)
        assert main(["verify"]) == 5
        captured = capsys.readouterr()
        assert "[FAIL] fd-gradients/rnn/additive" in captured.out
        assert "verification failure" in captured.err


class TestMakeCorpus:
    def test_writes_requested_corpus(self, tmp_path, capsys):
        out = tmp_path / "c.txt"
        assert main(["make-corpus", "--out", str(out), "--chars", "3000",
                     "--seed", "9"]) == 0
        text = out.read_text(encoding="utf-8")
        assert text == synthesize_corpus(3000, seed=9)
        assert f"wrote {len(text)} characters" in capsys.readouterr().out

    def test_generation_is_deterministic(self, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        assert main(["make-corpus", "--out", str(a), "--chars", "2000"]) == 0
        assert main(["make-corpus", "--out", str(b), "--chars", "2000"]) == 0
        assert a.read_bytes() == b.read_bytes()
