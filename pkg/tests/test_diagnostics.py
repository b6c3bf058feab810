"""Experiment statistics, report files, and the four diagnostics."""

import math

import numpy as np
import pytest

from mirnn.bptt import LOG_NORM_SENTINEL, backward_through_time, unroll_forward
from mirnn.config import ExperimentConfig
from mirnn.data import batch_sequences
from mirnn.diagnostics import (
    CurveExperimentConfig,
    NormExperimentConfig,
    NormResult,
    ReportBundle,
    ScalingSweepConfig,
    activation_histogram,
    emit_report,
    gradient_norm_experiment,
    measure_probe_norms,
    parse_summary,
    scaling_sweep,
    trend_verdict,
    two_pass_std,
    validation_curves,
)
from mirnn.errors import ConfigError
from mirnn.training import TrainingSession


def toy_config(**kw):
    kw.setdefault("corpus", "unused.txt")
    kw.setdefault("cell", "rnn")
    kw.setdefault("mode", "additive")
    kw.setdefault("hidden_dim", 8)
    kw.setdefault("seq_len", 8)
    kw.setdefault("batch_size", 8)
    kw.setdefault("lr", 0.01)
    kw.setdefault("epochs", 1)
    kw.setdefault("seed", 3)
    return ExperimentConfig(**kw)


class TestStats:
    def test_population_std_matches_hand_formula(self):
        vals = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]  # mean 5, variance 4
        assert two_pass_std(vals) == pytest.approx(2.0, abs=1e-15)

    def test_sample_std_uses_n_minus_one(self):
        vals = [1.0, 2.0, 3.0]
        assert two_pass_std(vals, ddof=1) == pytest.approx(1.0, abs=1e-15)

    def test_single_value_population_std_is_zero(self):
        assert two_pass_std([3.7]) == 0.0

    def test_single_value_sample_std_is_nan(self):
        assert math.isnan(two_pass_std([3.7], ddof=1))

    def test_empty_is_nan(self):
        assert math.isnan(two_pass_std([]))


class TestVerdict:
    def test_clear_improvement_passes(self):
        v = trend_verdict([3.0, 3.1, 3.2], [2.0, 2.1, 2.2])
        assert v["verdict"] == "pass"
        assert v["margin"] == pytest.approx(1.0, abs=1e-12)
        assert v["margin"] > v["pooled_se"]

    def test_clear_regression_fails(self):
        v = trend_verdict([2.0, 2.1, 2.2], [3.0, 3.1, 3.2])
        assert v["verdict"] == "fail"
        assert v["margin"] < 0

    def test_overlap_is_inconclusive(self):
        # margin 0.1 against pooled SE sqrt(0.02) ~ 0.141
        v = trend_verdict([3.0, 3.2], [3.1, 2.9])
        assert v["verdict"] == "inconclusive"

    def test_single_seed_cannot_pass(self):
        v = trend_verdict([5.0], [1.0, 1.1])
        assert v["verdict"] == "inconclusive"
        assert math.isnan(v["pooled_se"])

    def test_higher_is_better_flips_direction(self):
        v = trend_verdict([1.0, 1.0], [2.0, 2.0], higher_is_better=True)
        assert v["verdict"] == "pass"
        assert v["margin"] == 1.0

    def test_report_fields(self):
        v = trend_verdict([2.0, 2.5], [1.0, 1.5])
        assert v["baseline_mean"] == 2.25
        assert v["candidate_mean"] == 1.25
        assert v["n_baseline"] == 2
        assert v["n_candidate"] == 2


class TestReports:
    def bundle(self):
        return ReportBundle(
            name="demo",
            csv_header=("model", "value", "flag"),
            csv_rows=[("a", 0.5, False), ("b", math.nan, True), ("c", None, False)],
            summary={"format": "mirnn-report-v1", "experiment": "demo",
                     "metadata": {"x": np.float64(1.5), "n": np.int64(3),
                                  "bad": math.inf},
                     "rows": [["a", 0.5]]},
        )

    def test_csv_formatting(self):
        text = self.bundle().csv_text()
        lines = text.splitlines()
        assert lines[0] == "model,value,flag"
        assert lines[1] == "a,0.5,false"
        assert lines[2] == "b,,true"  # nan prints as empty
        assert lines[3] == "c,,false"  # None prints as empty

    def test_emit_and_parse_round_trip(self, tmp_path):
        paths = emit_report(self.bundle(), tmp_path)
        summary = parse_summary(paths["summary"])
        assert summary["experiment"] == "demo"
        assert summary["metadata"]["x"] == 1.5
        assert summary["metadata"]["n"] == 3
        assert summary["metadata"]["bad"] is None  # non-finite -> null

    def test_emission_is_byte_deterministic(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        pa = emit_report(self.bundle(), a)
        pb = emit_report(self.bundle(), b)
        for key in ("csv", "summary"):
            with open(pa[key], "rb") as f1, open(pb[key], "rb") as f2:
                assert f1.read() == f2.read()


class TestNorms:
    def test_probe_zero_rejected(self):
        with pytest.raises(ConfigError):
            NormExperimentConfig(base=toy_config(), probe_ts=(0, 5))

    def test_probe_beyond_seq_len_rejected(self):
        with pytest.raises(ConfigError):
            NormExperimentConfig(base=toy_config(seq_len=8), probe_ts=(9,))

    def test_identity_recurrence_preserves_norms(self, toy_text):
        # U = I with identity activation is an isometry: the final-step
        # gradient keeps its L2 norm at every earlier probe step.
        cfg = toy_config(activation="identity", mode="additive")
        session = TrainingSession(cfg, text=toy_text)
        session.params["h.U"][...] = np.eye(cfg.hidden_dim)
        norms = measure_probe_norms(session, probe_ts=(1, 4, 8), probe_sequences=16)
        assert norms[1] == pytest.approx(norms[8], abs=1e-12)
        assert norms[4] == pytest.approx(norms[8], abs=1e-12)

    def test_probe_norms_match_state_grad_route(self, toy_text):
        # cross-check the trace row indexing against kept dC/dh_t vectors
        cfg = toy_config(mode="mi_simple")
        session = TrainingSession(cfg, text=toy_text)
        probes = (2, 5)
        reported = measure_probe_norms(session, probe_ts=probes, probe_sequences=8)
        logs = {t: [] for t in probes}
        seen = 0
        for batch in batch_sequences(session.train_idx, cfg.seq_len, cfg.batch_size, prng=None):
            if seen >= 8:
                break
            take = min(batch.batch_size, 8 - seen)
            h0 = session.model.initial_state(take)
            record = unroll_forward(session.model.cell, batch.inputs[:take], h0,
                                    session.model.readout)
            _, trace = backward_through_time(
                session.model.cell, record, batch.targets[:take], session.model.readout,
                final_step_only=True, keep_state_grads=True,
            )
            for t in probes:
                vec = trace.state_grads[t - 1]
                logs[t].append(np.log(np.sqrt((vec * vec).sum(axis=0))))
            seen += take
        for t in probes:
            manual = float(np.mean(np.concatenate(logs[t])))
            assert reported[t] == pytest.approx(manual, abs=1e-12)

    def test_probe_measurement_is_deterministic(self, toy_text):
        session = TrainingSession(toy_config(), text=toy_text)
        a = measure_probe_norms(session, probe_ts=(1, 3), probe_sequences=8)
        b = measure_probe_norms(session, probe_ts=(1, 3), probe_sequences=8)
        assert a == b

    def test_experiment_covers_both_models(self, small_text):
        cfg = NormExperimentConfig(base=toy_config(seq_len=12, epochs=1),
                                   probe_ts=(1, 3), probe_sequences=64)
        res = gradient_norm_experiment(cfg, text=small_text)
        assert set(m for (_, _, m, _) in res.rows) == {"lin-rnn", "lin-mi-rnn"}
        assert set(e for (e, _, _, _) in res.rows) == {0, 1}
        assert all(math.isfinite(v) for (_, _, _, v) in res.rows)
        assert set(res.models) == {"lin-rnn", "lin-mi-rnn"}
        for payload in res.models.values():
            assert payload["activation"] == "identity"

    def test_bundle_replaces_non_finite_norms(self):
        res = NormResult(rows=[(0, 1, "m", -math.inf), (1, 1, "m", -2.0)],
                         models={}, probe_ts=(1,))
        rows = res.to_bundle().csv_rows
        assert rows[0][3] == LOG_NORM_SENTINEL
        assert rows[1][3] == -2.0


class TestHistogram:
    def test_non_tanh_rnn_rejected(self, toy_text):
        session = TrainingSession(toy_config(activation="identity"), text=toy_text)
        with pytest.raises(ConfigError):
            activation_histogram(session)

    def zeroed_session(self, toy_text, **kw):
        session = TrainingSession(toy_config(activation="tanh", **kw), text=toy_text)
        for name in ("h.W", "h.U", "h.b"):
            session.params[name][...] = 0.0
        return session

    def test_zero_states_land_in_central_bin(self, toy_text):
        session = self.zeroed_session(toy_text)
        res = activation_histogram(session, tag="zeroed")
        assert res.total > 0
        assert res.counts[20] == res.total  # bin [0.0, 0.05)
        assert res.saturation_fraction == 0.0

    def test_saturated_states_land_in_last_bin(self, toy_text):
        session = self.zeroed_session(toy_text)
        session.params["h.b"][...] = 50.0  # tanh(50) == 1.0 in float64
        res = activation_histogram(session, tag="pinned")
        assert res.counts[-1] == res.total
        assert res.saturation_fraction == 1.0

    def test_threshold_is_honored(self, toy_text):
        session = self.zeroed_session(toy_text)
        session.params["h.b"][...] = 1.0  # every h == tanh(1) ~ 0.7616
        assert activation_histogram(session, threshold=0.7).saturation_fraction == 1.0
        assert activation_histogram(session, threshold=0.8).saturation_fraction == 0.0

    def test_bundle_has_one_row_per_bin(self, toy_text):
        res = activation_histogram(self.zeroed_session(toy_text), tag="z", bins=10)
        bundle = res.to_bundle()
        assert len(bundle.csv_rows) == 10
        assert bundle.summary["metadata"]["model"] == "z"
        assert sum(r[3] for r in bundle.csv_rows) == res.total


class TestSweep:
    def test_single_cell_sweep_has_zero_std(self, small_text):
        cfg = ScalingSweepConfig(base=toy_config(), r_w_values=(0.02,), seeds=(1,),
                                 models=(("vanilla-rnn", "additive"),))
        res = scaling_sweep(cfg, text=small_text)
        assert len(res.rows) == 1
        assert res.rows[0][4] is False
        assert res.stds["vanilla-rnn"] == 0.0
        assert res.warnings == []

    def test_diverged_cells_flagged_and_excluded(self, toy_text):
        base = toy_config(activation="identity", lr=1e200)
        cfg = ScalingSweepConfig(base=base, r_w_values=(0.02,), seeds=(1,),
                                 models=(("vanilla-rnn", "additive"),
                                         ("mi-rnn", "mi_general")))
        with np.errstate(over="ignore", invalid="ignore"):
            res = scaling_sweep(cfg, text=toy_text)
        assert all(r[4] is True for r in res.rows)
        assert all(math.isnan(r[3]) for r in res.rows)
        assert len(res.warnings) == 2
        assert all(math.isnan(s) for s in res.stds.values())
        assert res.bpcs("mi-rnn") == []

    def test_sweep_is_deterministic(self, small_text, tmp_path):
        cfg = ScalingSweepConfig(base=toy_config(), r_w_values=(0.02,), seeds=(1,),
                                 models=(("vanilla-rnn", "additive"),))
        a = scaling_sweep(cfg, text=small_text)
        b = scaling_sweep(cfg, text=small_text)
        assert a.rows == b.rows
        pa = emit_report(a.to_bundle(), tmp_path / "a")
        pb = emit_report(b.to_bundle(), tmp_path / "b")
        for key in ("csv", "summary"):
            with open(pa[key], "rb") as f1, open(pb[key], "rb") as f2:
                assert f1.read() == f2.read()

    def test_empty_r_w_rejected(self):
        with pytest.raises(ConfigError):
            ScalingSweepConfig(base=toy_config(), r_w_values=())


class TestCurves:
    def test_rows_best_and_verdicts(self, small_text):
        cfg = CurveExperimentConfig(base=toy_config(), seeds=(1, 2),
                                    variants=(("base", "additive"), ("mi", "mi_simple")))
        res = validation_curves(cfg, text=small_text)
        # per variant per seed: epoch-0 row plus one trained epoch
        assert len(res.rows) == 2 * 2 * 2
        assert len(res.best["base"]) == 2
        assert len(res.best["mi"]) == 2
        assert set(res.verdicts) == {"mi"}
        v = res.verdicts["mi"]
        assert v["verdict"] in ("pass", "fail", "inconclusive")
        assert v["n_baseline"] == 2

    def test_duplicate_variant_tags_rejected(self):
        with pytest.raises(ConfigError):
            CurveExperimentConfig(base=toy_config(),
                                  variants=(("same", "additive"), ("same", "mi_simple")))

    def test_bundle_carries_verdicts(self, small_text):
        cfg = CurveExperimentConfig(base=toy_config(), seeds=(1, 2),
                                    variants=(("base", "additive"), ("mi", "mi_simple")))
        res = validation_curves(cfg, text=small_text)
        summary = res.to_bundle().summary
        assert summary["experiment"] == "curves"
        assert "mi" in summary["metadata"]["verdicts"]
