"""Desk-scale training experiments and machine-readable reports.

Four experiments, each a deterministic function of its config:

  norms   per-epoch log-L2 gradient norms at probe time steps, for an
          identity-activation additive/multiplicative pair
  hist    hidden-activation histogram and saturation fraction on
          validation data
  sweep   robustness of test BPC to the input-weight init scale r_W
  curves  validation-BPC comparison of additive vs multiplicative
          cells across seeds, with a margin verdict

Qualitative comparisons go through trend_verdict: the candidate must
beat the baseline by more than one pooled standard error across seeds,
else the result is "inconclusive" rather than a pass or fail. Reports
are CSV rows plus a JSON summary with a deterministic field order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bptt import LOG_NORM_SENTINEL, backward_through_time, loss_bpc, unroll_forward
from .config import ExperimentConfig
from .data import batch_sequences
from .errors import ConfigError, DivergenceError, ShapeError
from .training import TrainingSession

REPORT_FORMAT = "mirnn-report-v1"

# full-scale training reference: test-BPC standard deviation across init
# scales, recorded alongside desk-scale sweeps as the trend being probed
FULL_SCALE_REFERENCE_STD = {"vanilla-rnn": 0.06, "mi-rnn": 0.008}


def two_pass_std(values, ddof: int = 0) -> float:
    xs = [float(v) for v in values]
    n = len(xs)
    if n - ddof <= 0:
        return math.nan
    m = sum(xs) / n
    return math.sqrt(sum((x - m) ** 2 for x in xs) / (n - ddof))


def trend_verdict(baseline, candidate, higher_is_better: bool = False) -> dict:
    """Margin rule for qualitative comparisons.

    Positive margin means the candidate is better. Verdict is "pass"
    when the margin exceeds one pooled standard error, "fail" when it
    falls below minus one, else "inconclusive". Fewer than two values
    on either side cannot clear the rule and report "inconclusive".
    """
    b = [float(x) for x in baseline]
    c = [float(x) for x in candidate]
    mb = sum(b) / len(b)
    mc = sum(c) / len(c)
    diff = (mc - mb) if higher_is_better else (mb - mc)
    if len(b) >= 2 and len(c) >= 2:
        se = math.sqrt(two_pass_std(b, ddof=1) ** 2 / len(b)
                       + two_pass_std(c, ddof=1) ** 2 / len(c))
    else:
        se = math.nan
    if math.isnan(se):
        verdict = "inconclusive"
    elif diff > se:
        verdict = "pass"
    elif diff < -se:
        verdict = "fail"
    else:
        verdict = "inconclusive"
    return {
        "verdict": verdict,
        "margin": diff,
        "pooled_se": se,
        "baseline_mean": mb,
        "candidate_mean": mc,
        "n_baseline": len(b),
        "n_candidate": len(c),
    }


def _fmt_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _sanitize(obj):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats -> null."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _sanitize(obj.tolist())
    return obj


@dataclass
class ReportBundle:
    name: str
    csv_header: tuple
    csv_rows: list
    summary: dict

    def csv_text(self) -> str:
        lines = [",".join(self.csv_header)]
        for row in self.csv_rows:
            lines.append(",".join(_fmt_cell(v) for v in row))
        return "\n".join(lines) + "\n"


def emit_report(bundle: ReportBundle, out_dir) -> dict:
    """Write <name>.csv and <name>_summary.json; returns their paths."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{bundle.name}.csv")
    json_path = os.path.join(out_dir, f"{bundle.name}_summary.json")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(bundle.csv_text())
    summary = _sanitize(bundle.summary)
    with open(json_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(summary, sort_keys=True, indent=2, allow_nan=False) + "\n")
    return {"csv": csv_path, "summary": json_path}


def parse_summary(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------- norms

@dataclass
class NormExperimentConfig:
    base: ExperimentConfig
    probe_ts: tuple = (1, 5, 10)
    probe_sequences: int = 512
    clip: float | None = 1.0  # training stability for the identity pair
    models: tuple = (("lin-rnn", "additive"), ("lin-mi-rnn", "mi_simple"))

    def __post_init__(self):
        if any(t < 1 for t in self.probe_ts):
            raise ConfigError(f"probe steps must be >= 1, got {self.probe_ts}")
        if max(self.probe_ts) > self.base.seq_len:
            raise ConfigError(
                f"probe step {max(self.probe_ts)} exceeds seq_len {self.base.seq_len}"
            )


@dataclass
class NormResult:
    rows: list  # (epoch, t, model, log_norm)
    models: dict
    probe_ts: tuple

    def curve(self, model: str, t: int) -> list:
        return [(e, v) for (e, tt, m, v) in self.rows if m == model and tt == t]

    def final(self, model: str, t: int) -> float:
        return self.curve(model, t)[-1][1]

    def to_bundle(self) -> ReportBundle:
        rows = [(e, t, m, LOG_NORM_SENTINEL if not math.isfinite(v) else v)
                for (e, t, m, v) in self.rows]
        return ReportBundle(
            name="norms",
            csv_header=("epoch", "t", "model", "log_norm"),
            csv_rows=rows,
            summary={
                "format": REPORT_FORMAT,
                "experiment": "norms",
                "metadata": {"models": self.models, "probe_ts": list(self.probe_ts)},
                "rows": [list(r) for r in rows],
            },
        )


def measure_probe_norms(session: TrainingSession, probe_ts, probe_sequences: int) -> dict:
    """Mean log ||dC/dh_t|| per probe time step t, over the first
    probe_sequences training windows.

    The loss is the final step's prediction alone, so a small t measures
    how much of that signal survives T - t steps of backpropagation.
    """
    cfg = session.config
    T = cfg.seq_len
    if min(probe_ts) < 1 or max(probe_ts) > T:
        raise ShapeError(f"probe steps {tuple(probe_ts)} out of range for T={T}")
    collected = {t: [] for t in probe_ts}
    seen = 0
    for batch in batch_sequences(session.train_idx, T, cfg.batch_size, prng=None):
        if seen >= probe_sequences:
            break
        take = min(batch.batch_size, probe_sequences - seen)
        inputs = batch.inputs[:take]
        targets = batch.targets[:take]
        h0 = session.model.initial_state(take)
        record = unroll_forward(session.model.cell, inputs, h0, session.model.readout)
        _, trace = backward_through_time(
            session.model.cell, record, targets, session.model.readout,
            final_step_only=True,
        )
        for t in probe_ts:
            collected[t].append(trace.log_norms[t - 1])
        seen += take
    return {t: float(np.mean(np.concatenate(cols))) for t, cols in collected.items()}


def gradient_norm_experiment(cfg: NormExperimentConfig, text: str | None = None) -> NormResult:
    """Per-epoch probe-norm curves for the identity-activation pair.

    Both models train under the same budget (with a shared max-norm
    clip, since unbounded linear recurrences can blow up); the recorded
    norms themselves are never clipped.
    """
    rows = []
    model_meta = {}
    for tag, mode in cfg.models:
        run_cfg = replace(cfg.base, cell="rnn", activation="identity",
                          mode=mode, grad_clip=cfg.clip)
        model_meta[tag] = run_cfg.to_payload()
        session = TrainingSession(run_cfg, text=text)
        for t, v in measure_probe_norms(session, cfg.probe_ts, cfg.probe_sequences).items():
            rows.append((0, t, tag, v))
        for _ in range(run_cfg.epochs):
            session.run_epoch()
            for t, v in measure_probe_norms(session, cfg.probe_ts, cfg.probe_sequences).items():
                rows.append((session.epoch, t, tag, v))
    rows.sort(key=lambda r: (r[2], r[0], r[1]))
    return NormResult(rows=rows, models=model_meta, probe_ts=tuple(cfg.probe_ts))


# ----------------------------------------------------------------- hist

@dataclass
class HistResult:
    model: str
    bin_edges: np.ndarray
    counts: np.ndarray
    total: int
    saturation_fraction: float
    threshold: float

    def to_bundle(self) -> ReportBundle:
        rows = [(self.model, float(self.bin_edges[i]), float(self.bin_edges[i + 1]),
                 int(self.counts[i])) for i in range(len(self.counts))]
        return ReportBundle(
            name="hist",
            csv_header=("model", "bin_lo", "bin_hi", "count"),
            csv_rows=rows,
            summary={
                "format": REPORT_FORMAT,
                "experiment": "hist",
                "metadata": {
                    "model": self.model,
                    "threshold": self.threshold,
                    "total": self.total,
                    "saturation_fraction": self.saturation_fraction,
                },
                "rows": [list(r) for r in rows],
            },
        )


def activation_histogram(session: TrainingSession, tag: str = "model", bins: int = 40,
                         threshold: float = 0.9, split: str = "valid") -> HistResult:
    """Histogram of hidden activations over every validation timestep."""
    model = session.model
    if model.cell.family == "rnn" and model.config.activation != "tanh":
        raise ConfigError("activation histograms assume outputs in [-1, 1]; use tanh cells")
    cfg = session.config
    indices = session.valid_idx if split == "valid" else session.test_idx
    # Rounded so report rows carry clean bin boundaries like -0.65.
    edges = np.round(np.linspace(-1.0, 1.0, bins + 1), 12)
    counts = np.zeros(bins, dtype=np.int64)
    total = 0
    saturated = 0
    for batch in batch_sequences(indices, cfg.seq_len, cfg.batch_size, prng=None, split=split):
        h0 = model.initial_state(batch.batch_size)
        record = unroll_forward(model.cell, batch.inputs, h0, model.readout)
        for state in record.states[1:]:
            h = state.h
            c, _ = np.histogram(h, bins=edges)
            counts += c
            total += h.size
            saturated += int((np.abs(h) > threshold).sum())
    return HistResult(
        model=tag,
        bin_edges=edges,
        counts=counts,
        total=total,
        saturation_fraction=saturated / total if total else 0.0,
        threshold=threshold,
    )


# ---------------------------------------------------------------- sweep

@dataclass
class ScalingSweepConfig:
    base: ExperimentConfig
    r_w_values: tuple = (0.02, 0.1, 0.3, 0.6)
    seeds: tuple = (1, 2)
    models: tuple = (("vanilla-rnn", "additive"), ("mi-rnn", "mi_general"))

    def __post_init__(self):
        if len(self.r_w_values) < 1:
            raise ConfigError("sweep needs at least one r_w value")


@dataclass
class SweepResult:
    rows: list  # (model, r_w, seed, test_bpc, diverged)
    stds: dict  # model -> std of test BPC across (r_w, seed) cells
    warnings: list = field(default_factory=list)

    def bpcs(self, model: str) -> list:
        return [r[3] for r in self.rows if r[0] == model and not r[4]]

    def to_bundle(self) -> ReportBundle:
        return ReportBundle(
            name="sweep",
            csv_header=("model", "r_w", "seed", "test_bpc", "diverged"),
            csv_rows=self.rows,
            summary={
                "format": REPORT_FORMAT,
                "experiment": "sweep",
                "metadata": {
                    "stds": self.stds,
                    "full_scale_reference_std": FULL_SCALE_REFERENCE_STD,
                    "warnings": self.warnings,
                },
                "rows": [list(r) for r in self.rows],
            },
        )


def scaling_sweep(cfg: ScalingSweepConfig, text: str | None = None) -> SweepResult:
    """Train every (model, r_w, seed) cell to budget and record test BPC.

    A diverged cell is kept as a flagged row but excluded from the std,
    with a warning. The recurrent init range r_u stays fixed across the
    sweep; only the input range varies.
    """
    rows = []
    warnings = []
    for tag, mode in cfg.models:
        for r_w in cfg.r_w_values:
            for seed in cfg.seeds:
                run_cfg = replace(cfg.base, cell="rnn", mode=mode, r_w=float(r_w),
                                  seed=int(seed))
                try:
                    session = TrainingSession(run_cfg, text=text)
                    session.run()
                    rows.append((tag, float(r_w), int(seed), session.test_bpc(), False))
                except DivergenceError as e:
                    warnings.append(f"{tag} r_w={r_w} seed={seed} diverged: {e}")
                    rows.append((tag, float(r_w), int(seed), math.nan, True))
    stds = {}
    for tag, _ in cfg.models:
        vals = [r[3] for r in rows if r[0] == tag and not r[4]]
        stds[tag] = two_pass_std(vals) if vals else math.nan
    return SweepResult(rows=rows, stds=stds, warnings=warnings)


# --------------------------------------------------------------- curves

@dataclass
class CurveExperimentConfig:
    base: ExperimentConfig
    seeds: tuple = (1, 2, 3)
    variants: tuple = (
        ("vanilla-rnn", "additive"),
        ("mi-rnn-general", "mi_general"),
        ("mi-rnn-simple", "mi_simple"),
    )

    def __post_init__(self):
        tags = [t for t, _ in self.variants]
        if len(set(tags)) != len(tags):
            raise ConfigError("variant tags must be unique")


@dataclass
class CurveResult:
    rows: list  # (model, seed, epoch, train_bpc, valid_bpc)
    best: dict  # model -> list of best validation BPCs, one per seed
    verdicts: dict  # model -> trend_verdict against the first (baseline) variant

    def to_bundle(self) -> ReportBundle:
        return ReportBundle(
            name="curves",
            csv_header=("model", "seed", "epoch", "train_bpc", "valid_bpc"),
            csv_rows=self.rows,
            summary={
                "format": REPORT_FORMAT,
                "experiment": "curves",
                "metadata": {"best": self.best, "verdicts": self.verdicts},
                "rows": [list(r) for r in self.rows],
            },
        )


def validation_curves(cfg: CurveExperimentConfig, text: str | None = None) -> CurveResult:
    """Equal-budget validation curves across variants and seeds.

    The first variant is the baseline; every other variant gets a
    margin verdict against it on best validation BPC across seeds
    (lower is better).
    """
    rows = []
    best = {tag: [] for tag, _ in cfg.variants}
    for tag, mode in cfg.variants:
        for seed in cfg.seeds:
            run_cfg = replace(cfg.base, mode=mode, seed=int(seed))
            session = TrainingSession(run_cfg, text=text)
            session.run()
            for m in session.metrics:
                rows.append((tag, int(seed), m.epoch, m.train_bpc, m.valid_bpc))
            best[tag].append(session.best_val_bpc)
    baseline_tag = cfg.variants[0][0]
    verdicts = {}
    for tag, _ in cfg.variants[1:]:
        verdicts[tag] = trend_verdict(best[baseline_tag], best[tag], higher_is_better=False)
    return CurveResult(rows=rows, best=best, verdicts=verdicts)
