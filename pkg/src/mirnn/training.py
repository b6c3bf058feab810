"""Model assembly and the character-LM training loop.

A Model bundles one recurrent cell, an affine readout, and the
vocabulary it was built against. TrainingSession owns the full loop:
per-epoch shuffled batches, Adam updates on the mean per-character NLL,
validation BPC, and the halving schedule. Every random choice flows
from the experiment seed through named derived streams (parameters by
tensor, shuffling by epoch number), so a session replays bit-identically
and resuming from a checkpoint cannot drift from the uninterrupted run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bptt import LN2, Readout, backward_through_time, loss_bpc, unroll_forward
from .cells import CellState, init_cell_params, make_cell
from .config import ExperimentConfig
from .data import CharVocab, batch_sequences, load_corpus, split_corpus
from .errors import DivergenceError, IngestionError
from .optim import LrSchedule, adam_apply, adam_init, schedule_step
from .tensor import Prng

READOUT_INIT_RANGE = 0.02


@dataclass
class Model:
    cell: object
    readout: Readout
    vocab: CharVocab
    config: ExperimentConfig

    def params(self) -> dict:
        """Live references to every trainable array, by name."""
        p = dict(self.cell.param_items())
        p["out.W"] = self.readout.W
        p["out.b"] = self.readout.b
        return p

    def param_count(self) -> int:
        return self.cell.param_count() + self.readout.W.size + self.readout.b.size

    def initial_state(self, batch_size: int | None = None) -> CellState:
        d = self.cell.hidden_dim
        shape = (d,) if batch_size is None else (d, batch_size)
        h = np.full(shape, self.config.initial_fill())
        c = np.zeros(shape) if self.cell.family == "lstm" else None
        return CellState(h=h, c=c)


def build_model(config: ExperimentConfig, vocab: CharVocab) -> Model:
    """Deterministic model construction from (config, vocab)."""
    prng = Prng(config.seed)
    cell_params = init_cell_params(
        config.cell,
        config.mode,
        input_dim=vocab.size,
        hidden_dim=config.hidden_dim,
        rng=prng.derive("cell"),
        r_w=config.r_w,
        r_u=config.r_u,
        mi_init=config.resolved_mi_init(),
    )
    cell = make_cell(config.cell, cell_params, activation=config.activation)
    W_out = prng.derive("readout", "W").uniform(
        -READOUT_INIT_RANGE, READOUT_INIT_RANGE, (vocab.size, config.hidden_dim)
    )
    readout = Readout(W=W_out, b=np.zeros(vocab.size))
    return Model(cell=cell, readout=readout, vocab=vocab, config=config)


def evaluate_bpc(model: Model, indices: np.ndarray, T: int, batch_size: int) -> float:
    """BPC of the model over one encoded split, batched sequentially."""
    total_nll = 0.0
    total_count = 0
    for batch in batch_sequences(indices, T, batch_size, prng=None, split="eval"):
        h0 = model.initial_state(batch.batch_size)
        record = unroll_forward(model.cell, batch.inputs, h0, model.readout)
        report = loss_bpc(record, batch.targets)
        total_nll += report.nll_nats
        total_count += report.count
    return total_nll / (total_count * LN2)


def clip_grads_(grads: dict, max_norm: float) -> float:
    """Global max-norm clip, in place; returns the pre-clip norm."""
    sq = 0.0
    for g in grads.values():
        sq += float((g * g).sum())
    norm = math.sqrt(sq)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


@dataclass
class EpochMetrics:
    epoch: int
    train_bpc: float | None  # None on the epoch-0 (pre-training) row
    valid_bpc: float
    lr: float


def metrics_csv_text(rows) -> str:
    lines = ["epoch,train_bpc,valid_bpc,lr"]
    for r in rows:
        train = "" if r.train_bpc is None else repr(float(r.train_bpc))
        lines.append(f"{r.epoch},{train},{repr(float(r.valid_bpc))},{repr(float(r.lr))}")
    return "\n".join(lines) + "\n"


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(metrics_csv_text(rows))


def parse_metrics_csv(text: str) -> list:
    lines = text.strip().split("\n")
    rows = []
    for line in lines[1:]:
        e, tr, va, lr = line.split(",")
        rows.append(EpochMetrics(int(e), float(tr) if tr else None, float(va), float(lr)))
    return rows


class TrainingSession:
    """Owns one training run end to end.

    The corpus text may be passed directly (tests, synthesized data);
    otherwise it is read from config.corpus. The vocabulary is built
    from the train split alone; UNK counts for the other splits are kept
    for reporting.
    """

    def __init__(self, config: ExperimentConfig, text: str | None = None):
        self.config = config
        if text is None:
            text = load_corpus(config.corpus)
        splits = split_corpus(text, config.split_fractions)
        if not splits.train:
            raise IngestionError("train split is empty; check split_fractions")
        if not splits.valid:
            raise IngestionError("validation split is empty; training needs one")
        self.vocab = CharVocab.from_text(splits.train)
        self.train_idx, _ = self.vocab.encode(splits.train)
        self.valid_idx, self.valid_unk = self.vocab.encode(splits.valid)
        self.test_idx, self.test_unk = self.vocab.encode(splits.test)
        self.model = build_model(config, self.vocab)
        self.params = self.model.params()
        self.adam = adam_init(self.params, lr=config.lr)
        self.sched = LrSchedule(lr=config.lr)
        self.epoch = 0
        self.metrics: list = []
        self.best_val_bpc = math.inf
        self.best_epoch = -1

    def _record(self, row: EpochMetrics) -> EpochMetrics:
        self.metrics.append(row)
        if row.valid_bpc < self.best_val_bpc:
            self.best_val_bpc = row.valid_bpc
            self.best_epoch = row.epoch
        return row

    def initial_validation(self) -> EpochMetrics:
        valid = evaluate_bpc(self.model, self.valid_idx, self.config.seq_len,
                             self.config.batch_size)
        return self._record(EpochMetrics(0, None, valid, self.sched.lr))

    def run_epoch(self) -> EpochMetrics:
        cfg = self.config
        self.epoch += 1
        shuffle = Prng(cfg.seed).derive("shuffle", self.epoch)
        total_nll = 0.0
        total_count = 0
        for batch in batch_sequences(self.train_idx, cfg.seq_len, cfg.batch_size, prng=shuffle):
            h0 = self.model.initial_state(batch.batch_size)
            record = unroll_forward(self.model.cell, batch.inputs, h0, self.model.readout)
            report = loss_bpc(record, batch.targets)
            if not math.isfinite(report.nll_nats):
                raise DivergenceError(f"loss diverged in epoch {self.epoch}")
            total_nll += report.nll_nats
            total_count += report.count
            grads, _ = backward_through_time(
                self.model.cell, record, batch.targets, self.model.readout,
                loss_scale=1.0 / report.count,
            )
            if cfg.grad_clip is not None:
                clip_grads_(grads, cfg.grad_clip)
            adam_apply(self.adam, self.params, grads)
        train_bpc = total_nll / (total_count * LN2)
        valid_bpc = evaluate_bpc(self.model, self.valid_idx, cfg.seq_len, cfg.batch_size)
        schedule_step(self.sched, valid_bpc)
        self.adam.lr = self.sched.lr
        return self._record(EpochMetrics(self.epoch, train_bpc, valid_bpc, self.sched.lr))

    def run(self, epochs: int | None = None) -> list:
        """Epoch-0 validation row, then the requested training epochs."""
        if self.epoch == 0 and not self.metrics:
            self.initial_validation()
        n = self.config.epochs if epochs is None else epochs
        for _ in range(n):
            self.run_epoch()
        return self.metrics

    def test_bpc(self) -> float:
        if len(self.test_idx) <= self.config.seq_len:
            raise IngestionError("test split too short to evaluate")
        return evaluate_bpc(self.model, self.test_idx, self.config.seq_len,
                            self.config.batch_size)
