"""Sequence unrolling, character-prediction loss, and backprop through time.

A cell is unrolled over T steps from an initial state; a shared affine
readout maps each hidden state to vocabulary logits. The loss is the
softmax negative log-likelihood, reported both in nats and as
bits-per-character (nats / (count * ln 2)).

The backward pass produces exact gradients for every cell parameter and
the readout. It can optionally treat only the final step's prediction
as the loss, in which case the recorded per-step gradient norms
||dC/dh_t|| describe how a single error signal decays (or grows) as it
travels back through the recurrence. jacobian_product builds the same
propagation as an explicit product of per-step d x d factors
U^T diag(gate_k) diag(phi'_k), which the backward pass must agree with.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import log

import numpy as np

from .cells import CellState, RnnCell, activate_deriv
from .errors import ConfigError, ShapeError

LN2 = log(2.0)

# stands in for log(0) norms in emitted CSV, where -inf has no portable spelling
LOG_NORM_SENTINEL = -9999.0


@dataclass
class Readout:
    """Affine map from hidden state to vocabulary logits."""

    W: np.ndarray  # (vocab, d)
    b: np.ndarray  # (vocab,)

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"readout shapes inconsistent: W{self.W.shape} b{self.b.shape}")

    @property
    def vocab_size(self) -> int:
        return self.W.shape[0]

    def apply(self, h: np.ndarray) -> np.ndarray:
        b = self.b if h.ndim == 1 else self.b[:, None]
        return self.W @ h + b


@dataclass
class UnrollRecord:
    states: list  # CellState, length T+1; states[0] is the initial state
    caches: list  # length T
    logits: list  # length T, each (vocab,) or (vocab, B)

    @property
    def steps(self) -> int:
        return len(self.caches)


@dataclass
class LossReport:
    nll_nats: float
    bpc: float
    count: int


@dataclass
class GradientTrace:
    """log-L2 norms of dC/dh_t for t = 1..T (row t-1).

    Batched runs carry one column per sequence. state_grads, when kept,
    holds the full dC/dh_t vectors for the chain-identity checks.
    """

    log_norms: np.ndarray
    state_grads: list | None = None


def _step_input(inputs, t: int):
    if isinstance(inputs, np.ndarray):
        return inputs[t] if inputs.ndim == 1 else inputs[:, t]
    return inputs[t]


def _seq_len(inputs) -> int:
    if isinstance(inputs, np.ndarray):
        return inputs.shape[0] if inputs.ndim == 1 else inputs.shape[1]
    return len(inputs)


def unroll_forward(cell, inputs, h0: CellState, readout: Readout) -> UnrollRecord:
    """Run the cell over a sequence and collect states, caches, logits.

    inputs: (T,) int array, (B, T) int array, or a length-T list of
    dense vectors/batches. h0 must already carry the matching batch
    shape.
    """
    if readout.W.shape[1] != cell.hidden_dim:
        raise ShapeError(
            f"readout expects hidden dim {readout.W.shape[1]}, cell has {cell.hidden_dim}"
        )
    T = _seq_len(inputs)
    if T < 1:
        raise ShapeError("cannot unroll an empty sequence")
    states = [h0]
    caches = []
    logits = []
    state = h0
    for t in range(T):
        state, cache = cell.step(_step_input(inputs, t), state)
        states.append(state)
        caches.append(cache)
        logits.append(readout.apply(state.h))
    return UnrollRecord(states, caches, logits)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=0, keepdims=True)
    shifted = logits - m
    lse = np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    return shifted - lse


def _target_column(targets, t: int):
    if isinstance(targets, np.ndarray) and targets.ndim == 2:
        return targets[:, t]
    return targets[t]


def loss_bpc(record: UnrollRecord, targets) -> LossReport:
    """Total NLL over all predictions, plus bits-per-character."""
    T = record.steps
    if _seq_len(targets) != T:
        raise ShapeError(f"got {_seq_len(targets)} target steps for {T} logit steps")
    nll = 0.0
    count = 0
    for t in range(T):
        logit = record.logits[t]
        vocab = logit.shape[0]
        tgt = np.asarray(_target_column(targets, t))
        if tgt.size and (tgt.min() < 0 or tgt.max() >= vocab):
            raise ShapeError(f"target index out of range for vocab size {vocab}")
        logp = _log_softmax(logit)
        if logit.ndim == 1:
            nll -= float(logp[int(tgt)])
            count += 1
        else:
            cols = np.arange(logit.shape[1])
            nll -= float(logp[tgt, cols].sum())
            count += logit.shape[1]
    return LossReport(nll_nats=nll, bpc=nll / (count * LN2), count=count)


def backward_through_time(
    cell,
    record: UnrollRecord,
    targets,
    readout: Readout,
    final_step_only: bool = False,
    loss_scale: float = 1.0,
    keep_state_grads: bool = False,
):
    """Gradients of the (possibly scaled) NLL w.r.t. all parameters.

    Returns (grads, trace). grads maps parameter names (cell blocks
    plus out.W / out.b) to arrays. When final_step_only is set the loss
    is the last step's NLL alone and the trace shows how that single
    error signal propagates backward.
    """
    T = record.steps
    grads = {name: np.zeros_like(arr) for name, arr in cell.param_items()}
    grads["out.W"] = np.zeros_like(readout.W)
    grads["out.b"] = np.zeros_like(readout.b)

    sample = record.logits[-1]
    batched = sample.ndim == 2
    norms = np.zeros((T, sample.shape[1])) if batched else np.zeros(T)
    state_grads = [None] * T if keep_state_grads else None

    d_h = None
    d_c = None
    for k in range(T, 0, -1):
        t = k - 1
        if not final_step_only or k == T:
            logit = record.logits[t]
            p = np.exp(_log_softmax(logit))
            tgt = np.asarray(_target_column(targets, t))
            if batched:
                p[tgt, np.arange(logit.shape[1])] -= 1.0
            else:
                p[int(tgt)] -= 1.0
            d_logits = p * loss_scale
            h_k = record.states[k].h
            grads["out.W"] += np.outer(d_logits, h_k) if not batched else d_logits @ h_k.T
            grads["out.b"] += d_logits if not batched else d_logits.sum(axis=1)
            contrib = readout.W.T @ d_logits
            d_h = contrib if d_h is None else d_h + contrib
        if d_h is None:
            d_h = np.zeros_like(record.states[k].h)

        norm = np.sqrt((d_h * d_h).sum(axis=0))
        with np.errstate(divide="ignore"):
            norms[t] = np.log(norm)
        if keep_state_grads:
            state_grads[t] = d_h.copy()

        cg = cell.backward(record.caches[t], CellState(h=d_h, c=d_c))
        for name, g in cg.d_params.items():
            grads[name] += g
        d_h = cg.d_h_prev
        d_c = cg.d_c_prev

    return grads, GradientTrace(log_norms=norms, state_grads=state_grads)


def jacobian_product(cell, caches, from_t: int, to_t: int) -> np.ndarray:
    """Explicit d x d product propagating dC/dh_{from_t} back to dC/dh_{to_t}.

    Valid for single-block rnn cells, where each backward step applies
    U^T diag(gate_k) diag(phi'_k) with gate_k = 1 (additive), Wx_k
    (mi_simple), or alpha*Wx_k + beta1 (mi_general). The returned matrix
    has the to_t+1 factor leftmost, so d_h_to = product @ d_h_from.
    """
    if getattr(cell, "family", None) != "rnn":
        raise ConfigError("jacobian_product is defined for single-block rnn cells")
    if not 0 <= to_t < from_t <= len(caches):
        raise ShapeError(f"need 0 <= to_t < from_t <= {len(caches)}, got {to_t=} {from_t=}")
    p = cell.p
    product = None
    for k in range(to_t + 1, from_t + 1):
        cache = caches[k - 1]
        if cache.out.ndim != 1:
            raise ShapeError("jacobian_product requires an unbatched unroll")
        phi_d = activate_deriv(cell.activation, cache.out)
        if p.mode == "additive":
            gate = np.ones_like(cache.wx)
        elif p.mode == "mi_simple":
            gate = cache.wx
        else:
            gate = p.alpha * cache.wx + p.beta1
        factor = p.U.T * (gate * phi_d)[None, :]
        product = factor if product is None else product @ factor
    return product


def trace_csv_rows(trace: GradientTrace, epoch: int) -> list:
    """(epoch, t, log_l2_norm) rows; batch columns averaged, -inf -> sentinel."""
    rows = []
    per_t = trace.log_norms if trace.log_norms.ndim == 1 else trace.log_norms.mean(axis=1)
    for t, value in enumerate(per_t, start=1):
        v = float(value)
        if not np.isfinite(v):
            v = LOG_NORM_SENTINEL
        rows.append((epoch, t, v))
    return rows


def write_trace_csv(path, epoch_traces) -> None:
    """epoch_traces: iterable of (epoch, GradientTrace) pairs."""
    lines = ["epoch,t,log_l2_norm"]
    for epoch, trace in epoch_traces:
        for e, t, v in trace_csv_rows(trace, epoch):
            lines.append(f"{e},{t},{v!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
