"""Recurrent networks with multiplicative integration, trained by analytic BPTT.

The package provides three cell families (simple RNN, LSTM, GRU), each in
three integration modes: the usual additive form phi(Wx + Uz + b), a pure
gated product phi(Wx * Uz + b), and the general bilinear blend
phi(alpha*Wx*Uz + beta1*Uz + beta2*Wx + b).  Everything downstream of the
cells (unrolling, losses, Adam, data pipeline, diagnostics, oracles, CLI)
is self-contained on top of numpy.
"""

from .bptt import (
    GradientTrace,
    LossReport,
    Readout,
    UnrollRecord,
    backward_through_time,
    jacobian_product,
    loss_bpc,
    unroll_forward,
)
from .cells import (
    ACTIVATIONS,
    INTEGRATION_MODES,
    MI_BIAS_PRESETS,
    CellGrad,
    CellState,
    GruCell,
    LstmCell,
    MIParams,
    RnnCell,
    init_cell_params,
    make_cell,
)
from .checkpoint import load_checkpoint, resume_session, save_checkpoint
from .config import ExperimentConfig
from .data import CharVocab, batch_sequences, load_corpus, split_corpus, synthesize_corpus
from .errors import (
    ConfigError,
    DivergenceError,
    IngestionError,
    MirnnError,
    ShapeError,
    VerificationError,
)
from .oracles import run_all_checks
from .tensor import Prng, RngConfig
from .training import Model, TrainingSession, build_model, evaluate_bpc

__version__ = "0.1.0"

__all__ = [
    "ACTIVATIONS",
    "CellGrad",
    "CellState",
    "CharVocab",
    "ConfigError",
    "DivergenceError",
    "ExperimentConfig",
    "GradientTrace",
    "GruCell",
    "INTEGRATION_MODES",
    "IngestionError",
    "LossReport",
    "LstmCell",
    "MIParams",
    "MI_BIAS_PRESETS",
    "MirnnError",
    "Model",
    "Prng",
    "Readout",
    "RngConfig",
    "RnnCell",
    "ShapeError",
    "TrainingSession",
    "UnrollRecord",
    "VerificationError",
    "backward_through_time",
    "batch_sequences",
    "build_model",
    "evaluate_bpc",
    "init_cell_params",
    "jacobian_product",
    "load_checkpoint",
    "load_corpus",
    "loss_bpc",
    "make_cell",
    "resume_session",
    "run_all_checks",
    "save_checkpoint",
    "split_corpus",
    "synthesize_corpus",
    "unroll_forward",
    "__version__",
]
