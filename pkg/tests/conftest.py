"""Shared fixtures: tiny deterministic corpora and small model builders."""

import numpy as np
import pytest

from mirnn.cells import CellState, init_cell_params, make_cell
from mirnn.tensor import Prng


@pytest.fixture(scope="session")
def toy_text() -> str:
    return "ab" * 1000


@pytest.fixture(scope="session")
def small_text() -> str:
    # Deterministic pseudo-words over a-z plus space, enough for a few batches.
    from mirnn.data import synthesize_corpus

    return synthesize_corpus(n_chars=6000, seed=99)


def build_small_cell(family: str, mode: str, input_dim: int = 5, hidden_dim: int = 6,
                     seed: int = 0, activation: str = "tanh"):
    rng = Prng(seed).derive("test-cell", family, mode)
    params = init_cell_params(family, mode, input_dim, hidden_dim, rng)
    return make_cell(family, params, activation=activation)


def random_state(cell, seed: int = 1) -> CellState:
    rng = Prng(seed).derive("state")
    h = rng.uniform(-0.5, 0.5, cell.hidden_dim)
    c = rng.uniform(-0.5, 0.5, cell.hidden_dim) if cell.family == "lstm" else None
    return CellState(h=np.asarray(h), c=None if c is None else np.asarray(c))
