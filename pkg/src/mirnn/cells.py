"""Recurrent building blocks: additive and multiplicative integration.

The central object is a fusion block that combines an input path Wx with
a recurrent path Uz. Three fusion rules are supported:

    additive      phi(Wx + Uz + b)
    mi_simple     phi(Wx * Uz + b)
    mi_general    phi(alpha*Wx*Uz + beta1*Uz + beta2*Wx + b)

with * elementwise. Setting alpha=0 and beta1=beta2=1 collapses the
general rule onto the additive one, bit for bit; several tests pin this
degeneracy down.

Cells (plain RNN, LSTM, GRU) are compositions of blocks. Every step
returns an opaque cache; the matching backward consumes the cache and
yields exact analytic gradients for all parameters and both inputs.

Inputs may be dense float vectors or integer indices standing for
one-hot columns (Wx is then a column selection). A trailing batch axis
is allowed everywhere: hidden states are (d,) or (d, B), index inputs
are scalars or (B,) arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Prng, matvec

INTEGRATION_MODES = ("additive", "mi_simple", "mi_general")
ACTIVATIONS = ("identity", "tanh", "sigmoid")
BLOCK_NAMES = {"rnn": ("h",), "lstm": ("z", "i", "f", "o"), "gru": ("z", "r", "h")}
CELL_FAMILIES = tuple(BLOCK_NAMES)

# (alpha, beta1, beta2, b) initial values, broadcast to vectors.
MI_BIAS_PRESETS = {
    "ptb-rnn": (2.0, 0.5, 0.5, 0.0),
    "text8-lstm": (1.0, 0.5, 0.5, 0.0),
    "ones": (1.0, 1.0, 1.0, 0.0),
}
DEFAULT_MI_PRESET = "text8-lstm"


def check_mode(mode: str) -> str:
    if mode not in INTEGRATION_MODES:
        raise ConfigError(f"unknown integration mode {mode!r}; expected one of {INTEGRATION_MODES}")
    return mode


def check_activation(kind: str) -> str:
    if kind not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")
    return kind


def activate(kind: str, a: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return a
    if kind == "tanh":
        return np.tanh(a)
    if kind == "sigmoid":
        # exp only ever sees non-positive arguments
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        out[~pos] = ea / (1.0 + ea)
        return out
    raise ConfigError(f"unknown activation {kind!r}")


def activate_deriv(kind: str, out: np.ndarray) -> np.ndarray:
    """Derivative of the activation, expressed through its output value."""
    if kind == "identity":
        return np.ones_like(out)
    if kind == "tanh":
        return 1.0 - out * out
    if kind == "sigmoid":
        return out * (1.0 - out)
    raise ConfigError(f"unknown activation {kind!r}")


@dataclass
class MIParams:
    """One fusion block's parameters.

    W is (d, n) over the input path, U is (d, m) over the recurrent
    path, b is (d,). alpha/beta1/beta2 exist only in mi_general mode;
    the other modes carry None there and exclude them from the count.
    """

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray
    mode: str = "additive"
    alpha: np.ndarray | None = None
    beta1: np.ndarray | None = None
    beta2: np.ndarray | None = None

    def __post_init__(self):
        check_mode(self.mode)
        d = self.W.shape[0]
        if self.U.shape[0] != d or self.b.shape != (d,):
            raise ShapeError(
                f"inconsistent block shapes: W{self.W.shape} U{self.U.shape} b{self.b.shape}"
            )
        gating = (self.alpha, self.beta1, self.beta2)
        if self.mode == "mi_general":
            if any(v is None or v.shape != (d,) for v in gating):
                raise ShapeError("mi_general requires alpha, beta1, beta2 of shape (d,)")
        elif any(v is not None for v in gating):
            raise ConfigError(f"{self.mode} mode must not carry alpha/beta parameters")

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def rec_dim(self) -> int:
        return self.U.shape[1]

    def param_count(self) -> int:
        n = self.W.size + self.U.size + self.b.size
        if self.mode == "mi_general":
            n += self.alpha.size + self.beta1.size + self.beta2.size
        return n

    def named_arrays(self):
        """Trainable (name, array) pairs in a fixed order."""
        yield "W", self.W
        yield "U", self.U
        yield "b", self.b
        if self.mode == "mi_general":
            yield "alpha", self.alpha
            yield "beta1", self.beta1
            yield "beta2", self.beta2


def _is_index(x) -> bool:
    if isinstance(x, (int, np.integer)):
        return True
    return isinstance(x, np.ndarray) and x.dtype.kind in "iu"


def _col(v: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Lift a (d,) parameter vector to (d, 1) when ref carries a batch axis."""
    return v if ref.ndim == 1 else v[:, None]


def _sum_batch(v: np.ndarray) -> np.ndarray:
    return v if v.ndim == 1 else v.sum(axis=1)


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # batched columns contract over the batch axis, accumulating the grad
    return np.outer(a, b) if a.ndim == 1 else a @ b.T


def _input_product(W: np.ndarray, x) -> np.ndarray:
    if _is_index(x):
        idx = int(x) if np.ndim(x) == 0 else np.asarray(x)
        if np.ndim(idx) == 0:
            if not 0 <= idx < W.shape[1]:
                raise ShapeError(f"one-hot index {idx} out of range for n={W.shape[1]}")
            return W[:, idx].copy()
        if idx.ndim != 1:
            raise ShapeError(f"index batch must be 1-D, got shape {idx.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= W.shape[1]):
            raise ShapeError(f"one-hot index out of range for n={W.shape[1]}")
        return W[:, idx]
    x = np.asarray(x, dtype=np.float64)
    return matvec(W, x)


@dataclass
class BlockCache:
    params: MIParams
    phi: str
    x: object
    z: np.ndarray
    wx: np.ndarray
    uz: np.ndarray
    out: np.ndarray


@dataclass
class BlockGrad:
    """Gradients of a block output w.r.t. parameters and inputs.

    d_x is None when the forward input was a one-hot index (the dense
    input gradient is then never needed). alpha/beta entries are None
    outside mi_general mode, mirroring MIParams.
    """

    d_W: np.ndarray
    d_U: np.ndarray
    d_b: np.ndarray
    d_x: np.ndarray | None
    d_z: np.ndarray
    d_alpha: np.ndarray | None = None
    d_beta1: np.ndarray | None = None
    d_beta2: np.ndarray | None = None

    def named_param_grads(self):
        yield "W", self.d_W
        yield "U", self.d_U
        yield "b", self.d_b
        if self.d_alpha is not None:
            yield "alpha", self.d_alpha
            yield "beta1", self.d_beta1
            yield "beta2", self.d_beta2


def block_forward(p: MIParams, phi: str, x, z: np.ndarray) -> tuple[np.ndarray, BlockCache]:
    check_activation(phi)
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] != p.rec_dim:
        raise ShapeError(f"recurrent input has dim {z.shape[0]}, block expects {p.rec_dim}")
    wx = _input_product(p.W, x)
    uz = matvec(p.U, z)
    if wx.shape != uz.shape:
        raise ShapeError(f"input/recurrent batch mismatch: Wx{wx.shape} vs Uz{uz.shape}")
    b = _col(p.b, wx)
    if p.mode == "additive":
        pre = wx + uz + b
    elif p.mode == "mi_simple":
        pre = wx * uz + b
    else:
        pre = _col(p.alpha, wx) * wx * uz + _col(p.beta1, wx) * uz + _col(p.beta2, wx) * wx + b
    out = activate(phi, pre)
    return out, BlockCache(p, phi, x, z, wx, uz, out)


def block_backward(cache: BlockCache, d_out: np.ndarray) -> BlockGrad:
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.shape != cache.out.shape:
        raise ShapeError(f"d_out shape {d_out.shape} does not match forward output {cache.out.shape}")
    p, wx, uz = cache.params, cache.wx, cache.uz
    d_pre = d_out * activate_deriv(cache.phi, cache.out)

    d_alpha = d_beta1 = d_beta2 = None
    if p.mode == "additive":
        d_wx = d_pre
        d_uz = d_pre
    elif p.mode == "mi_simple":
        d_wx = d_pre * uz
        d_uz = d_pre * wx
    else:
        a, b1, b2 = _col(p.alpha, wx), _col(p.beta1, wx), _col(p.beta2, wx)
        d_wx = d_pre * (a * uz + b2)
        d_uz = d_pre * (a * wx + b1)
        d_alpha = _sum_batch(d_pre * wx * uz)
        d_beta1 = _sum_batch(d_pre * uz)
        d_beta2 = _sum_batch(d_pre * wx)

    d_b = _sum_batch(d_pre)
    d_U = _outer(d_uz, cache.z)
    d_z = p.U.T @ d_uz

    x = cache.x
    if _is_index(x):
        d_W = np.zeros_like(p.W)
        if np.ndim(x) == 0:
            d_W[:, int(x)] += d_wx
        else:
            # duplicate indices inside a batch must accumulate
            np.add.at(d_W, (slice(None), np.asarray(x)), d_wx)
        d_x = None
    else:
        xa = np.asarray(x, dtype=np.float64)
        d_W = _outer(d_wx, xa)
        d_x = p.W.T @ d_wx

    return BlockGrad(d_W, d_U, d_b, d_x, d_z, d_alpha, d_beta1, d_beta2)


@dataclass
class CellState:
    """Recurrent state: hidden vector h, plus cell vector c for LSTM."""

    h: np.ndarray
    c: np.ndarray | None = None


@dataclass
class CellGrad:
    """Backward result for one cell step."""

    d_params: dict
    d_x: np.ndarray | None
    d_h_prev: np.ndarray
    d_c_prev: np.ndarray | None = None


def _merge_block_grads(per_block: dict) -> dict:
    flat = {}
    for bname, bg in per_block.items():
        for pname, g in bg.named_param_grads():
            flat[f"{bname}.{pname}"] = g
    return flat


class RnnCell:
    """Single-block recurrence h_t = phi(fuse(Wx_t, Uh_{t-1}) + b)."""

    family = "rnn"

    def __init__(self, params: dict, activation: str = "tanh"):
        self.p = params["h"]
        self.activation = check_activation(activation)
        self.blocks = {"h": self.p}

    @property
    def hidden_dim(self) -> int:
        return self.p.out_dim

    @property
    def input_dim(self) -> int:
        return self.p.in_dim

    @property
    def mode(self) -> str:
        return self.p.mode

    def step(self, x, state: CellState):
        out, cache = block_forward(self.p, self.activation, x, state.h)
        return CellState(h=out), cache

    def backward(self, cache: BlockCache, d_state: CellState) -> CellGrad:
        bg = block_backward(cache, d_state.h)
        return CellGrad(
            d_params=_merge_block_grads({"h": bg}),
            d_x=bg.d_x,
            d_h_prev=bg.d_z,
        )

    def param_items(self):
        for bname, p in self.blocks.items():
            for pname, arr in p.named_arrays():
                yield f"{bname}.{pname}", arr

    def param_count(self) -> int:
        return sum(p.param_count() for p in self.blocks.values())


class LstmCell:
    """Four fusion blocks (z, i, f, o), no peephole connections.

    z_t = tanh(block_z), i/f/o = sigmoid gates,
    c_t = i_t*z_t + f_t*c_{t-1}, h_t = o_t*tanh(c_t).
    """

    family = "lstm"
    _phis = {"z": "tanh", "i": "sigmoid", "f": "sigmoid", "o": "sigmoid"}

    def __init__(self, params: dict, activation: str = "tanh"):
        if activation != "tanh":
            raise ConfigError("lstm cells use a fixed tanh/sigmoid gate structure")
        missing = [k for k in self._phis if k not in params]
        if missing:
            raise ConfigError(f"lstm requires blocks z,i,f,o; missing {missing}")
        self.blocks = {k: params[k] for k in self._phis}
        dims = {(p.out_dim, p.in_dim, p.rec_dim) for p in self.blocks.values()}
        if len(dims) != 1:
            raise ShapeError(f"lstm blocks disagree on dimensions: {sorted(dims)}")

    @property
    def hidden_dim(self) -> int:
        return self.blocks["z"].out_dim

    @property
    def input_dim(self) -> int:
        return self.blocks["z"].in_dim

    @property
    def mode(self) -> str:
        return self.blocks["z"].mode

    def step(self, x, state: CellState):
        if state.c is None:
            raise ShapeError("lstm step requires a cell state vector c")
        caches = {}
        outs = {}
        for name, phi in self._phis.items():
            outs[name], caches[name] = block_forward(self.blocks[name], phi, x, state.h)
        z, i, f, o = outs["z"], outs["i"], outs["f"], outs["o"]
        c = i * z + f * state.c
        tc = np.tanh(c)
        h = o * tc
        cache = {"blocks": caches, "c_prev": state.c, "tc": tc, "outs": outs}
        return CellState(h=h, c=c), cache

    def backward(self, cache: dict, d_state: CellState) -> CellGrad:
        outs, tc, c_prev = cache["outs"], cache["tc"], cache["c_prev"]
        d_h = d_state.h
        d_c = d_h * outs["o"] * (1.0 - tc * tc)
        if d_state.c is not None:
            d_c = d_c + d_state.c
        d_block_out = {
            "o": d_h * tc,
            "i": d_c * outs["z"],
            "z": d_c * outs["i"],
            "f": d_c * c_prev,
        }
        per_block = {}
        d_x = None
        d_h_prev = None
        for name in self._phis:
            bg = block_backward(cache["blocks"][name], d_block_out[name])
            per_block[name] = bg
            d_h_prev = bg.d_z if d_h_prev is None else d_h_prev + bg.d_z
            if bg.d_x is not None:
                d_x = bg.d_x if d_x is None else d_x + bg.d_x
        return CellGrad(
            d_params=_merge_block_grads(per_block),
            d_x=d_x,
            d_h_prev=d_h_prev,
            d_c_prev=d_c * outs["f"],
        )

    def param_items(self):
        for bname, p in self.blocks.items():
            for pname, arr in p.named_arrays():
                yield f"{bname}.{pname}", arr

    def param_count(self) -> int:
        return sum(p.param_count() for p in self.blocks.values())


class GruCell:
    """Three fusion blocks: update gate z, reset gate r, candidate h.

    The candidate block sees r_t*h_{t-1} on its recurrent path;
    h_t = (1-z_t)*h_{t-1} + z_t*htilde_t.
    """

    family = "gru"
    _phis = {"z": "sigmoid", "r": "sigmoid", "h": "tanh"}

    def __init__(self, params: dict, activation: str = "tanh"):
        if activation != "tanh":
            raise ConfigError("gru cells use a fixed tanh/sigmoid gate structure")
        missing = [k for k in self._phis if k not in params]
        if missing:
            raise ConfigError(f"gru requires blocks z,r,h; missing {missing}")
        self.blocks = {k: params[k] for k in self._phis}
        dims = {(p.out_dim, p.in_dim, p.rec_dim) for p in self.blocks.values()}
        if len(dims) != 1:
            raise ShapeError(f"gru blocks disagree on dimensions: {sorted(dims)}")

    @property
    def hidden_dim(self) -> int:
        return self.blocks["z"].out_dim

    @property
    def input_dim(self) -> int:
        return self.blocks["z"].in_dim

    @property
    def mode(self) -> str:
        return self.blocks["z"].mode

    def step(self, x, state: CellState):
        h_prev = state.h
        z, cz = block_forward(self.blocks["z"], "sigmoid", x, h_prev)
        r, cr = block_forward(self.blocks["r"], "sigmoid", x, h_prev)
        ht, ch = block_forward(self.blocks["h"], "tanh", x, r * h_prev)
        h = (1.0 - z) * h_prev + z * ht
        cache = {"z": cz, "r": cr, "h": ch, "h_prev": h_prev, "z_out": z, "r_out": r, "ht": ht}
        return CellState(h=h), cache

    def backward(self, cache: dict, d_state: CellState) -> CellGrad:
        d_h = d_state.h
        h_prev, z, r, ht = cache["h_prev"], cache["z_out"], cache["r_out"], cache["ht"]

        bg_h = block_backward(cache["h"], d_h * z)
        d_rh = bg_h.d_z
        bg_r = block_backward(cache["r"], d_rh * h_prev)
        bg_z = block_backward(cache["z"], d_h * (ht - h_prev))

        d_h_prev = d_h * (1.0 - z) + d_rh * r + bg_r.d_z + bg_z.d_z
        d_x = None
        for bg in (bg_h, bg_r, bg_z):
            if bg.d_x is not None:
                d_x = bg.d_x if d_x is None else d_x + bg.d_x
        return CellGrad(
            d_params=_merge_block_grads({"z": bg_z, "r": bg_r, "h": bg_h}),
            d_x=d_x,
            d_h_prev=d_h_prev,
        )

    def param_items(self):
        for bname, p in self.blocks.items():
            for pname, arr in p.named_arrays():
                yield f"{bname}.{pname}", arr

    def param_count(self) -> int:
        return sum(p.param_count() for p in self.blocks.values())


_CELL_CLASSES = {"rnn": RnnCell, "lstm": LstmCell, "gru": GruCell}


def make_cell(family: str, params: dict, activation: str = "tanh"):
    if family not in _CELL_CLASSES:
        raise ConfigError(f"unknown cell family {family!r}; expected one of {CELL_FAMILIES}")
    return _CELL_CLASSES[family](params, activation=activation)


def init_cell_params(
    family: str,
    mode: str,
    input_dim: int,
    hidden_dim: int,
    rng: Prng,
    r_w: float = 0.02,
    r_u: float = 0.02,
    mi_init=None,
) -> dict:
    """Fresh parameter bundle for one cell, deterministic in ``rng``.

    Weight matrices draw from uniform[-r_w, r_w) / [-r_u, r_u) on
    independent streams derived per tensor, so any one tensor's values
    are stable under changes to the others' shapes. mi_init is the
    (alpha, beta1, beta2, b) fill, defaulting to the library preset.
    """
    if family not in BLOCK_NAMES:
        raise ConfigError(f"unknown cell family {family!r}; expected one of {CELL_FAMILIES}")
    check_mode(mode)
    if hidden_dim < 1 or input_dim < 1:
        raise ConfigError(f"dims must be >= 1, got input {input_dim}, hidden {hidden_dim}")
    a0, b10, b20, bias0 = MI_BIAS_PRESETS[DEFAULT_MI_PRESET] if mi_init is None else mi_init
    d, n = hidden_dim, input_dim
    params = {}
    for bname in BLOCK_NAMES[family]:
        W = rng.derive("W", bname).uniform(-r_w, r_w, (d, n))
        U = rng.derive("U", bname).uniform(-r_u, r_u, (d, d))
        b = np.full(d, float(bias0))
        if mode == "mi_general":
            params[bname] = MIParams(
                W, U, b, mode=mode,
                alpha=np.full(d, float(a0)),
                beta1=np.full(d, float(b10)),
                beta2=np.full(d, float(b20)),
            )
        else:
            params[bname] = MIParams(W, U, b, mode=mode)
    return params
