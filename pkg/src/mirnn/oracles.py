"""Independent brute-force verifiers for the recurrent machinery.

Three families of oracle, each deliberately implemented against the
math rather than against the library code it checks:

  * central finite differences over every scalar parameter, for the
    analytic backward passes;
  * the hidden-Markov forward algorithm plus an exhaustive sum over all
    hidden paths, for the probability-matrix construction in which a
    purely multiplicative linear cell computes forward alphas;
  * explicit second-order tensor contraction with rank-1 slices
    alpha_i * w_i (x) u_i, for the claim that the multiplicative term
    equals a bilinear form and the row-scaled matrix [diag(alpha)
    diag(Wx) U] h.

run_all_checks drives everything and returns a pass/fail manifest with
per-check instance seeds for replay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bptt import (
    Readout,
    backward_through_time,
    jacobian_product,
    loss_bpc,
    unroll_forward,
)
from .cells import CellState, MIParams, RnnCell, init_cell_params, make_cell
from .errors import ConfigError, ShapeError, VerificationError
from .tensor import Prng

MAX_FORWARD_LEN = 50  # keeps plain-space alphas away from underflow
MAX_BRUTE_PATHS = 10**7


# ------------------------------------------------------------------ HMM

@dataclass
class HMMSpec:
    """Column-stochastic HMM: trans[i, j] = Pr[next=i | cur=j],
    emit[s, j] = Pr[obs=s | state=j], start[j] = Pr[h_0=j]."""

    trans: np.ndarray
    emit: np.ndarray
    start: np.ndarray

    @property
    def n_states(self) -> int:
        return self.trans.shape[0]

    @property
    def n_obs(self) -> int:
        return self.emit.shape[0]

    def validate(self) -> None:
        m = self.trans.shape[0]
        if self.trans.shape != (m, m):
            raise ShapeError(f"transition matrix must be square, got {self.trans.shape}")
        if self.emit.ndim != 2 or self.emit.shape[1] != m:
            raise ShapeError(f"emission matrix needs {m} columns, got {self.emit.shape}")
        if self.start.shape != (m,):
            raise ShapeError(f"start distribution must be ({m},), got {self.start.shape}")
        for name, arr in (("trans", self.trans), ("emit", self.emit)):
            if arr.min() < 0 or arr.max() > 1:
                raise ShapeError(f"{name} entries must lie in [0, 1]")
            sums = arr.sum(axis=0)
            if np.abs(sums - 1.0).max() > 1e-12:
                raise ShapeError(f"{name} columns must sum to 1 within 1e-12")
        if self.start.min() < 0 or abs(self.start.sum() - 1.0) > 1e-12:
            raise ShapeError("start must be a distribution summing to 1 within 1e-12")


def _check_obs(spec: HMMSpec, obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.int64)
    if obs.ndim != 1 or obs.size < 1:
        raise ShapeError("observation sequence must be a non-empty 1-D index array")
    if obs.size > MAX_FORWARD_LEN:
        raise ShapeError(f"sequences longer than {MAX_FORWARD_LEN} risk underflow")
    if obs.min() < 0 or obs.max() >= spec.n_obs:
        raise ShapeError(f"observation symbol out of range for alphabet {spec.n_obs}")
    return obs


def hmm_forward(spec: HMMSpec, obs) -> list:
    """Forward alphas under the transition-first convention:
    alpha_t = emit_row(x_t) * (trans @ alpha_{t-1}), alpha_0 = start."""
    spec.validate()
    obs = _check_obs(spec, obs)
    alphas = []
    alpha = spec.start
    for s in obs:
        alpha = spec.emit[int(s), :] * (spec.trans @ alpha)
        alphas.append(alpha)
    return alphas


def hmm_bruteforce(spec: HMMSpec, obs) -> float:
    """Likelihood as an exhaustive sum over hidden paths h_0..h_T.

    Plain recursion with an explicit running product; independent of
    the forward algorithm on purpose.
    """
    spec.validate()
    obs = _check_obs(spec, obs)
    m = spec.n_states
    T = obs.size
    if m ** (T + 1) > MAX_BRUTE_PATHS:
        raise ShapeError(f"{m}^{T + 1} hidden paths exceeds the enumeration guard")
    trans, emit = spec.trans, spec.emit

    def walk(t: int, h_prev: int, prob: float) -> float:
        if t > T:
            return prob
        total = 0.0
        for h in range(m):
            total += walk(t + 1, h, prob * trans[h, h_prev] * emit[obs[t - 1], h])
        return total

    likelihood = 0.0
    for h0 in range(m):
        likelihood += spec.start[h0] * walk(1, h0, 1.0)
    return likelihood


def mi_rnn_as_hmm(spec: HMMSpec, obs, cell: RnnCell | None = None) -> list:
    """Forward alphas computed by a multiplicative linear cell.

    The cell must be purely multiplicative (mi_simple), linear
    (identity activation), and bias-free; W holds the emission rows,
    U the transition matrix, and the initial hidden state is the start
    distribution. Any supplied cell is checked against each constraint.
    """
    spec.validate()
    obs = _check_obs(spec, obs)
    if cell is None:
        p = MIParams(W=spec.emit.T.copy(), U=spec.trans.copy(),
                     b=np.zeros(spec.n_states), mode="mi_simple")
        cell = RnnCell({"h": p}, activation="identity")
    if cell.mode != "mi_simple":
        raise ConfigError(f"cell must use mi_simple fusion, got {cell.mode}")
    if cell.activation != "identity":
        raise ConfigError(f"cell activation must be identity, got {cell.activation}")
    if np.any(cell.p.b != 0.0):
        raise ConfigError("cell bias must be exactly zero")
    if cell.p.W.shape != (spec.n_states, spec.n_obs) or not np.array_equal(cell.p.W, spec.emit.T):
        raise ConfigError("cell W must equal the transposed emission matrix")
    if not np.array_equal(cell.p.U, spec.trans):
        raise ConfigError("cell U must equal the transition matrix")
    state = CellState(h=spec.start.copy())
    states = []
    for s in obs:
        state, _ = cell.step(int(s), state)
        states.append(state.h)
    return states


def random_hmm_spec(prng: Prng, max_states: int = 4, max_obs: int = 5):
    """Random dense column-stochastic spec (no zero probabilities)."""
    m = 1 + int(prng.choice(max_states, 1)[0])
    n_obs = 2 + int(prng.choice(max_obs - 1, 1)[0])
    trans = np.asarray(prng.uniform(0.05, 1.0, (m, m)))
    trans /= trans.sum(axis=0, keepdims=True)
    emit = np.asarray(prng.uniform(0.05, 1.0, (n_obs, m)))
    emit /= emit.sum(axis=0, keepdims=True)
    start = np.asarray(prng.uniform(0.05, 1.0, (m,)))
    start /= start.sum()
    return HMMSpec(trans=trans, emit=emit, start=start)


# --------------------------------------------------------- second order

def bilinear_second_order(tensor: np.ndarray, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """s[i] = x^T tensor[i] h, one explicit contraction per slice."""
    if tensor.ndim != 3 or tensor.shape[1] != x.shape[0] or tensor.shape[2] != h.shape[0]:
        raise ShapeError(
            f"tensor {tensor.shape} incompatible with x {x.shape}, h {h.shape}"
        )
    s = np.empty(tensor.shape[0])
    for i in range(tensor.shape[0]):
        s[i] = x @ (tensor[i] @ h)
    return s


def rank1_slices(alpha: np.ndarray, W: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Tensor with slices alpha_i * outer(W[i], U[i])."""
    d, n = W.shape
    if U.shape[0] != d or alpha.shape != (d,):
        raise ShapeError(f"inconsistent shapes: alpha {alpha.shape} W {W.shape} U {U.shape}")
    out = np.empty((d, n, U.shape[1]))
    for i in range(d):
        out[i] = alpha[i] * np.outer(W[i], U[i])
    return out


def row_scaled_matrix_route(alpha: np.ndarray, W: np.ndarray, U: np.ndarray,
                            x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """[diag(alpha) diag(Wx) U] h, materializing the matrix first."""
    M = U * (alpha * (W @ x))[:, None]
    return M @ h


# --------------------------------------------------- finite differences

def finite_diff_grad(f, params: dict, step: float = 1e-5) -> dict:
    """Central differences of scalar f over every entry of every array.

    Perturbs the live arrays in place (restoring them), so f may close
    over the same storage the model reads.
    """
    if step <= 0:
        raise ConfigError(f"step must be positive, got {step}")
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat_g = g.ravel()
        for i in range(arr.size):
            orig = arr.flat[i]
            arr.flat[i] = orig + step
            fp = f(params)
            arr.flat[i] = orig - step
            fm = f(params)
            arr.flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise VerificationError(f"non-finite objective while perturbing {name}[{i}]")
            flat_g[i] = (fp - fm) / (2.0 * step)
        grads[name] = g
    return grads


def grad_agreement_ratio(analytic: dict, numeric: dict,
                         rtol: float = 1e-6, atol: float = 1e-8) -> float:
    """Worst |a - n| / (atol + rtol * max(|a|, |n|)) over all entries.

    <= 1 means every parameter agrees to the stated relative tolerance,
    with a small absolute floor covering parameters whose true gradient
    is zero (finite differences only ever see roundoff there).
    """
    worst = 0.0
    for name in analytic:
        a = analytic[name]
        n = numeric[name]
        denom = atol + rtol * np.maximum(np.abs(a), np.abs(n))
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


# ------------------------------------------------------- random LM case

def random_lm_case(seed: int, family: str, mode: str, T: int = 4, d: int = 6,
                   vocab: int = 5, dense: bool = False):
    """Small random training instance: (cell, readout, inputs, targets, h0).

    Weights are drawn at O(0.5) scale and the gating/bias vectors get
    independent noise, so no parameter sits at a symmetric point where
    a backward-pass error could hide.
    """
    prng = Prng(seed)
    activation = "tanh"
    params = init_cell_params(family, mode, input_dim=vocab, hidden_dim=d,
                              rng=prng.derive("cell"), r_w=0.5, r_u=0.5,
                              mi_init=(1.0, 0.5, 0.5, 0.0))
    for bname, p in params.items():
        p.b += np.asarray(prng.derive("b", bname).uniform(-0.3, 0.3, (d,)))
        if mode == "mi_general":
            p.alpha += np.asarray(prng.derive("alpha", bname).uniform(-0.3, 0.3, (d,)))
            p.beta1 += np.asarray(prng.derive("beta1", bname).uniform(-0.3, 0.3, (d,)))
            p.beta2 += np.asarray(prng.derive("beta2", bname).uniform(-0.3, 0.3, (d,)))
    cell = make_cell(family, params, activation=activation)
    readout = Readout(
        W=np.asarray(prng.derive("out").uniform(-0.5, 0.5, (vocab, d))),
        b=np.asarray(prng.derive("out", "b").uniform(-0.1, 0.1, (vocab,))),
    )
    if dense:
        inputs = [np.asarray(prng.derive("x", t).uniform(-1.0, 1.0, (vocab,))) for t in range(T)]
    else:
        inputs = prng.derive("x").choice(vocab, T)
    targets = prng.derive("y").choice(vocab, T)
    h = np.asarray(prng.derive("h0").uniform(0.2, 1.0, (d,)))
    c = np.asarray(prng.derive("c0").uniform(-0.5, 0.5, (d,))) if family == "lstm" else None
    return cell, readout, inputs, targets, CellState(h=h, c=c)


def lm_loss_fn(cell, readout, inputs, targets, h0):
    """Total-NLL objective over live parameter storage, for the FD oracle."""

    def f(_params):
        record = unroll_forward(cell, inputs, h0, readout)
        return loss_bpc(record, targets).nll_nats

    return f


def case_params(cell, readout) -> dict:
    p = dict(cell.param_items())
    p["out.W"] = readout.W
    p["out.b"] = readout.b
    return p


# ----------------------------------------------------------- the checks

def _name_seed(*parts) -> int:
    """Deterministic small integer from string parts (process-independent)."""
    acc = 17
    for part in parts:
        for ch in str(part):
            acc = (acc * 31 + ord(ch)) % 100003
    return acc


def check_fd_gradients(seed: int, families=("rnn", "lstm", "gru"),
                       modes=("additive", "mi_simple", "mi_general"),
                       T: int = 4, d: int = 6, vocab: int = 5) -> list:
    checks = []
    for family in families:
        for mode in modes:
            case_seed = seed * 1000 + _name_seed(family, mode)
            cell, readout, inputs, targets, h0 = random_lm_case(
                case_seed, family, mode, T=T, d=d, vocab=vocab)
            record = unroll_forward(cell, inputs, h0, readout)
            analytic, _ = backward_through_time(cell, record, targets, readout)
            f = lm_loss_fn(cell, readout, inputs, targets, h0)
            numeric = finite_diff_grad(f, case_params(cell, readout))
            ratio = grad_agreement_ratio(analytic, numeric)
            checks.append({
                "name": f"fd-gradients/{family}/{mode}",
                "passed": bool(ratio <= 1.0),
                "detail": f"worst tolerance ratio {ratio:.3e} (<= 1 passes)",
                "seed": case_seed,
            })
    return checks


def check_degeneracy(seed: int, families=("rnn", "lstm", "gru"), tol: float = 1e-12) -> list:
    """General fusion at alpha=0, beta1=beta2=1 must equal additive."""
    checks = []
    for family in families:
        case_seed = seed * 1000 + _name_seed(family)
        add_cell, readout, inputs, targets, h0 = random_lm_case(
            case_seed, family, "additive", T=4, d=6, vocab=5)
        gen_params = {}
        for bname, p in add_cell.blocks.items():
            d_dim = p.out_dim
            gen_params[bname] = MIParams(
                W=p.W.copy(), U=p.U.copy(), b=p.b.copy(), mode="mi_general",
                alpha=np.zeros(d_dim), beta1=np.ones(d_dim), beta2=np.ones(d_dim),
            )
        gen_cell = make_cell(family, gen_params, activation="tanh")

        rec_a = unroll_forward(add_cell, inputs, h0, readout)
        rec_g = unroll_forward(gen_cell, inputs, h0, readout)
        fwd_err = max(
            float(np.abs(sa.h - sg.h).max())
            for sa, sg in zip(rec_a.states[1:], rec_g.states[1:])
        )
        grads_a, _ = backward_through_time(add_cell, rec_a, targets, readout)
        grads_g, _ = backward_through_time(gen_cell, rec_g, targets, readout)
        grad_err = max(float(np.abs(grads_a[k] - grads_g[k]).max()) for k in grads_a)
        err = max(fwd_err, grad_err)
        checks.append({
            "name": f"degeneracy/{family}",
            "passed": bool(err <= tol),
            "detail": f"max |general - additive| = {err:.3e} over forward and shared gradients",
            "seed": case_seed,
        })
    return checks


def check_hmm_equivalence(seed: int, n_specs: int = 20, max_len: int = 10,
                          tol: float = 1e-12) -> list:
    checks = []
    worst_alpha = 0.0
    worst_lik = 0.0
    failing_seed = None
    for i in range(n_specs):
        case_seed = seed * 1000 + i
        prng = Prng(case_seed).derive("hmm")
        spec = random_hmm_spec(prng)
        T = 2 + int(prng.choice(max_len - 1, 1)[0])
        obs = prng.choice(spec.n_obs, T)
        alphas = hmm_forward(spec, obs)
        states = mi_rnn_as_hmm(spec, obs)
        a_err = max(float(np.abs(a - s).max()) for a, s in zip(alphas, states))
        lik_err = abs(float(alphas[-1].sum()) - hmm_bruteforce(spec, obs))
        if max(a_err, lik_err) > tol and failing_seed is None:
            failing_seed = case_seed
        worst_alpha = max(worst_alpha, a_err)
        worst_lik = max(worst_lik, lik_err)
    passed = worst_alpha <= tol and worst_lik <= tol
    detail = (f"{n_specs} specs: max alpha deviation {worst_alpha:.3e}, "
              f"max likelihood deviation {worst_lik:.3e}")
    if failing_seed is not None:
        detail += f"; first failure at seed {failing_seed}"
    checks.append({
        "name": "hmm-three-way",
        "passed": bool(passed),
        "detail": detail,
        "seed": seed,
    })
    return checks


def check_second_order(seed: int, n_instances: int = 100, tol: float = 1e-12) -> list:
    from .cells import block_forward

    worst = 0.0
    failing_seed = None
    for i in range(n_instances):
        case_seed = seed * 1000 + i
        prng = Prng(case_seed).derive("tensor2")
        n = 2 + int(prng.choice(5, 1)[0])
        m = 2 + int(prng.choice(5, 1)[0])
        W = np.asarray(prng.uniform(-1.0, 1.0, (m, n)))
        U = np.asarray(prng.uniform(-1.0, 1.0, (m, m)))
        alpha = np.asarray(prng.uniform(-1.0, 1.0, (m,)))
        x = np.asarray(prng.uniform(-1.0, 1.0, (n,)))
        h = np.asarray(prng.uniform(-1.0, 1.0, (m,)))

        p = MIParams(W=W, U=U, b=np.zeros(m), mode="mi_general",
                     alpha=alpha, beta1=np.zeros(m), beta2=np.zeros(m))
        cell_route, _ = block_forward(p, "identity", x, h)
        tensor_route = bilinear_second_order(rank1_slices(alpha, W, U), x, h)
        matrix_route = row_scaled_matrix_route(alpha, W, U, x, h)
        err = max(
            float(np.abs(cell_route - tensor_route).max()),
            float(np.abs(cell_route - matrix_route).max()),
        )
        if err > tol and failing_seed is None:
            failing_seed = case_seed
        worst = max(worst, err)
    detail = f"{n_instances} instances: max route deviation {worst:.3e}"
    if failing_seed is not None:
        detail += f"; first failure at seed {failing_seed}"
    return [{
        "name": "second-order-rank1",
        "passed": bool(worst <= tol),
        "detail": detail,
        "seed": seed,
    }]


def check_chain_identity(seed: int, modes=("additive", "mi_simple", "mi_general"),
                         max_back: int = 5, tol: float = 1e-10) -> list:
    checks = []
    for mode in modes:
        case_seed = seed * 1000 + _name_seed("chain", mode)
        cell, readout, inputs, targets, h0 = random_lm_case(
            case_seed, "rnn", mode, T=max_back + 2, d=6, vocab=5)
        record = unroll_forward(cell, inputs, h0, readout)
        _, trace = backward_through_time(cell, record, targets, readout,
                                         final_step_only=True, keep_state_grads=True)
        T = record.steps
        d_h_T = trace.state_grads[T - 1]
        worst = 0.0
        for n in range(1, max_back + 1):
            product = jacobian_product(cell, record.caches, from_t=T, to_t=T - n)
            predicted = product @ d_h_T
            worst = max(worst, float(np.abs(predicted - trace.state_grads[T - n - 1]).max()))
        checks.append({
            "name": f"chain-identity/{mode}",
            "passed": bool(worst <= tol),
            "detail": f"max |product-applied - backward| = {worst:.3e} for n <= {max_back}",
            "seed": case_seed,
        })
    return checks


def check_loss_metric() -> list:
    vocab = 27
    T = 6
    d = 4
    cell = RnnCell({"h": MIParams(W=np.zeros((d, vocab)), U=np.zeros((d, d)),
                                  b=np.zeros(d), mode="additive")}, activation="tanh")
    readout = Readout(W=np.zeros((vocab, d)), b=np.zeros(vocab))
    inputs = np.zeros(T, dtype=np.int64)
    targets = np.zeros(T, dtype=np.int64)
    record = unroll_forward(cell, inputs, CellState(h=np.zeros(d)), readout)
    report = loss_bpc(record, targets)
    uniform_err = abs(report.bpc - math.log2(vocab))
    passed = uniform_err <= 1e-10
    return [{
        "name": "bpc-uniform-27",
        "passed": bool(passed),
        "detail": f"|bpc - log2(27)| = {uniform_err:.3e}",
        "seed": 0,
    }]


def run_all_checks(seed: int = 0, thorough: bool = False) -> dict:
    """Full oracle suite; thorough raises instance counts to test scale."""
    n_hmm = 20 if thorough else 8
    n_so = 100 if thorough else 25
    checks = []
    checks += check_fd_gradients(seed)
    checks += check_degeneracy(seed)
    checks += check_hmm_equivalence(seed, n_specs=n_hmm)
    checks += check_second_order(seed, n_instances=n_so)
    checks += check_chain_identity(seed)
    checks += check_loss_metric()
    return {
        "format": "mirnn-verify-v1",
        "seed": seed,
        "all_passed": all(c["passed"] for c in checks),
        "checks": checks,
    }
