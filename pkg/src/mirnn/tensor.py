"""Dense float64 kernel: matrix/vector products, elementwise ops, seeded init.

All numeric state lives in plain ``numpy`` float64 arrays. Matrices are
row-major ``(rows, cols)``; vectors are 1-D. Most ops also accept a 2-D
right-hand side whose columns are a batch of vectors, so the same code
path serves single sequences and mini-batches.

Random initialization uses an explicit counter-based generator (SplitMix64)
instead of the platform RNG so that checkpoints replay bit-identically on
any machine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

# SplitMix64 constants (Steele, Lea & Flood's mixing function).
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64_TO_UNIT = 2.0 ** -53


def _mix64(z: np.ndarray) -> np.ndarray:
    z = z.copy()
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


_MASK64 = 0xFFFFFFFFFFFFFFFF


def _mix64_int(z: int) -> int:
    """Same mixing function as ``_mix64`` on Python ints (explicit mod 2**64)."""
    z = (z ^ (z >> 30)) * int(_MIX1) & _MASK64
    z = (z ^ (z >> 27)) * int(_MIX2) & _MASK64
    return z ^ (z >> 31)


def _fold(state: int, key) -> int:
    """Absorb one key (int or str) into a 64-bit hash state."""
    s = state & _MASK64
    if isinstance(key, str):
        chunks = key.encode("utf-8")
        for i in range(0, len(chunks), 8):
            word = int.from_bytes(chunks[i : i + 8], "little")
            s = (_mix64_int(s ^ word) + int(_GAMMA)) & _MASK64
    else:
        s = (_mix64_int(s ^ (int(key) & _MASK64)) + int(_GAMMA)) & _MASK64
    return s


class Prng:
    """Counter-based SplitMix64 stream.

    Draw ``i`` of a stream seeded with ``s`` is ``mix64(s + (i+1)*GAMMA)``,
    so the whole stream is a pure function of (seed, counter) and both are
    trivially checkpointable.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter)

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return _mix64(np.uint64(self.seed) + idx * _GAMMA)

    def uniform(self, lo: float, hi: float, size=None) -> np.ndarray | float:
        """Samples in [lo, hi). ``size`` may be None, an int, or a shape tuple."""
        if not lo < hi:
            raise ConfigError(f"uniform range requires lo < hi, got [{lo}, {hi})")
        if size is None:
            n, shape = 1, None
        elif isinstance(size, int):
            n, shape = size, (size,)
        else:
            n = int(np.prod(size))
            shape = tuple(size)
        unit = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * _U64_TO_UNIT
        out = lo + unit * (hi - lo)
        if shape is None:
            return float(out[0])
        return out.reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        # argsort of 64-bit draws; collisions are vanishingly unlikely and
        # resolved deterministically by the stable sort.
        return np.argsort(self.next_u64(n), kind="stable")

    def choice(self, n: int, size: int) -> np.ndarray:
        """size draws from range(n), with replacement."""
        return (self.next_u64(size) % np.uint64(n)).astype(np.int64)

    def derive(self, *keys) -> "Prng":
        """Independent child stream keyed by ints/strings. Consumes no draws."""
        state = self.seed
        for key in keys:
            state = _fold(state, key)
        return Prng(state)

    @property
    def state(self) -> tuple[int, int]:
        return (self.seed, self.counter)


@dataclass(frozen=True)
class RngConfig:
    """Seeded uniform_range(lo, hi) initialization scheme."""

    seed: int
    lo: float = -0.02
    hi: float = 0.02

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError(f"uniform range requires lo < hi, got [{self.lo}, {self.hi})")


def sample_matrix(rng: RngConfig, rows: int, cols: int) -> np.ndarray:
    """Fresh (rows, cols) matrix with entries drawn uniform [lo, hi).

    Deterministic in ``rng``: the same config always yields the same matrix.
    """
    if rows < 1 or cols < 1:
        raise ShapeError(f"matrix dims must be >= 1, got {rows}x{cols}")
    return Prng(rng.seed).uniform(rng.lo, rng.hi, (rows, cols))


def sample_vector(rng: RngConfig, n: int) -> np.ndarray:
    if n < 1:
        raise ShapeError(f"vector length must be >= 1, got {n}")
    return Prng(rng.seed).uniform(rng.lo, rng.hi, (n,))


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """m @ v. ``v`` may be 1-D or a 2-D column-stacked batch."""
    if m.ndim != 2 or v.shape[0] != m.shape[1]:
        raise ShapeError(f"matvec: {m.shape} incompatible with {v.shape}")
    return m @ v


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product of equal-shape arrays."""
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: {a.shape} != {b.shape}")
    return a * b


def assert_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name} contains non-finite entries")
