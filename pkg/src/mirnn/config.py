"""Experiment configuration: a strict, lossless JSON schema.

Unknown keys are rejected outright; silent typos in experiment files
are the dominant failure mode this guards against. A config parsed from
its own emitted JSON compares equal to the original.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

from .cells import ACTIVATIONS, CELL_FAMILIES, DEFAULT_MI_PRESET, INTEGRATION_MODES, MI_BIAS_PRESETS
from .errors import ConfigError

CONFIG_FORMAT = "mirnn-config-v1"
INITIAL_STATES = ("auto", "zeros", "ones")
_MI_KEYS = ("alpha", "beta1", "beta2", "b")


@dataclass
class ExperimentConfig:
    corpus: str
    cell: str = "rnn"
    mode: str = "mi_general"
    hidden_dim: int = 128
    activation: str = "tanh"
    seq_len: int = 50
    batch_size: int = 32
    lr: float = 1e-4
    epochs: int = 5
    mi_init: object = DEFAULT_MI_PRESET  # preset name or {alpha,beta1,beta2,b} dict
    r_w: float = 0.02
    r_u: float = 0.02
    seed: int = 42
    split_fractions: tuple = (0.8, 0.1, 0.1)
    initial_state: str = "auto"
    grad_clip: float | None = None

    def __post_init__(self):
        if self.cell not in CELL_FAMILIES:
            raise ConfigError(f"cell must be one of {CELL_FAMILIES}, got {self.cell!r}")
        if self.mode not in INTEGRATION_MODES:
            raise ConfigError(f"mode must be one of {INTEGRATION_MODES}, got {self.mode!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.cell != "rnn" and self.activation != "tanh":
            raise ConfigError(f"{self.cell} cells only support the tanh activation")
        for name, lo in (("hidden_dim", 1), ("seq_len", 1), ("batch_size", 1), ("epochs", 0)):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < lo:
                raise ConfigError(f"{name} must be an integer >= {lo}, got {v!r}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr!r}")
        if not (self.r_w > 0 and self.r_u > 0):
            raise ConfigError(f"init ranges must be positive, got r_w={self.r_w} r_u={self.r_u}")
        if self.initial_state not in INITIAL_STATES:
            raise ConfigError(f"initial_state must be one of {INITIAL_STATES}")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError(f"grad_clip must be positive or null, got {self.grad_clip!r}")
        if isinstance(self.mi_init, str):
            if self.mi_init not in MI_BIAS_PRESETS:
                raise ConfigError(
                    f"unknown mi_init preset {self.mi_init!r}; known: {sorted(MI_BIAS_PRESETS)}"
                )
        elif isinstance(self.mi_init, dict):
            if set(self.mi_init) != set(_MI_KEYS):
                raise ConfigError(f"explicit mi_init must have exactly the keys {_MI_KEYS}")
            self.mi_init = {k: float(self.mi_init[k]) for k in _MI_KEYS}
        else:
            raise ConfigError("mi_init must be a preset name or an {alpha,beta1,beta2,b} mapping")
        if not isinstance(self.corpus, str) or not self.corpus:
            raise ConfigError("corpus must be a non-empty path string")
        sf = tuple(float(f) for f in self.split_fractions)
        if len(sf) != 3:
            raise ConfigError(f"split_fractions needs exactly 3 entries, got {len(sf)}")
        if any(f < 0 for f in sf) or sf[0] <= 0 or sum(sf) > 1.0 + 1e-9:
            raise ConfigError(
                f"split_fractions must be nonnegative with train > 0 and sum <= 1, got {sf}"
            )
        self.split_fractions = sf

    def resolved_mi_init(self) -> tuple:
        """(alpha, beta1, beta2, b) initial scalars."""
        if isinstance(self.mi_init, str):
            return MI_BIAS_PRESETS[self.mi_init]
        return tuple(self.mi_init[k] for k in _MI_KEYS)

    def initial_fill(self) -> float:
        """Initial hidden/cell state fill value.

        'auto' picks ones for mi_simple and zeros otherwise: with a zero
        state the purely multiplicative fusion Wx * Uz is identically
        zero at every step (no bias rescues the recurrent path), so the
        network would never leave the origin.
        """
        if self.initial_state == "ones":
            return 1.0
        if self.initial_state == "zeros":
            return 0.0
        return 1.0 if self.mode == "mi_simple" else 0.0

    def to_payload(self) -> dict:
        payload = {"format": CONFIG_FORMAT}
        for f in fields(self):
            v = getattr(self, f.name)
            payload[f.name] = list(v) if isinstance(v, tuple) else v
        return payload

    def to_json(self) -> str:
        return json.dumps(self.to_payload(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_payload(cls, payload: dict) -> "ExperimentConfig":
        if not isinstance(payload, dict):
            raise ConfigError("config root must be a JSON object")
        payload = dict(payload)
        fmt = payload.pop("format", None)
        if fmt != CONFIG_FORMAT:
            raise ConfigError(f"expected format {CONFIG_FORMAT!r}, got {fmt!r}")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if "corpus" not in payload:
            raise ConfigError("config is missing the required key 'corpus'")
        if "split_fractions" in payload:
            payload["split_fractions"] = tuple(payload["split_fractions"])
        return cls(**payload)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        return cls.from_payload(payload)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_json(text)
