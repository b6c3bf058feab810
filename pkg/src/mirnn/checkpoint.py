"""Self-describing binary checkpoints.

Layout: an 8-byte magic, a little-endian u32 header length, a compact
JSON header (config, epoch counters, schedule and Adam scalars, metric
history, vocabulary, and a tensor directory), then the tensors as raw
little-endian float64 payloads in directory order. Everything that goes
into the file is deterministic, so identical runs produce byte-identical
checkpoints, and a loaded session continues exactly where the saved one
would have.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .errors import IngestionError
from .optim import LrSchedule
from .training import EpochMetrics, TrainingSession

MAGIC = b"MIRNNCK1"
CHECKPOINT_FORMAT = "mirnn-checkpoint-v1"
_KINDS = ("param", "adam_m", "adam_v")


def _none_if_inf(x: float):
    return None if not math.isfinite(x) else x


def _inf_if_none(x):
    return math.inf if x is None else x


def save_checkpoint(path, session: TrainingSession) -> None:
    params = session.params
    directory = []
    blobs = []
    for name in sorted(params):
        for kind, arr in (
            ("param", params[name]),
            ("adam_m", session.adam.m[name]),
            ("adam_v", session.adam.v[name]),
        ):
            directory.append({"name": name, "kind": kind, "shape": list(arr.shape)})
            blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": session.config.to_payload(),
        "epoch": session.epoch,
        "best_val_bpc": _none_if_inf(session.best_val_bpc),
        "best_epoch": session.best_epoch,
        "schedule": {
            "lr": session.sched.lr,
            "best_val_bpc": _none_if_inf(session.sched.best_val_bpc),
            "bad_epochs": session.sched.bad_epochs,
        },
        "adam": {
            "lr": session.adam.lr,
            "beta1": session.adam.beta1,
            "beta2": session.adam.beta2,
            "eps": session.adam.eps,
            "step": session.adam.step,
        },
        # all random streams are derived statelessly from the seed, so the
        # generator state reduces to the seed itself
        "rng": {"seed": session.config.seed, "counter": 0},
        "metrics": [[m.epoch, m.train_bpc, m.valid_bpc, m.lr] for m in session.metrics],
        "vocab": {"symbols": list(session.vocab.symbols)},
        "tensors": directory,
    }
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


@dataclass
class Checkpoint:
    config: ExperimentConfig
    epoch: int
    best_val_bpc: float
    best_epoch: int
    schedule: dict
    adam: dict
    metrics: list
    vocab_symbols: tuple
    params: dict
    adam_m: dict
    adam_v: dict


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise IngestionError(f"cannot read checkpoint {path}: {e}") from e
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise IngestionError(f"{path} is not a checkpoint (bad magic)")
    (hlen,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    try:
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise IngestionError(f"corrupt checkpoint header in {path}: {e}") from e
    if header.get("format") != CHECKPOINT_FORMAT:
        raise IngestionError(f"unsupported checkpoint format {header.get('format')!r}")

    offset = start + hlen
    stores = {"param": {}, "adam_m": {}, "adam_v": {}}
    for entry in header["tensors"]:
        kind = entry["kind"]
        if kind not in _KINDS:
            raise IngestionError(f"unknown tensor kind {kind!r} in checkpoint")
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        if offset + nbytes > len(raw):
            raise IngestionError(f"checkpoint {path} is truncated")
        arr = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=offset)
        stores[kind][entry["name"]] = arr.reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise IngestionError(f"checkpoint {path} has {len(raw) - offset} trailing bytes")

    metrics = [
        EpochMetrics(int(e), None if tr is None else float(tr), float(va), float(lr))
        for e, tr, va, lr in header["metrics"]
    ]
    return Checkpoint(
        config=ExperimentConfig.from_payload(header["config"]),
        epoch=int(header["epoch"]),
        best_val_bpc=_inf_if_none(header["best_val_bpc"]),
        best_epoch=int(header["best_epoch"]),
        schedule=header["schedule"],
        adam=header["adam"],
        metrics=metrics,
        vocab_symbols=tuple(header["vocab"]["symbols"]),
        params=stores["param"],
        adam_m=stores["adam_m"],
        adam_v=stores["adam_v"],
    )


def resume_session(path, text: str | None = None) -> TrainingSession:
    """Rebuild a TrainingSession that continues the saved run exactly."""
    ck = load_checkpoint(path)
    session = TrainingSession(ck.config, text=text)
    if session.vocab.symbols != ck.vocab_symbols:
        raise IngestionError(
            "checkpoint vocabulary does not match the corpus; was the corpus file changed?"
        )
    live = session.params
    if set(live) != set(ck.params):
        raise IngestionError("checkpoint parameter set does not match the model")
    for name, arr in live.items():
        if arr.shape != ck.params[name].shape:
            raise IngestionError(f"checkpoint tensor {name} has shape "
                                 f"{ck.params[name].shape}, model expects {arr.shape}")
        arr[...] = ck.params[name]
        session.adam.m[name][...] = ck.adam_m[name]
        session.adam.v[name][...] = ck.adam_v[name]
    session.adam.step = int(ck.adam["step"])
    session.adam.lr = float(ck.adam["lr"])
    session.adam.beta1 = float(ck.adam["beta1"])
    session.adam.beta2 = float(ck.adam["beta2"])
    session.adam.eps = float(ck.adam["eps"])
    session.sched = LrSchedule(
        lr=float(ck.schedule["lr"]),
        best_val_bpc=_inf_if_none(ck.schedule["best_val_bpc"]),
        bad_epochs=int(ck.schedule["bad_epochs"]),
    )
    session.epoch = ck.epoch
    session.metrics = list(ck.metrics)
    session.best_val_bpc = ck.best_val_bpc
    session.best_epoch = ck.best_epoch
    return session
