"""EATCKPT1 checkpoint files.

Layout (all integers little-endian)::

    b"EATCKPT1"
    u32 n, then n bytes of UTF-8 JSON: {"model": <EatConfig>, "meta": {...}}
    repeated until EOF:
        u32 k, k bytes UTF-8 parameter path
        u32 ndim, ndim x u64 shape
        prod(shape) x f64 values (C order)

Model parameters are stored under their module paths. Optional training state
is stored under ``ema/``, ``adam_m/`` and ``adam_v/`` prefixes, with the step
counters in ``meta``. When the top-level weights are an EMA shadow, the raw
training weights go under ``raw/`` so a run can resume.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .model import EatConfig, EatModel, build

MAGIC = b"EATCKPT1"
STATE_PREFIXES = ("ema/", "adam_m/", "adam_v/")


class CheckpointError(ValueError):
    pass


def _write_record(fh, path: str, arr: np.ndarray) -> None:
    name = path.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f8")
    fh.write(struct.pack("<I", len(name)) + name)
    fh.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes())


def encode(config: dict, tensors: dict[str, np.ndarray]) -> bytes:
    fh = io.BytesIO()
    text = json.dumps(config, sort_keys=True).encode("utf-8")
    fh.write(MAGIC + struct.pack("<I", len(text)) + text)
    for path, arr in tensors.items():
        _write_record(fh, path, np.asarray(arr))
    return fh.getvalue()


def decode(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if buf[:8] != MAGIC:
        raise CheckpointError("bad magic; not an EATCKPT1 file")
    mv = memoryview(buf)
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError("truncated checkpoint")
        out = mv[pos : pos + n]
        pos += n
        return out

    (n,) = struct.unpack("<I", take(4))
    config = json.loads(bytes(take(n)).decode("utf-8"))
    tensors = {}
    while pos < len(buf):
        (k,) = struct.unpack("<I", take(4))
        path = bytes(take(k)).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        count = int(np.prod(shape, dtype=np.int64))
        tensors[path] = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).copy()
    return config, tensors


def save(path, model: EatModel, meta: dict | None = None, state=None, weights: dict | None = None) -> None:
    """Write ``model`` (or ``weights``, e.g. an EMA shadow, in its place) plus optional state."""
    params = weights if weights is not None else dict(model.named_parameters())
    tensors = {k: v.detach().double().numpy() for k, v in params.items()}
    meta = dict(meta or {})
    if state is not None:
        meta.update(step=state.step, total_steps=state.total_steps)
        for prefix, table in zip(STATE_PREFIXES, (state.ema, state.m, state.v)):
            tensors.update({prefix + k: v.detach().double().numpy() for k, v in table.items()})
        if weights is not None:
            tensors.update({"raw/" + k: v.detach().double().numpy() for k, v in model.named_parameters()})
    Path(path).write_bytes(encode({"model": model.config.to_dict(), "meta": meta}, tensors))


def load(path, dtype=torch.float32, raw: bool = False):
    """Returns ``(model, meta, state)``; ``state`` is None when no training state was saved.

    ``raw=True`` loads the raw training weights instead of the top-level (EMA) ones.
    """
    from .train import TrainState

    config, tensors = decode(Path(path).read_bytes())
    try:
        cfg = EatConfig.from_dict(config["model"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"invalid model config in checkpoint: {e}") from e
    model = build(cfg, 0, dtype)
    named = dict(model.named_parameters())
    prefix = "raw/" if raw else ""
    if raw and not any(k.startswith("raw/") for k in tensors):
        raise CheckpointError("checkpoint has no raw training weights to resume from")
    missing = {prefix + n for n in named} - set(tensors)
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
    with torch.no_grad():
        for name, p in named.items():
            arr = tensors[prefix + name]
            if tuple(arr.shape) != tuple(p.shape):
                raise CheckpointError(f"shape mismatch for {name}: {arr.shape} vs {tuple(p.shape)}")
            p.copy_(torch.from_numpy(arr))
    meta = config.get("meta", {})
    state = None
    if any(k.startswith("ema/") for k in tensors):
        def table(prefix):
            return {n: torch.from_numpy(tensors[prefix + n]).to(dtype) for n in named}
        state = TrainState(m=table("adam_m/"), v=table("adam_v/"), ema=table("ema/"),
                           step=int(meta.get("step", 0)), total_steps=int(meta.get("total_steps", 0)))
    return model, meta, state
