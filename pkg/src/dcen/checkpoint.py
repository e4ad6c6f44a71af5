"""Versioned, byte-stable checkpoint archive.

Layout (little-endian)::

    b"DCENCKPT"  uint32 version  uint64 header_len
    header       UTF-8 JSON, sorted keys: arch, config, step, rng, queue, arrays
    payload      arrays concatenated in header order, raw little-endian bytes
    digest       sha256 over everything before it (32 bytes)

Identical training states serialize to identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .encoders import ArchConfig, EncoderSet
from .losses import NegativeQueue

MAGIC = b"DCENCKPT"
VERSION = 1
COLLECTIONS = ("f", "g", "h", "hhat", "f_stats", "g_stats", "h_stats")


class CheckpointFormatError(ValueError):
    pass


def _flatten(state) -> list[tuple[str, np.ndarray]]:
    items = []
    enc = state.encoders
    for coll, params in enc.collections().items():
        for k in sorted(params):
            items.append((f"{coll}/{k}", params[k]))
    for coll in sorted(state.velocity):
        for k in sorted(state.velocity[coll]):
            items.append((f"velocity.{coll}/{k}", state.velocity[coll][k]))
    items.append(("queue/buffer", state.queue.buffer))
    return items


def dumps(state, cfg: TrainConfig) -> bytes:
    arrays = [(name, np.ascontiguousarray(a, dtype="<f8")) for name, a in _flatten(state)]
    header = {
        "format": "dcen-checkpoint",
        "arch": state.encoders.arch.to_dict(),
        "config": cfg.to_dict(),
        "step": int(state.step),
        "rng": {"seed": int(cfg.seed), "next_step": int(state.step)},
        "queue": {"length": int(state.queue.length), "cursor": int(state.queue.cursor)},
        "arrays": [{"name": n, "dtype": "<f8", "shape": list(a.shape)} for n, a in arrays],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = MAGIC + struct.pack("<IQ", VERSION, len(hbytes)) + hbytes + b"".join(a.tobytes() for _, a in arrays)
    return body + hashlib.sha256(body).digest()


def loads(blob: bytes):
    """Returns ``(TrainState, TrainConfig)``."""
    from .trainer import TrainState

    if len(blob) < 20 + 32 or blob[:8] != MAGIC:
        raise CheckpointFormatError("not a dcen checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<IQ", blob, 8)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointFormatError("checkpoint digest mismatch (file corrupted or tampered)")
    try:
        header = json.loads(blob[20:20 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable checkpoint header: {exc}") from exc
    offset = 20 + hlen
    flat: dict[str, np.ndarray] = {}
    for spec in header["arrays"]:
        n = int(np.prod(spec["shape"]))
        a = np.frombuffer(body, dtype=spec["dtype"], count=n, offset=offset).reshape(spec["shape"])
        flat[spec["name"]] = a.astype(np.float64)
        offset += 8 * n
    if offset != len(body):
        raise CheckpointFormatError("checkpoint payload size does not match header")

    def coll(prefix):
        return {name.split("/", 1)[1]: a for name, a in flat.items() if name.split("/", 1)[0] == prefix}

    arch = ArchConfig.from_dict(header["arch"])
    enc = EncoderSet(arch=arch, **{c: coll(c) for c in COLLECTIONS})
    velocity = {name.split("/", 1)[0].split(".", 1)[1]: None for name in flat if name.startswith("velocity.")}
    velocity = {c: coll(f"velocity.{c}") for c in velocity}
    queue = NegativeQueue(buffer=flat["queue/buffer"], length=header["queue"]["length"],
                          cursor=header["queue"]["cursor"])
    state = TrainState(encoders=enc, queue=queue, velocity=velocity, step=header["step"])
    return state, TrainConfig.from_dict(header["config"])


def save(path: str | Path, state, cfg: TrainConfig) -> bytes:
    blob = dumps(state, cfg)
    Path(path).write_bytes(blob)
    return blob


def load(path: str | Path):
    return loads(Path(path).read_bytes())
