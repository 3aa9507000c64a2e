"""Bit-exact binary checkpoints.

Layout (all integers little-endian):

    magic   4 bytes  b"LMCS"
    version u32
    config  u32 length + UTF-8 text (YAML snapshot, no filesystem paths)
    count   u32 number of tensors
    per tensor:
        name    u32 length + UTF-8
        rank    u8
        dims    rank * u32
        payload product(dims) * f32
    crc32   u32 of all preceding bytes

Payloads are always float32, so a float32 model round-trips bit-exactly.
Network parameters are stored under ``param.*`` names, optimizer moments
under ``optim.*``, and the training step as the 0-d tensor ``meta.step``.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig, config_loads
from .errors import CheckpointError
from .network import NetworkParams, named_parameters, params_from_named

__all__ = ["Checkpoint", "checkpoint_save", "checkpoint_load"]

MAGIC = b"LMCS"
VERSION = 1


@dataclass
class Checkpoint:
    config_text: str
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def from_params(cls, cfg_text: str, params: NetworkParams, step: int = 0, optim=None):
        tensors = {f"param.{k}": v for k, v in named_parameters(params).items()}
        if optim is not None:
            for k, v in optim.m.items():
                tensors[f"optim.m.{k}"] = v
            for k, v in optim.v.items():
                tensors[f"optim.v.{k}"] = v
            tensors["optim.step"] = np.asarray(float(optim.step), dtype=np.float32)
        tensors["meta.step"] = np.asarray(float(step), dtype=np.float32)
        return cls(config_text=cfg_text, tensors=tensors, step=step)

    def train_config(self) -> TrainConfig:
        return config_loads(self.config_text)

    def network_params(self, dtype=np.float32) -> NetworkParams:
        cfg = self.train_config()
        named = {
            name[len("param.") :]: np.asarray(arr, dtype=dtype)
            for name, arr in self.tensors.items()
            if name.startswith("param.")
        }
        return params_from_named(
            named, lmcsc_steps=cfg.stages_lmcsc, guidance_steps=cfg.stages_guidance
        )


def checkpoint_save(path, ck: Checkpoint) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg_bytes = ck.config_text.encode("utf-8")
    parts.append(struct.pack("<I", len(cfg_bytes)))
    parts.append(cfg_bytes)
    tensors = dict(ck.tensors)
    tensors.setdefault("meta.step", np.asarray(float(ck.step), dtype=np.float32))
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f4")
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<I", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", crc))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(
                f"{self.path}: truncated checkpoint (needed {n} bytes at offset {self.pos})"
            )
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def checkpoint_load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 4:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    body, crc_bytes = buf[:-4], buf[-4:]
    if zlib.crc32(body) & 0xFFFFFFFF != struct.unpack("<I", crc_bytes)[0]:
        raise CheckpointError(f"{path}: CRC mismatch, checkpoint is corrupt")
    r = _Reader(body, path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {version} not supported (expected {VERSION})"
        )
    cfg_text = r.take(r.u32()).decode("utf-8")
    count = r.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u8()
        dims = tuple(r.u32() for _ in range(rank))
        n_values = int(np.prod(dims)) if dims else 1
        payload = r.take(4 * n_values)
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if r.pos != len(body):
        raise CheckpointError(f"{path}: {len(body) - r.pos} trailing bytes after tensor data")
    step = int(tensors.get("meta.step", np.float32(0.0)))
    return Checkpoint(config_text=cfg_text, tensors=tensors, step=step)
