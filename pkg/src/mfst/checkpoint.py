"""Bit-exact binary checkpoint format.

Layout (little-endian): magic "MFSTCKPT", version u32 = 1, config_len u64
+ UTF-8 JSON config, then a tensor table for parameters (count u32; per
tensor: name_len u16 + name, rank u8, dims u32 x rank, dtype u8 = 0 for
f32, payload), the optimizer velocity table in the same format, epoch
u32, and the training RNG state as 4 x u64 (PCG64 state + increment).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .data import FormatError

_MAGIC = b"MFSTCKPT"
_VERSION = 1
_U64_MASK = (1 << 64) - 1


@dataclass
class Checkpoint:
    config_json: str
    params: dict[str, np.ndarray]
    velocity: dict[str, np.ndarray]
    epoch: int
    rng_words: tuple[int, int, int, int]


def pack_rng_state(rng: np.random.Generator) -> tuple[int, int, int, int]:
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise FormatError("only PCG64 generator state is supported")
    s = st["state"]["state"]
    inc = st["state"]["inc"]
    return (s & _U64_MASK, (s >> 64) & _U64_MASK,
            inc & _U64_MASK, (inc >> 64) & _U64_MASK)


def unpack_rng_state(words) -> np.random.Generator:
    s = words[0] | (words[1] << 64)
    inc = words[2] | (words[3] << 64)
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": s, "inc": inc},
        "has_uint32": 0,
        "uinteger": 0,
    }
    return rng


def _write_table(fh, table: dict[str, np.ndarray]) -> None:
    fh.write(struct.pack("<I", len(table)))
    for name, arr in table.items():
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise FormatError(f"name too long: {name}")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        fh.write(struct.pack("<H", len(nb)))
        fh.write(nb)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(struct.pack("<B", 0))
        fh.write(arr.tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated checkpoint: wanted {n} bytes, got {len(buf)}")
    return buf


def _read_table(fh) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    table = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", _read_exact(fh, 1))
        dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
        (dtype,) = struct.unpack("<B", _read_exact(fh, 1))
        if dtype != 0:
            raise FormatError(f"unknown dtype tag {dtype} for {name}")
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(_read_exact(fh, 4 * n), dtype="<f4").reshape(dims)
        table[name] = arr.copy()
    return table


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<8sI", _MAGIC, _VERSION))
        cb = ckpt.config_json.encode("utf-8")
        fh.write(struct.pack("<Q", len(cb)))
        fh.write(cb)
        _write_table(fh, ckpt.params)
        _write_table(fh, ckpt.velocity)
        fh.write(struct.pack("<I", ckpt.epoch))
        fh.write(struct.pack("<4Q", *ckpt.rng_words))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic, version = struct.unpack("<8sI", _read_exact(fh, 12))
        if magic != _MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        if version != _VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        (clen,) = struct.unpack("<Q", _read_exact(fh, 8))
        config_json = _read_exact(fh, clen).decode("utf-8")
        params = _read_table(fh)
        velocity = _read_table(fh)
        (epoch,) = struct.unpack("<I", _read_exact(fh, 4))
        words = struct.unpack("<4Q", _read_exact(fh, 32))
        return Checkpoint(config_json=config_json, params=params,
                          velocity=velocity, epoch=epoch, rng_words=words)
