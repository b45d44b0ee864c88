"""Sectioned binary checkpoints (magic "DFMC").

Layout, all integers unsigned 32-bit little-endian, all reals float32
little-endian:

    magic "DFMC" | version | section(params) | section(optimizer) | section(rng)

where each section is a tensor count followed by entries of

    name_len | name utf-8 | rank | dims... | raw float32 data

Saving and loading round-trip every array bitwise.
"""

import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"DFMC"
VERSION = 1


@dataclass
class CheckpointState:
    params: OrderedDict = field(default_factory=OrderedDict)
    optimizer: OrderedDict = field(default_factory=OrderedDict)
    rng: OrderedDict = field(default_factory=OrderedDict)


def _write_section(fh, tensors):
    fh.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        enc = name.encode("utf-8")
        fh.write(struct.pack("<I", len(enc)))
        fh.write(enc)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack("<" + "I" * arr.ndim, *arr.shape))
        fh.write(arr.tobytes())


def save_checkpoint(state, path):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        _write_section(fh, state.params)
        _write_section(fh, state.optimizer)
        _write_section(fh, state.rng)


class _Reader:
    def __init__(self, raw, path):
        self.raw = raw
        self.off = 0
        self.path = path

    def take(self, n, what):
        if self.off + n > len(self.raw):
            raise ValueError(f"{self.path}: truncated at offset {self.off} reading {what}")
        chunk = self.raw[self.off : self.off + n]
        self.off += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def _read_section(rd):
    out = OrderedDict()
    count = rd.u32("tensor count")
    for _ in range(count):
        name_len = rd.u32("name length")
        name = rd.take(name_len, "name").decode("utf-8")
        rank = rd.u32("rank")
        dims = struct.unpack("<" + "I" * rank, rd.take(4 * rank, "dims"))
        size = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(rd.take(4 * size, f"data of '{name}'"), dtype="<f4")
        out[name] = data.reshape(dims).copy()
    return out


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    rd = _Reader(raw, path)
    magic = rd.take(4, "magic")
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version = rd.u32("version")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}, expected {VERSION}")
    params = _read_section(rd)
    optimizer = _read_section(rd)
    rng = _read_section(rd)
    if rd.off != len(raw):
        raise ValueError(f"{path}: {len(raw) - rd.off} trailing bytes at offset {rd.off}")
    return CheckpointState(params, optimizer, rng)
