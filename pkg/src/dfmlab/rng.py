"""Counter-based random streams.

Every random draw in the workbench is addressed by an explicit path such as
``stream(seed, "mask", phase, epoch, batch, pass_idx, sample, block)``.  The
path is hashed into a Philox key/counter, so the same address always yields
the same bits regardless of execution order or batch-level parallelism.
"""

import hashlib

import numpy as np


def _pack(path):
    # Canonical, type-tagged serialization so ("a", 1) != ("a1",).
    parts = []
    for p in path:
        if isinstance(p, (bool, np.bool_)):
            parts.append(b"b" + bytes([int(p)]))
        elif isinstance(p, (int, np.integer)):
            parts.append(b"i" + int(p).to_bytes(16, "little", signed=True))
        elif isinstance(p, str):
            enc = p.encode("utf-8")
            parts.append(b"s" + len(enc).to_bytes(4, "little") + enc)
        else:
            raise TypeError(f"stream path element must be int or str, got {type(p).__name__}")
    return b"".join(parts)


def stream(seed, *path):
    """Return a ``numpy.random.Generator`` for the addressed stream.

    The generator is a fresh Philox instance keyed by (seed, hash(path));
    distinct paths give statistically independent streams and the mapping is
    stable across runs and platforms.
    """
    digest = hashlib.blake2b(_pack(path), digest_size=40).digest()
    words = np.frombuffer(digest, dtype=np.uint64)
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), words[0]], dtype=np.uint64)
    bitgen = np.random.Philox(key=key, counter=words[1:5])
    return np.random.Generator(bitgen)
