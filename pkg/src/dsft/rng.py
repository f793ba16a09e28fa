"""Named, splittable random streams on top of a counter-based generator.

Every source of randomness in the workbench draws from a stream derived
from (master seed, name, *indices). Streams for distinct paths are
independent Philox generators, so work can be sharded across workers or
resumed mid-run without changing any draw: the stream for (step, slot)
is the same no matter who computes it, or when.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, *path: int | str) -> np.random.Generator:
    """Derive an independent generator for (seed, *path).

    Path elements may be ints or short names ("mask", "init", ...). The
    derivation hashes a canonical encoding, so it is stable across runs,
    platforms, and process boundaries.
    """
    parts = [str(int(seed))]
    for p in path:
        if isinstance(p, bool) or not isinstance(p, (int, str)):
            raise TypeError(f"stream path elements must be int or str, got {p!r}")
        parts.append(f"{type(p).__name__}:{p}")
    digest = hashlib.sha256("/".join(parts).encode("utf-8")).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))
