"""Named, splittable random streams.

Every stochastic operation draws from a stream keyed by ``(seed, *names)``.
Streams are Philox counter-based generators, so two streams with different
names never overlap and the values a stream produces do not depend on how
many other streams were consumed before it.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def _name_key(name: str | int) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name) & 0xFFFFFFFF
    digest = hashlib.blake2b(str(name).encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def split(seed: int, *names: str | int) -> int:
    """Derive a child seed from ``seed`` and a path of names.

    ``split(seed, i)`` for chunk ``i`` is stable: adding more chunks never
    changes the seeds of previous ones.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_name_key(n) for n in names))
    return int(ss.generate_state(2, dtype=np.uint32).view(np.uint64)[0])


def stream(seed: int, *names: str | int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_name_key(n) for n in names))
    return np.random.Generator(np.random.Philox(ss))


def randn(shape, seed: int, *names: str | int, dtype=torch.float32) -> torch.Tensor:
    """Standard normal tensor drawn from the named stream."""
    values = stream(seed, *names).standard_normal(tuple(shape))
    return torch.from_numpy(values).to(dtype)
