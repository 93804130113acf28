"""Counter-based random streams.

Every stream is a Philox generator whose key is derived from ``(seed, *ids)``,
so draws for replica ``r`` never depend on how many other replicas exist or on
which worker produced them.
"""
from __future__ import annotations

import numpy as np


def stream(seed: int, *ids: int) -> np.random.Generator:
    key = np.random.SeedSequence([int(seed), *map(int, ids)]).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class ReplicaStreams:
    """A batch of replicas backed by independent streams.

    Replicas are grouped in blocks of ``block_size``; each block owns one
    stream keyed by ``(seed, tag, block index)``. ``block_size=1`` gives one
    stream per replica. Mirrors ``Generator.standard_normal``: the leading
    dimension of the requested shape must equal the replica count.
    """

    def __init__(self, seed: int, replicas: int, block_size: int = 1, tag: int = 0, first: int = 0):
        if replicas < 1:
            raise ValueError("need at least one replica")
        self.seed = int(seed)
        self.replicas = int(replicas)
        self.block_size = int(block_size)
        if first % self.block_size:
            raise ValueError("first replica must start a block")
        self._blocks = []
        for start in range(first, first + replicas, self.block_size):
            n = min(self.block_size, first + replicas - start)
            self._blocks.append((stream(seed, tag, start // self.block_size), n))

    def standard_normal(self, size) -> np.ndarray:
        size = tuple(np.atleast_1d(size))
        if size[0] != self.replicas:
            raise ValueError(f"leading dimension {size[0]} != replica count {self.replicas}")
        parts = [g.standard_normal((n,) + size[1:]) for g, n in self._blocks]
        return parts[0] if len(parts) == 1 else np.concatenate(parts)

    def random(self, size) -> np.ndarray:
        size = tuple(np.atleast_1d(size))
        if size[0] != self.replicas:
            raise ValueError(f"leading dimension {size[0]} != replica count {self.replicas}")
        parts = [g.random((n,) + size[1:]) for g, n in self._blocks]
        return parts[0] if len(parts) == 1 else np.concatenate(parts)


def map_blocks(fn, args, workers: int = 1) -> list:
    """Apply ``fn`` to each argument tuple, in order, optionally on a process pool.

    Results come back in argument order, so any reduction over them is
    independent of the worker count.
    """
    args = list(args)
    if workers <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*args)))
