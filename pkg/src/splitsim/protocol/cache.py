"""Server-side smashed-data cache and the cached server step.

The cache stores one entry per sample row. Each incoming batch is answered by
(1) sampling rows from the pool as it stood before the batch arrived,
(2) inserting the incoming rows, (3) running the server half on the incoming
batch concatenated with the sampled rows, and (4) returning only the first
batch-size rows of the split-layer input gradient. The server update itself
uses the full concatenated gradient, which is how knowledge from earlier
clients keeps being rehearsed.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from ..errors import ProtocolError
from ..nn import backward, forward, loss_softmax_ce, sgd_step
from ..nn.network import ParameterSet, SplitModelSpec


@dataclass(frozen=True)
class CacheEntry:
    client_id: int
    activation: np.ndarray  # one sample, split-layer shape
    label: int


class CachePool:
    """FIFO pool of cached (activation row, label, client) entries."""

    def __init__(self, capacity: int, sampling_fraction: float = 1.0):
        if capacity < 0:
            raise ProtocolError(f"cache capacity must be >= 0, got {capacity}")
        if not 0.0 <= sampling_fraction:
            raise ProtocolError(f"sampling fraction must be >= 0, got {sampling_fraction}")
        self.capacity = capacity
        self.sampling_fraction = sampling_fraction
        self.entries: deque[CacheEntry] = deque()
        self.step_counter = 0

    def __len__(self):
        return len(self.entries)

    def insert(self, entry: CacheEntry) -> None:
        self.entries.append(entry)
        while len(self.entries) > self.capacity:
            self.entries.popleft()

    def sample(self, count: int, seed: int) -> list[CacheEntry]:
        """Uniform draw without replacement; a short pool returns everything."""
        if count <= 0 or not self.entries:
            return []
        pool = list(self.entries)
        if count >= len(pool):
            return pool
        gen = np.random.Generator(np.random.PCG64(int(seed)))
        picks = gen.choice(len(pool), size=count, replace=False)
        return [pool[i] for i in picks]


def cache_insert(pool: CachePool, entry: CacheEntry) -> None:
    pool.insert(entry)


def cache_sample(pool: CachePool, count: int, seed: int) -> list[CacheEntry]:
    return pool.sample(count, seed)


def server_step_cached(
    split: SplitModelSpec,
    server_params: ParameterSet,
    pool: CachePool,
    client_id: int,
    activations: np.ndarray,
    labels: np.ndarray,
    learning_rate: float,
    sample_seed: int,
) -> tuple[ParameterSet, np.ndarray, float, int]:
    """One cached server step.

    Returns (updated server params, gradients for the incoming rows, loss on
    the concatenated batch, number of cached rows mixed in).
    """
    if tuple(activations.shape[1:]) != split.split_shape:
        raise ProtocolError(
            f"activation sample shape {tuple(activations.shape[1:])} does not match "
            f"split layer shape {split.split_shape}"
        )
    batch = activations.shape[0]
    if labels.shape[0] != batch:
        raise ProtocolError(f"labels length {labels.shape[0]} != batch size {batch}")

    want = int(round(pool.sampling_fraction * batch))
    sampled = pool.sample(want, sample_seed)
    for row, label in zip(activations, labels):
        pool.insert(CacheEntry(client_id, row.copy(), int(label)))
    pool.step_counter += 1

    if sampled:
        z_cache = np.stack([e.activation for e in sampled])
        y_cache = np.array([e.label for e in sampled], dtype=np.int64)
        z_full = np.concatenate([activations, z_cache], axis=0)
        y_full = np.concatenate([labels, y_cache], axis=0)
    else:
        z_full, y_full = activations, labels

    logits, tape = forward(split.network, server_params, z_full, start=split.split_index)
    loss, grad_logits = loss_softmax_ce(logits, y_full)
    server_grads, input_grad = backward(split.network, server_params, tape, grad_logits)
    new_params = sgd_step(server_params, server_grads, learning_rate)
    return new_params, input_grad[:batch], loss, len(sampled)
