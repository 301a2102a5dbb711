"""Network composition, parameter containers, and reverse-mode execution.

A network is an ordered tuple of layer specs plus an input sample shape.
Execution is functional: `forward` takes a parameter set and returns the
output plus a tape; `backward` consumes the tape exactly once. Both accept a
[start, stop) layer range so a model cut at a split index runs the *same*
code path whether executed whole or in two halves, which keeps split and
monolithic training bitwise identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ShapeError, StateError
from . import layers as L
from .layers import LayerSpec


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...]
    _shapes: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        if any(d < 1 for d in self.input_shape):
            raise ShapeError(f"input_shape must be positive, got {self.input_shape}")
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                shapes.append(L.output_shape(layer, shapes[-1]))
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from exc
        object.__setattr__(self, "_shapes", tuple(shapes))

    def shape_at(self, index: int) -> tuple[int, ...]:
        """Sample shape entering layer `index` (== output shape of layer index-1)."""
        return self._shapes[index]

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self._shapes[-1]

    def param_shapes(self, start: int = 0, stop: Optional[int] = None) -> dict[int, dict[str, tuple]]:
        stop = len(self.layers) if stop is None else stop
        out = {}
        for i in range(start, stop):
            shapes = L.param_shapes(self.layers[i], self._shapes[i])
            if shapes:
                out[i] = shapes
        return out


@dataclass(frozen=True)
class SplitModelSpec:
    """A network cut into a client part [0, split_index) and a server part."""

    network: NetworkSpec
    split_index: int

    def __post_init__(self):
        n = len(self.network.layers)
        if not 1 <= self.split_index < n:
            raise ShapeError(f"split_index must be in [1, {n - 1}], got {self.split_index}")

    @property
    def split_shape(self) -> tuple[int, ...]:
        """Sample shape of the smashed data crossing the cut."""
        return self.network.shape_at(self.split_index)

    @property
    def split_size(self) -> int:
        """Scalars per sample at the cut (communication unit S)."""
        return int(np.prod(self.split_shape))


class ParameterSet:
    """Per-layer parameter tensors keyed by the owning layer's index."""

    __slots__ = ("tensors",)

    def __init__(self, tensors: dict[int, dict[str, np.ndarray]]):
        self.tensors = tensors

    def copy(self) -> "ParameterSet":
        return ParameterSet(
            {i: {k: v.copy() for k, v in lp.items()} for i, lp in self.tensors.items()}
        )

    @property
    def scalar_count(self) -> int:
        return sum(v.size for lp in self.tensors.values() for v in lp.values())

    def arrays(self):
        """Deterministic (layer, name, array) iteration order."""
        for i in sorted(self.tensors):
            for name in sorted(self.tensors[i]):
                yield i, name, self.tensors[i][name]

    def same_structure(self, other: "ParameterSet") -> bool:
        if self.tensors.keys() != other.tensors.keys():
            return False
        for i, lp in self.tensors.items():
            olp = other.tensors[i]
            if lp.keys() != olp.keys():
                return False
            if any(lp[k].shape != olp[k].shape for k in lp):
                return False
        return True

    def allfinite(self) -> bool:
        return all(np.isfinite(v).all() for _, _, v in self.arrays())

    def __eq__(self, other):
        if not isinstance(other, ParameterSet) or not self.same_structure(other):
            return NotImplemented if not isinstance(other, ParameterSet) else False
        return all(
            np.array_equal(v, other.tensors[i][k]) for i, k, v in self.arrays()
        )

    def __repr__(self):
        return f"ParameterSet(layers={sorted(self.tensors)}, scalars={self.scalar_count})"


class TapeContext:
    """Recorded intermediates of one forward pass; consumable exactly once."""

    __slots__ = ("start", "stop", "batch", "entries", "out_shape", "consumed")

    def __init__(self, start, stop, batch, entries, out_shape):
        self.start = start
        self.stop = stop
        self.batch = batch
        self.entries = entries
        self.out_shape = out_shape
        self.consumed = False


def _check_params(spec: NetworkSpec, params: ParameterSet, start: int, stop: int):
    expected = spec.param_shapes(start, stop)
    have = {i: {k: v.shape for k, v in lp.items()} for i, lp in params.tensors.items()}
    if expected != have:
        raise ShapeError(
            f"parameter structure mismatch for layers [{start}, {stop}): "
            f"expected {expected}, got {have}"
        )


def init_parameters(
    spec: NetworkSpec, seed: int, start: int = 0, stop: Optional[int] = None
) -> ParameterSet:
    """Glorot-uniform weights, zero biases; deterministic for a fixed seed.

    `start`/`stop` restrict initialization to a layer range (used for the
    client and server halves of a split model, which keep their global layer
    indices).
    """
    stop = len(spec.layers) if stop is None else stop
    gen = np.random.Generator(np.random.PCG64(int(seed)))
    tensors: dict[int, dict[str, np.ndarray]] = {}
    for i in range(start, stop):
        layer = spec.layers[i]
        shapes = L.param_shapes(layer, spec.shape_at(i))
        if not shapes:
            continue
        bound = L.glorot_bound(layer, spec.shape_at(i))
        tensors[i] = {
            "weight": gen.uniform(-bound, bound, size=shapes["weight"]),
            "bias": np.zeros(shapes["bias"]),
        }
    return ParameterSet(tensors)


def forward(
    spec: NetworkSpec,
    params: ParameterSet,
    x: np.ndarray,
    start: int = 0,
    stop: Optional[int] = None,
) -> tuple[np.ndarray, TapeContext]:
    """Run layers [start, stop) on a batch; record a tape for backward."""
    stop = len(spec.layers) if stop is None else stop
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 1 or x.shape[0] < 1:
        raise ShapeError("input batch must have a leading batch dimension")
    if tuple(x.shape[1:]) != spec.shape_at(start):
        raise ShapeError(
            f"input sample shape {tuple(x.shape[1:])} does not match "
            f"expected {spec.shape_at(start)} at layer {start}"
        )
    _check_params(spec, params, start, stop)
    entries = []
    out = x
    for i in range(start, stop):
        out, ctx = L.forward_layer(spec.layers[i], params.tensors.get(i, {}), out)
        entries.append(ctx)
    return out, TapeContext(start, stop, x.shape[0], entries, out.shape)


def backward(
    spec: NetworkSpec,
    params: ParameterSet,
    tape: TapeContext,
    upstream_grad: np.ndarray,
) -> tuple[ParameterSet, np.ndarray]:
    """Reverse-mode gradients for the pass recorded on `tape`.

    Returns gradients shaped like `params` plus the gradient with respect to
    the pass input (the split-gradient payload when the pass is a server
    half). The tape is marked consumed; a second call raises StateError.
    """
    if tape.consumed:
        raise StateError("tape already consumed by a previous backward pass")
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != tape.out_shape:
        raise ShapeError(f"upstream gradient shape {g.shape} != forward output {tape.out_shape}")
    tape.consumed = True
    grads: dict[int, dict[str, np.ndarray]] = {}
    for offset in range(tape.stop - 1, tape.start - 1, -1):
        layer = spec.layers[offset]
        ctx = tape.entries[offset - tape.start]
        gp, g = L.backward_layer(layer, params.tensors.get(offset, {}), ctx, g)
        if gp:
            grads[offset] = gp
    return ParameterSet(grads), g


def sgd_step(params: ParameterSet, grads: ParameterSet, learning_rate: float) -> ParameterSet:
    """params - lr * grads, elementwise; returns a new set."""
    if learning_rate < 0:
        raise ShapeError(f"learning_rate must be >= 0, got {learning_rate}")
    if not params.same_structure(grads):
        raise ShapeError("gradient structure does not match parameters")
    return ParameterSet(
        {
            i: {k: v - learning_rate * grads.tensors[i][k] for k, v in lp.items()}
            for i, lp in params.tensors.items()
        }
    )


def average_parameters(sets: list[ParameterSet]) -> ParameterSet:
    """Elementwise arithmetic mean of structurally identical parameter sets."""
    if not sets:
        raise ShapeError("cannot average an empty list of parameter sets")
    first = sets[0]
    for other in sets[1:]:
        if not first.same_structure(other):
            raise ShapeError("parameter sets have heterogeneous structure")
    k = len(sets)
    return ParameterSet(
        {
            i: {
                name: sum(s.tensors[i][name] for s in sets) / k
                for name in lp
            }
            for i, lp in first.tensors.items()
        }
    )


def merge_parameters(a: ParameterSet, b: ParameterSet) -> ParameterSet:
    """Union of two disjoint layer-index ranges (client half + server half)."""
    overlap = a.tensors.keys() & b.tensors.keys()
    if overlap:
        raise ShapeError(f"parameter sets overlap on layers {sorted(overlap)}")
    merged = {i: {k: v for k, v in lp.items()} for i, lp in a.tensors.items()}
    merged.update({i: {k: v for k, v in lp.items()} for i, lp in b.tensors.items()})
    return ParameterSet(merged)
