"""Named split-model architectures sized for desk-scale experiments."""

from __future__ import annotations

from .errors import ConfigError
from .nn import NetworkSpec, SplitModelSpec, conv1d, conv2d, dense, flatten, maxpool2d, relu

PRESETS = ("tiny-mlp", "tiny-conv2", "tiny-conv1d")


def preset_split_model(name: str, input_shape, classes: int) -> SplitModelSpec:
    """Build a preset architecture cut at its canonical split point.

    tiny-mlp     flatten + dense(64) client, dense head server
    tiny-conv2   two stride-1 conv layers client, conv/pool stack server
    tiny-conv1d  one conv layer client, conv + dense server (series data)
    """
    shape = tuple(int(d) for d in input_shape)
    if name == "tiny-mlp":
        layers = (flatten(), dense(64), relu(), dense(classes))
        return SplitModelSpec(NetworkSpec(layers, shape), split_index=3)
    if name == "tiny-conv2":
        if len(shape) != 3:
            raise ConfigError(f"model: tiny-conv2 needs (C, H, W) input, got {shape}")
        layers = (
            conv2d(8, 3, stride=1, padding=1),
            relu(),
            conv2d(8, 3, stride=1, padding=1),
            relu(),
            conv2d(16, 3, stride=1, padding=1),
            relu(),
            maxpool2d(2),
            conv2d(16, 3, stride=1, padding=1),
            relu(),
            maxpool2d(2),
            flatten(),
            dense(classes),
        )
        return SplitModelSpec(NetworkSpec(layers, shape), split_index=4)
    if name == "tiny-conv1d":
        if len(shape) != 2:
            raise ConfigError(f"model: tiny-conv1d needs (C, L) input, got {shape}")
        layers = (
            conv1d(8, 5, stride=1, padding=2),
            relu(),
            conv1d(16, 5, stride=2, padding=2),
            relu(),
            flatten(),
            dense(classes),
        )
        return SplitModelSpec(NetworkSpec(layers, shape), split_index=2)
    raise ConfigError(f"model: unknown preset {name!r}; expected one of {PRESETS}")
