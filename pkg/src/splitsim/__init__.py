"""splitsim: a deterministic simulator for multi-client split learning.

The package covers the no-weight-sharing training family (with parallel and
cache-based variants), the classic weight-sharing baselines, a model-inversion
attack harness for quantifying client-side data leakage, and the metrics and
bookkeeping (message/cost ledgers, manifests) needed to reproduce every run
bit for bit.
"""

__version__ = "0.1.0"

from . import attack, data, metrics, nn, presets, protocol
from .errors import (
    ConfigError,
    FormatError,
    ProtocolError,
    ShapeError,
    SplitSimError,
    StateError,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "ProtocolError",
    "ShapeError",
    "SplitSimError",
    "StateError",
    "attack",
    "data",
    "metrics",
    "nn",
    "presets",
    "protocol",
]
