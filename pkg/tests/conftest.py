"""Shared test helpers: finite-difference oracles and kink-safe sampling."""

from __future__ import annotations

import numpy as np
import pytest

from splitsim import nn
from splitsim.nn import layers as L
from splitsim.nn.network import NetworkSpec, ParameterSet


def scalar_objective(net: NetworkSpec, params: ParameterSet, x: np.ndarray, proj: np.ndarray) -> float:
    out, _ = nn.forward(net, params, x)
    return float(np.sum(out * proj))


def analytic_gradients(net, params, x, proj):
    out, tape = nn.forward(net, params, x)
    grads, gx = nn.backward(net, params, tape, proj)
    return grads, gx


def fd_param_gradients(net, params, x, proj, step=1e-5):
    """Central finite differences over every parameter scalar."""
    grads = {}
    for i, name, arr in params.arrays():
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            hi = scalar_objective(net, params, x, proj)
            flat[k] = orig - step
            lo = scalar_objective(net, params, x, proj)
            flat[k] = orig
            gflat[k] = (hi - lo) / (2 * step)
        grads.setdefault(i, {})[name] = g
    return ParameterSet(grads)


def fd_input_gradient(net, params, x, proj, step=1e-5):
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        hi = scalar_objective(net, params, x, proj)
        flat[k] = orig - step
        lo = scalar_objective(net, params, x, proj)
        flat[k] = orig
        gflat[k] = (hi - lo) / (2 * step)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return float(np.max(np.abs(a - b) / scale))


def kink_margin(net: NetworkSpec, params: ParameterSet, x: np.ndarray) -> float:
    """Distance of relu inputs from 0 and of maxpool windows from argmax ties.

    Finite differences near those kinks are meaningless, so gradient tests
    resample until the margin clears the FD step comfortably.
    """
    margin = np.inf
    out = x
    for i, layer in enumerate(net.layers):
        if layer.kind == "relu":
            margin = min(margin, float(np.min(np.abs(out))))
        elif layer.kind == "maxpool2d":
            p, s = layer.pool, layer.stride
            win = np.lib.stride_tricks.sliding_window_view(out, (p, p), axis=(2, 3))[:, :, ::s, ::s]
            flat = np.sort(win.reshape(*win.shape[:4], -1), axis=-1)
            if flat.shape[-1] > 1:
                margin = min(margin, float(np.min(flat[..., -1] - flat[..., -2])))
        out, _ = L.forward_layer(layer, params.tensors.get(i, {}), out)
    return margin


def kink_safe_case(net: NetworkSpec, seed: int, batch: int = 2, margin: float = 1e-3):
    """Deterministic (params, inputs, projection) with all kinks cleared."""
    for attempt in range(50):
        s = seed + 1000 * attempt
        params = nn.init_parameters(net, s)
        gen = np.random.default_rng(s)
        x = gen.normal(size=(batch,) + net.input_shape)
        if kink_margin(net, params, x) > margin:
            proj = gen.normal(size=(batch,) + net.output_shape)
            return params, x, proj
    pytest.fail(f"could not find a kink-safe case for seed {seed}")
