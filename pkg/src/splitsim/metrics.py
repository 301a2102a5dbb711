"""Leakage and utility metrics: SSIM, MSE, distance correlation, DTW, accuracy.

All functions are pure and operate on float64 numpy arrays.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_RANGE = 1.0  # all engine data is unit-range


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _ssim_channel(a: np.ndarray, b: np.ndarray) -> float:
    h, w = a.shape
    size = min(SSIM_WINDOW, h, w)
    kernel = _gaussian_kernel(size, SSIM_SIGMA)
    wa = np.lib.stride_tricks.sliding_window_view(a, (size, size))
    wb = np.lib.stride_tricks.sliding_window_view(b, (size, size))
    mu_a = np.tensordot(wa, kernel, axes=([2, 3], [0, 1]))
    mu_b = np.tensordot(wb, kernel, axes=([2, 3], [0, 1]))
    e_aa = np.tensordot(wa * wa, kernel, axes=([2, 3], [0, 1]))
    e_bb = np.tensordot(wb * wb, kernel, axes=([2, 3], [0, 1]))
    e_ab = np.tensordot(wa * wb, kernel, axes=([2, 3], [0, 1]))
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(reference: np.ndarray, candidate: np.ndarray) -> float:
    """Mean local SSIM over a Gaussian window (11x11, sigma 1.5, unit range).

    Accepts (H, W) or (C, H, W); multi-channel inputs average per-channel
    SSIM. The window shrinks to min(H, W) for small images.
    """
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(candidate, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        return _ssim_channel(a, b)
    if a.ndim == 3:
        return float(np.mean([_ssim_channel(a[c], b[c]) for c in range(a.shape[0])]))
    raise ShapeError(f"ssim expects (H, W) or (C, H, W), got shape {a.shape}")


def mse(reference: np.ndarray, candidate: np.ndarray) -> float:
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(candidate, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"mse shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


def _pairwise_distances(x: np.ndarray) -> np.ndarray:
    if x.ndim == 1:
        x = x[:, None]
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def distance_correlation(x: np.ndarray, y: np.ndarray) -> float:
    """Sample distance correlation in [0, 1]; 0 when either variable is constant.

    `x` and `y` are paired observations: 1D series of equal length, or
    (n, d) batches with equal n.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if y.shape[0] != n:
        raise ShapeError(f"observation counts differ: {n} vs {y.shape[0]}")
    if n < 2:
        raise ShapeError("distance correlation needs at least 2 observations")
    a = _pairwise_distances(x)
    b = _pairwise_distances(y)

    def center(m):
        return m - m.mean(axis=0, keepdims=True) - m.mean(axis=1, keepdims=True) + m.mean()

    ca, cb = center(a), center(b)
    dcov2 = np.mean(ca * cb)
    dvarx = np.mean(ca * ca)
    dvary = np.mean(cb * cb)
    if dvarx <= 0.0 or dvary <= 0.0:
        return 0.0
    return float(np.sqrt(max(dcov2, 0.0) / np.sqrt(dvarx * dvary)))


def dtw(reference: np.ndarray, candidate: np.ndarray) -> float:
    """Dynamic time warping with absolute-difference cost and symmetric steps.

    No window constraint; series may have unequal lengths.
    """
    a = np.asarray(reference, dtype=np.float64).ravel()
    b = np.asarray(candidate, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ShapeError("dtw requires nonempty series")
    n, m = a.size, b.size
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    cost = np.abs(a[:, None] - b[None, :])
    for i in range(1, n + 1):
        row = acc[i]
        prev = acc[i - 1]
        for j in range(1, m + 1):
            row[j] = cost[i - 1, j - 1] + min(prev[j - 1], prev[j], row[j - 1])
    return float(acc[n, m])


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Top-1 argmax match rate; ties break toward the lowest class index."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.shape[0] == 0:
        raise ShapeError("accuracy requires a nonempty batch")
    predictions = np.argmax(logits, axis=1)
    return float(np.mean(predictions == labels))
