"""Central finite-difference verification of reverse-mode gradients.

The default step (1e-3, double precision) balances truncation error against
cancellation for losses whose curvature is O(1). Errors are reported as a
max relative deviation with an absolute floor, so near-zero gradients are
compared absolutely instead of blowing up the ratio.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

DEFAULT_STEP = 1e-3
DEFAULT_FLOOR = 1.0


def central_difference(
    f: Callable[[np.ndarray], float], x: np.ndarray, step: float = DEFAULT_STEP
) -> np.ndarray:
    """Two-sided finite-difference gradient of scalar ``f`` at ``x``.

    ``f`` must not mutate its argument; a scratch copy is perturbed one
    entry at a time.
    """
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    scratch = x.copy()
    flat = scratch.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f(scratch))
        flat[i] = orig - step
        lo = float(f(scratch))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def finite_difference_gradients(
    f: Callable[..., float],
    arrays: Sequence[np.ndarray],
    step: float = DEFAULT_STEP,
) -> list[np.ndarray]:
    """Finite-difference gradients of ``f(*arrays)`` w.r.t. each array."""
    arrays = [np.asarray(a, dtype=float) for a in arrays]
    grads = []
    for k, target in enumerate(arrays):
        def partial(x, _k=k):
            args = list(arrays)
            args[_k] = x
            return f(*args)

        grads.append(central_difference(partial, target, step))
    return grads


def max_relative_error(
    a: np.ndarray, b: np.ndarray, floor: float = DEFAULT_FLOOR
) -> float:
    """Worst entrywise deviation |a-b| / max(|a|, |b|, floor).

    Entries whose magnitudes sit below ``floor`` are effectively compared
    with an absolute tolerance of ``floor`` times the stated threshold.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())
