"""Central finite-difference checks for the autodiff engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def numerical_gradient(fn: Callable[[], Tensor], x: Tensor, h: float = 1e-5, indices=None) -> np.ndarray:
    """d fn() / d x by central differences, evaluated in place on ``x.data``.

    ``indices`` restricts the probe to a subset of flat positions; the other
    entries of the result stay zero.
    """
    flat = x.data.reshape(-1)
    if not np.shares_memory(flat, x.data):
        raise ValueError("finite differences need a contiguous input tensor")
    grad = np.zeros(flat.shape, dtype=np.float64)
    probe = range(flat.size) if indices is None else indices
    with no_grad():
        for i in probe:
            orig = flat[i]
            flat[i] = orig + h
            up = float(fn().data.sum())
            flat[i] = orig - h
            down = float(fn().data.sum())
            flat[i] = orig
            grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(x.shape)


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max()) if a.size else 0.0


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    max_probes: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Run backward once, compare against finite differences, return the worst relative error.

    ``fn`` must rebuild its graph on every call and be deterministic (reseed any
    dropout generator inside it). With ``max_probes`` only that many randomly
    chosen entries per input are differenced.
    """
    for t in inputs:
        t.grad = None
    backward(fn())
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad
        idx = None
        if max_probes is not None and t.size > max_probes:
            idx = rng.choice(t.size, size=max_probes, replace=False)
        numeric = numerical_gradient(fn, t, h, idx)
        if idx is not None:
            analytic = analytic.reshape(-1)[idx]
            numeric = numeric.reshape(-1)[idx]
        worst = max(worst, max_relative_error(analytic, numeric))
    return worst
