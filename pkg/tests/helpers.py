"""Shared test utilities: finite differences and relative-error reporting."""

from __future__ import annotations

import numpy as np

FD_STEP = 1e-5


def central_diff(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x (flattened walk)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-4) -> float:
    """Max elementwise relative error.

    Entries below ``floor`` in magnitude are compared absolutely against it:
    central differences of a mathematically-zero gradient return cancellation
    noise (~1e-10 here), which a pure ratio would amplify into false alarms.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def param_grad_check(loss_fn, params, step: float = FD_STEP,
                     max_entries: int | None = None) -> float:
    """Compare tape gradients of loss_fn() against central differences.

    ``loss_fn`` must rebuild the graph from the live parameter tensors on each
    call. Returns the max relative error across the checked entries; with
    ``max_entries`` set, a deterministic subsample per parameter is checked.
    """
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = [np.array(p.grad) if p.grad is not None else np.zeros_like(p.data)
                for p in params]
    picker = np.random.default_rng(0)
    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.ravel()
        if max_entries is None or flat.size <= max_entries:
            indices = range(flat.size)
        else:
            indices = picker.choice(flat.size, size=max_entries, replace=False)
        for i in indices:
            orig = flat[i]
            flat[i] = orig + step
            fp = loss_fn().item()
            flat[i] = orig - step
            fm = loss_fn().item()
            flat[i] = orig
            fd = (fp - fm) / (2.0 * step)
            worst = max(worst, rel_err(ana.ravel()[i], fd))
    return worst
