"""Shared test utilities: finite-difference gradient oracle and small fixtures."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from tavp.nn import Tensor

FD_STEP = 1e-5


def numeric_gradient(fn: Callable[[], Tensor], leaf: Tensor, step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of a scalar-valued closure w.r.t. one leaf.

    The closure must re-run the full forward pass reading leaf.data, so the
    oracle never touches the autodiff graph.
    """
    base = leaf.data.copy()
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        leaf.data = base.copy()
        leaf.data[idx] = base[idx] + step
        hi = fn().item()
        leaf.data = base.copy()
        leaf.data[idx] = base[idx] - step
        lo = fn().item()
        grad[idx] = (hi - lo) / (2.0 * step)
        it.iternext()
    leaf.data = base
    return grad


def max_rel_error(got: np.ndarray, want: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(want))), 1e-10)
    return float(np.max(np.abs(got - want))) / scale


def check_gradients(fn: Callable[[], Tensor], leaves: Sequence[Tensor],
                    tol: float = 1e-4, step: float = FD_STEP) -> float:
    """Compare autodiff gradients of fn() against central differences.

    Returns the worst relative error across all leaves; asserts it is <= tol.
    """
    for leaf in leaves:
        leaf.zero_grad()
    out = fn()
    out.backward()
    worst = 0.0
    for leaf in leaves:
        assert leaf.grad is not None, "no gradient reached a leaf that requires one"
        auto = leaf.grad.copy()
        num = numeric_gradient(fn, leaf, step=step)
        err = max_rel_error(auto, num)
        worst = max(worst, err)
        assert err <= tol, f"gradient mismatch: rel err {err:.3e} > {tol:.1e}"
    return worst
