"""Finite-difference gradient oracle shared by the test suite.

Deliberately knows nothing about the tape: it re-evaluates the forward
function with perturbed parameter entries and forms central differences.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from sslab.tensor import Tensor


def numeric_grads(f: Callable[[], float], params: Sequence[Tensor], h: float) -> list[np.ndarray]:
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f()
            flat[i] = orig - h
            f_minus = f()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_error(
    analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray], floor: float = 1e-6
) -> float:
    """Worst elementwise |a - n| / max(|a|, |n|, floor) across all arrays.

    The floor turns the comparison absolute for near-zero gradients, where
    a relative criterion would amplify finite-difference noise.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
