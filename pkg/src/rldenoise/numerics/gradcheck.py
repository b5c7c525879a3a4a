"""Finite-difference gradient checking utilities.

The numerical gradient is always computed by central differences on the
raw float64 buffers, independent of the recorded backward pass, so it
serves as the oracle for every differentiable op in the package.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


def finite_difference_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5,
                           indices: Optional[Sequence[tuple]] = None) -> np.ndarray:
    """Central-difference gradient of f() with respect to the buffer x.

    ``f`` must recompute the scalar from the current contents of ``x``.
    When ``indices`` is given only those coordinates are evaluated and the
    returned array is flat over them; otherwise the full gradient with the
    shape of ``x`` is returned.
    """
    if indices is None:
        it = list(np.ndindex(x.shape))
        out = np.zeros(x.shape)
        flat = False
    else:
        it = list(indices)
        out = np.zeros(len(it))
        flat = True
    for pos, idx in enumerate(it):
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        x[idx] = orig - h
        fm = f()
        x[idx] = orig
        g = (fp - fm) / (2.0 * h)
        if flat:
            out[pos] = g
        else:
            out[idx] = g
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-based relative error ||a - b|| / max(||a||, ||b||, tiny)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
