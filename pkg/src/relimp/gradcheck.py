"""Central finite-difference gradient oracle, independent of the tape."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .autodiff import Tape, Tensor


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place (restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| scaled by the larger of the two gradients' max magnitudes."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def check_gradients(build: Callable[[Mapping[str, Tensor]], Tensor], inputs: dict[str, np.ndarray],
                    h: float = 1e-6) -> float:
    """Worst relative error over all ``inputs`` for scalar loss ``build(tensors)``."""
    tape = Tape()
    with tape:
        leaves = {k: tape.leaf(v) for k, v in inputs.items()}
        loss = build(leaves)
    grads = tape.backward(loss)

    def value() -> float:
        return float(build({k: Tensor(v) for k, v in inputs.items()}).data)

    worst = 0.0
    for k, arr in inputs.items():
        num = numeric_grad(value, arr, h)
        worst = max(worst, relative_error(grads[leaves[k]], num))
    return worst
