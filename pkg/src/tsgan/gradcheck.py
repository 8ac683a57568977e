"""Central finite-difference oracle for the tape.

Everything here runs in float64 regardless of the training precision.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor, backward


def numerical_gradient(fn: Callable[[], float], value: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """d fn / d value by central differences; ``value`` is perturbed in place."""
    grad = np.zeros_like(value, dtype=np.float64)
    flat = value.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    return 0.0 if den == 0 else float(num / den)


def check_gradients(build: Callable[[Sequence[Tensor]], Tensor], inputs: Sequence[np.ndarray],
                    h: float = 1e-6) -> list[float]:
    """Relative error between tape gradients and finite differences per input.

    ``build`` maps float64 leaf tensors to a scalar tensor. Non-scalar outputs
    are reduced by a fixed random projection so every output element matters.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(leaves)
    probe = np.random.default_rng(1234).normal(size=out.shape)

    def scalar(t: Tensor) -> Tensor:
        return (t * Tensor(probe)).sum() if t.data.size != 1 else t.reshape(())

    backward(scalar(out))
    errors = []
    for leaf, arr in zip(leaves, arrays):
        def fn() -> float:
            fresh = [Tensor(a, requires_grad=False) for a in arrays]
            return float(scalar(build(fresh)).data)

        numeric = numerical_gradient(fn, arr, h)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(arr)
        errors.append(relative_error(analytic, numeric))
    return errors
