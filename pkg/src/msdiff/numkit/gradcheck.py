from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def numeric_grad(f: Callable[[Tensor], Tensor], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    res = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(x)).item()
        flat[i] = orig - h
        fm = f(Tensor(x)).item()
        flat[i] = orig
        res[i] = (fp - fm) / (2 * h)
    return out


def tape_grad(f: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    leaf = Tensor(x, requires_grad=True)
    f(leaf).backward()
    return leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Max relative error between the tape gradient and central differences.

    ``f`` maps a Tensor to a scalar Tensor. The error per element is
    ``|a - n| / (|a| + |n| + 1e-8)``.
    """
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    a = tape_grad(f, x)
    n = numeric_grad(f, x, h)
    err = np.abs(a - n) / (np.abs(a) + np.abs(n) + 1e-8)
    return float(err.max()) if err.size else 0.0
