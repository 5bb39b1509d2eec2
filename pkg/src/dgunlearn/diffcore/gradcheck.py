from __future__ import annotations

from typing import Callable

import numpy as np

from .params import ParamStore
from .tape import Tape, Tensor

ScalarFn = Callable[[dict[str, Tensor]], Tensor]


def analytic_grad(f: ScalarFn, params: ParamStore) -> np.ndarray:
    """Flat reverse-mode gradient of ``f`` at ``params``."""
    with Tape() as tape:
        leaves = params.tensors()
        loss = f(leaves)
    grads = tape.backward(loss, leaves.values())
    return np.concatenate([g.ravel() for g in grads])


def grad_check(
    f: ScalarFn,
    params: ParamStore,
    eps: float = 1e-6,
    n_coords: int = 32,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Worst relative error between backward() and central differences.

    Checks ``n_coords`` random flat coordinates (all of them when the store
    is smaller).  The relative error of one coordinate is
    ``|a - fd| / max(|a| + |fd|, floor)``; ``floor`` keeps coordinates with
    vanishing gradients from amplifying round-off.
    """
    if not 1e-8 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-8, 1e-3]")
    manifest = params.manifest
    theta = params.flatten()
    analytic = analytic_grad(f, params)
    n = theta.size
    rng = np.random.default_rng(seed)
    coords = np.arange(n) if n <= n_coords else rng.choice(n, size=n_coords, replace=False)

    def value(vec: np.ndarray) -> float:
        store = ParamStore.unflatten(vec, manifest)
        leaves = {k: Tensor(v) for k, v in store.items()}
        return float(f(leaves).value)

    worst = 0.0
    for i in coords:
        plus, minus = theta.copy(), theta.copy()
        plus[i] += eps
        minus[i] -= eps
        fd = (value(plus) - value(minus)) / (2.0 * eps)
        a = analytic[i]
        err = abs(a - fd) / max(abs(a) + abs(fd), floor)
        worst = max(worst, err)
    return worst
