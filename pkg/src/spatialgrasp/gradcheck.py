"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import UsageError

LossFn = Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]]


def finite_diff_check(loss_fn: LossFn, params: dict[str, np.ndarray], step: float = 1e-5,
                      floor: float = 1e-6) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` returns ``(loss, grads)`` with ``grads`` keyed like
    ``params``. Every entry is perturbed by ``+-step`` in turn on a private
    copy. The per-entry error is ``|a - n| / max(|a|, |n|, floor)``; the
    floor keeps entries whose true gradient is zero from dividing rounding
    noise by itself.
    """
    if not step > 0:
        raise UsageError(f"finite-difference step must be positive, got {step}")
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, analytic = loss_fn(work)
    worst = 0.0
    for name, arr in work.items():
        grad = np.asarray(analytic[name], dtype=np.float64)
        if grad.shape != arr.shape:
            raise UsageError(f"gradient for {name} has shape {grad.shape}, expected {arr.shape}")
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn(work)[0]
            flat[i] = orig - step
            down = loss_fn(work)[0]
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            a = grad.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
