"""Central finite-difference gradient checks for the hand-written backward passes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class GradCheckResult:
    index: tuple[int, ...]
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        scale = max(abs(self.analytic), abs(self.numeric), 1e-8)
        return abs(self.analytic - self.numeric) / scale


def numeric_grad_at(fn: Callable[[], float], arr: np.ndarray, index, step: float = 1e-3) -> float:
    """(f(x + h) - f(x - h)) / 2h for one element of ``arr``, perturbed in place."""
    old = arr[index]
    arr[index] = old + step
    up = fn()
    arr[index] = old - step
    down = fn()
    arr[index] = old
    return (up - down) / (2 * step)


def is_kinked(fn: Callable[[], float], arr: np.ndarray, index, step: float,
              num: float, tol: float = 1e-5) -> bool:
    """True when the difference quotient moves with the step size, i.e. a
    ReLU boundary (or similar) lies inside [x - step, x + step]. On a smooth
    stretch the h and h/10 quotients agree to O(h^2)."""
    fine = numeric_grad_at(fn, arr, index, step / 10)
    return abs(fine - num) > tol * max(abs(fine), abs(num), 1e-8)


def check(fn: Callable[[], float], arr: np.ndarray, analytic: np.ndarray,
          rng: np.random.Generator, n: int = 10, step: float = 1e-3,
          min_abs: float = 1e-7) -> list[GradCheckResult]:
    """Compare ``analytic`` against central differences at ``n`` random entries.

    Entries whose analytic and numeric gradients are both below ``min_abs``
    are skipped in favour of others (relative error is meaningless there),
    as are entries where the function is not differentiable within one step.
    """
    results: list[GradCheckResult] = []
    order = rng.permutation(arr.size)
    for flat in order:
        idx = np.unravel_index(flat, arr.shape)
        num = numeric_grad_at(fn, arr, idx, step)
        ana = float(analytic[idx])
        if max(abs(num), abs(ana)) < min_abs:
            continue
        if is_kinked(fn, arr, idx, step, num):
            continue
        results.append(GradCheckResult(tuple(int(i) for i in idx), ana, num))
        if len(results) == n:
            break
    return results


def max_rel_error(results: list[GradCheckResult]) -> float:
    return max((r.rel_error for r in results), default=0.0)
