"""Small robust/binomial statistics helpers used by the trigger and the fits."""
from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray

MAD_TO_SIGMA = 1.4826


def robust_sigma(x: ArrayLike) -> float:
    """Gaussian-equivalent σ from the median absolute deviation."""
    arr = np.asarray(x, dtype=float)
    if arr.size == 0:
        return 0.0
    return float(MAD_TO_SIGMA * np.median(np.abs(arr - np.median(arr))))


def robust_center_sigma(x: ArrayLike) -> tuple[float, float]:
    arr = np.asarray(x, dtype=float)
    center = float(np.median(arr))
    return center, float(MAD_TO_SIGMA * np.median(np.abs(arr - center)))


def agresti_coull_sigma(successes: ArrayLike, trials: ArrayLike) -> NDArray[np.float64]:
    """Binomial standard error with the Agresti–Coull adjustment (z = 2).

    Stays strictly positive for bins at 0 or 1 so no weight diverges.
    """
    k = np.asarray(successes, dtype=float)
    n = np.asarray(trials, dtype=float)
    n_tilde = n + 4.0
    p_tilde = (k + 2.0) / n_tilde
    return np.sqrt(p_tilde * (1.0 - p_tilde) / n_tilde)


def binomial_sigma(p: float, n: int) -> float:
    if n <= 0:
        return float("nan")
    return float(np.sqrt(p * (1.0 - p) / n))


def pooled_rate(successes: ArrayLike, trials: ArrayLike) -> float:
    k = float(np.sum(successes))
    n = float(np.sum(trials))
    return k / n if n > 0 else float("nan")
