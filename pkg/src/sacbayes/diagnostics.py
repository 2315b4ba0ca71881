"""Chain diagnostics: effective sample size, batch-means errors and R-hat."""

from __future__ import annotations

import numpy as np


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Normalised autocorrelation function via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n]
    if acov[0] <= 0:
        return np.ones(n)
    return acov / acov[0]


def effective_sample_size(x: np.ndarray) -> float:
    """ESS with Geyer's initial monotone sequence estimator."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.all(x == x[0]):
        return float(n)
    rho = autocorrelation(x)
    pairs = rho[: n - (n % 2)].reshape(-1, 2).sum(axis=1)
    positive = np.flatnonzero(pairs <= 0)
    stop = positive[0] if positive.size else pairs.size
    gamma = np.minimum.accumulate(pairs[:stop])
    tau = -1.0 + 2.0 * gamma.sum()
    return float(n / max(tau, 1.0 / np.log10(max(n, 10))))


def batch_means_se(x: np.ndarray, n_batches: int | None = None) -> float:
    """Monte Carlo standard error of the mean from non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n_batches is None:
        n_batches = max(2, int(np.sqrt(n)))
    size = n // n_batches
    if size < 1:
        return float(np.std(x, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def mcse(x: np.ndarray) -> float:
    """The larger of the batch-means and ESS-based standard errors."""
    x = np.asarray(x, dtype=float)
    sd = x.std(ddof=1) if x.size > 1 else 0.0
    ess_se = sd / np.sqrt(effective_sample_size(x)) if sd > 0 else 0.0
    return float(max(batch_means_se(x), ess_se))


def split_rhat(chains) -> float:
    """Split R-hat for a list of equal-length chains of one scalar."""
    arr = np.asarray(chains, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    n = arr.shape[1] // 2
    if n < 2:
        return float("nan")
    halves = np.concatenate([arr[:, :n], arr[:, n: 2 * n]], axis=0)
    means = halves.mean(axis=1)
    within = halves.var(axis=1, ddof=1).mean()
    between = n * means.var(ddof=1)
    if within == 0:
        return 1.0 if between == 0 else float("inf")
    var_hat = (n - 1) / n * within + between / n
    return float(np.sqrt(var_hat / within))
