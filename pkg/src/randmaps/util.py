"""Small shared numerics: error bars, line fits, and a worker pool map."""

from concurrent.futures import ProcessPoolExecutor

import numpy as np


def mean_and_stderr(values):
    """Sample mean and standard error of a 1-D array.

    A single value has no spread estimate; its stderr is reported as 0.
    """
    v = np.asarray(values, dtype=float)
    m = float(v.mean())
    if v.size < 2:
        return m, 0.0
    return m, float(v.std(ddof=1) / np.sqrt(v.size))


def batch_means_stderr(values, n_batches=32):
    """Standard error of the mean from contiguous batch means.

    Correlated sequences (Markov chain averages) need batching; the batch
    count is capped so every batch keeps at least two entries.
    """
    v = np.asarray(values, dtype=float)
    n_batches = int(min(n_batches, max(1, v.size // 2)))
    if n_batches < 2:
        return mean_and_stderr(v)[1]
    usable = (v.size // n_batches) * n_batches
    means = v[:usable].reshape(n_batches, -1).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def variance_stderr(values):
    """Moment-based standard error of the sample variance."""
    v = np.asarray(values, dtype=float)
    if v.size < 4:
        return float("inf")
    c = v - v.mean()
    m2 = float(np.mean(c**2))
    m4 = float(np.mean(c**4))
    return float(np.sqrt(max(m4 - m2**2, 0.0) / v.size))


def line_fit(x, y):
    """Least-squares line y = a*x + b with the slope's standard error.

    Returns (slope, intercept, slope_stderr, residual_rms). With two points
    the fit is exact and the stderr degenerates to 0.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("line fit needs at least two points")
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    resid = y - (slope * x + intercept)
    dof = x.size - 2
    if dof <= 0:
        return slope, intercept, 0.0, 0.0
    s2 = float(resid @ resid) / dof
    sxx = float(((x - x.mean()) ** 2).sum())
    stderr = float(np.sqrt(s2 / sxx)) if sxx > 0 else float("inf")
    return slope, intercept, stderr, float(np.sqrt(np.mean(resid**2)))


def pmap(fn, tasks, workers=1):
    """Map fn over tasks, optionally on a process pool.

    Results always come back in task order, so a worker count can never
    change a combined number. ``fn`` and the tasks must be picklable when
    workers > 1.
    """
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))
