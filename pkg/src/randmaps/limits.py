"""Distributional limits of orbit growth sums.

``S_n`` is the accumulated log growth after n random steps: the log norm of
a matrix product applied to a start vector, or the log derivative of a
composed map at a start point. Everything here studies the centered scaled
fluctuation ``Z_n = (S_n - n * lambda_hat) / sqrt(n)``: its variance and
normality, the decay rate of its distribution's distance to a Gaussian,
and the exponential rarity of large time-average deviations.

The centering value is always supplied by the caller together with a
standard error (zero for analytic values); the bands used by downstream
checks fold that uncertainty in, so an estimated centering never shows up
as a fake rejection.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy import stats

from . import rng
from .cocycles import Cocycle, vector_growth_batch
from .errors import DegenerateVariance, InsufficientTailMass
from .systems import RandomMapSystem, evolve, sample_symbol_block

_SN_BLOCK = 8
_DEVIATION_BLOCK = 9
_SLLN_BLOCK = 10
_SYNTH_COLUMNS = 128

_MIN_TRIALS = 1000
_DEGENERATE_VAR = 1e-6
_MIN_TAIL_COUNT = 20


@dataclass(frozen=True)
class SnSamples:
    """Centered scaled fluctuations, one array of ``trials`` values per n."""

    z: tuple
    n_list: tuple
    trials: int
    seed: int
    lambda_hat: float
    lambda_stderr: float
    centering: str
    kind: str

    def __post_init__(self):
        for n, arr in zip(self.n_list, self.z):
            if arr.shape != (self.trials,):
                raise ValueError(f"sample count at n={n} does not match trials")


@dataclass(frozen=True)
class CltReport:
    """Per-n variance and distance to the fitted centered normal."""

    n_list: tuple
    sigma2: tuple
    sigma2_stderr: tuple
    ks: tuple
    degenerate: tuple


@dataclass(frozen=True)
class BerryEsseenFit:
    """Power-law fit of the normalized-CDF sup gap against n."""

    slope: float
    intercept: float
    slope_stderr: float
    gaps: tuple
    n_list: tuple


@dataclass(frozen=True)
class DeviationFit:
    """Empirical tail decay of |S_n/n - lambda_hat| over (n, eps) cells."""

    eps_list: tuple
    n_list: tuple
    p_hat: np.ndarray
    counts: np.ndarray
    h_hat: tuple
    h_stderr: tuple
    convexity: tuple
    trials: int
    seed: int
    lambda_hat: float
    lambda_stderr: float


@dataclass(frozen=True)
class SllnReport:
    """Fraction of trajectories whose time average sits at the CLT scale."""

    fraction: float
    threshold: float
    sigma_hat: float
    n_big: int
    trials: int
    seed: int


def _centering(lambda_hat):
    """Normalize the centering argument to (value, stderr, provenance)."""
    if isinstance(lambda_hat, tuple):
        value, stderr = lambda_hat
    else:
        value, stderr = float(lambda_hat), 0.0
    value = float(value)
    stderr = float(stderr)
    if not (math.isfinite(value) and math.isfinite(stderr)) or stderr < 0:
        raise ValueError("lambda_hat must be finite with nonnegative stderr")
    return value, stderr, "analytic" if stderr == 0.0 else "estimated"


def _check_n_list(n_list):
    n_list = tuple(int(n) for n in n_list)
    if not n_list:
        raise ValueError("n_list must not be empty")
    if n_list[0] < 1 or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be strictly increasing and positive")
    return n_list


def _sum_arrays(source, x, n_list, trials, seed, block):
    """One independent (trials, n) word block per n; returns S_n arrays."""
    if not isinstance(source, (Cocycle, RandomMapSystem)):
        raise TypeError("source must be a Cocycle or a RandomMapSystem")
    sums = []
    for i, n in enumerate(n_list):
        symbols = sample_symbol_block(source, trials, n, seed, block, i)
        if isinstance(source, Cocycle):
            sums.append(vector_growth_batch(source, symbols, x)[n])
        else:
            out = evolve(source, symbols, x, collect_log_deriv=True)
            sums.append(out["logL"][n])
    return sums


def collect_sn(source, x, n_list, trials, lambda_hat, seed):
    """Sample ``Z_n = (S_n - n * lambda_hat)/sqrt(n)`` at each requested n.

    Every (n, trial) pair runs its own word, so the per-n arrays are
    mutually independent and independent of any estimate of the centering.
    """
    n_list = _check_n_list(n_list)
    if trials < _MIN_TRIALS:
        raise ValueError(f"need at least {_MIN_TRIALS} trials")
    value, stderr, centering = _centering(lambda_hat)
    kind = "cocycle" if isinstance(source, Cocycle) else "system"
    sums = _sum_arrays(source, x, n_list, trials, seed, _SN_BLOCK)
    z = tuple(
        (s - n * value) / math.sqrt(n) for n, s in zip(n_list, sums)
    )
    return SnSamples(
        z=z,
        n_list=n_list,
        trials=trials,
        seed=seed,
        lambda_hat=value,
        lambda_stderr=stderr,
        centering=centering,
        kind=kind,
    )


def synthetic_iid_sums(n_list, trials, seed, *, increments="exponential"):
    """Calibration samples from plain i.i.d. partial sums.

    ``exponential`` increments are centered standard exponentials: skewed,
    so the distance of Z_n to normal decays at the classical n^(-1/2) rate
    and a rate fit has a real signal to find. ``normal`` increments make
    Z_n exactly Gaussian at every n, so the measured gap is pure sampling
    noise with no n-trend; that contrast is the point of the calibrator.
    """
    n_list = _check_n_list(n_list)
    if trials < _MIN_TRIALS:
        raise ValueError(f"need at least {_MIN_TRIALS} trials")
    if increments not in ("exponential", "normal"):
        raise ValueError("increments must be 'exponential' or 'normal'")
    z = []
    for i, n in enumerate(n_list):
        gen = rng.stream(seed, rng.SYNTH, i)
        total = np.zeros(trials)
        done = 0
        while done < n:
            width = min(_SYNTH_COLUMNS, n - done)
            if increments == "exponential":
                block = gen.standard_exponential((trials, width)) - 1.0
            else:
                block = gen.standard_normal((trials, width))
            total += block.sum(axis=1)
            done += width
        z.append(total / math.sqrt(n))
    return SnSamples(
        z=tuple(z),
        n_list=n_list,
        trials=trials,
        seed=seed,
        lambda_hat=0.0,
        lambda_stderr=0.0,
        centering="analytic",
        kind="synthetic",
    )


def _variance_with_jackknife(z):
    """Sample variance and the jackknife stderr of that variance."""
    m = len(z)
    if (z == z[0]).all():
        # a constant sample has variance 0; the mean's rounding must not
        # manufacture dust here, determinism claims compare against 0.0
        return 0.0, 0.0
    d = z - z.mean()
    ss = float(d @ d)
    var = ss / (m - 1)
    loo = (ss - d * d * (m / (m - 1))) / (m - 2)
    se = math.sqrt((m - 1) / m * float(((loo - loo.mean()) ** 2).sum()))
    return var, se


def clt_test(samples):
    """Per-n variance of Z_n and its KS distance to Normal(0, variance).

    The variance carries a jackknife standard error so stabilization and
    positivity claims have a scale; a variance below 1e-6 is flagged
    degenerate and gets no KS value (the fitted normal collapses).
    """
    sigma2, stderr, ks, degenerate = [], [], [], []
    for z in samples.z:
        var, se = _variance_with_jackknife(z)
        sigma2.append(var)
        stderr.append(se)
        if var < _DEGENERATE_VAR:
            degenerate.append(True)
            ks.append(float("nan"))
        else:
            degenerate.append(False)
            ks.append(
                float(stats.kstest(z, "norm", args=(0.0, math.sqrt(var))).statistic)
            )
    return CltReport(
        n_list=samples.n_list,
        sigma2=tuple(sigma2),
        sigma2_stderr=tuple(stderr),
        ks=tuple(ks),
        degenerate=tuple(degenerate),
    )


def _line_fit(x, y):
    """Least-squares line with the slope's residual-based stderr."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    slope = float((xc @ (y - y.mean())) / (xc @ xc))
    intercept = float(y.mean() - slope * x.mean())
    resid = y - slope * x - intercept
    dof = len(x) - 2
    if dof > 0:
        se = math.sqrt(float(resid @ resid) / dof / float(xc @ xc))
    else:
        se = 0.0
    return slope, intercept, se


def berry_esseen_fit(samples):
    """Slope of log(sup CDF gap) against log n.

    Each sample is studentized by its own standard deviation and compared
    to the standard normal; the sup gap is the KS statistic. A slope near
    -1/2 reproduces the classical rate until the gap hits the sampling
    noise floor around 1/sqrt(trials).
    """
    if len(samples.n_list) < 3:
        raise ValueError("need at least 3 values of n")
    gaps = []
    for n, z in zip(samples.n_list, samples.z):
        var, _ = _variance_with_jackknife(z)
        if var < _DEGENERATE_VAR:
            raise DegenerateVariance(f"variance {var:.3e} at n={n}")
        gaps.append(
            float(stats.kstest(z / math.sqrt(var), "norm").statistic)
        )
    slope, intercept, se = _line_fit(np.log(samples.n_list), np.log(gaps))
    return BerryEsseenFit(
        slope=slope,
        intercept=intercept,
        slope_stderr=se,
        gaps=tuple(gaps),
        n_list=samples.n_list,
    )


def large_deviation_fit(source, x, eps_list, n_list, trials, lambda_hat, seed):
    """Empirical tail table p(n, eps) and per-eps exponential decay rates.

    ``p_hat[e, j]`` is the fraction of trials with ``|S_n/n - lambda_hat|``
    exceeding ``eps_list[e]`` at ``n_list[j]``. Cells with fewer than 20
    tail hits are excluded from the rate fits (their log probabilities are
    noise); an eps keeps a rate only when at least three cells survive.
    The rate is reported as ``h_hat = -slope / eps**2`` so a quadratic
    rate function makes ``h_hat`` level in eps, and the second differences
    of ``eps**2 * h_hat`` are the convexity diagnostic on the fitted cells.
    """
    n_list = _check_n_list(n_list)
    if len(n_list) < 3:
        raise ValueError("need at least 3 values of n")
    eps_list = tuple(float(e) for e in eps_list)
    if not eps_list:
        raise ValueError("eps_list must not be empty")
    if eps_list[0] <= 0 or any(b <= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly increasing and positive")
    if trials < _MIN_TRIALS:
        raise ValueError(f"need at least {_MIN_TRIALS} trials")
    value, stderr, _ = _centering(lambda_hat)
    sums = _sum_arrays(source, x, n_list, trials, seed, _DEVIATION_BLOCK)
    deviations = [np.abs(s / n - value) for n, s in zip(n_list, sums)]
    counts = np.array(
        [[int((dev > e).sum()) for dev in deviations] for e in eps_list]
    )
    p_hat = counts / trials
    h_hat, h_stderr = [], []
    steps = np.asarray(n_list, dtype=float)
    for e, row in zip(eps_list, counts):
        usable = row >= _MIN_TAIL_COUNT
        if usable.sum() < 3:
            h_hat.append(float("nan"))
            h_stderr.append(float("nan"))
            continue
        logs = np.log(row[usable] / trials)
        slope, _, se = _line_fit(steps[usable], logs)
        h_hat.append(-slope / e**2)
        h_stderr.append(se / e**2)
    fitted = [i for i, h in enumerate(h_hat) if math.isfinite(h)]
    if not fitted and p_hat.max() > 0.0:
        raise InsufficientTailMass(
            "no eps kept 3 cells with at least "
            f"{_MIN_TAIL_COUNT} tail hits; largest tail {p_hat.max():.3g}"
        )
    rates = [eps_list[i] ** 2 * h_hat[i] for i in fitted]
    convexity = tuple(
        rates[k + 1] - 2.0 * rates[k] + rates[k - 1]
        for k in range(1, len(rates) - 1)
    )
    return DeviationFit(
        eps_list=eps_list,
        n_list=n_list,
        p_hat=p_hat,
        counts=counts,
        h_hat=tuple(h_hat),
        h_stderr=tuple(h_stderr),
        convexity=convexity,
        trials=trials,
        seed=seed,
        lambda_hat=value,
        lambda_stderr=stderr,
    )


def slln_check(source, x, n_big, trials, lambda_hat, seed):
    """Fraction of trajectories whose time average is CLT-close to center.

    The allowance is ``3 * sigma_hat / sqrt(n_big)`` plus three standard
    errors of the centering value plus a resolution floor, so determinism
    (sigma_hat = 0, analytic centering) demands near-exact agreement.
    """
    if n_big < 1000:
        raise ValueError("need n_big >= 1000")
    if trials < 2:
        raise ValueError("need at least 2 trials")
    value, stderr, _ = _centering(lambda_hat)
    (sums,) = _sum_arrays(source, x, (int(n_big),), trials, seed, _SLLN_BLOCK)
    z = (sums - n_big * value) / math.sqrt(n_big)
    sigma_hat = float(z.std(ddof=1))
    threshold = 3.0 * sigma_hat / math.sqrt(n_big) + 3.0 * stderr + 1e-9
    deviations = np.abs(sums / n_big - value)
    return SllnReport(
        fraction=float((deviations < threshold).mean()),
        threshold=threshold,
        sigma_hat=sigma_hat,
        n_big=int(n_big),
        trials=trials,
        seed=seed,
    )
