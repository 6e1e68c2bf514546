"""Annealed exponent estimates and contraction certificates.

The central quantity is the per-step expected log of the local Lipschitz
factor of n-fold compositions, estimated by Monte Carlo over words. Sweeping
the estimate over an epsilon-net backs three graded checks:

  * a negativity certificate (every net estimate safely below a margin),
  * a contraction-on-average witness (a step count and a Hoelder power whose
    averaged distance ratio stays below 1 on tested pairs),
  * a direct fit of ball-diameter decay along sampled words.

All estimates carry batch-mean error bars and a 3-sigma slack converts them
into pass/fail verdicts.
"""

from dataclasses import dataclass

import numpy as np

from . import rng, spaces
from .errors import WitnessNotFound, ZeroDerivative
from .spaces import Projective
from .systems import (
    evolve,
    evolve_net,
    log_local_lipschitz_along,
    sample_symbol_block,
)
from .util import batch_means_stderr, line_fit, mean_and_stderr, pmap

# Leading ids for sample_symbol_block; see the registry note in rng.py.
_EXPONENT_BLOCK = 1
_PAIR_BLOCK = 2
_FIT_BLOCK = 3
_SYNC_BLOCK = 4

_DIAM_FLOOR = 1e-300
# Slopes below the float64 resolution of a log-diameter series count as flat.
_SLOPE_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class ExponentAtPoint:
    """Monte Carlo estimate of the annealed exponent at one point."""

    x: object
    n: int
    estimate: float
    stderr: float
    mc_samples: int


@dataclass(frozen=True, eq=False)
class Certificate:
    """Net-wide negativity check: passed means every net estimate plus
    three standard errors sits below -margin."""

    passed: bool
    eps: float
    n: int
    margin: float
    mc_samples: int
    seed: int
    worst_point: object
    worst_estimate: float
    worst_stderr: float
    points: tuple
    estimates: tuple
    stderrs: tuple


@dataclass(frozen=True)
class ContractionOnAverageWitness:
    """A (power, step count) pair certifying average contraction.

    ``q`` is the largest tested ratio plus three standard errors; ``r`` is
    the pair radius, or None when every net pair was tested (global).
    """

    alpha: float
    q: float
    n: int
    r: float | None
    pairs_tested: int
    max_ratio: float
    max_ratio_stderr: float


@dataclass(frozen=True)
class ContractionFit:
    """Tail-window fit of log ball-diameter decay along sampled words."""

    q_hat: float
    log_rate: float
    success_fraction: float
    slopes: tuple
    successes: tuple
    delta0: float
    n_max: int
    trials: int
    seed: int


def annealed_exponent_at(system, x, n, mc_samples, seed, *, stream=0):
    """Average of (1/n) log local Lipschitz factor over mc_samples words.

    ``stream`` separates draws for different net points under one seed.
    """
    if n < 1:
        raise ValueError("need at least one step")
    if mc_samples < 10:
        raise ValueError("need at least 10 Monte Carlo samples")
    x = system.space.canonical(x)
    symbols = sample_symbol_block(system, mc_samples, n, seed, _EXPONENT_BLOCK, stream)
    if system.has_analytic_derivatives():
        out = evolve(system, symbols, x, collect_log_deriv=True)
        logs = out["logL"][n]
        if not np.isfinite(logs).all():
            raise ZeroDerivative("a derivative factor vanished along a sampled word")
        per_word = logs / n
    else:
        per_word = np.array(
            [
                log_local_lipschitz_along(system, tuple(row), x) / n
                for row in symbols
            ]
        )
    est, _ = mean_and_stderr(per_word)
    return ExponentAtPoint(
        x=x,
        n=int(n),
        estimate=est,
        stderr=batch_means_stderr(per_word),
        mc_samples=int(mc_samples),
    )


def _exponent_task(args):
    system, x, n, mc_samples, seed, stream = args
    r = annealed_exponent_at(system, x, n, mc_samples, seed, stream=stream)
    return r.estimate, r.stderr


def _net_estimates(system, net, n, mc_samples, seed, workers):
    tasks = [(system, x, n, mc_samples, seed, i) for i, x in enumerate(net)]
    results = pmap(_exponent_task, tasks, workers=workers)
    estimates = np.array([e for e, _ in results])
    stderrs = np.array([s for _, s in results])
    return estimates, stderrs


def mostly_contracting_certificate(
    system, eps, n, mc_samples, margin, seed, *, workers=1
):
    """Sweep the exponent estimate over an eps-net and compare to -margin.

    The worst point is reported either way; refining eps tightens the sweep.
    """
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    net = spaces.epsilon_net(system.space, eps)
    estimates, stderrs = _net_estimates(system, net, n, mc_samples, seed, workers)
    stat = estimates + 3.0 * stderrs
    worst = int(np.argmax(stat))
    return Certificate(
        passed=bool(stat[worst] < -margin),
        eps=float(eps),
        n=int(n),
        margin=float(margin),
        mc_samples=int(mc_samples),
        seed=int(seed),
        worst_point=net[worst],
        worst_estimate=float(estimates[worst]),
        worst_stderr=float(stderrs[worst]),
        points=tuple(net),
        estimates=tuple(float(v) for v in estimates),
        stderrs=tuple(float(v) for v in stderrs),
    )


def lambda_of_system(system, n, mc_samples, eps, seed, *, workers=1):
    """Max over an eps-net of the exponent estimate (upper proxy at finite n)."""
    net = spaces.epsilon_net(system.space, eps)
    estimates, stderrs = _net_estimates(system, net, n, mc_samples, seed, workers)
    best = int(np.argmax(estimates))
    return ExponentAtPoint(
        x=net[best],
        n=int(n),
        estimate=float(estimates[best]),
        stderr=float(stderrs[best]),
        mc_samples=int(mc_samples),
    )


def _pair_distances(space, positions, ii, jj):
    """Distances between paired columns of a (trials, P[, m]) position block."""
    if isinstance(space, Projective):
        cos = np.abs(
            np.einsum("tpm,tpm->tp", positions[:, ii, :], positions[:, jj, :])
        )
        cos = np.clip(cos, 0.0, 1.0)
        return np.sqrt(np.maximum(0.0, 1.0 - cos * cos))
    d = np.abs(positions[:, ii] - positions[:, jj])
    if isinstance(space, spaces.Circle):
        d = np.minimum(d, 1.0 - d)
    return d


def contraction_on_average_search(
    system, alphas, n_max, r, pair_grid_eps, mc_samples, seed
):
    """Search (alpha, n) lexicographically for an average-contraction witness.

    For each candidate, the mean of d(f^n x, f^n y)^alpha over words is
    compared to d(x, y)^alpha on every net pair closer than ``r`` (all pairs
    when r is None). The first candidate whose worst ratio plus 3 sigma stays
    below 1 wins; exhausting the budget raises WitnessNotFound, which is not
    a disproof.
    """
    alphas = list(alphas)
    if not alphas or any(not 0.0 < a <= 1.0 for a in alphas):
        raise ValueError("alphas must lie in (0, 1]")
    if n_max < 1:
        raise ValueError("need at least one step")
    net = spaces.epsilon_net(system.space, pair_grid_eps)
    d0 = spaces.distance_matrix(system.space, net)
    iu, ju = np.triu_indices(len(net), k=1)
    keep = d0[iu, ju] > 0
    if r is not None:
        keep &= d0[iu, ju] < r
    ii, jj = iu[keep], ju[keep]
    if len(ii) == 0:
        raise ValueError("no distinct net pairs within the radius")
    base = d0[ii, jj]
    n_list = []
    k = 1
    while k < n_max:
        n_list.append(k)
        k *= 2
    n_list.append(n_max)
    dist_cache = {}
    best_q = np.inf
    for alpha in alphas:
        for n in n_list:
            if n not in dist_cache:
                finals = evolve_net(
                    system, net, n, mc_samples, seed, _PAIR_BLOCK, n
                )
                dist_cache[n] = _pair_distances(system.space, finals, ii, jj)
            powered = dist_cache[n] ** alpha
            means = powered.mean(axis=0)
            sds = powered.std(axis=0, ddof=1) / np.sqrt(mc_samples)
            ratios = means / base**alpha
            ratio_errs = sds / base**alpha
            stat = ratios + 3.0 * ratio_errs
            worst = int(np.argmax(stat))
            q = float(stat[worst])
            best_q = min(best_q, q)
            if q < 1.0:
                return ContractionOnAverageWitness(
                    alpha=float(alpha),
                    q=q,
                    n=int(n),
                    r=None if r is None else float(r),
                    pairs_tested=int(len(ii)),
                    max_ratio=float(ratios[worst]),
                    max_ratio_stderr=float(ratio_errs[worst]),
                )
    raise WitnessNotFound(
        f"no witness among alphas={alphas} up to n={n_max}", best_q=float(best_q)
    )


def _ball_points(space, x, delta0, seed):
    """The center plus 16 points spanning a delta0-ball boundary."""
    if isinstance(space, Projective):
        x = space.canonical(x)
        t = float(np.arcsin(min(delta0, 1.0 - 1e-12)))
        if space.m == 2:
            b = np.arctan2(x[1], x[0])
            return [x] + [
                space.canonical(np.array([np.cos(a), np.sin(a)]))
                for a in b + np.linspace(-t, t, 16)
            ]
        gen = rng.stream(seed, rng.CHAIN_START, _FIT_BLOCK)
        pts = []
        while len(pts) < 16:
            v = gen.standard_normal(space.m)
            v = v - (v @ x) * x
            norm = np.linalg.norm(v)
            if norm < 1e-8:
                continue
            v = v / norm
            pts.append(space.canonical(np.cos(t) * x + np.sin(t) * v))
        return [x] + pts
    offsets = np.linspace(-delta0, delta0, 16)
    if isinstance(space, spaces.Interval):
        return [space.clamp(x)] + [space.clamp(x + o) for o in offsets]
    return [float(x) % 1.0] + [float((x + o) % 1.0) for o in offsets]


def exponential_contraction_fit(system, x, delta0, n_max, trials, seed):
    """Fit the decay rate of a small ball's diameter along sampled words.

    Each trial tracks the image of a delta0-ball (its center plus 16
    boundary points) and fits log-diameter against the step count on the
    tail window [n_max/2, n_max], past the transient. The fitted rate is
    exp(median slope); a trial succeeds when its slope is negative beyond
    float64 resolution.
    """
    if delta0 <= 0:
        raise ValueError("delta0 must be positive")
    if n_max < 2:
        raise ValueError("need at least two steps to fit a slope")
    space = system.space
    points = _ball_points(space, x, delta0, seed)
    count = len(points)
    symbols = sample_symbol_block(system, trials, n_max, seed, _FIT_BLOCK)
    repeated = np.repeat(symbols, count, axis=0)
    projective = isinstance(space, Projective)
    if projective:
        x0 = np.tile(np.asarray(points, dtype=float), (trials, 1))
    else:
        x0 = np.tile(np.asarray(points, dtype=float), trials)
    ii, jj = np.triu_indices(count, k=1)
    diam = np.empty((trials, n_max))

    def track(k, X):
        block = (
            X.reshape(trials, count, space.m)
            if projective
            else X.reshape(trials, count)
        )
        diam[:, k] = _pair_distances(space, block, ii, jj).max(axis=1)

    evolve(system, repeated, x0, step_callback=track)
    steps = np.arange(1, n_max + 1)
    window = steps >= max(n_max // 2, 1)
    logd = np.log(np.maximum(diam, _DIAM_FLOOR))
    slopes = np.array(
        [line_fit(steps[window], logd[t, window])[0] for t in range(trials)]
    )
    successes = slopes < -_SLOPE_FLOOR
    log_rate = float(np.median(slopes))
    return ContractionFit(
        q_hat=float(np.exp(log_rate)),
        log_rate=log_rate,
        success_fraction=float(successes.mean()),
        slopes=tuple(float(s) for s in slopes),
        successes=tuple(bool(b) for b in successes),
        delta0=float(delta0),
        n_max=int(n_max),
        trials=int(trials),
        seed=int(seed),
    )


def synchronization_test(system, pair_grid_eps, n, trials, threshold, seed):
    """Fraction of (net pair, word) draws ending closer than ``threshold``.

    Only pairs starting farther apart than the threshold count, so isometric
    systems score exactly 0.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    net = spaces.epsilon_net(system.space, pair_grid_eps)
    d0 = spaces.distance_matrix(system.space, net)
    iu, ju = np.triu_indices(len(net), k=1)
    keep = d0[iu, ju] > threshold
    ii, jj = iu[keep], ju[keep]
    if len(ii) == 0:
        raise ValueError("no net pairs farther apart than the threshold")
    finals = evolve_net(system, net, n, trials, seed, _SYNC_BLOCK)
    d = _pair_distances(system.space, finals, ii, jj)
    return float((d < threshold).mean())
