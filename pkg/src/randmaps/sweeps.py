"""Parameter sweeps: how estimates move when the system moves.

Each sweep perturbs a base system along a caller-supplied path, re-estimates
the quantity of interest at every grid value, and reports the estimates next
to a computable distance between the perturbed and base systems. All grid
values share one master seed (common random numbers); differences of
estimates at nearby parameters would otherwise be dominated by independent
Monte Carlo noise and no exponent could be read off.

When at least four grid values carry both a positive distance and an
estimate difference above three standard errors, a log-log line fit of
|estimate(t) - estimate(0)| against distance records the observed modulus of
continuity as a (C, gamma) pair. The fit is descriptive: it reports how the
curve behaved on this grid, not a certified exponent.

Distances: matrix sweeps use the weighted spectral-norm distance between
atom lists; circle sweeps use a grid supremum of position plus derivative
differences; stationary sweeps use the position part only. Grid suprema run
over 4096 points, enough for the built-in trigonometric families whose
second derivatives are bounded.
"""

import math
from dataclasses import dataclass

import numpy as np

from .cocycles import Cocycle, cocycle_distance, furstenberg_estimate
from .errors import NotDiffeomorphismAt, NotInvertibleAt, ZeroDerivative
from .koopman import Grid, discretize, stationary_report, wasserstein_on_grid
from .spaces import Circle, Interval
from .systems import sample_symbol_block
from .util import batch_means_stderr, line_fit, pmap

_MIN_FIT_POINTS = 4
_DISTANCE_GRID = 4096
# invertibility floor matching the cocycle constructor's own check
_MIN_SINGULAR = 1e-10
_CHAIN_BLOCK = 12


@dataclass(frozen=True)
class HolderPair:
    """Fitted modulus of continuity |estimate(t) - estimate(0)| ~ C * d^gamma.

    ``used_t`` lists the grid values that entered the fit: positive distance
    and a difference above three combined standard errors.
    """

    c_hat: float
    gamma_hat: float
    gamma_stderr: float
    residual_rms: float
    used_t: tuple


@dataclass(frozen=True)
class SweepResult:
    """One perturbation sweep: estimates, distances, and the fitted pair.

    ``estimates`` holds the per-t exponent for the matrix and circle sweeps
    and the per-t Wasserstein-1 distance to the base measure for the
    stationary sweep; it is None when the stationary sweep finds more than
    one ergodic measure somewhere, in which case ``multiplicities`` still
    reports the per-t counts.
    """

    kind: str
    t_list: tuple
    estimates: tuple | None
    stderrs: tuple | None
    distances: tuple
    fit: HolderPair | None
    base_value: float | None = None
    base_stderr: float | None = None
    multiplicities: tuple | None = None
    seed: int = 0


def _validated_t_list(t_list):
    ts = tuple(float(t) for t in t_list)
    if not ts:
        raise ValueError("t_list must not be empty")
    if not all(math.isfinite(t) for t in ts):
        raise ValueError("t_list entries must be finite")
    return ts


def _holder_fit(t_list, deltas, sigmas, distances):
    """Log-log fit over the usable grid values, or None with fewer than 4."""
    used, xs, ys = [], [], []
    for t, delta, sigma, d in zip(t_list, deltas, sigmas, distances):
        if d > 0.0 and delta > 3.0 * sigma and delta > 0.0:
            used.append(t)
            xs.append(math.log(d))
            ys.append(math.log(delta))
    if len(used) < _MIN_FIT_POINTS:
        return None
    slope, intercept, slope_se, rms = line_fit(xs, ys)
    return HolderPair(
        c_hat=math.exp(intercept),
        gamma_hat=slope,
        gamma_stderr=slope_se,
        residual_rms=rms,
        used_t=tuple(used),
    )


def _lambda1_task(args):
    cocycle, burn_in, samples, seed = args
    return furstenberg_estimate(cocycle, burn_in, samples, seed)


def lambda1_sweep(base, direction, t_list, *, burn_in=200, samples=20000, seed=0, workers=1):
    """Top-exponent curve of the atom family base + t * direction.

    Every atom of every swept cocycle must stay invertible; the whole grid
    is checked before any estimation starts and the first offending value
    raises NotInvertibleAt. Estimates come from the Furstenberg chain with
    the same seed at every t.
    """
    ts = _validated_t_list(t_list)
    m = base.dimension
    dirs = [np.asarray(D, dtype=float) for D in direction]
    if len(dirs) != len(base.atoms):
        raise ValueError("direction needs one matrix per atom")
    for i, D in enumerate(dirs):
        if D.shape != (m, m):
            raise ValueError(f"direction matrix {i} has shape {D.shape}, expected ({m},{m})")
    for t in ts:
        for i, (A, D) in enumerate(zip(base.atoms, dirs)):
            smallest = np.linalg.svd(A + t * D, compute_uv=False)[-1]
            if smallest <= _MIN_SINGULAR:
                raise NotInvertibleAt(t, f"(atom {i})")
    swept = [
        Cocycle(tuple(A + t * D for A, D in zip(base.atoms, dirs)), base.weights)
        for t in ts
    ]
    base_est = furstenberg_estimate(base, burn_in, samples, seed)
    results = pmap(_lambda1_task, [(c, burn_in, samples, seed) for c in swept], workers)
    estimates = tuple(r.value for r in results)
    stderrs = tuple(r.stderr for r in results)
    distances = tuple(cocycle_distance(c, base) for c in swept)
    deltas = [abs(v - base_est.value) for v in estimates]
    sigmas = [math.hypot(se, base_est.stderr) for se in stderrs]
    fit = _holder_fit(ts, deltas, sigmas, distances)
    return SweepResult(
        kind="lambda1",
        t_list=ts,
        estimates=estimates,
        stderrs=stderrs,
        distances=distances,
        fit=fit,
        base_value=base_est.value,
        base_stderr=base_est.stderr,
        seed=int(seed),
    )


def _distance_points(space):
    if isinstance(space, Circle):
        return np.arange(_DISTANCE_GRID) / _DISTANCE_GRID
    if isinstance(space, Interval):
        return np.linspace(space.a, space.b, _DISTANCE_GRID)
    raise ValueError("sweeps cover interval and circle systems")


def _check_same_family(system, base):
    if system.space != base.space:
        raise ValueError("path systems must live on the base space")
    if len(system.maps) != len(base.maps):
        raise ValueError("path systems must keep the atom count")
    if not np.allclose(system.weights, base.weights, atol=1e-12, rtol=0.0):
        raise ValueError("path systems must keep the sampling weights")


def _grid_derivative_values(fm, pts):
    """Signed derivatives where the family is known, |f'| otherwise."""
    if fm.family == "wave":
        rho, c, k = fm.params
        return 1.0 + c * np.cos(2.0 * np.pi * k * pts)
    if fm.family == "affine":
        return np.full(pts.shape, fm.params[0])
    return np.exp(fm.dlog_batch(pts))


def _min_grid_derivative(system, pts):
    return min(float(_grid_derivative_values(fm, pts).min()) for fm in system.maps)


def _pointwise_gap(space, ya, yb):
    gap = np.abs(np.asarray(ya, dtype=float) - np.asarray(yb, dtype=float))
    if isinstance(space, Circle):
        gap = gap % 1.0
        gap = np.minimum(gap, 1.0 - gap)
    return gap


def _grid_distance(system, base, pts, *, with_derivatives):
    total = 0.0
    for w, fa, fb in zip(system.weights, system.maps, base.maps):
        part = float(_pointwise_gap(base.space, fa.apply_batch(pts), fb.apply_batch(pts)).max())
        if with_derivatives:
            da = np.exp(fa.dlog_batch(pts))
            db = np.exp(fb.dlog_batch(pts))
            part += float(np.abs(da - db).max())
        total += float(w) * part
    return total


def _chain_exponent(system, x0, burn_in, samples, seed):
    """Stationary average of the atom-averaged log derivative.

    The expectation over the atom choice at the current state is exact (a
    weighted sum over the finite atom set); only the state average runs on
    the sampled chain. At an atomic stationary state the estimate is exact
    with zero spread.
    """
    if samples < 100:
        raise ValueError("need samples >= 100")
    if burn_in < 0:
        raise ValueError("burn_in must be nonnegative")
    symbols = sample_symbol_block(system, 1, burn_in + samples, seed, _CHAIN_BLOCK)[0]
    maps = system.maps
    x = system.space.canonical(x0)
    states = np.empty(burn_in + samples)
    for i, s in enumerate(symbols):
        states[i] = x
        x = maps[int(s)](x)
    tail = states[burn_in:]
    phi = np.zeros(samples)
    for w, fm in zip(system.weights, maps):
        phi += w * fm.dlog_batch(tail)
    if not np.isfinite(phi).all():
        raise ZeroDerivative("a derivative factor vanished along the sweep chain")
    return float(phi.mean()), float(batch_means_stderr(phi, 32))


def _circle_task(args):
    system, x0, burn_in, samples, seed = args
    return _chain_exponent(system, x0, burn_in, samples, seed)


def circle_exponent_sweep(base, path, t_list, *, x0=0.0, burn_in=200, samples=20000, seed=0, workers=1):
    """Exponent curve of a swept family of 1-D diffeomorphisms.

    ``path(t)`` must return a system on the base space with the same atom
    count and weights. Every atom of every swept system must keep a strictly
    positive derivative on the 4096-point check grid, else the offending
    value raises NotDiffeomorphismAt before any estimation starts.
    """
    ts = _validated_t_list(t_list)
    pts = _distance_points(base.space)
    if _min_grid_derivative(base, pts) <= 0.0:
        raise ValueError("the base system fails the positive-derivative check")
    systems = []
    for t in ts:
        system = path(t)
        _check_same_family(system, base)
        if _min_grid_derivative(system, pts) <= 0.0:
            raise NotDiffeomorphismAt(t)
        systems.append(system)
    base_value, base_stderr = _chain_exponent(base, x0, burn_in, samples, seed)
    results = pmap(
        _circle_task, [(s, x0, burn_in, samples, seed) for s in systems], workers
    )
    estimates = tuple(v for v, _ in results)
    stderrs = tuple(se for _, se in results)
    distances = tuple(
        _grid_distance(s, base, pts, with_derivatives=True) for s in systems
    )
    deltas = [abs(v - base_value) for v in estimates]
    sigmas = [math.hypot(se, base_stderr) for se in stderrs]
    fit = _holder_fit(ts, deltas, sigmas, distances)
    return SweepResult(
        kind="circle_exponent",
        t_list=ts,
        estimates=estimates,
        stderrs=stderrs,
        distances=distances,
        fit=fit,
        base_value=base_value,
        base_stderr=base_stderr,
        seed=int(seed),
    )


def _stationary_task(args):
    system, grid, tol = args
    return stationary_report(discretize(system, grid), tol)


def stationary_stability_sweep(base, path, t_list, grid, *, seed=0, tol=1e-10, workers=1):
    """Wasserstein-1 curve of grid stationary measures along a path.

    All measures are computed on the one fixed grid. The curve only makes
    sense against a single reference measure, so whenever any swept system
    (or the base) carries more than one ergodic grid measure the result
    reports the per-t multiplicities and leaves the estimates empty.
    """
    ts = _validated_t_list(t_list)
    if not isinstance(grid, Grid):
        raise ValueError("grid must come from make_grid")
    if grid.space != base.space:
        raise ValueError("grid and system live on different spaces")
    pts = _distance_points(base.space)
    systems = []
    for t in ts:
        system = path(t)
        _check_same_family(system, base)
        systems.append(system)
    base_report = stationary_report(discretize(base, grid), tol)
    reports = pmap(_stationary_task, [(s, grid, tol) for s in systems], workers)
    multiplicities = tuple(int(r.multiplicity) for r in reports)
    distances = tuple(
        _grid_distance(s, base, pts, with_derivatives=False) for s in systems
    )
    unique = base_report.multiplicity == 1 and all(m == 1 for m in multiplicities)
    if unique:
        estimates = tuple(
            float(wasserstein_on_grid(grid, r.measures[0], base_report.measures[0]))
            for r in reports
        )
        stderrs = (0.0,) * len(ts)
        fit = _holder_fit(ts, estimates, stderrs, distances)
    else:
        estimates = None
        stderrs = None
        fit = None
    return SweepResult(
        kind="stationary_w1",
        t_list=ts,
        estimates=estimates,
        stderrs=stderrs,
        distances=distances,
        fit=fit,
        multiplicities=multiplicities,
        seed=int(seed),
    )
