"""Finite shadows of the annealed transfer operator on a cell grid.

Averaging a test function over one random step defines an operator P; on a
uniform grid of cells it collapses to a row-stochastic matrix Q built from
the deterministic images of cell centers. Everything downstream is linear
algebra on Q: stationary vectors and their multiplicity, recurrent classes
and periods, the second eigenvalue modulus, Cesaro averages and their
projection limit, plus empirical checks (a Hoelder-seminorm contraction fit,
basin attribution, and Wasserstein convergence of the law of iterates).

Grids are 1-D only: intervals, the circle, and lines in the plane treated as
an angle circle of circumference 1. Cell assignment and Wasserstein-1
distances are exact in 1-D, which keeps every check here free of quadrature
error; the grid width is the only resolution knob.
"""

import itertools
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import rng, spaces
from .cocycles import projective_system
from .errors import EscapedSpace, NoConvergence
from .spaces import Circle, Interval, Projective
from .systems import evolve, evolve_net, sample_symbol_block

# Leading ids for sample_symbol_block; see the registry note in rng.py.
_HOLDER_BLOCK = 5
_BASIN_BLOCK = 6
_LAW_BLOCK = 7

# Entries below this are structural zeros when reading off the graph of Q.
_ENTRY_FLOOR = 1e-12
_ROW_SUM_TOL = 1e-9
_STATIONARY_BUDGET = 100_000
_POWER_BUDGET = 60
_HARMONICS = 4
_VIOLATED_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform cells on a 1-D space, identified by their centers.

    Interval cells are [a + k*width, a + (k+1)*width) with mid-cell centers;
    circle cells are centered at k/N so that the points k/N themselves are
    centers; lines in the plane use the angle parameterization t in [0, 1).
    """

    space: object
    centers: tuple
    width: float

    @property
    def n_cells(self):
        return len(self.centers)

    def centers_array(self):
        return np.asarray(self.centers, dtype=float)


@dataclass(frozen=True, eq=False)
class DiscretizedKoopman:
    """Row-stochastic matrix of the one-step operator on a grid."""

    grid: Grid
    matrix: np.ndarray


@dataclass(frozen=True, eq=False)
class StationaryReport:
    """Stationary structure of a grid operator.

    One ergodic probability vector per closed recurrent class, the class
    cell sets and periods, the second-largest eigenvalue modulus, and the
    projection matrix sending a grid function to its Cesaro limit.
    """

    measures: tuple
    multiplicity: int
    classes: tuple
    periods: tuple
    rho2: float
    projection: np.ndarray


@dataclass(frozen=True)
class HolderFit:
    """Envelope fit of |P^n phi|_alpha <= q |phi|_alpha + c sup|phi|."""

    q_hat: float
    c_hat: float
    violated: bool
    alpha: float
    n: int
    r: float | None
    sample_count: int
    exact: bool
    seed: int


@dataclass(frozen=True, eq=False)
class BasinReport:
    """Per-cell attribution frequencies of occupation statistics."""

    fractions: np.ndarray
    unattributed: np.ndarray
    threshold: float
    n: int
    trials: int
    seed: int


@dataclass(frozen=True)
class LawConvergence:
    """Wasserstein-1 distance of the law of iterates to the nearest
    stationary measure, per step count."""

    n_list: tuple
    distances: tuple
    nearest: tuple
    trials: int
    seed: int


def make_grid(space, n_cells):
    """A uniform grid of ``n_cells`` cells on a 1-D space."""
    n = int(n_cells)
    if n < 1:
        raise ValueError("need at least one cell")
    if isinstance(space, Interval):
        if space.b <= space.a:
            raise ValueError("degenerate interval has no cells")
        width = (space.b - space.a) / n
        centers = tuple(space.a + (k + 0.5) * width for k in range(n))
        return Grid(space, centers, width)
    if isinstance(space, Circle):
        return Grid(space, tuple(k / n for k in range(n)), 1.0 / n)
    if isinstance(space, Projective) and space.m == 2:
        centers = tuple(
            space.canonical(np.array([np.cos(np.pi * k / n), np.sin(np.pi * k / n)]))
            for k in range(n)
        )
        return Grid(space, centers, 1.0 / n)
    raise ValueError("grids support intervals, the circle, and lines in the plane")


def _unit_coordinates(space, points):
    """Map points into the grid parameter t in [0, 1)."""
    if isinstance(space, Projective):
        arr = np.asarray(points, dtype=float)
        return (np.arctan2(arr[..., 1], arr[..., 0]) % np.pi) / np.pi
    arr = np.asarray(points, dtype=float)
    if isinstance(space, Circle):
        return arr % 1.0
    return (arr - space.a) / (space.b - space.a)


def cell_indices(grid, points):
    """Cell index of each point; exact up to the half-width roll of circular
    grids (centers sit at k/N, so cell k is the half-open Voronoi slot)."""
    space = grid.space
    n = grid.n_cells
    if isinstance(space, Interval):
        x = np.asarray(points, dtype=float)
        idx = np.floor((x - space.a) / grid.width).astype(np.int64)
        return np.clip(idx, 0, n - 1)
    t = _unit_coordinates(space, points)
    t = (t + grid.width / 2.0) % 1.0
    idx = np.floor(t / grid.width).astype(np.int64)
    return np.minimum(idx, n - 1)


def discretize(system, grid):
    """Exact one-step matrix: deterministic images of centers, atom weights.

    No sampling is involved, so rows are row-stochastic to the accuracy of
    the weight sum and refinement is the only source of error.
    """
    space = system.space
    if not isinstance(space, type(grid.space)) or space != grid.space:
        raise ValueError("system and grid live on different spaces")
    n = grid.n_cells
    centers = grid.centers_array()
    Q = np.zeros((n, n))
    for weight, fm in zip(system.weights, system.maps):
        images = fm.apply_batch(centers.copy())
        if isinstance(space, Interval):
            if (
                (images < space.a - _ROW_SUM_TOL)
                | (images > space.b + _ROW_SUM_TOL)
            ).any():
                raise EscapedSpace(
                    f"a center image left [{space.a}, {space.b}]"
                )
            images = np.clip(images, space.a, space.b)
        idx = cell_indices(grid, images)
        Q[np.arange(n), idx] += weight
    return DiscretizedKoopman(grid, Q)


def _matrix_of(Q):
    M = Q.matrix if isinstance(Q, DiscretizedKoopman) else np.asarray(Q, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("need a square matrix")
    if not np.isfinite(M).all():
        raise ValueError("matrix has non-finite entries")
    if (M < -_ENTRY_FLOOR).any():
        raise ValueError("matrix has negative entries")
    if np.abs(M.sum(axis=1) - 1.0).max() > _ROW_SUM_TOL:
        raise ValueError("matrix is not row-stochastic")
    return M


def _cleaned(Q):
    """Zero out sub-threshold entries and renormalize rows."""
    M = _matrix_of(Q)
    A = np.where(M < _ENTRY_FLOOR, 0.0, M)
    return A / A.sum(axis=1, keepdims=True)


def _closed_classes(A):
    """Recurrent classes: strongly connected components with no exit edge,
    ordered by their smallest cell index."""
    graph = csr_matrix(A > 0.0)
    n_comp, labels = connected_components(graph, directed=True, connection="strong")
    classes = []
    for c in range(n_comp):
        inside = labels == c
        if A[np.ix_(inside, ~inside)].sum() == 0.0:
            classes.append(tuple(int(i) for i in np.nonzero(inside)[0]))
    classes.sort(key=lambda cls: cls[0])
    return classes


def _class_measure(A, nodes, tol):
    """Stationary vector of the class block via damped fixed-point iteration.

    The half-step v <- (v + vB)/2 keeps the same fixed vector but kills the
    rotation of periodic classes; the residual is measured on B itself.
    """
    B = A[np.ix_(nodes, nodes)]
    B = B / B.sum(axis=1, keepdims=True)
    v = np.full(len(nodes), 1.0 / len(nodes))
    for _ in range(_STATIONARY_BUDGET):
        w = v @ B
        if np.abs(w - v).sum() <= tol:
            total = v.sum()
            return v if total == 1.0 else v / total
        v = 0.5 * (v + w)
    raise NoConvergence(
        f"class stationary vector missed tol={tol} in {_STATIONARY_BUDGET} steps"
    )


def _class_period(A, nodes):
    """gcd of cycle lengths within one strongly connected class."""
    members = set(nodes)
    depth = {nodes[0]: 0}
    queue = deque([nodes[0]])
    while queue:
        u = queue.popleft()
        for v in np.nonzero(A[u])[0]:
            v = int(v)
            if v in members and v not in depth:
                depth[v] = depth[u] + 1
                queue.append(v)
    g = 0
    for u in nodes:
        for v in np.nonzero(A[u])[0]:
            v = int(v)
            if v in members:
                g = math.gcd(g, depth[u] + 1 - depth[v])
    return max(g, 1)


def _projection_matrix(A, classes, measures):
    """The Cesaro-limit projection: class rows carry their own measure,
    transient rows the absorption-probability mixture of class measures."""
    n = A.shape[0]
    recurrent = sorted(i for cls in classes for i in cls)
    transient = np.array(sorted(set(range(n)) - set(recurrent)), dtype=int)
    Pi = np.zeros((n, n))
    for cls, mu in zip(classes, measures):
        Pi[list(cls), :] = mu
    if transient.size:
        T = A[np.ix_(transient, transient)]
        hit = np.column_stack(
            [A[np.ix_(transient, list(cls))].sum(axis=1) for cls in classes]
        )
        absorb = np.linalg.solve(np.eye(transient.size) - T, hit)
        Pi[transient, :] = absorb @ np.vstack(measures)
    return Pi


def _second_modulus(A, Pi):
    """Largest eigenvalue modulus of A - Pi via normalized matrix powers.

    The estimate ||B^m||^(1/m) with doubling m converges to the spectral
    radius for every Jordan structure: vector iteration stalls on the
    rotating or nilpotent remainders that stochastic matrices routinely
    produce, while squaring is oblivious to them. A power that vanishes
    exactly means the remainder is nilpotent and the modulus reports as 0.
    """
    B = A - Pi
    norm = float(np.linalg.norm(B))
    if norm == 0.0:
        return 0.0
    C = B / norm
    log_power = math.log(norm)
    m = 1
    previous = math.inf
    # One squaring of a unit-norm matrix carries rounding of size ~N*eps;
    # anything at that scale is a vanished power, not spectral content.
    dust = B.shape[0] * 1e-14
    for _ in range(_POWER_BUDGET):
        C = C @ C
        r = float(np.linalg.norm(C))
        if r <= dust:
            return 0.0
        log_power = 2.0 * log_power + math.log(r)
        m *= 2
        C = C / r
        estimate = log_power / m
        if abs(estimate - previous) <= 1e-10:
            return float(np.exp(estimate))
        previous = estimate
    raise NoConvergence(
        f"second-modulus estimate missed its budget of {_POWER_BUDGET} squarings"
    )


def stationary_report(Q, tol):
    """Stationary vectors, recurrent classes, periods, and the gap data.

    Entries below 1e-12 are treated as structural zeros before reading off
    the transition graph, so floating dust cannot merge classes.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = _cleaned(Q)
    n = A.shape[0]
    classes = _closed_classes(A)
    measures = []
    for cls in classes:
        local = _class_measure(A, list(cls), tol)
        mu = np.zeros(n)
        mu[list(cls)] = local
        measures.append(mu)
    periods = tuple(_class_period(A, list(cls)) for cls in classes)
    Pi = _projection_matrix(A, classes, measures)
    if len(classes) >= 2 or any(p > 1 for p in periods):
        rho2 = 1.0
    else:
        rho2 = _second_modulus(A, Pi)
    return StationaryReport(
        measures=tuple(measures),
        multiplicity=len(classes),
        classes=tuple(classes),
        periods=periods,
        rho2=float(rho2),
        projection=Pi,
    )


def cesaro_projection(Q, phi, n, *, report=None, tol=1e-10):
    """Running average of Q^i phi and its sup-distance to the limit."""
    if n < 1:
        raise ValueError("need n >= 1")
    A = _cleaned(Q)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (A.shape[0],):
        raise ValueError(f"phi must be a grid function of length {A.shape[0]}")
    if report is None:
        report = stationary_report(Q, tol)
    acc = phi.copy()
    cur = phi
    for _ in range(n - 1):
        cur = A @ cur
        acc += cur
    averaged = acc / n
    limit = report.projection @ phi
    return averaged, float(np.abs(averaged - limit).max())


def spectral_gap_estimate(Q, *, tol=1e-10, report=None):
    """Second-largest eigenvalue modulus of the grid operator."""
    A = _matrix_of(Q)
    if A.shape[0] > 4096:
        raise ValueError("gap estimation is capped at 4096 cells")
    if report is None:
        report = stationary_report(Q, tol)
    return report.rho2


def _trig_values(cos_coef, sin_coef, u):
    """Evaluate every sample function at the parameter values ``u``."""
    flat = np.asarray(u, dtype=float).ravel()
    angles = 2.0 * np.pi * np.outer(np.arange(1, _HARMONICS + 1), flat)
    vals = cos_coef @ np.cos(angles) + sin_coef @ np.sin(angles)
    return vals.reshape((cos_coef.shape[0],) + np.shape(u))


def _empirical_seminorm(values, ii, jj, dpow):
    diffs = np.abs(values[..., ii] - values[..., jj])
    return (diffs / dpow).max(axis=-1)


def _enumerated_finals(system, points, n):
    """Final positions of every net point under every length-n word."""
    k = len(system.maps)
    words = np.array(list(itertools.product(range(k), repeat=n)), dtype=np.int16)
    weights = np.prod(np.asarray(system.weights)[words], axis=1)
    count = len(points)
    repeated = np.repeat(words, count, axis=0)
    if isinstance(system.space, Projective):
        x0 = np.tile(np.asarray(points, dtype=float), (len(words), 1))
        shape = (len(words), count, system.space.m)
    else:
        x0 = np.tile(np.asarray(points, dtype=float), len(words))
        shape = (len(words), count)
    finals = evolve(system, repeated, x0)["final"].reshape(shape)
    return finals, weights


def holder_contraction_check(
    system, alpha, n, r, sample_functions, seed, *, net_eps=0.05, mc_samples=256
):
    """Fit the smallest envelope |P^n phi|_alpha <= q |phi|_alpha + c sup|phi|.

    The sample always contains the eight pure harmonics (they are the
    extremal functions for piecewise-affine families); ``sample_functions``
    adds random mixtures with 1/k-damped coefficients. P^n phi is evaluated
    on the net by exact word enumeration whenever the word count fits inside
    ``mc_samples``, and by shared-word Monte Carlo otherwise. The envelope
    minimizes the supnorm intercept first and the seminorm slope second:
    every probe here has positive seminorm, so the tight slope (the largest
    per-probe seminorm ratio) covers the sample with intercept zero, and the
    intercept only absorbs overshoot beyond that slope. ``violated`` means
    no q below 1 emerged.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    if n < 1:
        raise ValueError("need n >= 1")
    if sample_functions < 0:
        raise ValueError("sample_functions must be nonnegative")
    if mc_samples < 2:
        raise ValueError("need mc_samples >= 2")
    space = system.space
    net = spaces.epsilon_net(space, net_eps)
    d = spaces.distance_matrix(space, net)
    iu, ju = np.triu_indices(len(net), k=1)
    keep = d[iu, ju] > 0.0
    if r is not None:
        keep &= d[iu, ju] <= r
    ii, jj = iu[keep], ju[keep]
    if len(ii) == 0:
        raise ValueError("no distinct net pairs within the radius")
    dpow = d[ii, jj] ** alpha
    count = 2 * _HARMONICS + int(sample_functions)
    cos_coef = np.zeros((count, _HARMONICS))
    sin_coef = np.zeros((count, _HARMONICS))
    for k in range(_HARMONICS):
        cos_coef[k, k] = 1.0
        sin_coef[_HARMONICS + k, k] = 1.0
    if sample_functions:
        gen = rng.stream(seed, rng.GRID_FUNCTIONS)
        damp = 1.0 / np.arange(1, _HARMONICS + 1)
        cos_coef[2 * _HARMONICS :] = gen.standard_normal(
            (sample_functions, _HARMONICS)
        ) * damp
        sin_coef[2 * _HARMONICS :] = gen.standard_normal(
            (sample_functions, _HARMONICS)
        ) * damp
    net_arr = np.asarray(net, dtype=float)
    phi_net = _trig_values(cos_coef, sin_coef, _unit_coordinates(space, net_arr))
    exact = len(system.maps) ** n <= mc_samples
    if exact:
        finals, word_weights = _enumerated_finals(system, net, n)
    else:
        finals = evolve_net(system, net, n, mc_samples, seed, _HOLDER_BLOCK)
        word_weights = np.full(mc_samples, 1.0 / mc_samples)
    values = _trig_values(cos_coef, sin_coef, _unit_coordinates(space, finals))
    pn_phi = np.einsum("swp,w->sp", values, word_weights)
    seminorm = _empirical_seminorm(phi_net, ii, jj, dpow)
    supnorm = np.abs(phi_net).max(axis=1)
    target = _empirical_seminorm(pn_phi, ii, jj, dpow)
    if target.max() <= 1e-15:
        q_hat, c_hat = 0.0, 0.0
    else:
        q_hat = float((target / seminorm).max())
        slack = target - q_hat * seminorm
        above = slack > 0.0
        c_hat = float((slack[above] / supnorm[above]).max()) if above.any() else 0.0
    return HolderFit(
        q_hat=q_hat,
        c_hat=c_hat,
        violated=not (q_hat < 1.0 - _VIOLATED_SLACK),
        alpha=float(alpha),
        n=int(n),
        r=None if r is None else float(r),
        sample_count=int(count),
        exact=bool(exact),
        seed=int(seed),
    )


def empirical_basins(system, grid, n, trials, seed, *, report=None, tol=1e-10):
    """Attribute each cell's occupation statistics to an ergodic measure.

    Every (cell, trial) pair runs its own word; the length-n occupation
    vector is compared to each stationary measure in total variation and
    attributed to the nearest one within 2*(width + n^(-1/2)), a radius
    wide enough for counting noise yet narrower than the gap between
    distinct ergodic measures on a resolved grid.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    if trials < 1:
        raise ValueError("need trials >= 1")
    if report is None:
        report = stationary_report(discretize(system, grid), tol)
    n_cells = grid.n_cells
    threshold = 2.0 * (grid.width + n ** -0.5)
    chains = n_cells * trials
    symbols = sample_symbol_block(system, chains, n, seed, _BASIN_BLOCK)
    centers = grid.centers_array()
    if isinstance(grid.space, Projective):
        x0 = np.repeat(centers, trials, axis=0)
    else:
        x0 = np.repeat(centers, trials)
    counts = np.zeros((chains, n_cells))
    rows = np.arange(chains)

    def tally(_, X):
        counts[rows, cell_indices(grid, X)] += 1.0

    evolve(system, symbols, x0, step_callback=tally)
    occupation = counts / n
    stacked = np.vstack(report.measures)
    tv = 0.5 * np.abs(occupation[:, None, :] - stacked[None, :, :]).sum(axis=2)
    nearest = tv.argmin(axis=1)
    attributed = tv.min(axis=1) <= threshold
    fractions = np.zeros((n_cells, len(report.measures)))
    for c in range(len(report.measures)):
        hits = (attributed & (nearest == c)).reshape(n_cells, trials)
        fractions[:, c] = hits.mean(axis=1)
    return BasinReport(
        fractions=fractions,
        unattributed=1.0 - fractions.sum(axis=1),
        threshold=float(threshold),
        n=int(n),
        trials=int(trials),
        seed=int(seed),
    )


def wasserstein_on_grid(grid, p, q):
    """Wasserstein-1 distance between probability vectors on one grid.

    Exact in 1-D: partial sums on the interval, median-centered partial sums
    on circular grids (the optimal rotation offset).
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != (grid.n_cells,) or q.shape != (grid.n_cells,):
        raise ValueError("vectors must match the grid size")
    c = np.cumsum(p - q)
    if isinstance(grid.space, Interval):
        return float(grid.width * np.abs(c[:-1]).sum())
    return float(grid.width * np.abs(c - np.median(c)).sum())


def law_convergence_test(system, x, grid, n_list, trials, seed, *, report=None, tol=1e-10):
    """Distance of the empirical law of n-step iterates from stationarity.

    One batch of ``trials`` independent words, snapshotted at every entry of
    ``n_list``; each snapshot's cell histogram is compared to every ergodic
    measure and the smallest Wasserstein-1 distance is kept.
    """
    n_list = [int(v) for v in n_list]
    if not n_list or any(v < 1 for v in n_list):
        raise ValueError("n_list needs positive entries")
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be strictly ascending")
    if trials < 1:
        raise ValueError("need trials >= 1")
    if report is None:
        report = stationary_report(discretize(system, grid), tol)
    symbols = sample_symbol_block(system, trials, n_list[-1], seed, _LAW_BLOCK)
    x0 = grid.space.canonical(x)
    out = evolve(system, symbols, x0, marks=n_list)
    distances = []
    nearest = []
    for n in n_list:
        idx = cell_indices(grid, out["pos"][n])
        law = np.bincount(idx, minlength=grid.n_cells) / trials
        dists = [wasserstein_on_grid(grid, law, mu) for mu in report.measures]
        best = int(np.argmin(dists))
        distances.append(float(dists[best]))
        nearest.append(best)
    return LawConvergence(
        n_list=tuple(n_list),
        distances=tuple(distances),
        nearest=tuple(nearest),
        trials=int(trials),
        seed=int(seed),
    )


def ulam_top_exponent(cocycle, cells, tol=1e-10):
    """Top exponent of a 2x2 cocycle from the grid chain on lines.

    The stationary average of the expected log stretch log||A x|| is exact
    on each cell center; with several ergodic vectors the largest average is
    the top exponent. Returns the fine-grid value and the halving gap
    |fine - coarse| as its resolution-error proxy.
    """
    if cocycle.dimension != 2:
        raise ValueError("the grid route needs a 2x2 cocycle")
    cells = int(cells)
    if cells < 8 or cells % 2:
        raise ValueError("need an even cell count of at least 8")
    system = projective_system(cocycle)

    def value_at(count):
        grid = make_grid(system.space, count)
        report = stationary_report(discretize(system, grid), tol)
        centers = grid.centers_array()
        integrand = np.zeros(count)
        for weight, A in zip(cocycle.weights, cocycle.atoms):
            images = centers @ A.T
            integrand += weight * 0.5 * np.log(
                np.einsum("pi,pi->p", images, images)
            )
        return max(float(mu @ integrand) for mu in report.measures)

    fine = value_at(cells)
    coarse = value_at(cells // 2)
    return fine, abs(fine - coarse)
