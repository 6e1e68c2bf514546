"""Random map systems: weighted atoms of Lipschitz maps on a common space.

A system is a finite family f_1, ..., f_k with sampling weights; a word is a
finite symbol string drawn from a counter-based stream, and composing the
atoms along a word gives one realization f^n = f_{w_{n-1}} o ... o f_{w_0}.

The local Lipschitz data is multiplicative along orbits: when every atom
carries an analytic derivative norm, the chain rule gives the exact factor
prod_k |f'_{w_k}(x_k)|; otherwise a finite-difference estimate of the
composite map is used.

Batch evolution (`evolve`) advances many chains at once with numpy masks so
the statistics modules can run 1e5+ trials without Python-level per-step
loops over chains.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import EscapedSpace, ZeroDerivative
from .spaces import Circle, Interval, Projective
from . import rng

MAX_ATOMS = 64
_IN_SPACE_TOL = 1e-9
_FD_STEP = 1e-6


@dataclass(frozen=True, eq=False)
class FiberMap:
    """One atom of a random system.

    ``family`` selects the evaluation rule: "affine" (a*x + b on an
    interval), "wave" (x + rho + (c/(2 pi k)) sin(2 pi k x) mod 1),
    "projective" (the induced action of an invertible matrix on lines), or
    "tabulated" (user callables).
    """

    space: object
    family: str
    params: tuple = ()
    func: object = None
    dnorm_func: object = None
    lipschitz_bound: float | None = None

    def __call__(self, x):
        if self.family == "affine":
            a, b = self.params
            return a * float(x) + b
        if self.family == "wave":
            rho, c, k = self.params
            x = float(x)
            return (x + rho + (c / (2 * np.pi * k)) * np.sin(2 * np.pi * k * x)) % 1.0
        if self.family == "projective":
            (M,) = self.params
            return self.space.canonical(M @ np.asarray(x, dtype=float))
        return self.func(x)

    def apply_batch(self, xs):
        if self.family == "affine":
            a, b = self.params
            return a * xs + b
        if self.family == "wave":
            rho, c, k = self.params
            return (xs + rho + (c / (2 * np.pi * k)) * np.sin(2 * np.pi * k * xs)) % 1.0
        if self.family == "projective":
            (M,) = self.params
            ys = xs @ M.T
            return ys / np.linalg.norm(ys, axis=1, keepdims=True)
        return np.array([self.func(x) for x in xs])

    @property
    def has_derivative_norm(self):
        return self.family in ("affine", "wave", "projective") or (
            self.dnorm_func is not None
        )

    def derivative_norm(self, x):
        """The local Lipschitz factor Lf(x) (|f'| in 1-D, the operator norm
        of the projectivized differential for matrix actions)."""
        if self.family == "affine":
            return abs(self.params[0])
        if self.family == "wave":
            rho, c, k = self.params
            return abs(1.0 + c * np.cos(2 * np.pi * k * float(x)))
        if self.family == "projective":
            (M,) = self.params
            return projective_derivative_norm(M, np.asarray(x, dtype=float))
        if self.dnorm_func is not None:
            return float(self.dnorm_func(x))
        return None

    def dlog_batch(self, xs):
        """log derivative_norm over a batch; -inf marks vanishing factors."""
        if self.family == "affine":
            a = abs(self.params[0])
            return np.full(len(xs), np.log(a) if a > 0 else -np.inf)
        if self.family == "wave":
            rho, c, k = self.params
            d = np.abs(1.0 + c * np.cos(2 * np.pi * k * xs))
            with np.errstate(divide="ignore"):
                return np.log(d)
        if self.family == "projective":
            (M,) = self.params
            m = M.shape[0]
            if m == 2:
                det = abs(np.linalg.det(M))
                sq = np.einsum("ij,ij->i", xs @ M.T, xs @ M.T)
                return np.log(det) - np.log(sq)
            return np.array(
                [np.log(projective_derivative_norm(M, x)) for x in xs]
            )
        if self.dnorm_func is not None:
            with np.errstate(divide="ignore"):
                return np.log(np.array([float(self.dnorm_func(x)) for x in xs]))
        raise ZeroDerivative("no derivative data on a tabulated atom")


def projective_derivative_norm(M, x):
    """Exact operator norm of the projectivized differential at the line x.

    The differential at x maps v in x-perp to the component of Mv/||Mx||
    orthogonal to Mx; its largest singular value is computed from the matrix
    of that linear map on an orthonormal basis of x-perp. For m = 2 this is
    |det M| / ||Mx||^2.
    """
    x = np.asarray(x, dtype=float)
    x = x / np.linalg.norm(x)
    m = len(x)
    Mx = M @ x
    nMx = np.linalg.norm(Mx)
    if m == 2:
        return abs(np.linalg.det(M)) / nMx**2
    u = Mx / nMx
    basis = _orthonormal_complement(x)
    W = (M @ basis) / nMx
    W = W - np.outer(u, u @ W)
    return float(np.linalg.svd(W, compute_uv=False)[0])


def _orthonormal_complement(x):
    """Columns form an orthonormal basis of x-perp."""
    m = len(x)
    A = np.eye(m) - np.outer(x, x)
    q, r = np.linalg.qr(A)
    cols = [q[:, j] for j in range(m) if abs(r[j, j]) > 1e-10]
    return np.column_stack(cols[: m - 1])


def affine_interval(a, b, space=None):
    """x -> a*x + b on an interval (default [0, 1])."""
    space = space if space is not None else Interval(0.0, 1.0)
    fm = FiberMap(space, "affine", (float(a), float(b)), lipschitz_bound=abs(float(a)))
    _check_into_space(fm)
    return fm


def circle_wave(rho, c, k=1):
    """x -> x + rho + (c/(2 pi k)) sin(2 pi k x) on the circle."""
    fm = FiberMap(Circle(), "wave", (float(rho), float(c), int(k)))
    _check_into_space(fm)
    return fm


def projective_of_matrix(M):
    """The action of an invertible matrix on lines in P(R^m)."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("projective atoms need a square matrix")
    smin = np.linalg.svd(M, compute_uv=False)[-1]
    if smin <= 1e-10:
        raise ValueError("matrix is numerically singular")
    norm = np.linalg.norm(M, 2)
    inv_norm = np.linalg.norm(np.linalg.inv(M), 2)
    fm = FiberMap(
        Projective(M.shape[0]),
        "projective",
        (M,),
        lipschitz_bound=float(norm**2 * inv_norm**2),
    )
    _check_into_space(fm)
    return fm


def tabulated(space, func, derivative_norm=None, lipschitz_bound=None):
    """Wrap a user evaluator (and optional derivative data) as an atom."""
    fm = FiberMap(
        space,
        "tabulated",
        (),
        func=func,
        dnorm_func=derivative_norm,
        lipschitz_bound=lipschitz_bound,
    )
    _check_into_space(fm)
    if derivative_norm is not None:
        _check_derivative_consistency(fm)
    return fm


def _probe_points(space, count=64):
    if isinstance(space, Projective) and space.m > 2:
        return space.random_points(rng.stream(0x5E11, rng.NET, space.m), count)
    eps = space.diameter / count if space.diameter > 0 else 1.0
    return space.epsilon_net(max(eps, 1e-12))


def _check_into_space(fm):
    for p in _probe_points(fm.space):
        y = fm(p)
        if not fm.space.contains(y, tol=_IN_SPACE_TOL):
            raise EscapedSpace(
                f"atom image {y!r} of {p!r} leaves the space by more than "
                f"{_IN_SPACE_TOL}"
            )


def _check_derivative_consistency(fm, tol=1e-4):
    for p in _probe_points(fm.space, count=16):
        claimed = fm.derivative_norm(p)
        fd = _fd_derivative_norm_single(fm, p, _FD_STEP)
        if abs(claimed - fd) > tol * max(1.0, abs(claimed)):
            raise ValueError(
                f"derivative_norm {claimed:.6g} disagrees with finite "
                f"differences {fd:.6g} at {p!r}"
            )


@dataclass(frozen=True, eq=False)
class RandomMapSystem:
    """Atoms plus sampling weights on a common space."""

    space: object
    maps: tuple
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        maps = tuple(self.maps)
        object.__setattr__(self, "maps", maps)
        if not 1 <= len(maps) <= MAX_ATOMS:
            raise ValueError(f"need between 1 and {MAX_ATOMS} atoms")
        w = (
            np.full(len(maps), 1.0 / len(maps))
            if self.weights is None
            else np.asarray(self.weights, dtype=float)
        )
        if w.shape != (len(maps),) or (w < 0).any():
            raise ValueError("weights must be nonnegative, one per atom")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", w)
        for fm in maps:
            if fm.space != self.space:
                raise ValueError("all atoms must share the system's space")

    @property
    def cumulative_weights(self):
        return np.cumsum(self.weights)

    def has_analytic_derivatives(self):
        return all(fm.has_derivative_norm for fm in self.maps)


@dataclass(frozen=True)
class Word:
    """A symbol string together with the stream that produced it."""

    symbols: tuple
    master_seed: int
    stream: int

    def __len__(self):
        return len(self.symbols)


def sample_word(system, n, master_seed, stream):
    """Draw n symbols; symbol k is a pure function of (master_seed, stream, k)."""
    gen = rng.stream(master_seed, rng.WORDS, stream)
    symbols = symbols_from_uniforms(system, gen.random(n))
    return Word(tuple(int(s) for s in symbols), master_seed, stream)


def symbols_from_uniforms(system, u):
    cum = system.cumulative_weights
    idx = np.searchsorted(cum, u, side="right")
    return np.clip(idx, 0, len(system.maps) - 1)


def sample_symbol_block(system, count, n, master_seed, *ids):
    """A (count, n) symbol matrix from one keyed stream; layout is fixed by
    (count, n) alone, so scheduling can never change an entry."""
    gen = rng.stream(master_seed, rng.BATCH, *ids)
    u = gen.random((count, n))
    return symbols_from_uniforms(system, u).astype(np.int16)


def iterate(system, word, x):
    """Orbit of x along a word: [x, f_{w_0} x, ..., f^n x]."""
    space = system.space
    x = space.canonical(x)
    orbit = [x]
    for s in _word_symbols(word):
        x = system.maps[s](x)
        x = _into_space(space, x)
        orbit.append(x)
    return orbit


def _word_symbols(word):
    return word.symbols if isinstance(word, Word) else tuple(word)


def _into_space(space, x):
    if isinstance(space, Interval):
        if not space.contains(x, tol=_IN_SPACE_TOL):
            raise EscapedSpace(f"orbit left [{space.a}, {space.b}] at {x!r}")
        return space.clamp(x)
    return space.canonical(x)


def evolve_net(system, points, n, trials, seed, *ids, marks=None):
    """Evolve every point under each of ``trials`` shared words.

    Row blocks share one word, so distances between evolved points stay
    coupled through the same symbols. Returns the final positions shaped
    (trials, P) for 1-D spaces and (trials, P, m) for projective ones; with
    ``marks`` a dict {mark: positions} of snapshots is returned instead.
    """
    space = system.space
    count = len(points)
    symbols = sample_symbol_block(system, trials, n, seed, *ids)
    repeated = np.repeat(symbols, count, axis=0)
    projective = isinstance(space, Projective)
    if projective:
        x0 = np.tile(np.asarray(points, dtype=float), (trials, 1))
        shape = (trials, count, space.m)
    else:
        x0 = np.tile(np.asarray(points, dtype=float), trials)
        shape = (trials, count)
    out = evolve(system, repeated, x0, marks=marks)
    if marks is None:
        return out["final"].reshape(shape)
    return {mark: pos.reshape(shape) for mark, pos in out["pos"].items()}


def local_lipschitz_along(system, word, x):
    """Local Lipschitz factor of the word's composition at x.

    Uses the exact chain-rule product when every atom carries an analytic
    derivative norm; otherwise a central finite-difference estimate of the
    composite at step 1e-6, returned at the Richardson half step.
    """
    symbols = _word_symbols(word)
    if system.has_analytic_derivatives():
        orbit = iterate(system, word, x)
        L = 1.0
        for k, s in enumerate(symbols):
            factor = system.maps[s].derivative_norm(orbit[k])
            if factor == 0.0:
                raise ZeroDerivative(f"factor vanished at step {k}")
            L *= factor
        return L
    v_half = _fd_lipschitz(system, symbols, x, _FD_STEP / 2)
    if v_half == 0.0:
        raise ZeroDerivative("finite-difference estimate vanished")
    return v_half


def log_local_lipschitz_along(system, word, x):
    """Sum of log factors; safe against overflow for long words."""
    symbols = _word_symbols(word)
    if not system.has_analytic_derivatives():
        return float(np.log(local_lipschitz_along(system, word, x)))
    orbit = iterate(system, word, x)
    total = 0.0
    for k, s in enumerate(symbols):
        factor = system.maps[s].derivative_norm(orbit[k])
        if factor == 0.0:
            raise ZeroDerivative(f"factor vanished at step {k}")
        total += np.log(factor)
    return float(total)


def _compose(system, symbols, x):
    for s in symbols:
        x = _into_space(system.space, system.maps[s](x))
    return x


def _fd_lipschitz(system, symbols, x, h):
    space = system.space
    if isinstance(space, Projective):
        return _fd_lipschitz_projective(system, symbols, x, h)
    lo = x - h
    hi = x + h
    if isinstance(space, Interval):
        lo, hi = max(lo, space.a), min(hi, space.b)
    fa = _compose(system, symbols, lo)
    fb = _compose(system, symbols, hi)
    if isinstance(space, Circle):
        num = abs(((fb - fa + 0.5) % 1.0) - 0.5)
    else:
        num = abs(fb - fa)
    return num / (hi - lo)


def _fd_lipschitz_projective(system, symbols, x, h):
    space = system.space
    x = space.canonical(x)
    basis = _orthonormal_complement(x)
    fx = _compose(system, symbols, x)
    cols = []
    for j in range(basis.shape[1]):
        e = basis[:, j]
        fp = _compose(system, symbols, space.canonical(x + h * e))
        fmn = _compose(system, symbols, space.canonical(x - h * e))
        fp = fp if fp @ fx >= 0 else -fp
        fmn = fmn if fmn @ fx >= 0 else -fmn
        d = (fp - fmn) / (2 * h)
        cols.append(d - (d @ fx) * fx)
    J = np.column_stack(cols)
    return float(np.linalg.svd(J, compute_uv=False)[0])


def _fd_derivative_norm_single(fm, x, h):
    system = RandomMapSystem(fm.space, (fm,), np.array([1.0]))
    return _fd_lipschitz(system, (0,), x, h)


def global_lipschitz(fm):
    """A Lipschitz bound for one atom over its whole space.

    Affine atoms are exact (|a|); circle waves take a fine-grid sup of |f'|
    plus the derivative's own modulus of continuity over one grid step;
    matrix actions use the bound ||M||^2 ||M^-1||^2, which dominates the
    exact projective derivative norm everywhere.
    """
    if fm.family == "affine":
        return abs(fm.params[0])
    if fm.family == "wave":
        rho, c, k = fm.params
        n = 8192
        xs = np.arange(n) / n
        grid_max = float(np.abs(1.0 + c * np.cos(2 * np.pi * k * xs)).max())
        correction = abs(c) * (2 * np.pi * k) * (1.0 / n) / 2
        return grid_max + correction
    if fm.family == "projective":
        return fm.lipschitz_bound
    if fm.lipschitz_bound is not None:
        return fm.lipschitz_bound
    raise ValueError("tabulated atom has no Lipschitz bound")


def evolve(
    system,
    symbols,
    x0,
    *,
    collect_log_deriv=False,
    marks=None,
    step_callback=None,
):
    """Advance many chains at once.

    symbols: (chains, n) integer matrix, one row per chain.
    x0: scalar / (chains,) for 1-D spaces; (m,) / (chains, m) projective.

    Returns a dict with "final" positions, and when requested "logL" maps
    each mark n to the accumulated log local Lipschitz factor at that step
    and "pos" maps marks to position snapshots. ``step_callback(k, X)`` sees
    positions after step k.
    """
    space = system.space
    symbols = np.asarray(symbols)
    chains, n = symbols.shape
    projective = isinstance(space, Projective)
    if projective:
        X = np.asarray(x0, dtype=float)
        if X.ndim == 1:
            X = np.tile(X / np.linalg.norm(X), (chains, 1))
        else:
            X = X / np.linalg.norm(X, axis=1, keepdims=True)
    else:
        X = np.full(chains, float(x0)) if np.ndim(x0) == 0 else np.asarray(
            x0, dtype=float
        ).copy()
    marks = sorted(marks) if marks else []
    logL = np.zeros(chains) if collect_log_deriv else None
    out = {"logL": {}, "pos": {}}
    is_interval = isinstance(space, Interval)
    for k in range(n):
        col = symbols[:, k]
        for t in range(len(system.maps)):
            mask = col == t
            if not mask.any():
                continue
            fm = system.maps[t]
            xs = X[mask]
            if collect_log_deriv:
                logL[mask] += fm.dlog_batch(xs)
            ys = fm.apply_batch(xs)
            if is_interval:
                if ((ys < space.a - _IN_SPACE_TOL) | (ys > space.b + _IN_SPACE_TOL)).any():
                    raise EscapedSpace(f"batch orbit left [{space.a}, {space.b}]")
                ys = np.clip(ys, space.a, space.b)
            X[mask] = ys
        if step_callback is not None:
            step_callback(k, X)
        if marks and k + 1 == marks[0]:
            marks.pop(0)
            if collect_log_deriv:
                out["logL"][k + 1] = logL.copy()
            out["pos"][k + 1] = X.copy()
    out["final"] = X
    if collect_log_deriv:
        out["logL"][n] = logL if n not in out["logL"] else out["logL"][n]
    return out
