"""Linear cocycles: i.i.d. products of invertible matrices.

Products are accumulated in renormalized form (the running matrix is rescaled
to spectral norm 1 after every multiply, with the log of the scale kept
separately), so words of any length stay inside floating-point range. The
top exponent can be estimated three independent ways: renormalized products,
QR re-orthonormalization for the full spectrum, and the stationary average
of log ||A x|| over the induced chain on lines.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NotInvariant, ShapeMismatch, SingularProduct
from .spaces import Projective
from .systems import RandomMapSystem, projective_of_matrix, sample_word
from .util import batch_means_stderr, mean_and_stderr
from . import rng

MAX_DIMENSION = 8
_MIN_SINGULAR = 1e-10


@dataclass(frozen=True, eq=False)
class Cocycle:
    """Invertible matrix atoms with sampling weights."""

    atoms: tuple
    weights: np.ndarray = None

    def __post_init__(self):
        atoms = tuple(np.asarray(A, dtype=float) for A in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not atoms:
            raise ValueError("a cocycle needs at least one atom")
        m = atoms[0].shape[0]
        if not 2 <= m <= MAX_DIMENSION:
            raise ValueError(f"dimension must be between 2 and {MAX_DIMENSION}")
        for i, A in enumerate(atoms):
            if A.shape != (m, m):
                raise ValueError(f"atom {i} has shape {A.shape}, expected ({m},{m})")
            if np.linalg.svd(A, compute_uv=False)[-1] <= _MIN_SINGULAR:
                raise ValueError(f"atom {i} is numerically singular")
        w = (
            np.full(len(atoms), 1.0 / len(atoms))
            if self.weights is None
            else np.asarray(self.weights, dtype=float)
        )
        if w.shape != (len(atoms),) or (w < 0).any():
            raise ValueError("weights must be nonnegative, one per atom")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", w)

    @property
    def dimension(self):
        return self.atoms[0].shape[0]

    # word-sampling duck type shared with RandomMapSystem
    @property
    def maps(self):
        return self.atoms

    @property
    def cumulative_weights(self):
        return np.cumsum(self.weights)

    def mean_log_abs_det(self):
        return float(
            sum(
                w * np.log(abs(np.linalg.det(A)))
                for w, A in zip(self.weights, self.atoms)
            )
        )


@dataclass(frozen=True)
class LogProduct:
    """A matrix product in renormalized form: product = exp(log_scale) * matrix,
    with ||matrix||_2 = 1."""

    matrix: np.ndarray
    log_scale: float


@dataclass(frozen=True)
class SpectrumEstimate:
    exponents: tuple
    stderrs: tuple
    n: int
    trials: int
    seed: int


@dataclass(frozen=True)
class FurstenbergEstimate:
    value: float
    stderr: float
    burn_in: int
    samples: int
    seed: int


def _symbols(cocycle, word):
    return word.symbols if hasattr(word, "symbols") else tuple(word)


def log_product(cocycle, word):
    """Renormalized product along a word."""
    P = np.eye(cocycle.dimension)
    log_scale = 0.0
    for s in _symbols(cocycle, word):
        P = cocycle.atoms[s] @ P
        norm = np.linalg.norm(P, 2)
        if not norm > 1e-300:
            raise SingularProduct("product collapsed below working precision")
        P = P / norm
        log_scale += np.log(norm)
    return LogProduct(P, float(log_scale))


def log_vector_growth(cocycle, word, x):
    """log(||A^n x|| / ||x||) via unit-vector iteration."""
    v = np.asarray(x, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("zero vector has no growth rate")
    v = v / norm
    total = 0.0
    for s in _symbols(cocycle, word):
        v = cocycle.atoms[s] @ v
        n = np.linalg.norm(v)
        total += np.log(n)
        v = v / n
    return float(total)


def vector_growth_batch(cocycle, symbols, x0, marks=None):
    """log ||A^n x0|| for many chains at once; snapshots at marks.

    symbols: (chains, n); x0 a single vector or (chains, m). Returns
    {mark: array}; the final step is always included.
    """
    symbols = np.asarray(symbols)
    chains, n = symbols.shape
    V = np.asarray(x0, dtype=float)
    if V.ndim == 1:
        V = np.tile(V / np.linalg.norm(V), (chains, 1))
    else:
        V = V / np.linalg.norm(V, axis=1, keepdims=True)
    marks = sorted(set(marks) | {n}) if marks else [n]
    logS = np.zeros(chains)
    out = {}
    for k in range(n):
        col = symbols[:, k]
        for t, A in enumerate(cocycle.atoms):
            mask = col == t
            if not mask.any():
                continue
            W = V[mask] @ A.T
            norms = np.linalg.norm(W, axis=1)
            logS[mask] += np.log(norms)
            V[mask] = W / norms[:, None]
        if k + 1 == marks[0]:
            marks.pop(0)
            out[k + 1] = logS.copy()
    return out


def exterior2_norm(M):
    """Norm of the induced map on 2-vectors: the product of the two largest
    singular values."""
    s = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    return float(s[0] * s[1])


def lyapunov_spectrum(cocycle, n, trials, seed):
    """All exponents via QR re-orthonormalization.

    Each trial runs its own word; exponents are per-trial means of the log
    diagonal of R, averaged across trials with across-trial standard errors
    (a single trial falls back to batch means along its own orbit).
    """
    if n < 10:
        raise ValueError("need n >= 10")
    if trials < 1:
        raise ValueError("need trials >= 1")
    m = cocycle.dimension
    per_trial = np.empty((trials, m))
    increments = None
    for trial in range(trials):
        word = sample_word(cocycle, n, seed, trial)
        Q = np.eye(m)
        sums = np.zeros(m)
        if trials == 1:
            increments = np.empty((n, m))
        for k, s in enumerate(word.symbols):
            Q, R = np.linalg.qr(cocycle.atoms[s] @ Q)
            d = np.sign(np.diag(R))
            d[d == 0] = 1.0
            Q = Q * d
            logs = np.log(np.abs(np.diag(R)))
            sums += logs
            if increments is not None:
                increments[k] = logs
        per_trial[trial] = sums / n
    means = per_trial.mean(axis=0)
    if trials >= 2:
        errs = per_trial.std(axis=0, ddof=1) / np.sqrt(trials)
    else:
        errs = np.array(
            [batch_means_stderr(increments[:, j], 8) / 1.0 for j in range(m)]
        )
    order = np.argsort(means)[::-1]
    return SpectrumEstimate(
        tuple(float(means[j]) for j in order),
        tuple(float(errs[j]) for j in order),
        n,
        trials,
        seed,
    )


def projective_system(cocycle):
    """The induced random map system on lines."""
    atoms = tuple(projective_of_matrix(A) for A in cocycle.atoms)
    return RandomMapSystem(Projective(cocycle.dimension), atoms, cocycle.weights)


def restrict(cocycle, basis):
    """Restrict to an invariant subspace spanned by ``basis`` vectors.

    The basis is orthonormalized; each atom must map it into itself within
    residual 1e-9, else NotInvariant reports the worst atom.
    """
    B = np.column_stack([np.asarray(b, dtype=float) for b in basis])
    Q, R = np.linalg.qr(B)
    keep = [j for j in range(B.shape[1]) if abs(R[j, j]) > 1e-12]
    Q = Q[:, keep]
    d = Q.shape[1]
    if d == 0:
        raise ValueError("basis spans nothing")
    restricted = []
    for i, A in enumerate(cocycle.atoms):
        img = A @ Q
        resid = img - Q @ (Q.T @ img)
        worst = float(np.linalg.norm(resid, axis=0).max())
        if worst > 1e-9:
            raise NotInvariant(i, worst)
        restricted.append(Q.T @ img)
    return Cocycle(tuple(restricted), cocycle.weights)


def cocycle_distance(a, b, include_inverses=False):
    """Expected spectral-norm distance sum_k w_k ||A_k - B_k|| between two
    cocycles over the same symbols and weights; the +/- variant adds the
    inverse differences."""
    if a.dimension != b.dimension or len(a.atoms) != len(b.atoms):
        raise ShapeMismatch("cocycles differ in dimension or atom count")
    if not np.allclose(a.weights, b.weights, atol=1e-12, rtol=0.0):
        raise ShapeMismatch("cocycles carry different weights")
    total = 0.0
    for w, A, B in zip(a.weights, a.atoms, b.atoms):
        total += w * np.linalg.norm(A - B, 2)
        if include_inverses:
            total += w * np.linalg.norm(np.linalg.inv(A) - np.linalg.inv(B), 2)
    return float(total)


def furstenberg_estimate(cocycle, burn_in, samples, seed):
    """Top exponent as the stationary average of log ||A x|| on lines.

    One chain from a seeded random start; stderr from contiguous batch
    means, which absorbs the chain's autocorrelation.
    """
    if samples < 100:
        raise ValueError("need samples >= 100")
    m = cocycle.dimension
    start = rng.stream(seed, rng.CHAIN_START, 0).standard_normal(m)
    x = start / np.linalg.norm(start)
    gen = rng.stream(seed, rng.WORDS, 0)
    u = gen.random(burn_in + samples)
    cum = cocycle.cumulative_weights
    symbols = np.clip(
        np.searchsorted(cum, u, side="right"), 0, len(cocycle.atoms) - 1
    )
    logs = np.empty(samples)
    for k, s in enumerate(symbols):
        y = cocycle.atoms[s] @ x
        norm = np.linalg.norm(y)
        if k >= burn_in:
            logs[k - burn_in] = np.log(norm)
        x = y / norm
    value, _ = mean_and_stderr(logs)
    return FurstenbergEstimate(
        value, batch_means_stderr(logs, 32), burn_in, samples, seed
    )
