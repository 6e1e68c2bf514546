"""Subadditive sequences over finite Markov chains, with exact limit checks.

A row-stochastic matrix ``P`` acts on state functions (vectors) by ``P @ phi``
and on measures (probability vectors) by ``mu @ P``. A sequence ``phi_1,
phi_2, ...`` is P-subadditive when ``phi_{n+m} <= phi_n + P^n phi_m``
entrywise, and P-additive when equality holds. For such sequences the growth
rate ``max_x phi_n(x) / n`` has a limit that can be recovered four ways:
as the tail of the max curve, as the best ergodic average, as the largest
per-state upper limit, and as the infimum of the max curve. This module
builds sequences, checks subadditivity exhaustively, and compares the four
routes on a finite horizon.

Everything here is plain matrix arithmetic with no randomness; the caps
(512 states, 4096 terms) keep the exhaustive pair check affordable.
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import NotInvariantMeasure, SubadditivityViolated

MAX_STATES = 512
MAX_TERMS = 4096

# any per-step average below this is reported as a divergence flag rather
# than a value claim; finite vectors cannot certify a -inf limit
DIVERGENCE_FLOOR = -1.0e6

_ROW_SUM_TOL = 1e-12
_SUBADDITIVE_TOL = 1e-9
_INVARIANCE_TOL = 1e-10


@dataclass(frozen=True)
class SubadditiveSequence:
    """Terms ``phi_1 .. phi_N`` stored as the rows of an (N, S) array."""

    phi: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.phi, dtype=float)
        if arr.ndim != 2:
            raise ValueError("phi must be a 2-D (terms, states) array")
        if not (1 <= arr.shape[0] <= MAX_TERMS):
            raise ValueError(f"need 1..{MAX_TERMS} terms, got {arr.shape[0]}")
        if not (1 <= arr.shape[1] <= MAX_STATES):
            raise ValueError(f"need 1..{MAX_STATES} states, got {arr.shape[1]}")
        if not np.isfinite(arr).all():
            raise ValueError("phi must be finite")
        object.__setattr__(self, "phi", arr)

    @property
    def n_terms(self):
        return self.phi.shape[0]

    @property
    def n_states(self):
        return self.phi.shape[1]

    def term(self, n):
        """The vector phi_n (1-indexed)."""
        if not 1 <= n <= self.n_terms:
            raise ValueError(f"term index {n} outside 1..{self.n_terms}")
        return self.phi[n - 1]


@dataclass(frozen=True)
class SubadditivityCheck:
    """Worst residual of ``phi_(n+m) - phi_n - P^n phi_m`` over stored pairs."""

    ok: bool
    residual: float
    n: int
    m: int
    state: int
    max_deviation: float


@dataclass(frozen=True)
class UniformLimitReport:
    """Four routes to the top growth rate and their agreement."""

    via_max_limit: float
    via_ergodic_max: float
    via_pointwise_sup: float
    via_inf_formula: float
    tolerance: float
    spread: float
    agree: bool
    agreement: tuple
    classes: tuple
    ergodic_values: tuple
    additive: bool
    additive_identity_gap: float | None
    floor_hit: bool


@dataclass(frozen=True)
class PointwiseLimitReport:
    """Per-state empirical limit against the ergodic average."""

    g_hat: np.ndarray
    lambda_mu: float
    mean_gap: float
    mean_ok: bool
    ergodic: bool
    constancy_gap: float | None
    constancy_ok: bool | None
    tolerance: float
    floor_hit: bool


def _operator_matrix(P):
    M = np.asarray(P, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("P must be a square matrix")
    if M.shape[0] > MAX_STATES:
        raise ValueError(f"at most {MAX_STATES} states, got {M.shape[0]}")
    if not np.isfinite(M).all():
        raise ValueError("P must be finite")
    if M.min() < 0.0:
        raise ValueError("P must be entrywise nonnegative")
    if np.abs(M.sum(axis=1) - 1.0).max() > _ROW_SUM_TOL:
        raise ValueError("rows of P must sum to 1")
    return M


def _sequence_of(seq):
    if isinstance(seq, SubadditiveSequence):
        return seq
    return SubadditiveSequence(np.asarray(seq, dtype=float))


def build_additive(P, phi1, N):
    """Accumulate ``phi_n = phi_1 + P phi_1 + ... + P^(n-1) phi_1``.

    The result satisfies the subadditivity inequality with equality, so it
    is the canonical probe for the harness: every limit formula collapses
    to an average of ``phi_1`` against a stationary vector.
    """
    M = _operator_matrix(P)
    first = np.asarray(phi1, dtype=float)
    if first.shape != (M.shape[0],):
        raise ValueError("phi1 length must match the state count")
    if not np.isfinite(first).all():
        raise ValueError("phi1 must be finite")
    if not 1 <= N <= MAX_TERMS:
        raise ValueError(f"N must be in 1..{MAX_TERMS}")
    rows = np.empty((N, M.shape[0]))
    rows[0] = first
    term = first
    for k in range(1, N):
        term = M @ term
        rows[k] = rows[k - 1] + term
    return SubadditiveSequence(rows)


def _scan_pairs(M, phi):
    """Worst signed residual and location over all stored n + m <= N."""
    N = phi.shape[0]
    worst = -np.inf
    worst_at = (1, 1, 0)
    max_dev = 0.0
    propagated = phi.T.copy()
    for n in range(1, N):
        propagated = M @ propagated
        # column m-1 now holds P^n phi_m; compare against phi_(n+m)
        residual = phi[n:].T - phi[n - 1][:, None] - propagated[:, : N - n]
        max_dev = max(max_dev, float(np.abs(residual).max()))
        flat = int(residual.argmax())
        state, pair = divmod(flat, residual.shape[1])
        value = float(residual[state, pair])
        if value > worst:
            worst = value
            worst_at = (n, pair + 1, state)
    if N == 1:
        worst = 0.0
    return worst, worst_at, max_dev


def check_subadditivity(P, seq):
    """Exhaustively test ``phi_(n+m) <= phi_n + P^n phi_m`` over the horizon."""
    M = _operator_matrix(P)
    seq = _sequence_of(seq)
    if seq.n_states != M.shape[0]:
        raise ValueError("sequence and P disagree on the state count")
    worst, (n, m, state), max_dev = _scan_pairs(M, seq.phi)
    return SubadditivityCheck(
        ok=worst <= _SUBADDITIVE_TOL,
        residual=worst,
        n=n,
        m=m,
        state=state,
        max_deviation=max_dev,
    )


def recurrent_classes(P):
    """Closed communicating classes and their stationary vectors.

    Returns (classes, measures): sorted index tuples and full-length
    probability vectors supported on each class. These are exactly the
    ergodic stationary measures of the chain.
    """
    M = _operator_matrix(P)
    n_comp, labels = connected_components(M > 0.0, connection="strong")
    classes = []
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        inside = np.zeros(M.shape[0], dtype=bool)
        inside[members] = True
        if not (M[members][:, ~inside] > 0.0).any():
            classes.append(members)
    classes.sort(key=lambda idx: int(idx[0]))
    measures = []
    for members in classes:
        block = M[np.ix_(members, members)]
        k = len(members)
        if k == 1:
            local = np.ones(1)
        else:
            A = np.vstack([block.T - np.eye(k), np.ones(k)])
            b = np.zeros(k + 1)
            b[-1] = 1.0
            local, *_ = np.linalg.lstsq(A, b, rcond=None)
            # one extra application tightens symmetric chains to exact
            # fixed points before normalizing
            local = local @ block
            local = local / local.sum()
        mu = np.zeros(M.shape[0])
        mu[members] = local
        measures.append(mu)
    return (
        tuple(tuple(int(i) for i in members) for members in classes),
        tuple(measures),
    )


def _ratio_table(phi):
    n = np.arange(1, phi.shape[0] + 1, dtype=float)
    return phi / n[:, None]


def verify_uniform_kingman(P, seq, tail_window):
    """Compare four finite-horizon routes to the top growth rate.

    The routes: the mean of ``max_x phi_n(x)/n`` over the last
    ``tail_window`` terms; the best ergodic average ``min_n <phi_n, mu>/n``
    maximized over recurrent classes; the largest per-state tail maximum;
    and the infimum of the max curve over the whole horizon. All four agree
    within ``10/N`` for a genuinely subadditive sequence. When the sequence
    is additive (equality throughout), the ergodic route must also match
    ``max_mu <phi_1, mu>`` with no truncation slack at all.
    """
    M = _operator_matrix(P)
    seq = _sequence_of(seq)
    if seq.n_states != M.shape[0]:
        raise ValueError("sequence and P disagree on the state count")
    N = seq.n_terms
    if not 1 <= tail_window <= N:
        raise ValueError("tail_window must be in 1..N")
    worst, (n, m, state), max_dev = _scan_pairs(M, seq.phi)
    if worst > _SUBADDITIVE_TOL:
        raise SubadditivityViolated(n, m, state, worst)
    additive = max_dev <= _SUBADDITIVE_TOL

    ratios = _ratio_table(seq.phi)
    max_curve = ratios.max(axis=1)
    via_max_limit = float(max_curve[N - tail_window :].mean())
    via_inf_formula = float(max_curve.min())
    via_pointwise_sup = float(ratios[N - tail_window :].max(axis=0).max())

    classes, measures = recurrent_classes(M)
    steps = np.arange(1, N + 1, dtype=float)
    ergodic_values = tuple(
        float(((seq.phi @ mu) / steps).min()) for mu in measures
    )
    via_ergodic_max = max(ergodic_values)

    values = (
        via_max_limit,
        via_ergodic_max,
        via_pointwise_sup,
        via_inf_formula,
    )
    tolerance = 10.0 / N
    spread = max(values) - min(values)
    agreement = tuple(
        abs(v - via_max_limit) <= tolerance for v in values[1:]
    )
    identity_gap = None
    if additive:
        first_averages = max(float(mu @ seq.phi[0]) for mu in measures)
        identity_gap = abs(via_ergodic_max - first_averages)
    return UniformLimitReport(
        via_max_limit=via_max_limit,
        via_ergodic_max=via_ergodic_max,
        via_pointwise_sup=via_pointwise_sup,
        via_inf_formula=via_inf_formula,
        tolerance=tolerance,
        spread=float(spread),
        agree=spread <= tolerance,
        agreement=agreement,
        classes=classes,
        ergodic_values=ergodic_values,
        additive=additive,
        additive_identity_gap=identity_gap,
        floor_hit=bool(ratios.min() < DIVERGENCE_FLOOR),
    )


def verify_pointwise_kingman(P, seq, mu):
    """Check the per-state limit against the ergodic average of ``mu``.

    ``g_hat = phi_N / N`` is the empirical limit function. Its mean under
    ``mu`` must match ``min_n <phi_n, mu>/n`` within ``10/N``, and when
    ``mu`` is ergodic (supported on a single recurrent class) ``g_hat``
    must be constant on that support to the same slack.
    """
    M = _operator_matrix(P)
    seq = _sequence_of(seq)
    if seq.n_states != M.shape[0]:
        raise ValueError("sequence and P disagree on the state count")
    vec = np.asarray(mu, dtype=float)
    if vec.shape != (M.shape[0],):
        raise ValueError("mu length must match the state count")
    if not np.isfinite(vec).all() or vec.min() < 0.0:
        raise ValueError("mu must be a nonnegative finite vector")
    if abs(vec.sum() - 1.0) > 1e-9:
        raise ValueError("mu must sum to 1")
    invariance = float(np.abs(vec @ M - vec).max())
    if invariance > _INVARIANCE_TOL:
        raise NotInvariantMeasure(
            f"mu @ P differs from mu by {invariance:.3e}"
        )
    N = seq.n_terms
    tolerance = 10.0 / N
    g_hat = seq.phi[N - 1] / N
    steps = np.arange(1, N + 1, dtype=float)
    lambda_mu = float(((seq.phi @ vec) / steps).min())
    mean_gap = abs(float(g_hat @ vec) - lambda_mu)

    classes, _ = recurrent_classes(M)
    support = np.flatnonzero(vec > 0.0)
    ergodic = any(set(support) <= set(cls) for cls in classes)
    constancy_gap = None
    constancy_ok = None
    if ergodic:
        on_support = g_hat[support]
        constancy_gap = float(on_support.max() - on_support.min())
        constancy_ok = constancy_gap <= tolerance
    return PointwiseLimitReport(
        g_hat=g_hat,
        lambda_mu=lambda_mu,
        mean_gap=float(mean_gap),
        mean_ok=mean_gap <= tolerance,
        ergodic=ergodic,
        constancy_gap=constancy_gap,
        constancy_ok=constancy_ok,
        tolerance=tolerance,
        floor_hit=bool(_ratio_table(seq.phi).min() < DIVERGENCE_FLOOR),
    )


BUILTIN_CHAINS = ("identity", "uniform", "absorbing")


def builtin_chain(name):
    """A named small chain with its standard first term.

    ``identity``: two frozen states, phi1 separating them. ``uniform``:
    one mixing class whose average of phi1 vanishes. ``absorbing``: one
    transient state feeding two absorbing states with different rates.
    """
    if name == "identity":
        return np.eye(2), np.array([1.0, -1.0])
    if name == "uniform":
        return np.full((2, 2), 0.5), np.array([1.0, -1.0])
    if name == "absorbing":
        P = np.array([[0.0, 0.5, 0.5], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        return P, np.array([0.0, 2.0, -1.0])
    raise ValueError(f"unknown chain {name!r}; choose from {BUILTIN_CHAINS}")
