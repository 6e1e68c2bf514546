"""Exception types shared across the package.

Every failure mode that an operation reports by contract gets its own class,
so callers (and the CLI exit-code logic) can catch them by name instead of
parsing messages.
"""


class RandmapsError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(RandmapsError):
    """A point's coordinates do not match the space it was used with."""


class UnsupportedResolution(RandmapsError):
    """An epsilon-net would exceed the configured size cap."""


class EscapedSpace(RandmapsError):
    """An evaluated map left its space by more than the tolerance."""


class ZeroDerivative(RandmapsError):
    """A local Lipschitz factor vanished along the orbit."""


class SingularProduct(RandmapsError):
    """A renormalized matrix product collapsed below working precision."""


class NotInvariant(RandmapsError):
    """A subspace fails invariance under some atom.

    Carries ``atom_index`` and ``residual``.
    """

    def __init__(self, atom_index, residual):
        self.atom_index = atom_index
        self.residual = residual
        super().__init__(
            f"atom {atom_index} maps the subspace out by residual {residual:.3e}"
        )


class ShapeMismatch(RandmapsError):
    """Two cocycles cannot be compared atom by atom."""


class NoConvergence(RandmapsError):
    """An iterative solve exhausted its budget before reaching tolerance."""


class SubadditivityViolated(RandmapsError):
    """A sequence handed to the Kingman harness is not P-subadditive.

    Carries the worst offending ``(n, m, state, gap)``.
    """

    def __init__(self, n, m, state, gap):
        self.n = n
        self.m = m
        self.state = state
        self.gap = gap
        super().__init__(
            f"phi_(n+m) > phi_n + P^n phi_m at n={n}, m={m}, state={state} "
            f"by {gap:.3e}"
        )


class NotInvariantMeasure(RandmapsError):
    """A vector handed in as a stationary measure is not one."""


class WitnessNotFound(RandmapsError):
    """A search budget ran out without a witness (not a disproof)."""

    def __init__(self, message, best_q=None):
        self.best_q = best_q
        super().__init__(message)


class DegenerateVariance(RandmapsError):
    """A normalized-fluctuation fit was requested on degenerate samples."""


class InsufficientTailMass(RandmapsError):
    """No (n, eps) cell kept enough tail hits to fit a rate."""


class NotInvertibleAt(RandmapsError):
    """A swept cocycle stops being invertible at some parameter value."""

    def __init__(self, t, detail=""):
        self.t = t
        super().__init__(f"atoms not invertible at t={t} {detail}".rstrip())


class NotDiffeomorphismAt(RandmapsError):
    """A swept circle family stops being a diffeomorphism at some t."""

    def __init__(self, t, detail=""):
        self.t = t
        super().__init__(f"family not a diffeomorphism at t={t} {detail}".rstrip())


class ConfigInvalid(RandmapsError):
    """A run configuration failed validation.

    ``path`` is the dotted field path of the offending entry.
    """

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class ReportUnreadable(RandmapsError):
    """A replay target is missing, malformed, or lacks the config echo."""
