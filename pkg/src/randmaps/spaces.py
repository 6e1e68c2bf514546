"""State spaces: circle, interval, and real projective space.

Points are plain floats (circle, interval) or unit vectors as numpy arrays
(projective). Projective points are kept in a canonical form: unit norm with
the first nonzero coordinate positive, so antipodal representatives compare
equal and dictionaries of results stay stable.

Distances: the circle uses the shorter arc of a circumference-1 circle, the
interval uses |p - q|, and projective space uses the exterior-product
distance ||x ^ y|| = |sin(angle)|, which is a metric bounded by 1.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, UnsupportedResolution
from . import rng

NET_CAP = 65536
_AUDIT_POINTS = 10_000


@dataclass(frozen=True)
class Circle:
    """The circle R/Z with the shorter-arc metric (diameter 1/2)."""

    kind: str = "circle"

    @property
    def diameter(self):
        return 0.5

    def canonical(self, p):
        return float(p) % 1.0

    def contains(self, p, tol=1e-9):
        return np.ndim(p) == 0

    def distance(self, p, q):
        _require_scalar(p, q)
        d = abs(float(p) - float(q)) % 1.0
        return min(d, 1.0 - d)

    def epsilon_net(self, eps, cap=NET_CAP):
        n = _grid_count(1.0, eps, cap)
        return [k / n for k in range(n)]

    def random_points(self, gen, count):
        return list(gen.random(count))


@dataclass(frozen=True)
class Interval:
    """A compact interval [a, b] with the euclidean metric."""

    a: float = 0.0
    b: float = 1.0
    kind: str = "interval"

    def __post_init__(self):
        if not self.b >= self.a:
            raise ValueError(f"interval needs a <= b, got [{self.a}, {self.b}]")

    @property
    def diameter(self):
        return self.b - self.a

    def canonical(self, p):
        return float(p)

    def contains(self, p, tol=1e-9):
        if np.ndim(p) != 0:
            return False
        return self.a - tol <= float(p) <= self.b + tol

    def clamp(self, p):
        return min(max(float(p), self.a), self.b)

    def distance(self, p, q):
        _require_scalar(p, q)
        return abs(float(p) - float(q))

    def epsilon_net(self, eps, cap=NET_CAP):
        if self.b == self.a:
            return [self.a]
        n = _grid_count(self.b - self.a, eps, cap)
        return [self.a + k * (self.b - self.a) / n for k in range(n + 1)]

    def random_points(self, gen, count):
        return list(self.a + (self.b - self.a) * gen.random(count))


@dataclass(frozen=True)
class Projective:
    """Real projective space P(R^m): lines through the origin.

    Points are canonical unit representatives; the distance between lines
    spanned by unit vectors x, y is ||x ^ y|| = sqrt(1 - <x, y>^2).
    """

    m: int = 2
    kind: str = "projective"

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("projective space needs dimension m >= 2")

    @property
    def diameter(self):
        return 1.0

    def canonical(self, p):
        v = np.asarray(p, dtype=float)
        if v.shape != (self.m,):
            raise DimensionMismatch(
                f"expected a vector of length {self.m}, got shape {v.shape}"
            )
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise ValueError("zero vector does not represent a line")
        v = v / norm
        for x in v:
            if abs(x) > 1e-12:
                if x < 0:
                    v = -v
                break
        return v

    def contains(self, p, tol=1e-9):
        v = np.asarray(p, dtype=float)
        return v.shape == (self.m,) and abs(np.linalg.norm(v) - 1.0) <= 1e-12 + tol

    def distance(self, p, q):
        x = np.asarray(p, dtype=float)
        y = np.asarray(q, dtype=float)
        if x.shape != (self.m,) or y.shape != (self.m,):
            raise DimensionMismatch(
                f"expected vectors of length {self.m}, got {x.shape} and {y.shape}"
            )
        c = float(np.clip(x @ y, -1.0, 1.0))
        return float(np.sqrt(max(0.0, 1.0 - c * c)))

    def epsilon_net(self, eps, cap=NET_CAP):
        if self.m == 2:
            n = _grid_count(np.pi, eps, cap)
            return [
                self.canonical(np.array([np.cos(t), np.sin(t)]))
                for t in (np.pi * k / n for k in range(n))
            ]
        return self._random_net(eps, cap)

    def random_points(self, gen, count):
        vs = gen.standard_normal((count, self.m))
        return [self.canonical(v) for v in vs]

    def _random_net(self, eps, cap):
        # Greedy 0.6*eps-separated cover of a dense seeded sample, then an
        # independent audit pass. Separation bounds the size by the packing
        # number; the 0.4*eps margin makes fresh-sample gaps vanishingly
        # rare. Uncovered audit points get added and re-audited.
        gen = rng.stream(0xA5E7, rng.NET, self.m, _bits(eps))
        pts = np.array(self.random_points(gen, 3 * _AUDIT_POINTS))
        net = _greedy_cover(pts, 0.6 * eps, cap)
        for _ in range(4):
            audit = np.array(self.random_points(gen, _AUDIT_POINTS))
            dist = _line_distances(audit, net)
            bad = dist > 0.9 * eps
            if not bad.any():
                return [self.canonical(v) for v in net]
            net = _greedy_cover(
                np.vstack([net, audit[bad]]), 0.6 * eps, cap, keep=len(net)
            )
        raise UnsupportedResolution(
            f"covering audit failed to stabilize at eps={eps} in P(R^{self.m})"
        )


def _require_scalar(*points):
    for p in points:
        if np.ndim(p) != 0:
            raise DimensionMismatch(f"expected a scalar point, got shape {np.shape(p)}")


def _grid_count(length, eps, cap):
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = int(np.ceil(length / eps))
    if n + 1 > cap:
        raise UnsupportedResolution(f"net of {n + 1} points exceeds the cap {cap}")
    return n


def _bits(x):
    return int(np.float64(x).view(np.uint64))


def _line_distances(points, net):
    """Distance from each point (rows) to the nearest net line."""
    cos = np.abs(points @ np.asarray(net).T)
    best = np.clip(cos.max(axis=1), -1.0, 1.0)
    return np.sqrt(np.maximum(0.0, 1.0 - best * best))


def _greedy_cover(points, sep, cap, keep=0):
    net = [points[i] for i in range(keep)]
    for p in points[keep:]:
        if not net:
            net.append(p)
            continue
        cos = np.abs(np.asarray(net) @ p)
        d2 = 1.0 - min(1.0, float(cos.max())) ** 2
        if d2 > sep * sep:
            net.append(p)
            if len(net) > cap:
                raise UnsupportedResolution(
                    f"net of {len(net)} points exceeds the cap {cap}"
                )
    return np.asarray(net)


def distance(space, p, q):
    """Metric of ``space`` evaluated on two points."""
    return space.distance(p, q)


def epsilon_net(space, eps, cap=NET_CAP):
    """A finite net with covering radius at most eps.

    Grids are uniform on 1-D spaces; P(R^m) with m >= 3 uses a seeded greedy
    cover whose coverage is audited against fresh random lines.
    """
    return space.epsilon_net(eps, cap=cap)


def distance_matrix(space, points):
    """All pairwise distances among a list of points."""
    n = len(points)
    if isinstance(space, Projective):
        arr = np.asarray(points, dtype=float)
        cos = np.clip(np.abs(arr @ arr.T), 0.0, 1.0)
        return np.sqrt(np.maximum(0.0, 1.0 - cos * cos))
    arr = np.asarray(points, dtype=float)
    diff = np.abs(arr[:, None] - arr[None, :])
    if isinstance(space, Circle):
        diff = diff % 1.0
        diff = np.minimum(diff, 1.0 - diff)
    return diff


def from_config(node):
    """Build a space from a plain dict (CLI configs)."""
    kind = node.get("kind")
    if kind == "circle":
        return Circle()
    if kind == "interval":
        return Interval(float(node.get("a", 0.0)), float(node.get("b", 1.0)))
    if kind == "projective":
        return Projective(int(node.get("m", 2)))
    raise ValueError(f"unknown space kind {kind!r}")
