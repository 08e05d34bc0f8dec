"""Finite doubling metric measure spaces and their ball/volume geometry.

A space is a finite point set {0, ..., N-1} together with a symmetric
distance matrix and strictly positive per-point weights.  Everything else
in the toolkit (kernels, dyadic grids, norms) lives on top of one of
these.  Distances are stored dense; the intended scale is N <= 4096.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "FiniteMetricMeasureSpace",
    "make_path_space",
    "save_space",
    "load_space",
]

_TRIANGLE_EXHAUSTIVE_LIMIT = 256
_TRIANGLE_SAMPLES = 200_000


class FiniteMetricMeasureSpace:
    """Finite metric space with a positive weight (measure) on each point.

    Parameters
    ----------
    dist : (N, N) array
        Symmetric nonnegative distances with zero diagonal, satisfying
        the triangle inequality (checked exhaustively for N <= 256,
        on a random sample of triples above that).
    weight : (N,) array
        Strictly positive point masses.
    tag : str, optional
        Closed-form construction tag (e.g. ``"path:64"``) used by the
        text serialization for bit-exact round trips.
    """

    def __init__(self, dist, weight, tag: str | None = None):
        dist = np.array(dist, dtype=float)
        weight = np.array(weight, dtype=float)
        if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
            raise ValueError("distance matrix must be square")
        n = dist.shape[0]
        if n < 1:
            raise ValueError("space needs at least one point")
        if weight.shape != (n,):
            raise ValueError("weight vector length must match distance matrix")
        if not np.all(np.isfinite(dist)) or np.any(dist < 0):
            raise ValueError("distances must be finite and nonnegative")
        if np.any(np.diag(dist) != 0):
            raise ValueError("distance matrix must have zero diagonal")
        if not np.array_equal(dist, dist.T):
            raise ValueError("distance matrix must be symmetric")
        off = dist[~np.eye(n, dtype=bool)]
        if off.size and np.any(off <= 0):
            raise ValueError("distinct points must have positive distance")
        if not np.all(np.isfinite(weight)) or np.any(weight <= 0):
            raise ValueError("weights must be finite and strictly positive")
        _check_triangle(dist)

        self.dist = dist
        self.weight = weight
        self.tag = tag
        self.n_points = n
        self.total_mass = float(weight.sum())
        self.diameter = float(dist.max()) if n > 1 else 0.0
        self.min_gap = float(off.min()) if off.size else 0.0

        # per-point sorted distances + weight prefix sums drive all
        # volume queries: V(u, t) = sum of weights with d(u, v) < t
        order = np.argsort(dist, axis=1, kind="stable")
        self._sorted_dist = np.take_along_axis(dist, order, axis=1)
        self._cum_weight = np.cumsum(weight[order], axis=1)
        self._doubling: float | None = None

    # -- balls and volumes -------------------------------------------------
    def _check_point(self, u) -> int:
        u = int(u)
        if not 0 <= u < self.n_points:
            raise ValueError(f"point index {u} outside 0..{self.n_points - 1}")
        return u

    def ball(self, u, t: float) -> np.ndarray:
        """Open ball {v : d(u, v) < t} as a sorted index array."""
        u = self._check_point(u)
        if t <= 0:
            raise ValueError("ball radius must be positive")
        return np.flatnonzero(self.dist[u] < t)

    def volume(self, u, t: float) -> float:
        """Mass of the open ball around u of radius t."""
        u = self._check_point(u)
        if t <= 0:
            raise ValueError("ball radius must be positive")
        k = np.searchsorted(self._sorted_dist[u], t, side="left")
        return float(self._cum_weight[u, k - 1]) if k > 0 else 0.0

    def volumes(self, u, ts) -> np.ndarray:
        """Vectorized ``volume(u, t)`` over an array of radii."""
        u = self._check_point(u)
        ts = np.asarray(ts, dtype=float)
        k = np.searchsorted(self._sorted_dist[u], ts, side="left")
        out = np.zeros(ts.shape)
        pos = k > 0
        out[pos] = self._cum_weight[u, k[pos] - 1]
        return out

    def volume_at_distance(self, u, v) -> float:
        """V(u, v) = mass of the open ball around u of radius d(u, v).

        For u = v (radius 0) this degenerates to the weight of u so the
        quantity stays positive; kernel size estimates divide by it.
        """
        u = self._check_point(u)
        v = self._check_point(v)
        if u == v:
            return float(self.weight[u])
        return self.volume(u, float(self.dist[u, v]))

    def volume_at_distance_matrix(self) -> np.ndarray:
        """Matrix of V(u, v) over all pairs; diagonal holds the weights."""
        n = self.n_points
        out = np.empty((n, n))
        for u in range(n):
            out[u] = self.volumes(u, self.dist[u])
            out[u, u] = self.weight[u]
        return out

    # -- doubling ----------------------------------------------------------
    def doubling_constant(self) -> float:
        """Max of V(u, 2t)/V(u, t) over points u and radii t > 0.

        V(u, .) only jumps at distances to other points, so the ratio is
        piecewise constant between the critical radii {d(u,v), d(u,v)/2};
        sampling the midpoint of each critical interval is exact.
        """
        if self._doubling is not None:
            return self._doubling
        best = 1.0
        for u in range(self.n_points):
            d = self._sorted_dist[u][self._sorted_dist[u] > 0]
            if d.size == 0:
                continue
            crit = np.unique(np.concatenate([d, d / 2.0]))
            if crit.size >= 2:
                ts = (crit[:-1] + crit[1:]) / 2.0
                ts = np.concatenate([ts, [crit[-1] * 1.5]])
            else:
                ts = np.array([crit[-1] * 1.5])
            ratios = self.volumes(u, 2.0 * ts) / self.volumes(u, ts)
            best = max(best, float(ratios.max()))
        self._doubling = best
        return best

    def compatible_with(self, other: "FiniteMetricMeasureSpace") -> bool:
        """Same space up to value equality (identity fast path)."""
        if self is other:
            return True
        return (
            self.n_points == other.n_points
            and np.array_equal(self.weight, other.weight)
            and np.array_equal(self.dist, other.dist)
        )

    def __repr__(self) -> str:
        return (
            f"FiniteMetricMeasureSpace(n={self.n_points}, "
            f"diameter={self.diameter:g}, mass={self.total_mass:g}, "
            f"tag={self.tag!r})"
        )


def _check_triangle(dist: np.ndarray) -> None:
    n = dist.shape[0]
    if n <= _TRIANGLE_EXHAUSTIVE_LIMIT:
        # chunk over i to keep the N^3 broadcast under control
        for i0 in range(0, n, 64):
            i1 = min(i0 + 64, n)
            lhs = dist[i0:i1, None, :]  # d(i, j)
            rhs = dist[i0:i1, :, None] + dist[None, :, :]  # d(i, k) + d(k, j)
            if np.any(lhs > rhs + 1e-12):
                raise ValueError("triangle inequality violated")
    else:
        rng = np.random.default_rng(0)
        i = rng.integers(0, n, _TRIANGLE_SAMPLES)
        j = rng.integers(0, n, _TRIANGLE_SAMPLES)
        k = rng.integers(0, n, _TRIANGLE_SAMPLES)
        if np.any(dist[i, j] > dist[i, k] + dist[k, j] + 1e-12):
            raise ValueError("triangle inequality violated (sampled)")


def make_path_space(n: int) -> FiniteMetricMeasureSpace:
    """Path space: points 0..n-1, d(i, j) = |i - j|, unit weights."""
    n = int(n)
    if n < 1:
        raise ValueError("path space needs at least one point")
    idx = np.arange(n)
    dist = np.abs(idx[:, None] - idx[None, :]).astype(float)
    return FiniteMetricMeasureSpace(dist, np.ones(n), tag=f"path:{n}")


def is_path_space(space: FiniteMetricMeasureSpace) -> bool:
    idx = np.arange(space.n_points)
    return bool(
        np.array_equal(space.dist, np.abs(idx[:, None] - idx[None, :]).astype(float))
    )


# -- text serialization ----------------------------------------------------
#
# Line-oriented format:
#
#   czkit-space 1
#   n <N>
#   tag <path:N | explicit>
#   weights
#   <N repr floats, one per line>
#   dist                 (only when tag is "explicit")
#   <N rows of N repr floats, space separated>
#   end
#
# repr floats round-trip exactly, so explicit matrices reload bit-exact
# (well inside the 1e-15 contract) and tagged spaces rebuild closed-form.


def save_space(space: FiniteMetricMeasureSpace, path) -> None:
    lines = ["czkit-space 1", f"n {space.n_points}"]
    closed_form = space.tag is not None and space.tag.startswith("path:")
    lines.append(f"tag {space.tag if closed_form else 'explicit'}")
    lines.append("weights")
    lines.extend(repr(float(w)) for w in space.weight)
    if not closed_form:
        lines.append("dist")
        for row in space.dist:
            lines.append(" ".join(repr(float(x)) for x in row))
    lines.append("end")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_space(path) -> FiniteMetricMeasureSpace:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    cursor = _LineCursor(lines, "space file")
    cursor.expect("czkit-space 1")
    n = int(cursor.take_kv("n"))
    tag = cursor.take_kv("tag")
    cursor.expect("weights")
    weight = np.array([float(cursor.take()) for _ in range(n)])
    if tag.startswith("path:"):
        if int(tag.split(":", 1)[1]) != n:
            raise ValueError("path tag disagrees with point count")
        cursor.expect("end")
        idx = np.arange(n)
        dist = np.abs(idx[:, None] - idx[None, :]).astype(float)
        return FiniteMetricMeasureSpace(dist, weight, tag=tag)
    if tag != "explicit":
        raise ValueError(f"unknown space tag {tag!r}")
    cursor.expect("dist")
    dist = np.array(
        [[float(x) for x in cursor.take().split()] for _ in range(n)]
    )
    cursor.expect("end")
    return FiniteMetricMeasureSpace(dist, weight)


class _LineCursor:
    """Tiny helper shared by the space and kernel text formats."""

    def __init__(self, lines, what):
        self.lines = lines
        self.pos = 0
        self.what = what

    def take(self) -> str:
        if self.pos >= len(self.lines):
            raise ValueError(f"truncated {self.what}")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def expect(self, literal: str) -> None:
        line = self.take()
        if line != literal:
            raise ValueError(f"malformed {self.what}: expected {literal!r}, got {line!r}")

    def take_kv(self, key: str) -> str:
        line = self.take()
        head, _, rest = line.partition(" ")
        if head != key:
            raise ValueError(f"malformed {self.what}: expected key {key!r}, got {line!r}")
        return rest.strip()
