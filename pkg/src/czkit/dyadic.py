"""Random dyadic systems: nested cube partitions, Haar bases, grid statistics.

Two constructions are provided.  On path spaces, exact shifted binary
grids (scale ratio 1/2) whose probability space is small enough to
enumerate, giving exact boundary-layer and common-ancestor
probabilities.  On arbitrary finite spaces, a seeded greedy-net
construction that satisfies the same partition/nesting invariants with
measured (rather than prescribed) ball-containment constants.

Level 0 is the coarsest generation and level L the finest (singletons).
The side of a level-k cube is delta^k times the system scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import VectorField
from .space import FiniteMetricMeasureSpace, is_path_space

__all__ = [
    "DyadicSystem",
    "HaarCube",
    "ShiftedGridFamily",
    "NetGridFamily",
    "build_shifted_integer_grid",
    "build_net_grid",
    "haar_basis",
    "average_op",
    "difference_op",
    "tail_op",
    "boundary_layer_probability",
    "boundary_layer_exact",
    "common_ancestor_probability",
    "common_ancestor_exact",
    "choose_eps",
    "m0_for",
    "wilson_interval",
]

_ORTHO_TOL = 1e-12


class DyadicSystem:
    """One realization of a nested family of partitions ("cubes").

    Parameters
    ----------
    space : FiniteMetricMeasureSpace
    delta : float in (0, 1)
        Scale ratio between consecutive generations.
    labels : list of (N,) int arrays
        labels[k][u] is the index of the level-k cube containing u;
        level 0 is coarsest, the last level has singleton cubes.
    scale : float
        Physical size of generation 0; side(k) = delta**k * scale.
    centers, refs : list of (n_k,) int arrays
        Per-cube center point z_Q and reference point x_Q.
    """

    def __init__(self, space, delta, labels, scale, centers, refs, meta=None):
        self.space = space
        self.delta = float(delta)
        self.labels = [np.asarray(l, dtype=np.int64) for l in labels]
        self.scale = float(scale)
        self.depth = len(self.labels) - 1
        self.centers = [np.asarray(c, dtype=np.int64) for c in centers]
        self.refs = [np.asarray(c, dtype=np.int64) for c in refs]
        self.meta = meta or {}

        self.n_cubes = [int(l.max()) + 1 for l in self.labels]
        w = space.weight
        self.cube_mass = [
            np.bincount(l, weights=w, minlength=n)
            for l, n in zip(self.labels, self.n_cubes)
        ]
        # parent[k][c] = index of the level-(k-1) cube containing cube c
        self.parent = [None]
        for k in range(1, self.depth + 1):
            first = _first_occurrence(self.labels[k], self.n_cubes[k])
            self.parent.append(self.labels[k - 1][first])
        self._points_cache: dict[int, list] = {}
        self._haar_cache: dict = {}
        self._haar_matrix_cache: dict = {}

    # -- structure accessors -------------------------------------------------
    def side(self, level: int) -> float:
        return self.delta**level * self.scale

    def _check_level(self, level: int, top: int | None = None) -> int:
        level = int(level)
        hi = self.depth if top is None else top
        if not 0 <= level <= hi:
            raise ValueError(f"level {level} outside 0..{hi}")
        return level

    def cube_points(self, level: int) -> list:
        """Per-cube sorted point-id arrays for one level."""
        level = self._check_level(level)
        if level not in self._points_cache:
            lab = self.labels[level]
            order = np.argsort(lab, kind="stable")
            bounds = np.searchsorted(lab[order], np.arange(self.n_cubes[level] + 1))
            self._points_cache[level] = [
                np.sort(order[bounds[c]: bounds[c + 1]])
                for c in range(self.n_cubes[level])
            ]
        return self._points_cache[level]

    def children(self, level: int, cube: int) -> list:
        """Child cube indices at level+1, ordered by smallest member point."""
        if level >= self.depth:
            raise ValueError("finest level has no children")
        kids = np.flatnonzero(self.parent[level + 1] == cube)
        mins = [int(self.cube_points(level + 1)[c][0]) for c in kids]
        return [int(c) for _, c in sorted(zip(mins, kids))]

    def max_children(self) -> int:
        return max(
            int(np.bincount(self.parent[k]).max()) for k in range(1, self.depth + 1)
        ) if self.depth >= 1 else 1

    # -- averaging / difference calculus --------------------------------------
    def cube_averages(self, values: np.ndarray, level: int) -> np.ndarray:
        """Per-cube mu-averages; values may be (N,) or (N, d)."""
        level = self._check_level(level)
        lab = self.labels[level]
        w = self.space.weight
        vv = values if values.ndim == 2 else values[:, None]
        sums = np.empty((self.n_cubes[level], vv.shape[1]))
        for c in range(vv.shape[1]):
            sums[:, c] = np.bincount(lab, weights=w * vv[:, c],
                                     minlength=self.n_cubes[level])
        avg = sums / self.cube_mass[level][:, None]
        return avg if values.ndim == 2 else avg[:, 0]

    def average_values(self, values: np.ndarray, level: int) -> np.ndarray:
        """E_level: replace values by the containing cube's average."""
        avg = self.cube_averages(values, level)
        return avg[self.labels[level]]

    def difference_values(self, values: np.ndarray, level: int) -> np.ndarray:
        """D_level = E_{level+1} - E_level; defined for level in [0, depth-1]."""
        level = self._check_level(level, top=self.depth - 1)
        return self.average_values(values, level + 1) - self.average_values(values, level)

    def tail_values(self, values: np.ndarray, level: int) -> np.ndarray:
        """F_level = identity - E_level."""
        return values - self.average_values(values, level)

    def indicator(self, level: int, cube: int) -> np.ndarray:
        return (self.labels[level] == cube).astype(float)

    # -- Haar bases ------------------------------------------------------------
    def haar(self, level: int, cube: int) -> "HaarCube":
        key = (level, cube)
        if key not in self._haar_cache:
            self._haar_cache[key] = _build_haar_cube(self, level, cube)
        return self._haar_cache[key]

    def haar_level_matrix(self, level: int):
        """All level-`level` Haar data stacked: columns of the (N, F) matrix
        are the h^0 (average) and h^alpha functions of every cube, with
        parallel arrays giving each column's cube index and alpha.
        """
        if level in self._haar_matrix_cache:
            return self._haar_matrix_cache[level]
        n = self.space.n_points
        cols, cube_ids, alphas = [], [], []
        for c in range(self.n_cubes[level]):
            hc = self.haar(level, c)
            for alpha in range(hc.n_children):
                cols.append(hc.to_function(alpha, n))
                cube_ids.append(c)
                alphas.append(alpha)
        Z = np.stack(cols, axis=1) if cols else np.zeros((n, 0))
        out = (Z, np.asarray(cube_ids), np.asarray(alphas))
        self._haar_matrix_cache[level] = out
        return out

    # -- geometry ----------------------------------------------------------------
    def complement_distance(self, level: int) -> np.ndarray:
        """d(u, E \\ Q(u)) for every point, inf when the cube is all of E."""
        level = self._check_level(level)
        n = self.space.n_points
        if self.meta.get("kind") == "shifted":
            # cubes are integer intervals; the nearest complement point is
            # directly left of the interval start or right of its end
            step = round(self.side(level))
            shift = self._shift_at_scale(step)
            idx = np.arange(n)
            pos = (idx + shift) % step
            lo = idx - pos
            d_left = np.where(lo >= 1, pos + 1.0, math.inf)
            d_right = np.where(lo + step <= n - 1, float(step) - pos, math.inf)
            return np.minimum(d_left, d_right)
        out = np.full(n, math.inf)
        lab = self.labels[level]
        for c, pts in enumerate(self.cube_points(level)):
            comp = np.flatnonzero(lab != c)
            if comp.size:
                out[pts] = self.space.dist[np.ix_(pts, comp)].min(axis=1)
        return out

    def _shift_at_scale(self, step: int) -> int:
        bits = self.meta["bits"]
        m = int(round(math.log2(step)))
        return int((bits[:m] * (2 ** np.arange(m))).sum()) if m else 0

    def conditional_ancestor_probability(self, fine_level: int,
                                         coarse_level: int, u: int,
                                         v: int) -> float:
        """P(u, v share a level-`coarse_level` cube | the realized cubes at
        `fine_level`), exact for shifted grids by enumerating the free
        shift components between the two scales."""
        if self.meta.get("kind") != "shifted":
            raise ValueError("conditional ancestor probabilities need a shifted grid")
        if not 0 <= coarse_level <= fine_level <= self.depth:
            raise ValueError("need 0 <= coarse_level <= fine_level <= depth")
        fine_step = round(self.side(fine_level))
        coarse_step = round(self.side(coarse_level))
        s_fine = self._shift_at_scale(fine_step)
        extras = np.arange(coarse_step // fine_step) * fine_step + s_fine
        return float(np.mean((u + extras) // coarse_step == (v + extras) // coarse_step))

    def measured_containment(self) -> dict:
        """Achieved ball-containment constants relative to cube sides.

        outer: smallest c with Q subset of B(z_Q, c * side) for all Q
        inner: largest c with B(z_Q, c * side) ^ E subset of Q for all Q
        (targets 6 and 1/6 for the idealized construction).
        """
        outer = 0.0
        inner = math.inf
        for k in range(self.depth + 1):
            side = self.side(k)
            comp_d = self.complement_distance(k)
            for c, pts in enumerate(self.cube_points(k)):
                z = self.centers[k][c]
                spread = float(self.space.dist[z, pts].max())
                outer = max(outer, spread / side)
                dz = comp_d[z]
                if math.isfinite(dz):
                    inner = min(inner, dz / side)
        return {"outer": outer, "inner": inner}

    def ref_proximity(self) -> float:
        """Max of d(z_Q, x_Q)/side(Q) over all cubes."""
        worst = 0.0
        for k in range(self.depth + 1):
            d = self.space.dist[self.centers[k], self.refs[k]]
            worst = max(worst, float(d.max()) / self.side(k))
        return worst

    def validate(self) -> None:
        """Partition, nesting and child-count invariants; raises on failure."""
        n = self.space.n_points
        for k, lab in enumerate(self.labels):
            if lab.shape != (n,):
                raise AssertionError("labels must cover every point")
            if lab.min() < 0 or lab.max() + 1 != self.n_cubes[k]:
                raise AssertionError("cube indices must be dense")
        if self.n_cubes[self.depth] != n:
            raise AssertionError("finest level must be singletons")
        for k in range(1, self.depth + 1):
            if not np.array_equal(self.parent[k][self.labels[k]], self.labels[k - 1]):
                raise AssertionError("nesting violated: child not inside parent")

    # -- serialization --------------------------------------------------------
    def dump_text(self) -> str:
        lines = [
            "czkit-dyadic 1",
            f"levels {self.depth + 1}",
            f"delta {self.delta!r}",
            f"scale {self.scale!r}",
        ]
        for k in range(self.depth + 1):
            lines.append(f"level {k} cubes {self.n_cubes[k]}")
            for c, pts in enumerate(self.cube_points(k)):
                par = -1 if k == 0 else int(self.parent[k][c])
                pts_str = " ".join(str(int(p)) for p in pts)
                lines.append(f"cube {c} parent {par} points {pts_str}")
        lines.append("end")
        return "\n".join(lines) + "\n"


def _first_occurrence(labels: np.ndarray, n: int) -> np.ndarray:
    uniq, first = np.unique(labels, return_index=True)
    out = np.full(n, -1, dtype=np.int64)
    out[uniq] = first
    return out


@dataclass
class HaarCube:
    """Orthonormal Haar family of one cube: h^0 plus m-1 mean-zero functions.

    coeffs[alpha, j] is the constant value of h^alpha on the j-th child
    (children ordered by smallest member point id); orthonormality is in
    L_2(mu).
    """

    level: int
    cube: int
    children: list
    child_points: list
    child_masses: np.ndarray
    coeffs: np.ndarray  # (m, m); row 0 is the normalized average h^0

    @property
    def n_children(self) -> int:
        return len(self.children)

    def to_function(self, alpha: int, n_points: int) -> np.ndarray:
        if not 0 <= alpha < self.n_children:
            raise ValueError("haar index out of range")
        out = np.zeros(n_points)
        for j, pts in enumerate(self.child_points):
            out[pts] = self.coeffs[alpha, j]
        return out

    def child_averages(self, alpha: int) -> np.ndarray:
        """<h^alpha>_{child j} = the constant the function takes there."""
        return self.coeffs[alpha]


def _build_haar_cube(system: DyadicSystem, level: int, cube: int) -> HaarCube:
    if level == system.depth:
        # singleton: only the normalized indicator
        pts = system.cube_points(level)[cube]
        mass = system.cube_mass[level][cube]
        return HaarCube(level, cube, [cube], [pts], np.array([mass]),
                        np.array([[1.0 / math.sqrt(mass)]]))
    kids = system.children(level, cube)
    pts = [system.cube_points(level + 1)[c] for c in kids]
    w = np.array([system.cube_mass[level + 1][c] for c in kids])
    m = len(kids)
    total = w.sum()
    basis = [np.full(m, 1.0 / math.sqrt(total))]
    for j in range(m):
        v = np.zeros(m)
        v[j] = 1.0
        for b in basis:
            v -= (w * b * v).sum() * b
        nrm = math.sqrt(float((w * v * v).sum()))
        if nrm > _ORTHO_TOL:
            basis.append(v / nrm)
    if len(basis) != m:
        raise AssertionError("Haar Gram-Schmidt produced a defective basis")
    return HaarCube(level, cube, kids, pts, w, np.stack(basis))


def haar_basis(system: DyadicSystem, level: int, cube: int) -> HaarCube:
    """Haar family of one cube (h^0 plus its m_Q - 1 mean-zero functions)."""
    return system.haar(level, cube)


# -- operator wrappers over VectorField --------------------------------------

def average_op(system: DyadicSystem, level: int, f: VectorField) -> VectorField:
    _check_field(system, f)
    return VectorField(f.space, system.average_values(f.values, level))


def difference_op(system: DyadicSystem, level: int, f: VectorField) -> VectorField:
    _check_field(system, f)
    return VectorField(f.space, system.difference_values(f.values, level))


def tail_op(system: DyadicSystem, level: int, f: VectorField) -> VectorField:
    _check_field(system, f)
    return VectorField(f.space, system.tail_values(f.values, level))


def _check_field(system: DyadicSystem, f: VectorField) -> None:
    if not system.space.compatible_with(f.space):
        raise ValueError("field lives on a different space")


# -- shifted binary grids on path spaces --------------------------------------

def build_shifted_integer_grid(space: FiniteMetricMeasureSpace, omega_bits,
                               depth: int) -> DyadicSystem:
    """Shifted binary grid on a path space (delta = 1/2).

    Level-k cubes are the intersections with the point range of dyadic
    intervals of length 2^(depth-k) shifted by s = sum_j bits[j] 2^j
    (bits below the interval scale).  Nesting holds by construction and
    the system is a deterministic function of the bits.
    """
    if not is_path_space(space):
        raise ValueError("shifted integer grids require a path space")
    n = space.n_points
    depth = int(depth)
    if depth < 0 or depth > 60:
        raise ValueError("depth outside the representable range")
    if 2**depth < n:
        raise ValueError("2**depth must cover the point range")
    bits = np.asarray(omega_bits, dtype=np.int64)
    if bits.shape[0] < depth or np.any((bits != 0) & (bits != 1)):
        raise ValueError(f"need {depth} shift bits of value 0/1")

    idx = np.arange(n)
    labels, centers, refs = [], [], []
    for k in range(depth + 1):
        m = depth - k
        step = 2**m
        shift = int((bits[:m] * (2 ** np.arange(m))).sum()) if m else 0
        raw = (idx + shift) // step
        uniq, lab = np.unique(raw, return_inverse=True)
        labels.append(lab)
        # nearest member to the interval midpoint, ties to the smaller id;
        # lo + (step-1)//2 realizes that before clipping to the point range
        lo = uniq * step - shift
        z = np.clip(lo + (step - 1) // 2, np.maximum(lo, 0),
                    np.minimum(lo + step - 1, n - 1))
        centers.append(z.astype(np.int64))
        refs.append(z.astype(np.int64).copy())
    return DyadicSystem(space, 0.5, labels, float(2**depth), centers, refs,
                        meta={"kind": "shifted", "bits": bits[:depth].copy()})


class ShiftedGridFamily:
    """The enumerable probability space of shifted binary grids."""

    def __init__(self, space: FiniteMetricMeasureSpace, depth: int | None = None):
        if not is_path_space(space):
            raise ValueError("shifted grids require a path space")
        self.space = space
        self.depth = int(depth) if depth is not None else max(
            1, math.ceil(math.log2(max(space.n_points, 2)))
        )
        self.delta = 0.5

    def build(self, bits) -> DyadicSystem:
        return build_shifted_integer_grid(self.space, bits, self.depth)

    def sample(self, rng) -> DyadicSystem:
        return self.build(rng.integers(0, 2, self.depth))

    def enumerate(self):
        for code in range(2**self.depth):
            bits = [(code >> j) & 1 for j in range(self.depth)]
            yield self.build(bits)

    @property
    def n_outcomes(self) -> int:
        return 2**self.depth

    def exact_ancestor_probability(self, u: int, v: int, level: int) -> float:
        """P(u and v share their level-`level` cube), exactly.

        The level-k cube assignment depends on the shift only modulo the
        cube length, and that residue is uniform, so a loop over the
        residues is exact.
        """
        step = 2 ** (self.depth - level)
        s = np.arange(step)
        return float(np.mean((u + s) // step == (v + s) // step))


# -- greedy-net grids on general spaces ----------------------------------------

def build_net_grid(space: FiniteMetricMeasureSpace, delta: float,
                   seed: int) -> DyadicSystem:
    """Randomized greedy-net dyadic system on an arbitrary finite space.

    Reference points at level k form a maximal delta^k-separated net
    (nets are nested across levels; insertion order is randomized by
    the seed).  Points are assigned to the nearest level-k net point
    among those lying in the point's level-(k-1) cube, which forces
    nesting; ties are broken by seeded random priorities.  The finest
    level is singletons.  Containment constants are measured, not
    prescribed.
    """
    delta = float(delta)
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    n = space.n_points
    rng = np.random.default_rng(seed)
    if n == 1:
        labels = [np.zeros(1, dtype=np.int64)] * 2
        z = [np.zeros(1, dtype=np.int64)] * 2
        return DyadicSystem(space, delta, labels, 1.0, z, [c.copy() for c in z],
                            meta={"kind": "net", "seed": seed})

    scale = space.diameter * (1.0 + 1e-9)
    depth = max(1, math.ceil(math.log(space.diameter / space.min_gap)
                             / math.log(1.0 / delta)) + 1)
    dist = space.dist

    nets: list[np.ndarray] = []
    prev: list[int] = []
    for k in range(depth + 1):
        thresh = scale * delta**k
        chosen: list[int] = list(prev)
        prev_set = set(prev)
        for p in rng.permutation(n):
            p = int(p)
            if p in prev_set:
                continue
            if not chosen or dist[p, chosen].min() >= thresh:
                chosen.append(p)
        nets.append(np.asarray(chosen, dtype=np.int64))
        prev = chosen

    labels = [np.zeros(n, dtype=np.int64)]
    centers = [np.asarray([nets[0][0]], dtype=np.int64)]
    for k in range(1, depth + 1):
        net = nets[k]
        priority = rng.permutation(net.size)
        net_parent = labels[k - 1][net]
        D = dist[:, net]
        valid = net_parent[None, :] == labels[k - 1][:, None]
        Dm = np.where(valid, D, math.inf)
        row_min = Dm.min(axis=1)
        tie = Dm <= row_min[:, None]
        pick = np.where(tie, priority[None, :], np.iinfo(np.int64).max).argmin(axis=1)
        labels.append(pick.astype(np.int64))
        centers.append(net.copy())
    refs = [c.copy() for c in centers]
    system = DyadicSystem(space, delta, labels, scale, centers, refs,
                          meta={"kind": "net", "seed": seed})
    system.validate()
    return system


class NetGridFamily:
    """Seeded family of greedy-net systems on a general space."""

    def __init__(self, space: FiniteMetricMeasureSpace, delta: float = 0.5):
        self.space = space
        self.delta = float(delta)

    def sample(self, rng) -> DyadicSystem:
        return build_net_grid(self.space, self.delta, int(rng.integers(0, 2**63 - 1)))


# -- probabilistic grid statistics ----------------------------------------------

def wilson_interval(successes, trials: int, z: float = 1.96):
    """Wilson 95% (by default) score interval for a binomial proportion."""
    successes = np.asarray(successes, dtype=float)
    p = successes / trials
    denom = 1.0 + z**2 / trials
    center = (p + z**2 / (2 * trials)) / denom
    half = (z / denom) * np.sqrt(p * (1 - p) / trials + z**2 / (4 * trials**2))
    return np.maximum(center - half, 0.0), np.minimum(center + half, 1.0)


@dataclass
class BoundaryEstimate:
    level: int
    eps: float
    trials: int
    frequencies: np.ndarray
    wilson_lo: np.ndarray
    wilson_hi: np.ndarray


def _boundary_events(system: DyadicSystem, level: int, eps: float) -> np.ndarray:
    side = system.side(level)
    return system.complement_distance(level) < eps * side


def boundary_layer_probability(family, level: int, eps: float, trials: int,
                               seed: int) -> BoundaryEstimate:
    """Monte-Carlo per-point frequency of landing in the eps boundary layer.

    The event for a point u is d(u, complement of its level-k cube)
    < eps * side(k), sampled over independent random systems.
    """
    if not 0.0 < eps <= 1.0:
        raise ValueError("eps must lie in (0, 1]")
    if trials < 1:
        raise ValueError("need at least one trial")
    counts = np.zeros(family.space.n_points)
    for t in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, t]))
        system = family.sample(rng)
        counts += _boundary_events(system, level, eps)
    lo, hi = wilson_interval(counts, trials)
    return BoundaryEstimate(level, eps, trials, counts / trials, lo, hi)


def boundary_layer_exact(family: ShiftedGridFamily, level: int,
                         eps: float) -> np.ndarray:
    """Exact per-point boundary probability by enumerating every shift."""
    if not isinstance(family, ShiftedGridFamily):
        raise ValueError("exact enumeration needs a shifted grid family")
    total = np.zeros(family.space.n_points)
    for system in family.enumerate():
        total += _boundary_events(system, level, eps)
    return total / family.n_outcomes


@dataclass
class AncestorEstimate:
    u: int
    v: int
    level: int
    m: int
    trials: int
    frequency: float
    wilson_lo: float
    wilson_hi: float


def _check_ancestor_hypothesis(family, u: int, v: int, level: int, m: int,
                               eps: float) -> None:
    scale = getattr(family, "scale", None)
    if scale is None:
        scale = float(2**family.depth) if isinstance(family, ShiftedGridFamily) \
            else family.space.diameter
    bound = 0.5 * eps * family.delta**level * scale
    if family.space.dist[u, v] > bound:
        raise ValueError(
            f"distance hypothesis violated: d(u,v)={family.space.dist[u, v]:g} "
            f"> {bound:g}"
        )


def common_ancestor_probability(family, u: int, v: int, level: int, m: int,
                                eps: float, trials: int,
                                seed: int) -> AncestorEstimate:
    """Monte-Carlo frequency that the level-(level+m) cubes of u and v
    share a level-`level` ancestor, i.e. that u and v land in the same
    level-`level` cube."""
    _check_ancestor_hypothesis(family, u, v, level, m, eps)
    hits = 0
    for t in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, t]))
        system = family.sample(rng)
        hits += int(system.labels[level][u] == system.labels[level][v])
    lo, hi = wilson_interval(np.array(float(hits)), trials)
    return AncestorEstimate(u, v, level, m, trials, hits / trials,
                            float(lo), float(hi))


def common_ancestor_exact(family: ShiftedGridFamily, u: int, v: int, level: int,
                          m: int, eps: float) -> float:
    """Exact shared-ancestor probability on shifted grids."""
    _check_ancestor_hypothesis(family, u, v, level, m, eps)
    return family.exact_ancestor_probability(u, v, level)


def m0_for(eps: float, delta: float) -> int:
    """Smallest admissible level gap: ceil(log_{1/delta}(2/eps)) + 1,
    which makes eps/2 - delta^{m0} strictly positive."""
    return math.ceil(math.log(2.0 / eps) / math.log(1.0 / delta)) + 1


def choose_eps(family, trials: int = 2000, seed: int = 0,
               candidates=(0.5, 0.25, 0.125, 0.0625)) -> float:
    """Largest eps in the candidate set whose worst-case (over points and
    levels) boundary frequency stays at most 1/2.

    Exact enumeration is used for shifted grid families, Monte Carlo
    otherwise.
    """
    if isinstance(family, ShiftedGridFamily):
        depth = family.depth
        def worst(eps):
            return max(
                float(boundary_layer_exact(family, k, eps).max())
                for k in range(depth + 1)
            )
    else:
        probe = family.sample(np.random.default_rng(seed))
        depth = probe.depth
        def worst(eps):
            return max(
                float(boundary_layer_probability(family, k, eps, trials, seed)
                      .frequencies.max())
                for k in range(depth + 1)
            )
    for eps in sorted(candidates, reverse=True):
        if worst(eps) <= 0.5:
            return eps
    return min(candidates)
