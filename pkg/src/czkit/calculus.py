"""Bilinear decomposition, Haar coefficients, paraproducts, sparse families,
and the banded block operators of the truncated-kernel calculus.

Everything here is exact finite linear algebra: the decomposition ledger
reproduces the pairing <Tf, g> term by term, Haar coefficient bounds are
measured against their banded targets, stopping families come with their
sparseness certificates, and the banded block operators carry both their
assembled kernels (for size tests) and their normalized reorganized sums
(for the expectation identity over random grids).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dyadic import DyadicSystem, m0_for
from .fields import MixedNormDescriptor, VectorField, mixed_norm, pairing
from .kernel import TruncatedKernel

__all__ = [
    "TermLedger",
    "SparseFamily",
    "expand_pairing",
    "haar_coefficient",
    "haar_coefficient_matrix",
    "verify_haar_bounds",
    "weak_boundedness",
    "cube_testing",
    "ball_testing",
    "paraproduct",
    "extract_symbol",
    "adjoint_symbol",
    "bmo_norm",
    "square_function",
    "truncated_square",
    "doob_maximal",
    "stopping_family",
    "paraproduct_stopping_bound",
    "split_difference",
    "block_operator",
    "band_of_pair",
    "reorganized_sum_check",
    "paraproduct_extraction_residual",
]


# -- the section-4 style expansion ------------------------------------------

@dataclass
class TermLedger:
    """Every term of the bilinear expansion of <Tf, g> over one system.

    The difference operators run over levels sigma..tau-1 (the reading
    that makes the telescoping identity exact); `tail` uses F_tau =
    identity - E_tau.  The recombination identity is

        whole = coarse + tail + sum_i (diagonal_i + mixed_f_i + mixed_g_i)
                - correction_coarse + correction_tail.
    """

    sigma: int
    tau: int
    whole: float
    coarse: float
    tail: float
    diagonal: np.ndarray
    mixed_f: np.ndarray
    mixed_g: np.ndarray
    correction_coarse: float
    correction_tail: float

    def recombined(self) -> float:
        return (
            self.coarse
            + self.tail
            + float(self.diagonal.sum() + self.mixed_f.sum() + self.mixed_g.sum())
            - self.correction_coarse
            + self.correction_tail
        )

    def residual(self) -> float:
        """|whole - recombined| relative to the largest recorded magnitude."""
        scale = max(
            abs(self.whole), abs(self.coarse), abs(self.tail),
            float(np.abs(self.diagonal).max(initial=0.0)),
            float(np.abs(self.mixed_f).max(initial=0.0)),
            float(np.abs(self.mixed_g).max(initial=0.0)),
            abs(self.correction_coarse), abs(self.correction_tail), 1e-30,
        )
        return abs(self.whole - self.recombined()) / scale

    def records(self) -> list:
        rows = [
            {"name": "whole", "value": self.whole},
            {"name": "coarse", "value": self.coarse},
            {"name": "tail", "value": self.tail},
            {"name": "correction_coarse", "value": self.correction_coarse},
            {"name": "correction_tail", "value": self.correction_tail},
        ]
        for i, (a, b, c) in enumerate(zip(self.diagonal, self.mixed_f, self.mixed_g)):
            lvl = self.sigma + i
            rows.append({"name": f"diagonal_{lvl}", "value": float(a)})
            rows.append({"name": f"mixed_f_{lvl}", "value": float(b)})
            rows.append({"name": f"mixed_g_{lvl}", "value": float(c)})
        rows.append({"name": "residual", "value": self.residual()})
        return rows


def expand_pairing(kernel: TruncatedKernel, system: DyadicSystem,
                   f: VectorField, g: VectorField, sigma: int = 0,
                   tau: int | None = None) -> TermLedger:
    """Expand <Tf, g> into coarse/diagonal/mixed/tail/correction terms."""
    if f.d != g.d:
        raise ValueError("f and g must share the inner dimension")
    if not (system.space.compatible_with(f.space)
            and system.space.compatible_with(kernel.space)):
        raise ValueError("kernel, system and fields must share one space")
    tau = system.depth if tau is None else int(tau)
    if not 0 <= sigma <= tau <= system.depth:
        raise ValueError("need 0 <= sigma <= tau <= depth")

    Ef = [system.average_values(f.values, i) for i in range(sigma, tau + 1)]
    Eg = [system.average_values(g.values, i) for i in range(sigma, tau + 1)]
    Ff = f.values - Ef[-1]
    Fg = g.values - Eg[-1]

    def vf(a):
        return VectorField(system.space, a)

    T = kernel.apply
    whole = pairing(T(f), g)
    coarse = pairing(T(vf(Ef[0])), g)
    tail = pairing(T(vf(Ff)), g)

    n_terms = tau - sigma
    diagonal = np.zeros(n_terms)
    mixed_f = np.zeros(n_terms)
    mixed_g = np.zeros(n_terms)
    corr_coarse = 0.0
    corr_tail = 0.0
    TEs = T(vf(Ef[0]))
    for j in range(n_terms):
        Df = Ef[j + 1] - Ef[j]
        Dg = Eg[j + 1] - Eg[j]
        TDf = T(vf(Df))
        TEf = T(vf(Ef[j]))
        diagonal[j] = pairing(TDf, vf(Dg))
        mixed_f[j] = pairing(TEf, vf(Dg))
        mixed_g[j] = pairing(TDf, vf(Eg[j]))
        corr_coarse += pairing(TEs, vf(Dg))
        corr_tail += pairing(TDf, vf(Fg))
    return TermLedger(sigma, tau, whole, coarse, tail, diagonal, mixed_f,
                      mixed_g, corr_coarse, corr_tail)


# -- Haar coefficients -------------------------------------------------------

def _pairing_core(kernel: TruncatedKernel) -> np.ndarray:
    """W K W with W = diag(mu): <T a, b> = b^T (WKW) a for scalar fields."""
    w = kernel.space.weight
    return w[:, None] * kernel.values * w[None, :]


def haar_coefficient(kernel: TruncatedKernel, system: DyadicSystem, level: int,
                     p_cube: int, alpha: int, q_cube: int, beta: int,
                     via_children: bool = False) -> float:
    """<T h_P^alpha, h_Q^beta> for same-level cubes, (alpha, beta) != (0, 0).

    With ``via_children`` the coefficient is assembled from the
    child-indicator pairings <T 1_{P'}, 1_{Q'}> weighted by the Haar
    functions' child averages; both routes agree to rounding.
    """
    if (alpha, beta) == (0, 0):
        raise ValueError("at least one Haar index must be cancellative")
    hp = system.haar(level, p_cube)
    hq = system.haar(level, q_cube)
    n = system.space.n_points
    if not via_children:
        core = _pairing_core(kernel)
        return float(hq.to_function(beta, n) @ core @ hp.to_function(alpha, n))
    core = _pairing_core(kernel)
    total = 0.0
    for jp, pts_p in enumerate(hp.child_points):
        for jq, pts_q in enumerate(hq.child_points):
            ind = float(core[np.ix_(pts_q, pts_p)].sum())
            total += ind * hp.coeffs[alpha, jp] * hq.coeffs[beta, jq]
    return total


def haar_coefficient_matrix(kernel: TruncatedKernel, system: DyadicSystem,
                            level: int):
    """All coefficients <T h_P^a, h_Q^b> of one level at once.

    Returns (C, cube_ids, alphas) where C[j, i] pairs column function i
    (index into cube_ids/alphas, the P side) against column function j
    (the Q side).
    """
    Z, cube_ids, alphas = system.haar_level_matrix(level)
    core = _pairing_core(kernel)
    return Z.T @ core @ Z, cube_ids, alphas


def band_of_pair(d_ref: float, side: float, eps: float, m0: int,
                 delta: float) -> int:
    """Separation band index: the smallest m >= m0 with
    d <= (eps/2) delta^{-m} side."""
    threshold = 0.5 * eps * delta ** (-m0) * side
    if d_ref <= threshold:
        return m0
    x = math.log(2.0 * d_ref / (eps * side)) / math.log(1.0 / delta)
    return max(m0, math.ceil(x - 1e-12))


@dataclass
class HaarBoundReport:
    max_ratio: float
    per_band: dict
    n_pairs: int
    beyond_truncation_pairs: int
    beyond_truncation_max_abs: float

    @property
    def beyond_truncation_ok(self) -> bool:
        return self.beyond_truncation_max_abs == 0.0


def verify_haar_bounds(kernel: TruncatedKernel, system: DyadicSystem,
                       eps: float = 0.25, m0: int | None = None) -> HaarBoundReport:
    """Measure |<T h_P^a, h_Q^b>| against the banded target
    omega(delta^m) sqrt(mu(P) mu(Q)) / V(z_P, delta^{-m} side) over all
    same-level pairs, and check that pairs entirely beyond the outer
    truncation radius have exactly zero coefficients.
    """
    space = system.space
    delta = system.delta
    if m0 is None:
        m0 = m0_for(eps, delta)
    max_ratio = 0.0
    per_band: dict = {}
    n_pairs = 0
    beyond = 0
    beyond_max = 0.0
    for level in range(system.depth):
        C, cube_ids, alphas = haar_coefficient_matrix(kernel, system, level)
        nc = system.n_cubes[level]
        side = system.side(level)
        refs = system.refs[level]
        centers = system.centers[level]
        mass = system.cube_mass[level]
        d_ref = space.dist[np.ix_(refs, refs)]

        bands = np.empty((nc, nc), dtype=np.int64)
        for a in range(nc):
            for b in range(nc):
                bands[a, b] = band_of_pair(float(d_ref[a, b]), side, eps, m0, delta)
        # bound_pq[P, Q] uses V(z_P, delta^{-m} side): P is the cube whose
        # Haar function the operator is applied to
        vol_p = np.empty((nc, nc))
        for a in range(nc):
            radii = delta ** (-bands[a].astype(float)) * side
            vol_p[a] = np.maximum(space.volumes(centers[a], radii),
                                  space.weight[centers[a]])
        om = kernel.omega(np.minimum(delta ** bands.astype(float), 1.0))
        bound_pq = om * np.sqrt(np.outer(mass, mass)) / vol_p

        cancellative = ~((alphas[:, None] == 0) & (alphas[None, :] == 0))
        coeff_abs = np.abs(C)  # C[j, i]: row j = Q side, column i = P side
        pair_bound = bound_pq.T[np.ix_(cube_ids, cube_ids)]
        # a tabulated modulus may vanish on an initial segment; a zero
        # bound against a nonzero coefficient is an infinite ratio
        with np.errstate(divide="ignore", invalid="ignore"):
            raw = np.where(pair_bound > 0, coeff_abs / pair_bound,
                           np.where(coeff_abs > 0, math.inf, 0.0))
        ratios = np.where(cancellative, raw, 0.0)
        max_ratio = max(max_ratio, float(ratios.max()))
        n_pairs += int(cancellative.sum())
        pair_bands = bands[np.ix_(cube_ids, cube_ids)]
        for m in np.unique(pair_bands):
            sel = (pair_bands == m) & cancellative
            if sel.any():
                cur = float(ratios[sel].max())
                per_band[int(m)] = max(per_band.get(int(m), 0.0), cur)

        # pairs provably beyond the truncation radius: every point-to-point
        # distance is >= R, so every coefficient must vanish exactly
        spread = np.array([
            float(space.dist[centers[c], system.cube_points(level)[c]].max())
            for c in range(nc)
        ])
        d_z = space.dist[np.ix_(centers, centers)]
        lower = d_z - spread[:, None] - spread[None, :]
        far = lower >= kernel.R
        if far.any():
            sel = far[np.ix_(cube_ids, cube_ids)]
            beyond += int(sel.sum())
            if sel.any():
                beyond_max = max(beyond_max, float(coeff_abs[sel].max()))
    return HaarBoundReport(max_ratio, per_band, n_pairs, beyond, beyond_max)


# -- testing quantities -------------------------------------------------------

def weak_boundedness(kernel: TruncatedKernel, system: DyadicSystem) -> float:
    """sup over cubes of |<T 1_Q, 1_Q>| / mu(Q)."""
    core = _pairing_core(kernel)
    worst = 0.0
    for level in range(system.depth + 1):
        for c, pts in enumerate(system.cube_points(level)):
            val = abs(float(core[np.ix_(pts, pts)].sum()))
            worst = max(worst, val / system.cube_mass[level][c])
    return worst


def cube_testing(kernel: TruncatedKernel, system: DyadicSystem, s: float) -> float:
    """sup over cubes of ||T 1_Q||_{L_s(mu)} / mu(Q)^{1/s}."""
    if not 1.0 < s < math.inf:
        raise ValueError("testing exponent must lie in (1, inf)")
    w = kernel.space.weight
    weighted = kernel.values * w[None, :]
    worst = 0.0
    for level in range(system.depth + 1):
        for c, pts in enumerate(system.cube_points(level)):
            t1 = weighted[:, pts].sum(axis=1)
            norm = float((w * np.abs(t1) ** s).sum() ** (1.0 / s))
            worst = max(worst, norm / system.cube_mass[level][c] ** (1.0 / s))
    return worst


def ball_testing(kernel: TruncatedKernel, s: float) -> float:
    """sup over all balls B(u, t) of ||T 1_B||_{L_s(mu)} / mu(B)^{1/s}.

    Balls around u are prefixes of the points sorted by distance from u
    (splitting ties is not possible for a ball, so only prefixes ending
    at a strict distance increase are admissible).
    """
    if not 1.0 < s < math.inf:
        raise ValueError("testing exponent must lie in (1, inf)")
    space = kernel.space
    w = space.weight
    weighted = kernel.values * w[None, :]
    n = space.n_points
    worst = 0.0
    for u in range(n):
        order = np.argsort(space.dist[u], kind="stable")
        sorted_d = space.dist[u][order]
        cum_cols = np.cumsum(weighted[:, order], axis=1)
        cum_mass = np.cumsum(w[order])
        valid = np.ones(n, dtype=bool)
        valid[:-1] = sorted_d[1:] > sorted_d[:-1]
        norms = ((w[:, None] * np.abs(cum_cols[:, valid]) ** s).sum(axis=0)) ** (1.0 / s)
        ratios = norms / cum_mass[valid] ** (1.0 / s)
        worst = max(worst, float(ratios.max()))
    return worst


# -- paraproducts and the symbol ----------------------------------------------

def extract_symbol(kernel: TruncatedKernel) -> np.ndarray:
    """b = T 1 as a scalar field."""
    ones = VectorField.ones(kernel.space)
    return kernel.apply(ones).values[:, 0]


def adjoint_symbol(kernel: TruncatedKernel) -> np.ndarray:
    """T* 1, the symbol of the dual paraproduct."""
    ones = VectorField.ones(kernel.space)
    return kernel.apply_adjoint(ones).values[:, 0]


def paraproduct(system: DyadicSystem, b: np.ndarray, f: VectorField,
                sigma: int = 0, tau: int | None = None) -> VectorField:
    """Truncated dyadic paraproduct sum_{i=sigma}^{tau} (D_i b)(E_i f)."""
    tau = system.depth - 1 if tau is None else int(tau)
    if not 0 <= sigma <= tau <= system.depth - 1:
        raise ValueError("need 0 <= sigma <= tau <= depth-1")
    b = np.asarray(b, dtype=float)
    out = np.zeros_like(f.values)
    for i in range(sigma, tau + 1):
        db = system.difference_values(b, i)
        ef = system.average_values(f.values, i)
        out += db[:, None] * ef
    return VectorField(f.space, out)


def bmo_norm(system: DyadicSystem, b: np.ndarray) -> float:
    """Dyadic BMO norm based on L_2 averages over all system cubes."""
    b = np.asarray(b, dtype=float)
    worst = 0.0
    for level in range(system.depth + 1):
        dev = b - system.average_values(b, level)
        osc = system.cube_averages(dev * dev, level)
        worst = max(worst, float(osc.max()))
    return math.sqrt(worst)


def square_function(system: DyadicSystem, b: np.ndarray) -> np.ndarray:
    """Pointwise dyadic square function (sum_Q |D_Q b|^2)^{1/2}."""
    b = np.asarray(b, dtype=float)
    acc = np.zeros_like(b)
    for i in range(system.depth):
        d = system.difference_values(b, i)
        acc += d * d
    return np.sqrt(acc)


def truncated_square(system: DyadicSystem, b: np.ndarray, level: int,
                     cube: int) -> np.ndarray:
    """Square function truncated to subcubes of one cube P; equals the
    full square function of 1_P (b - <b>_P) and is supported on P."""
    b = np.asarray(b, dtype=float)
    mask = system.labels[level] == cube
    acc = np.zeros_like(b)
    for i in range(level, system.depth):
        d = system.difference_values(b, i)
        acc += d * d
    return np.sqrt(acc) * mask


def doob_maximal(system: DyadicSystem, phi: np.ndarray) -> np.ndarray:
    """M phi(u) = max over cubes containing u of the cube average of |phi|."""
    phi = np.abs(np.asarray(phi, dtype=float))
    out = np.zeros_like(phi)
    for level in range(system.depth + 1):
        np.maximum(out, system.average_values(phi, level), out=out)
    return out


# -- stopping families ----------------------------------------------------------

@dataclass
class StoppingCube:
    level: int
    cube: int
    kind: str              # "initial" | "first" | "second"
    parent_entry: int      # index of the stopping parent, -1 for roots


@dataclass
class SparseFamily:
    """Stopping cubes with their pairwise-disjoint major subsets E_S."""

    system: DyadicSystem
    entries: list
    major_sets: list = field(repr=False)
    lam: float = 0.0

    def cube_mass(self, idx: int) -> float:
        e = self.entries[idx]
        return float(self.system.cube_mass[e.level][e.cube])

    def major_mass(self, idx: int) -> float:
        return float(self.system.space.weight[self.major_sets[idx]].sum())

    def majors_disjoint(self) -> bool:
        seen = np.zeros(self.system.space.n_points, dtype=bool)
        for pts in self.major_sets:
            if np.any(seen[pts]):
                return False
            seen[pts] = True
        return True

    def min_major_fraction(self) -> float:
        return min(
            self.major_mass(i) / self.cube_mass(i) for i in range(len(self.entries))
        )

    def max_first_kind_fraction(self) -> float:
        """Largest mass fraction claimed by first-kind children of any
        stopping cube (the bound to check is 1/4)."""
        worst = 0.0
        for i, e in enumerate(self.entries):
            kids = [
                j for j, c in enumerate(self.entries)
                if c.parent_entry == i and c.kind == "first"
            ]
            if kids:
                frac = sum(self.cube_mass(j) for j in kids) / self.cube_mass(i)
                worst = max(worst, frac)
        return worst


def stopping_family(system: DyadicSystem, f: VectorField, b: np.ndarray,
                    lam: float | None = None, sigma: int = 0,
                    size_p: float = 2.0) -> SparseFamily:
    """Stopping-time construction driven by two criteria.

    From a stopping cube S, a subcube fires when either its average of
    ||f|| exceeds 4 <||f||>_S (first kind) or the accumulated squared
    martingale differences of b strictly between it and S exceed lam^2
    (second kind).  Every level-sigma cube seeds the family.  The major
    set E_S is S minus its next-generation stopping cubes; with
    lam = 2 ||b||_BMO (the default) the two mass bounds 1/4 + 1/4 give
    mu(E_S) >= mu(S)/2.
    """
    b = np.asarray(b, dtype=float)
    if lam is None:
        lam = 2.0 * bmo_norm(system, b)
    if lam <= 0:
        lam = 1e-300  # constant b: the second criterion can never fire anyway
    F = f.inner_norms(size_p)
    avg_f = [system.cube_averages(F, k) for k in range(system.depth + 1)]
    avg_b = [system.cube_averages(b, k) for k in range(system.depth + 1)]

    entries: list[StoppingCube] = []
    root_of: list[np.ndarray] = []
    acc_of: list[np.ndarray] = []

    n_sigma = system.n_cubes[sigma]
    for c in range(n_sigma):
        entries.append(StoppingCube(sigma, c, "initial", -1))
    root_of.append(np.arange(n_sigma))
    acc_of.append(np.zeros(n_sigma))

    for k in range(sigma + 1, system.depth + 1):
        par = system.parent[k]
        acc = acc_of[-1][par] + (avg_b[k] - avg_b[k - 1][par]) ** 2
        root = root_of[-1][par].copy()
        thresh = np.array([4.0 * avg_f[entries[r].level][entries[r].cube]
                           for r in root])
        first_fire = avg_f[k] > thresh
        second_fire = acc > lam**2
        fire = first_fire | second_fire
        for c in np.flatnonzero(fire):
            kind = "first" if first_fire[c] else "second"
            entries.append(StoppingCube(k, int(c), kind, int(root[c])))
            root[c] = len(entries) - 1
            acc[c] = 0.0
        root_of.append(root)
        acc_of.append(acc)

    # E_S = points whose minimal stopping ancestor is S (a partition)
    point_entry = root_of[-1][system.labels[system.depth]]
    major_sets = [np.flatnonzero(point_entry == i) for i in range(len(entries))]
    return SparseFamily(system, entries, major_sets, lam)


def paraproduct_stopping_bound(system: DyadicSystem, b: np.ndarray,
                               f: VectorField, s: float,
                               family: SparseFamily | None = None) -> dict:
    """Achieved constants along the paraproduct estimation chain.

    Returns the L_s norms of both sides of the regrouped square-function
    bound (lhs: sum over cubes of |D_Q b|^2 <||f||>_Q^2; rhs: BMO^2
    times the sparse overlap sum), the achieved sparse-sum operator
    constant, and the scalar-case L_2 paraproduct constant.
    """
    if not 1.0 < s < math.inf:
        raise ValueError("exponent must lie in (1, inf)")
    b = np.asarray(b, dtype=float)
    if family is None:
        family = stopping_family(system, f, b)
    w = system.space.weight
    F = f.inner_norms(2.0)

    lhs_sq = np.zeros_like(F)
    for i in range(system.depth):
        db = system.difference_values(b, i)
        ef = system.average_values(F, i)
        lhs_sq += db * db * ef * ef
    bmo = bmo_norm(system, b)
    overlap_sq = np.zeros_like(F)
    overlap = np.zeros_like(F)
    for e in family.entries:
        mask = system.labels[e.level] == e.cube
        avg = system.cube_averages(F, e.level)[e.cube]
        overlap_sq += mask * avg**2
        overlap += mask * avg
    lhs_norm = float((w * lhs_sq ** (s / 2.0)).sum() ** (1.0 / s))
    rhs_norm = bmo * float((w * overlap_sq ** (s / 2.0)).sum() ** (1.0 / s))

    f_norm = float((w * F**s).sum() ** (1.0 / s))
    sparse_norm = float((w * overlap**s).sum() ** (1.0 / s))

    pi = paraproduct(system, b, f)
    f_l2 = mixed_norm(f, MixedNormDescriptor(2.0, 2.0, f.d))
    pi_l2 = mixed_norm(pi, MixedNormDescriptor(2.0, 2.0, f.d))
    return {
        "lhs": lhs_norm,
        "rhs": rhs_norm,
        "constant": lhs_norm / rhs_norm if rhs_norm > 0 else 0.0,
        "sparse_constant": sparse_norm / f_norm if f_norm > 0 else 0.0,
        "l2_paraproduct_constant": (
            pi_l2 / (bmo * f_l2) if bmo > 0 and f_l2 > 0 else 0.0
        ),
        "lam": family.lam,
        "n_stopping": len(family.entries),
    }


def paraproduct_extraction_residual(kernel: TruncatedKernel,
                                    system: DyadicSystem, f: VectorField,
                                    g: VectorField) -> float:
    """Residual of the paraproduct extraction identity.

    sum_i (<T E_i f, D_i g> + <T D_i f, E_i g>) must equal the
    average-difference pair sums plus <Pi_b f, g> + <f, Pi_{b*} g> with
    b = T1, b* = T*1; returns the relative mismatch.
    """
    direct = 0.0
    for i in range(system.depth):
        Ef = VectorField(f.space, system.average_values(f.values, i))
        Eg = VectorField(g.space, system.average_values(g.values, i))
        Df = VectorField(f.space, system.difference_values(f.values, i))
        Dg = VectorField(g.space, system.difference_values(g.values, i))
        direct += pairing(kernel.apply(Ef), Dg) + pairing(kernel.apply(Df), Eg)

    sums = _pair_sums_by_level(kernel, system, f, g)
    pair_part = float(sum(s2 + s3 for _, s2, s3 in sums))
    b = extract_symbol(kernel)
    b_star = adjoint_symbol(kernel)
    para = pairing(paraproduct(system, b, f), g) + pairing(
        f, paraproduct(system, b_star, g))
    recombined = pair_part + para
    scale = max(abs(direct), abs(recombined), 1e-30)
    return abs(direct - recombined) / scale


# -- split differences and banded blocks -----------------------------------------

def split_difference(system: DyadicSystem, level: int, cube: int, m: int,
                     f: VectorField) -> tuple:
    """(D^m_S f, D^{[0,m)}_S f): martingale differences of f collected at
    relative depth exactly m below S, and strictly above depth m.

    Both annihilate constants; their sum is 1_S (E_{level+m+1} f - <f>_S).
    """
    if m < 1:
        raise ValueError("relative depth m must be >= 1")
    if level + m > system.depth - 1:
        raise ValueError("level + m must stay above the singleton level")
    mask = (system.labels[level] == cube).astype(float)[:, None]
    deep = system.difference_values(f.values, level + m) * mask
    shallow = (
        system.average_values(f.values, level + m)
        - system.average_values(f.values, level)
    ) * mask
    return (VectorField(f.space, deep), VectorField(f.space, shallow))


def depth_average(system: DyadicSystem, level: int, cube: int, m: int,
                  f: VectorField) -> VectorField:
    """E^m_S f: averages of f on the depth-m subcubes of S (zero off S)."""
    mask = (system.labels[level] == cube).astype(float)[:, None]
    return VectorField(f.space, system.average_values(f.values, level + m) * mask)


@dataclass
class BlockOperator:
    """One banded block A^m_S: assembled kernel plus its measured bounds."""

    level: int
    cube: int
    m: int
    flavor: str
    a: np.ndarray = field(repr=False)
    n_pairs: int = 0

    def apply(self, f: VectorField) -> VectorField:
        w = f.space.weight
        return VectorField(f.space, (self.a * w[None, :]) @ f.values)

    def bilinear(self, f: VectorField, g: VectorField) -> float:
        return pairing(self.apply(f), g)


def _descendants(system: DyadicSystem, level: int, cube: int,
                 target_level: int) -> np.ndarray:
    reps = np.array([pts[0] for pts in system.cube_points(target_level)])
    return np.flatnonzero(system.labels[level][reps] == cube)


def block_operator(kernel: TruncatedKernel, system: DyadicSystem, level: int,
                   cube: int, m: int, flavor: str, eps: float = 0.25,
                   m0: int | None = None) -> BlockOperator:
    """Assemble the band-m block of one stopping cube S.

    Pairs (P, Q) run over the depth-m descendants of S whose reference
    points fall in separation band m.  Flavors:

    - ``cancellative``: Haar against Haar on both sides,
    - ``para_left``: indicator against Haar with the average-difference
      kernel (1_P/mu(P) - 1_Q/mu(Q)) on the f side,
    - ``para_right``: the transpose arrangement.
    """
    if flavor not in ("cancellative", "para_left", "para_right"):
        raise ValueError(f"unknown block flavor {flavor!r}")
    delta = system.delta
    if m0 is None:
        m0 = m0_for(eps, delta)
    if m < m0:
        raise ValueError(f"band index m={m} below m0={m0}")
    i = level + m
    if i > system.depth - 1:
        raise ValueError("band level exceeds the finest difference level")
    space = system.space
    n = space.n_points
    desc = _descendants(system, level, cube, i)
    side = system.side(i)
    refs = system.refs[i]
    a = np.zeros((n, n))
    n_pairs = 0
    haars = {c: system.haar(i, c) for c in desc}
    masses = system.cube_mass[i]
    core = _pairing_core(kernel)

    for P in desc:
        hp = haars[P]
        pts_p = system.cube_points(i)[P]
        for Q in desc:
            d_ref = float(space.dist[refs[P], refs[Q]])
            if band_of_pair(d_ref, side, eps, m0, delta) != m:
                continue
            n_pairs += 1
            hq = haars[Q]
            pts_q = system.cube_points(i)[Q]
            if flavor == "cancellative":
                for alpha in range(1, hp.n_children):
                    hpa = hp.to_function(alpha, n)
                    for beta in range(1, hq.n_children):
                        hqb = hq.to_function(beta, n)
                        coeff = float(hqb @ core @ hpa)
                        a[np.ix_(pts_q, pts_p)] += (
                            coeff * np.outer(hqb[pts_q], hpa[pts_p]))
            elif flavor == "para_left":
                ind_p = np.zeros(n)
                ind_p[pts_p] = 1.0
                for beta in range(1, hq.n_children):
                    hqb = hq.to_function(beta, n)
                    coeff = float(hqb @ core @ ind_p)
                    col = np.zeros(n)
                    col[pts_p] += 1.0 / masses[P]
                    col[pts_q] -= 1.0 / masses[Q]
                    sel = np.unique(np.concatenate([pts_p, pts_q]))
                    a[np.ix_(pts_q, sel)] += coeff * np.outer(hqb[pts_q], col[sel])
            else:  # para_right
                ind_q = np.zeros(n)
                ind_q[pts_q] = 1.0
                for alpha in range(1, hp.n_children):
                    hpa = hp.to_function(alpha, n)
                    coeff = float(ind_q @ core @ hpa)
                    row = np.zeros(n)
                    row[pts_q] += 1.0 / masses[Q]
                    row[pts_p] -= 1.0 / masses[P]
                    sel = np.unique(np.concatenate([pts_p, pts_q]))
                    a[np.ix_(sel, pts_p)] += coeff * np.outer(row[sel], hpa[pts_p])
    return BlockOperator(level, cube, m, flavor, a, n_pairs)


def block_size_constant(system: DyadicSystem, kernel: TruncatedKernel,
                        block: BlockOperator) -> float:
    """Achieved constant in |a(u, v)| <= C omega(delta^m) (1_{SxS}/mu(S)
    + sum over depth-m subcubes Q of 1_{QxQ}/mu(Q))."""
    i = block.level + block.m
    pts_s = system.cube_points(block.level)[block.cube]
    mass_s = system.cube_mass[block.level][block.cube]
    n = system.space.n_points
    bound = np.zeros((n, n))
    bound[np.ix_(pts_s, pts_s)] = 1.0 / mass_s
    for Q in _descendants(system, block.level, block.cube, i):
        pts_q = system.cube_points(i)[Q]
        bound[np.ix_(pts_q, pts_q)] += 1.0 / system.cube_mass[i][Q]
    om = float(kernel.omega(min(system.delta**block.m, 1.0)))
    if om == 0.0:
        return math.inf if np.abs(block.a).max() > 0 else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.abs(block.a) / (om * bound)
    sel = bound > 0
    outside = np.abs(block.a[~sel]).max(initial=0.0)
    if outside > 0:
        return math.inf
    return float(ratios[sel].max(initial=0.0))


def block_domination_constant(system: DyadicSystem, kernel: TruncatedKernel,
                              block: BlockOperator, f: VectorField) -> float:
    """Achieved pointwise constant in
    ||(A^m_S / omega(delta^m)) f|| <= C (E_S ||f|| + E^m_S ||f||)."""
    om = float(kernel.omega(min(system.delta**block.m, 1.0)))
    if om == 0.0:
        return 0.0
    out = block.apply(f).inner_norms(2.0) / om
    F = f.inner_norms(2.0)
    i = block.level + block.m
    mask = system.labels[block.level] == block.cube
    es = system.average_values(F, block.level) * mask
    em = system.average_values(F, i) * mask
    rhs = es + em
    sel = rhs > 0
    if np.any(~sel & (out > 1e-12)):
        return math.inf
    if not sel.any():
        return 0.0
    return float((out[sel] / rhs[sel]).max())


def block_surely_vanishes(kernel: TruncatedKernel, system: DyadicSystem,
                          pair_level: int, m: int, eps: float = 0.25,
                          m0: int | None = None) -> bool:
    """True when every band-m pair at pair_level is provably outside the
    kernel's reach: the band's lower reference-point distance minus both
    cube spreads already reaches the outer radius R."""
    if m0 is None:
        m0 = m0_for(eps, system.delta)
    if m <= m0:
        return False
    side = system.side(pair_level)
    band_low = 0.5 * eps * system.delta ** (1 - m) * side
    spread = 0.0
    centers = system.refs[pair_level]
    for c, pts in enumerate(system.cube_points(pair_level)):
        spread = max(spread, float(system.space.dist[centers[c], pts].max()))
    return band_low - 2.0 * spread >= kernel.R


# -- reorganized sums over random grids -------------------------------------------

def _pair_sums_by_level(kernel: TruncatedKernel, system: DyadicSystem,
                        f: VectorField, g: VectorField):
    """Per level, the three pair-sum matrices contracted to totals:
    T1 = <T D_P f, D_Q g>, T2 = (<f>_P - <f>_Q) . <T 1_P, D_Q g>,
    T3 = <T D_P f, 1_Q> . (<g>_Q - <g>_P); returns [(S1, S2, S3), ...].
    """
    mats = _pair_matrices_by_level(kernel, system, f, g)
    return [
        (float(M1.sum()), float(T2.sum()), float(T3.sum()))
        for (M1, T2, T3) in mats
    ]


def _pair_matrices_by_level(kernel: TruncatedKernel, system: DyadicSystem,
                            f: VectorField, g: VectorField):
    """The (n_i, n_i) matrices of T(P, Q) values, rows = Q, cols = P."""
    space = system.space
    w = space.weight
    K = kernel.values
    out = []
    for i in range(system.depth):
        ni = system.n_cubes[i]
        lab = system.labels[i]
        G = np.zeros((space.n_points, ni))
        G[np.arange(space.n_points), lab] = 1.0
        Df = system.difference_values(f.values, i)
        Dg = system.difference_values(g.values, i)
        avg_f = system.cube_averages(f.values, i)
        avg_g = system.cube_averages(g.values, i)

        M1 = np.zeros((ni, ni))
        V2 = np.zeros((ni, ni, f.d))  # <T 1_P, D_Q g> per component
        V3 = np.zeros((ni, ni, f.d))  # <T D_P f, 1_Q> per component
        for c in range(f.d):
            left = (w * Dg[:, c])[:, None] * K  # mu_u Dg_u K(u, v)
            M1 += G.T @ (left * (w * Df[:, c])[None, :]) @ G
            V2[:, :, c] = G.T @ (left * w[None, :]) @ G
            V3[:, :, c] = G.T @ ((w[:, None] * K) * (w * Df[:, c])[None, :]) @ G
        diff_f = avg_f[:, None, :] - avg_f[None, :, :]   # <f>_P - <f>_Q at [P, Q]
        diff_g = avg_g[:, None, :] - avg_g[None, :, :]
        # V2 rows are Q, cols are P: contract with (<f>_P - <f>_Q)
        T2 = np.einsum("qpc,pqc->qp", V2, diff_f)
        T3 = np.einsum("qpc,qpc->qp", V3, diff_g)
        out.append((M1, T2, T3))
    return out


def reorganized_pair_sum(kernel: TruncatedKernel, system: DyadicSystem,
                         f: VectorField, g: VectorField, eps: float = 0.25,
                         m0: int | None = None) -> dict:
    """Direct and ancestor-normalized pair sums for one realized system.

    direct: sum over levels and same-level pairs of T(P, Q).
    weighted: pairs whose band-m ancestor level i - m exists are
    restricted to those sharing that ancestor and divided by the exact
    conditional sharing probability; pairs whose banded ancestor level
    would precede the coarsest generation have no randomization room in
    a finite-depth system and are carried unreorganized (factor 1).
    The expectation of ``weighted`` over the random grid equals that of
    ``direct`` exactly.  Factors 1/P outside [1, 2] are counted, not
    clamped.
    """
    delta = system.delta
    if m0 is None:
        m0 = m0_for(eps, delta)
    mats = _pair_matrices_by_level(kernel, system, f, g)
    direct = 0.0
    weighted = 0.0
    out_of_range = 0
    max_factor = 0.0
    for i, (M1, T2, T3) in enumerate(mats):
        ni = M1.shape[0]
        total = M1 + T2 + T3
        direct += float(total.sum())
        if i == 0:
            # every band is >= m0 >= 1, so the whole coarsest generation
            # is carried unreorganized
            weighted += float(total.sum())
            continue
        side = system.side(i)
        refs = system.refs[i]
        d_ref = system.space.dist[np.ix_(refs, refs)]
        reps = np.array([pts[0] for pts in system.cube_points(i)])
        for P in range(ni):
            for Q in range(ni):
                t = total[Q, P]
                m = band_of_pair(float(d_ref[P, Q]), side, eps, m0, delta)
                k = i - m
                if k < 0:
                    weighted += t
                    continue
                if system.labels[k][reps[P]] != system.labels[k][reps[Q]]:
                    continue
                prob = system.conditional_ancestor_probability(
                    i, k, int(reps[P]), int(reps[Q]))
                if t != 0.0:
                    factor = 1.0 / prob
                    max_factor = max(max_factor, factor)
                    if factor > 2.0 + 1e-12:
                        out_of_range += 1
                weighted += t / prob
    return {
        "direct": direct,
        "weighted": weighted,
        "max_factor": max_factor,
        "factors_out_of_range": out_of_range,
    }


def reorganized_sum_check(kernel: TruncatedKernel, family, f: VectorField,
                          g: VectorField, n_systems: int, seed: int,
                          eps: float = 0.25) -> dict:
    """Paired Monte-Carlo test of the expectation identity
    E[weighted] = E[direct] over sampled systems."""
    diffs = np.empty(n_systems)
    directs = np.empty(n_systems)
    out_of_range = 0
    for t in range(n_systems):
        rng = np.random.default_rng(np.random.SeedSequence([seed, t]))
        system = family.sample(rng)
        res = reorganized_pair_sum(kernel, system, f, g, eps=eps)
        diffs[t] = res["weighted"] - res["direct"]
        directs[t] = res["direct"]
        out_of_range += res["factors_out_of_range"]
    se = float(diffs.std(ddof=1) / math.sqrt(n_systems)) if n_systems > 1 else 0.0
    return {
        "mean_diff": float(diffs.mean()),
        "se_diff": se,
        "mean_direct": float(directs.mean()),
        "n_systems": n_systems,
        "factors_out_of_range": out_of_range,
    }
