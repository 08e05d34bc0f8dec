"""Finitely truncated kernels with measured standard-estimate constants.

A truncated kernel is an N x N matrix K with zero diagonal supported on
the annulus r <= d(u, v) < R, together with a modulus of continuity
omega controlling its off-diagonal smoothness.  All "lesssim" statements
of the underlying estimates are replaced by measured constants: the
verifier scans every pair (size, truncation) and every admissible triple
(smoothness) and reports the achieved maxima.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import VectorField
from .space import FiniteMetricMeasureSpace, _LineCursor, make_path_space

__all__ = [
    "ModulusOmega",
    "TruncatedKernel",
    "StandardEstimateReport",
    "finite_hilbert_kernel",
    "random_truncated_kernel",
    "verify_standard_estimates",
    "dini_norm",
    "save_kernel",
    "load_kernel",
]


class ModulusOmega:
    """Modulus of continuity on [0, 1]: continuous, nondecreasing, doubling.

    Two flavors: a power law t**a with a > 0 (the common case in the
    literature) or a tabulated nondecreasing function given by linear
    interpolation on a grid that must start at t = 0.
    """

    def __init__(self, kind: str, exponent: float | None = None,
                 ts: np.ndarray | None = None, vals: np.ndarray | None = None):
        if kind == "power":
            if exponent is None or not (exponent > 0):
                raise ValueError("power-law modulus needs a positive exponent")
            self.kind = "power"
            self.exponent = float(exponent)
            self.ts = None
            self.vals = None
        elif kind == "table":
            ts = np.asarray(ts, dtype=float)
            vals = np.asarray(vals, dtype=float)
            if ts.ndim != 1 or ts.shape != vals.shape or ts.size < 2:
                raise ValueError("tabulated modulus needs matching 1-d grids")
            if ts[0] != 0.0 or ts[-1] != 1.0 or np.any(np.diff(ts) <= 0):
                raise ValueError("modulus grid must increase from 0 to 1")
            if np.any(vals < 0) or np.any(np.diff(vals) < 0):
                raise ValueError("modulus values must be nonnegative and nondecreasing")
            self.kind = "table"
            self.exponent = None
            self.ts = ts
            self.vals = vals
        else:
            raise ValueError(f"unknown modulus kind {kind!r}")

    @classmethod
    def power(cls, exponent: float) -> "ModulusOmega":
        return cls("power", exponent=exponent)

    @classmethod
    def table(cls, ts, vals) -> "ModulusOmega":
        return cls("table", ts=ts, vals=vals)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > 1.0 + 1e-12):
            raise ValueError("modulus evaluated outside [0, 1]")
        t = np.clip(t, 0.0, 1.0)
        if self.kind == "power":
            out = t**self.exponent
        else:
            out = np.interp(t, self.ts, self.vals)
        return float(out) if out.ndim == 0 else out

    def value_at_zero(self) -> float:
        return 0.0 if self.kind == "power" else float(self.vals[0])

    def doubling_constant(self, samples: int = 256) -> float:
        """Max of omega(2t)/omega(t) over a geometric grid of t in (0, 1/2]."""
        if self.kind == "power":
            return 2.0**self.exponent
        ts = 0.5 * np.geomspace(1e-9, 1.0, samples)
        num = self(2.0 * ts)
        den = self(ts)
        pos = den > 0
        if np.any(~pos & (num > 0)):
            return math.inf
        return float((num[pos] / den[pos]).max()) if pos.any() else 1.0

    def descriptor(self) -> str:
        if self.kind == "power":
            return f"power {self.exponent!r}"
        return f"table {self.ts.size}"

    def __repr__(self) -> str:
        return f"ModulusOmega({self.descriptor()})"


def dini_norm(omega: ModulusOmega, nu: float, rel_tol: float = 1e-9) -> float:
    """Weighted Dini norm: integral over (0, 1] of omega(t) (1 + log 1/t)^nu dt/t.

    Substituting t = exp(-x) turns this into the integral of
    omega(exp(-x)) (1 + x)^nu over [0, inf), which is smooth for power
    laws; the tail is truncated where the integrand drops below 1e-12
    of its peak and the result is computed by composite Simpson rule
    with doubling refinement until self-consistent to ``rel_tol``.
    Divergent integrands (omega not vanishing at 0) report inf.
    """
    if nu < 0:
        raise ValueError("Dini order nu must be nonnegative")
    if omega.value_at_zero() > 0:
        return math.inf

    def integrand(x):
        return omega(np.exp(-x)) * (1.0 + x) ** nu

    peak = max(float(integrand(np.array(0.0))), 1e-300)
    upper = 16.0
    while float(integrand(np.array(upper))) > 1e-12 * peak:
        upper *= 2.0
        if upper > 1e9:  # pathologically slow decay: treat as divergent
            return math.inf

    n = 1024
    prev = _simpson(integrand, upper, n)
    while n < 2**21:
        n *= 2
        cur = _simpson(integrand, upper, n)
        if abs(cur - prev) <= rel_tol * max(abs(cur), 1e-300):
            return cur
        prev = cur
    return prev


def _simpson(fn, upper: float, n: int) -> float:
    xs = np.linspace(0.0, upper, n + 1)
    ys = fn(xs)
    h = upper / n
    return float(h / 3.0 * (ys[0] + ys[-1] + 4.0 * ys[1:-1:2].sum() + 2.0 * ys[2:-1:2].sum()))


@dataclass
class StandardEstimateReport:
    """Measured standard-estimate constants for one kernel."""

    c_size: float
    c_smooth: float
    c_omega: float
    truncation_ok: bool

    @property
    def all_finite(self) -> bool:
        return (
            math.isfinite(self.c_size)
            and math.isfinite(self.c_smooth)
            and math.isfinite(self.c_omega)
        )


class TruncatedKernel:
    """Kernel matrix with truncation radii r < R and modulus omega.

    The constructor enforces shape, zero diagonal and 0 < r < R < inf
    (genuinely singular kernels are out of scope) but deliberately does
    not enforce the truncation support, so that hand-built violations
    can be fed to the verifier as negative controls.
    """

    def __init__(self, space: FiniteMetricMeasureSpace, values, r: float,
                 R: float, omega: ModulusOmega, tag: str | None = None):
        values = np.array(values, dtype=float)
        n = space.n_points
        if values.shape != (n, n):
            raise ValueError("kernel matrix shape must match the space")
        if not np.all(np.isfinite(values)):
            raise ValueError("kernel values must be finite")
        if np.any(np.diag(values) != 0):
            raise ValueError("kernel diagonal must be zero")
        r = float(r)
        R = float(R)
        if not (0 < r <= R < math.inf):
            raise ValueError("truncation radii must satisfy 0 < r <= R < inf")
        self.space = space
        self.values = values
        self.r = r
        self.R = R
        self.omega = omega
        self.tag = tag
        self._weighted = values * space.weight[None, :]

    @property
    def matrix(self) -> np.ndarray:
        return self.values

    @property
    def truncation_index(self) -> float:
        """n = 1 + log(R/r), natural logarithm."""
        return 1.0 + math.log(self.R / self.r)

    # -- operator action ----------------------------------------------------
    def apply(self, f: VectorField) -> VectorField:
        """(Tf)(u) = sum_v K(u, v) f(v) mu_v, componentwise in d."""
        if not self.space.compatible_with(f.space):
            raise ValueError("field lives on a different space")
        return VectorField(self.space, self._weighted @ f.values)

    def apply_adjoint(self, g: VectorField) -> VectorField:
        """(T*g)(u) = sum_v K(v, u) g(v) mu_v (adjoint in the mu pairing)."""
        if not self.space.compatible_with(g.space):
            raise ValueError("field lives on a different space")
        return VectorField(self.space,
                           self.values.T @ (self.space.weight[:, None] * g.values))

    def schur_row_bound(self) -> dict:
        """Max weighted absolute row and column sums.

        max_row_sum = max_u sum_v |K(u,v)| mu_v, max_col_sum the
        transpose quantity; both are bounded by a constant times the
        truncation index for standard kernels.
        """
        a = np.abs(self.values)
        row = a @ self.space.weight
        col = a.T @ self.space.weight
        return {
            "max_row_sum": float(row.max()),
            "max_col_sum": float(col.max()),
        }

    def __repr__(self) -> str:
        return (
            f"TruncatedKernel(n={self.space.n_points}, r={self.r:g}, "
            f"R={self.R:g}, omega={self.omega.descriptor()}, tag={self.tag!r})"
        )


def finite_hilbert_kernel(n: int) -> TruncatedKernel:
    """K(i, j) = 1/(i - j) on the path space, r = 1, R = n, omega(t) = t."""
    n = int(n)
    if n < 2:
        raise ValueError("finite Hilbert kernel needs at least two points")
    space = make_path_space(n)
    idx = np.arange(n)
    diff = idx[:, None] - idx[None, :]
    with np.errstate(divide="ignore"):
        values = np.where(diff != 0, 1.0 / np.where(diff == 0, 1, diff), 0.0)
    return TruncatedKernel(space, values, r=1.0, R=float(n),
                           omega=ModulusOmega.power(1.0), tag=f"hilbert:{n}")


def _smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def random_truncated_kernel(space: FiniteMetricMeasureSpace, r: float, R: float,
                            seed: int, omega: ModulusOmega | None = None,
                            n_features: int = 4) -> TruncatedKernel:
    """Seeded random kernel satisfying the truncation exactly.

    Construction: K(u, v) = phi(d(u, v)) g(u, v) / V(u, v) with phi a
    cutoff supported on [r, R) (positive at d = r, smooth roll-off at R)
    and g a smooth strictly positive random field built from distance
    features to random anchor points.  Same seed gives bit-identical
    matrices.
    """
    r = float(r)
    R = float(R)
    if not (0 < r < R):
        raise ValueError("need 0 < r < R")
    if omega is None:
        omega = ModulusOmega.power(1.0)
    rng = np.random.default_rng(seed)
    n = space.n_points
    d = space.dist
    w = (R - r) / 8.0
    phi = _smoothstep((d - r) / w + 0.25) * (1.0 - _smoothstep((d - (R - w)) / w))
    phi = np.where((d >= r) & (d < R), phi, 0.0)

    scale = max(space.diameter, 1.0)
    g = np.ones((n, n))
    coeffs = rng.uniform(-1.0, 1.0, n_features)
    for j in range(n_features):
        anchor_u = int(rng.integers(0, n))
        anchor_v = int(rng.integers(0, n))
        freq_u = rng.uniform(0.5, 2.0) * math.pi
        freq_v = rng.uniform(0.5, 2.0) * math.pi
        phase_u = rng.uniform(0.0, 2.0 * math.pi)
        phase_v = rng.uniform(0.0, 2.0 * math.pi)
        psi_u = np.cos(freq_u * d[:, anchor_u] / scale + phase_u)
        psi_v = np.cos(freq_v * d[:, anchor_v] / scale + phase_v)
        g += (0.45 / n_features) * coeffs[j] * psi_u[:, None] * psi_v[None, :]

    vmat = space.volume_at_distance_matrix()
    values = phi * g / vmat
    np.fill_diagonal(values, 0.0)
    return TruncatedKernel(space, values, r=r, R=R, omega=omega)


def verify_standard_estimates(kernel: TruncatedKernel) -> StandardEstimateReport:
    """Exhaustive scan of the size, smoothness and truncation estimates.

    c_size   = max over u != v of |K(u,v)| V(u,v)
    c_smooth = max over triples (u, v, w), v != w, d(v,w) <= d(u,v)/2, of
               (|K(u,v)-K(u,w)| + |K(v,u)-K(w,u)|) V(u,v) / omega(d(v,w)/d(u,v))
    A zero modulus value against a nonzero numerator reports inf.
    """
    space = kernel.space
    K = kernel.values
    d = space.dist
    n = space.n_points
    off = ~np.eye(n, dtype=bool)

    outside = (d < kernel.r) | (d >= kernel.R)
    truncation_ok = bool(np.all(K[outside & off] == 0.0))

    vmat = space.volume_at_distance_matrix()
    c_size = float(np.max(np.abs(K[off]) * vmat[off])) if n > 1 else 0.0

    c_smooth = 0.0
    for u in range(n):
        du = d[u]  # d(u, .)
        # admissible (v, w): v != u, w != u, v != w, d(v, w) <= d(u, v)/2
        mask = (du[:, None] > 0) & (du[None, :] > 0)
        np.fill_diagonal(mask, False)
        mask &= d <= 0.5 * du[:, None]
        if not mask.any():
            continue
        num = np.abs(K[u][:, None] - K[u][None, :]) + np.abs(K[:, u][:, None] - K[:, u][None, :])
        ratio_arg = np.where(mask, d / np.where(du[:, None] > 0, du[:, None], 1.0), 0.0)
        om = kernel.omega(np.clip(ratio_arg, 0.0, 1.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = num * vmat[u][:, None] / om
        sel = mask & (num > 0)
        if np.any(sel & (om == 0.0)):
            c_smooth = math.inf
            break
        sel &= om > 0
        if sel.any():
            c_smooth = max(c_smooth, float(ratios[sel].max()))

    return StandardEstimateReport(
        c_size=c_size,
        c_smooth=c_smooth,
        c_omega=kernel.omega.doubling_constant(),
        truncation_ok=truncation_ok,
    )


# -- text serialization ----------------------------------------------------
#
#   czkit-kernel 1
#   n <N>
#   tag <hilbert:N | explicit>
#   r <repr float>          (explicit only)
#   R <repr float>          (explicit only)
#   omega power <repr a>    (explicit only; or: omega table <k> + k lines "t v")
#   space
#   ... embedded space block ...
#   values                  (explicit only)
#   <N rows of N repr floats>
#   end


def save_kernel(kernel: TruncatedKernel, path) -> None:
    lines = ["czkit-kernel 1", f"n {kernel.space.n_points}"]
    closed_form = kernel.tag is not None and kernel.tag.startswith("hilbert:")
    lines.append(f"tag {kernel.tag if closed_form else 'explicit'}")
    if not closed_form:
        lines.append(f"r {float(kernel.r)!r}")
        lines.append(f"R {float(kernel.R)!r}")
        if kernel.omega.kind == "power":
            lines.append(f"omega power {kernel.omega.exponent!r}")
        else:
            lines.append(f"omega table {kernel.omega.ts.size}")
            for t, v in zip(kernel.omega.ts, kernel.omega.vals):
                lines.append(f"{float(t)!r} {float(v)!r}")
        _write_space_lines(kernel.space, lines)
        lines.append("values")
        for row in kernel.values:
            lines.append(" ".join(repr(float(x)) for x in row))
    lines.append("end")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_space_lines(space: FiniteMetricMeasureSpace, lines: list) -> None:
    lines.append("space")
    closed_form = space.tag is not None and space.tag.startswith("path:")
    lines.append(f"tag {space.tag if closed_form else 'explicit'}")
    lines.append("weights")
    lines.extend(repr(float(w)) for w in space.weight)
    if not closed_form:
        lines.append("dist")
        for row in space.dist:
            lines.append(" ".join(repr(float(x)) for x in row))


def load_kernel(path) -> TruncatedKernel:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    cursor = _LineCursor(lines, "kernel file")
    cursor.expect("czkit-kernel 1")
    n = int(cursor.take_kv("n"))
    tag = cursor.take_kv("tag")
    if tag.startswith("hilbert:"):
        if int(tag.split(":", 1)[1]) != n:
            raise ValueError("hilbert tag disagrees with point count")
        cursor.expect("end")
        return finite_hilbert_kernel(n)
    if tag != "explicit":
        raise ValueError(f"unknown kernel tag {tag!r}")
    r = float(cursor.take_kv("r"))
    R = float(cursor.take_kv("R"))
    omega_line = cursor.take_kv("omega").split()
    if omega_line[0] == "power":
        omega = ModulusOmega.power(float(omega_line[1]))
    elif omega_line[0] == "table":
        k = int(omega_line[1])
        rows = [cursor.take().split() for _ in range(k)]
        omega = ModulusOmega.table([float(a) for a, _ in rows], [float(b) for _, b in rows])
    else:
        raise ValueError("malformed omega descriptor")
    cursor.expect("space")
    space_tag = cursor.take_kv("tag")
    cursor.expect("weights")
    weight = np.array([float(cursor.take()) for _ in range(n)])
    if space_tag.startswith("path:"):
        idx = np.arange(n)
        dist = np.abs(idx[:, None] - idx[None, :]).astype(float)
        space = FiniteMetricMeasureSpace(dist, weight, tag=space_tag)
    else:
        cursor.expect("dist")
        dist = np.array([[float(x) for x in cursor.take().split()] for _ in range(n)])
        space = FiniteMetricMeasureSpace(dist, weight)
    cursor.expect("values")
    values = np.array([[float(x) for x in cursor.take().split()] for _ in range(n)])
    cursor.expect("end")
    return TruncatedKernel(space, values, r=r, R=R, omega=omega)
