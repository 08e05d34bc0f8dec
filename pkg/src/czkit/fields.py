"""Vector fields on a finite space and mixed L_s(mu; l_p^d) norm machinery.

A vector field assigns a point of R^d to every point of the space; its
mixed norm is the weighted outer l_s norm of the pointwise inner l_p
norms.  The duality map produces the norming functional used by the
generalized power iteration in :mod:`czkit.norms`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .space import FiniteMetricMeasureSpace

__all__ = [
    "MixedNormDescriptor",
    "VectorField",
    "mixed_norm",
    "pairing",
    "duality_map",
]


def _conjugate(e: float) -> float:
    if e == 1.0:
        return math.inf
    if math.isinf(e):
        return 1.0
    return e / (e - 1.0)


@dataclass(frozen=True)
class MixedNormDescriptor:
    """Exponents (s, p) and inner dimension d of L_s(mu; l_p^d).

    The outer exponent s must lie in (1, inf); the inner exponent p may
    be 1 or inf (handled as max), in which case the duality-map based
    iteration is not available and oracles must be used instead.
    """

    s: float
    p: float
    d: int = 1

    def __post_init__(self):
        if not (1.0 < self.s < math.inf):
            raise ValueError("outer exponent s must be in (1, inf)")
        if not (1.0 <= self.p):
            raise ValueError("inner exponent p must be >= 1")
        if self.d < 1:
            raise ValueError("inner dimension d must be >= 1")

    @property
    def s_conj(self) -> float:
        return _conjugate(self.s)

    @property
    def p_conj(self) -> float:
        return _conjugate(self.p)

    def dual(self) -> "MixedNormDescriptor":
        return MixedNormDescriptor(self.s_conj, self.p_conj, self.d)


def theta_exponent(p: float, q: float) -> float:
    """Predicted norm-growth exponent 1/p - 1/q for type p, cotype q."""
    return 1.0 / p - 1.0 / q


@dataclass(frozen=True)
class VectorField:
    """Function from the space's points into R^d, stored as (N, d) values."""

    space: FiniteMetricMeasureSpace
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != self.space.n_points:
            raise ValueError("field values must be (n_points, d)")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zeros(cls, space, d: int = 1) -> "VectorField":
        return cls(space, np.zeros((space.n_points, d)))

    @classmethod
    def ones(cls, space, d: int = 1) -> "VectorField":
        return cls(space, np.ones((space.n_points, d)))

    @classmethod
    def random(cls, space, d: int, rng) -> "VectorField":
        return cls(space, rng.standard_normal((space.n_points, d)))

    def inner_norms(self, p: float) -> np.ndarray:
        """Pointwise inner norms ||f(u)||_{l_p^d} as an (N,) array."""
        a = np.abs(self.values)
        if math.isinf(p):
            return a.max(axis=1)
        if p == 1.0:
            return a.sum(axis=1)
        if p == 2.0:
            return np.sqrt((a * a).sum(axis=1))
        return (a**p).sum(axis=1) ** (1.0 / p)

    def __add__(self, other: "VectorField") -> "VectorField":
        self._check_compatible(other)
        return VectorField(self.space, self.values + other.values)

    def __sub__(self, other: "VectorField") -> "VectorField":
        self._check_compatible(other)
        return VectorField(self.space, self.values - other.values)

    def __mul__(self, c: float) -> "VectorField":
        return VectorField(self.space, self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self) -> "VectorField":
        return VectorField(self.space, -self.values)

    def _check_compatible(self, other: "VectorField") -> None:
        if not self.space.compatible_with(other.space) or other.d != self.d:
            raise ValueError("fields live on different spaces or dimensions")


def mixed_norm(f: VectorField, desc: MixedNormDescriptor) -> float:
    """(sum_u mu_u ||f(u)||_{l_p}^s)^{1/s}."""
    inner = f.inner_norms(desc.p)
    return float((f.space.weight * inner**desc.s).sum() ** (1.0 / desc.s))


def pairing(f: VectorField, g: VectorField) -> float:
    """<f, g> = sum_u mu_u f(u) . g(u), contracting the inner index."""
    if not f.space.compatible_with(g.space):
        raise ValueError("fields live on different spaces")
    if g.d != f.d:
        raise ValueError("pairing requires equal inner dimensions")
    return float(np.einsum("u,ud,ud->", f.space.weight, f.values, g.values))


def duality_map(f: VectorField, desc: MixedNormDescriptor) -> VectorField:
    """Norming functional g with <f, g> = ||f|| and ||g||_{dual} = 1.

    For p in (1, inf) this is the explicit signed-power formula; for
    p in {1, inf} a subgradient is selected (p = inf puts equal mass on
    the maximal coordinates, p = 1 takes the sign vector).
    """
    norm = mixed_norm(f, desc)
    if norm == 0.0:
        raise ValueError("duality map of the zero field is undefined")
    v = f.values
    p, s = desc.p, desc.s
    inner = f.inner_norms(p)
    pos = inner > 0

    if math.isinf(p):
        a = np.abs(v)
        is_max = a >= inner[:, None] - 1e-15 * np.maximum(inner[:, None], 1.0)
        counts = is_max.sum(axis=1)
        g_inner = np.where(is_max, np.sign(v), 0.0) / counts[:, None]
    elif p == 1.0:
        g_inner = np.sign(v)
    else:
        g_inner = np.zeros_like(v)
        g_inner[pos] = (
            np.sign(v[pos])
            * np.abs(v[pos]) ** (p - 1.0)
            / inner[pos, None] ** (p - 1.0)
        )
    # g_inner now has unit dual inner norm on rows with f(u) != 0 and
    # <f(u), g_inner(u)> = ||f(u)||_p; rescale rows and normalize.
    g = np.zeros_like(v)
    g[pos] = g_inner[pos] * (inner[pos, None] ** (s - 1.0)) / norm ** (s - 1.0)
    return VectorField(f.space, g)
