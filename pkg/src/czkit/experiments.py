"""Experiment orchestration: verification suites, scaling studies, reports.

A config (key = value text file) fixes the instance family, the N grid,
mixed-norm exponents and seeds; `run_verification_suite` executes every
module invariant at the configured scale and `run_scaling` estimates
operator norms across the grid and fits the growth exponent against the
truncation index n = 1 + log(R/r).  Reports are emitted byte-stably as
CSV, JSON lines, or two-column plot data; figures are rendered alongside
by :mod:`czkit.plots`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import calculus as calc
from .dyadic import (
    ShiftedGridFamily,
    boundary_layer_exact,
    boundary_layer_probability,
    common_ancestor_exact,
    common_ancestor_probability,
    m0_for,
    wilson_interval,
)
from .fields import MixedNormDescriptor, VectorField
from .kernel import (
    TruncatedKernel,
    finite_hilbert_kernel,
    random_truncated_kernel,
    verify_standard_estimates,
)
from .norms import (
    MatrixOperator,
    operator_norm_lower_bound,
    operator_norm_oracle_small,
    spectral_norm_oracle,
)
from .space import make_path_space

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "SuiteEntry",
    "VerificationReport",
    "run_verification_suite",
    "ScalingReport",
    "run_scaling",
    "emit_report",
    "format_float",
    "fit_theta",
]


class ConfigError(ValueError):
    """Invalid experiment configuration."""


_FAMILIES = ("hilbert", "random-kernel", "hilbert-corrupted")


@dataclass
class ExperimentConfig:
    family: str = "hilbert"
    n_grid: tuple = (64,)
    s: float = 2.0
    p: float = 2.0
    d: int | str = 1          # fixed inner dimension, or "log2n"
    systems: int = 5
    trials: int = 10_000
    r: float = 1.0
    R: float | str = "auto"   # "auto": R = N for path instances
    eps: float = 0.25
    seed: int = 0
    out: str = "czkit-out"

    def validate(self) -> None:
        if self.family not in _FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        if not self.n_grid:
            raise ConfigError("n_grid must be nonempty")
        if any(int(n) < 2 for n in self.n_grid):
            raise ConfigError("all N values must be >= 2")
        if self.systems < 1:
            raise ConfigError("need at least one system seed")
        if not 1.0 < self.s < math.inf:
            raise ConfigError("outer exponent s must lie in (1, inf)")
        if self.p < 1.0:
            raise ConfigError("inner exponent p must be >= 1")
        if isinstance(self.d, str) and self.d != "log2n":
            raise ConfigError("d must be an integer or 'log2n'")
        if not isinstance(self.d, str) and int(self.d) < 1:
            raise ConfigError("inner dimension must be >= 1")
        if self.trials < 1:
            raise ConfigError("need at least one trial")
        if not 0.0 < self.eps <= 1.0:
            raise ConfigError("eps must lie in (0, 1]")

    def inner_dim(self, n: int) -> int:
        if self.d == "log2n":
            return max(1, int(math.log2(n)))
        return int(self.d)

    def kernel_for(self, n: int, seed: int) -> TruncatedKernel:
        R = float(n) if self.R == "auto" else float(self.R)
        if self.family == "hilbert":
            return finite_hilbert_kernel(n)
        if self.family == "random-kernel":
            return random_truncated_kernel(make_path_space(n), self.r, R, seed)
        # negative-control family: the Hilbert values with the inner radius
        # declared as 2, so every distance-1 entry violates the truncation
        kernel = finite_hilbert_kernel(n)
        return TruncatedKernel(kernel.space, kernel.values, r=2.0, R=float(n),
                               omega=kernel.omega)


_CONFIG_KEYS = {
    "family": str,
    "n_grid": "int_list",
    "s": float,
    "p": float,
    "d": "int_or_tag",
    "systems": int,
    "trials": int,
    "r": float,
    "R": "float_or_auto",
    "eps": float,
    "seed": int,
    "out": str,
}


def parse_config(path) -> ExperimentConfig:
    """Parse the key = value config format (``#`` starts a comment)."""
    cfg = ExperimentConfig()
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    for ln_no, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln_no}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {ln_no}: unknown key {key!r}")
        kind = _CONFIG_KEYS[key]
        try:
            if kind == "int_list":
                parsed = tuple(int(tok) for tok in value.replace(",", " ").split())
            elif kind == "int_or_tag":
                parsed = value if value == "log2n" else int(value)
            elif kind == "float_or_auto":
                parsed = value if value == "auto" else float(value)
            elif kind is int:
                parsed = int(value)
            elif kind is float:
                parsed = float(value)
            else:
                parsed = value
        except ValueError as exc:
            raise ConfigError(f"line {ln_no}: bad value for {key}: {exc}") from exc
        setattr(cfg, key, parsed)
    cfg.validate()
    return cfg


# -- verification suites ---------------------------------------------------------

@dataclass
class SuiteEntry:
    suite: str
    name: str
    passed: bool
    achieved: float
    bound: float
    tolerance: float = 0.0

    def record(self) -> dict:
        return {
            "suite": self.suite,
            "name": self.name,
            "passed": self.passed,
            "achieved": self.achieved,
            "bound": self.bound,
            "tolerance": self.tolerance,
        }


@dataclass
class VerificationReport:
    entries: list = dc_field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def failures(self) -> list:
        return [e for e in self.entries if not e.passed]

    def records(self) -> list:
        return [e.record() for e in self.entries]

    def plot_columns(self):
        xs = list(range(len(self.entries)))
        ys = [e.achieved for e in self.entries]
        return ("index", "achieved"), xs, ys


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


def run_verification_suite(config: ExperimentConfig) -> VerificationReport:
    """Execute every module invariant at the configured scale.

    Each entry records the achieved constant against its bound; any
    failed entry makes the report fail (the CLI exits nonzero).
    """
    config.validate()
    report = VerificationReport()
    add = report.entries.append
    n = int(config.n_grid[0])
    seed = config.seed
    space = make_path_space(n)
    kernel = config.kernel_for(n, seed)
    family = ShiftedGridFamily(space)
    systems = [family.sample(_rng(seed, 1, t)) for t in range(config.systems)]
    d = config.inner_dim(n)

    # space-geometry suite
    cd = space.doubling_constant()
    add(SuiteEntry("space-geometry", "doubling_constant_finite", math.isfinite(cd), cd, math.inf))
    vmat = space.volume_at_distance_matrix()
    ratio = float((vmat / vmat.T).max())
    add(SuiteEntry("space-geometry", "volume_symmetry_vs_doubling", ratio <= cd + 1e-12, ratio, cd))
    mono_ok = True
    rng = _rng(seed, 2)
    for u in rng.integers(0, n, 8):
        ts = np.sort(rng.uniform(space.min_gap / 2, space.diameter + 1, 32))
        vols = space.volumes(int(u), ts)
        mono_ok &= bool(np.all(np.diff(vols) >= 0))
    add(SuiteEntry("space-geometry", "volume_monotone", mono_ok, float(mono_ok), 1.0))

    # kernel-estimates suite
    est = verify_standard_estimates(kernel)
    add(SuiteEntry("kernel-estimates", "truncation_support", est.truncation_ok,
                   float(est.truncation_ok), 1.0))
    add(SuiteEntry("kernel-estimates", "size_constant_finite",
                   math.isfinite(est.c_size), est.c_size, math.inf))
    add(SuiteEntry("kernel-estimates", "smoothness_constant_finite",
                   math.isfinite(est.c_smooth), est.c_smooth, math.inf))
    schur = kernel.schur_row_bound()
    ratio = max(schur["max_row_sum"], schur["max_col_sum"]) / kernel.truncation_index
    add(SuiteEntry("kernel-estimates", "schur_vs_truncation_index",
                   0.0 <= ratio <= 2.0, ratio, 2.0))
    fld = VectorField.random(space, d, _rng(seed, 3))
    gld = VectorField.random(space, d, _rng(seed, 4))
    from .fields import pairing as _pairing
    adj_gap = abs(_pairing(kernel.apply(fld), gld) - _pairing(fld, kernel.apply_adjoint(gld)))
    scale0 = max(abs(_pairing(kernel.apply(fld), gld)), 1e-30)
    add(SuiteEntry("kernel-estimates", "adjoint_identity", adj_gap / scale0 <= 1e-12,
                   adj_gap / scale0, 1e-12, 1e-12))

    # decomposition-identity suite
    worst = 0.0
    for t, system in enumerate(systems):
        f = VectorField.random(space, d, _rng(seed, 5, t))
        g = VectorField.random(space, d, _rng(seed, 6, t))
        worst = max(worst, calc.expand_pairing(kernel, system, f, g).residual())
    add(SuiteEntry("decomposition-identity", "ledger_residual", worst <= 1e-9,
                   worst, 1e-9, 1e-9))

    # haar-bound suite
    ratios = [calc.verify_haar_bounds(kernel, s, eps=config.eps) for s in systems]
    max_ratio = max(r.max_ratio for r in ratios)
    add(SuiteEntry("haar-bound", "banded_ratio_finite", math.isfinite(max_ratio),
                   max_ratio, math.inf))
    small_R = random_truncated_kernel(space, 1.0, max(2.0, n / 4), _rng(seed, 7).integers(2**31))
    beyond = calc.verify_haar_bounds(small_R, systems[0], eps=config.eps)
    add(SuiteEntry("haar-bound", "zero_beyond_truncation",
                   beyond.beyond_truncation_ok and beyond.beyond_truncation_pairs > 0,
                   beyond.beyond_truncation_max_abs, 0.0))

    # sparse-family suite
    worst_major = 1.0
    worst_first = 0.0
    disjoint_ok = True
    for t, system in enumerate(systems):
        rngt = _rng(seed, 8, t)
        b = rngt.standard_normal(n)
        f = VectorField(space, _spiky(rngt, n, 1))
        fam = calc.stopping_family(system, f, b)
        disjoint_ok &= fam.majors_disjoint()
        worst_major = min(worst_major, fam.min_major_fraction())
        worst_first = max(worst_first, fam.max_first_kind_fraction())
    add(SuiteEntry("sparse-family", "majors_disjoint", disjoint_ok, float(disjoint_ok), 1.0))
    add(SuiteEntry("sparse-family", "major_mass_at_least_half", worst_major >= 0.5,
                   worst_major, 0.5))
    add(SuiteEntry("sparse-family", "first_kind_mass_quarter", worst_first <= 0.25,
                   worst_first, 0.25))

    # paraproduct suite
    worst_resid = 0.0
    worst_const = 0.0
    for t, system in enumerate(systems):
        rngt = _rng(seed, 9, t)
        f = VectorField.random(space, d, rngt)
        g = VectorField.random(space, d, rngt)
        worst_resid = max(worst_resid,
                          calc.paraproduct_extraction_residual(kernel, system, f, g))
        b = rngt.standard_normal(n)
        fs = VectorField.random(space, 1, rngt)
        rec = calc.paraproduct_stopping_bound(system, b, fs, config.s)
        worst_const = max(worst_const, rec["l2_paraproduct_constant"])
    add(SuiteEntry("paraproduct", "extraction_identity", worst_resid <= 1e-9,
                   worst_resid, 1e-9, 1e-9))
    add(SuiteEntry("paraproduct", "l2_constant_finite", math.isfinite(worst_const),
                   worst_const, math.inf))

    # block-kernel suite
    system = systems[0]
    m0 = m0_for(config.eps, system.delta)
    worst_size = 0.0
    for flavor in ("cancellative", "para_left", "para_right"):
        lvl = 1 if system.depth - 1 - m0 >= 1 else 0
        if lvl + m0 <= system.depth - 1:
            blk = calc.block_operator(kernel, system, lvl, 0, m0, flavor,
                                      eps=config.eps)
            worst_size = max(worst_size, calc.block_size_constant(system, kernel, blk))
    add(SuiteEntry("block-kernel", "size_constant_finite", math.isfinite(worst_size),
                   worst_size, math.inf))
    f2 = VectorField.random(space, 2, _rng(seed, 10))
    g2 = VectorField.random(space, 2, _rng(seed, 11))
    mc = calc.reorganized_sum_check(kernel, family, f2, g2,
                                    n_systems=min(200, 40 * config.systems),
                                    seed=seed + 12, eps=config.eps)
    slack = 3.0 * mc["se_diff"] + 1e-9 * max(1.0, abs(mc["mean_direct"]))
    add(SuiteEntry("block-kernel", "reorganized_expectation",
                   abs(mc["mean_diff"]) <= slack, abs(mc["mean_diff"]), slack))

    # grid-probability suite
    eps = config.eps
    exact = boundary_layer_exact(family, 1, eps)
    add(SuiteEntry("grid-probability", "boundary_at_most_2eps",
                   float(exact.max()) <= 2 * eps + 1e-12, float(exact.max()), 2 * eps))
    mc_trials = min(config.trials, 2000)
    est = boundary_layer_probability(family, 1, eps, mc_trials, seed + 13)
    probe = int(np.argmax(exact))
    # the suite must stay robust across arbitrary configs and seeds, so it
    # brackets the truth at 99.9% rather than the acceptance run's 95%
    lo, hi = wilson_interval(est.frequencies * mc_trials, mc_trials, z=3.29)
    inside = bool(lo[probe] <= exact[probe] <= hi[probe])
    add(SuiteEntry("grid-probability", "mc_brackets_exact", inside,
                   float(est.frequencies[probe]), float(exact[probe])))
    m0 = m0_for(eps, 0.5)
    k = max(0, family.depth - (m0 + 2))
    u = n // 2
    v = min(n - 1, u + 1)
    p_exact = common_ancestor_exact(family, u, v, k, family.depth - k, eps)
    add(SuiteEntry("grid-probability", "ancestor_probability_half",
                   p_exact >= 0.5, p_exact, 0.5))

    # oracle-equivalence suite
    worst_rel = 0.0
    for t in range(10):
        rngt = _rng(seed, 14, t)
        nn = int(rngt.integers(4, 17))
        sp = make_path_space(nn)
        op = MatrixOperator(sp, rngt.standard_normal((nn, nn)))
        est_v = operator_norm_lower_bound(op, MixedNormDescriptor(2.0, 2.0, 1),
                                          seed=seed + t).estimate
        oracle = spectral_norm_oracle(op)
        worst_rel = max(worst_rel, abs(est_v - oracle) / max(oracle, 1e-30))
    add(SuiteEntry("oracle-equivalence", "power_vs_spectral", worst_rel <= 1e-6,
                   worst_rel, 1e-6, 1e-6))
    worst_rel = 0.0
    for t in range(4):
        rngt = _rng(seed, 15, t)
        sp = make_path_space(2)
        op = MatrixOperator(sp, rngt.standard_normal((2, 2)))
        for (s_e, p_e) in ((1.5, 2.0), (2.0, 4.0)):
            desc = MixedNormDescriptor(s_e, p_e, 2)
            pm = operator_norm_lower_bound(op, desc, seed=seed + t).estimate
            go = operator_norm_oracle_small(op, desc)
            worst_rel = max(worst_rel, abs(pm - go) / max(go, 1e-30))
    add(SuiteEntry("oracle-equivalence", "power_vs_grid_search", worst_rel <= 1e-3,
                   worst_rel, 1e-3, 1e-3))
    return report


def _spiky(rng, n: int, d: int) -> np.ndarray:
    base = rng.standard_normal((n, d))
    mask = rng.random((n, d)) < 0.1
    base[mask] *= 10.0
    return base


# -- scaling study ------------------------------------------------------------------

@dataclass
class ScalingReport:
    rows: list
    theta_hat: float
    residual: float
    config_tag: str = ""

    def records(self) -> list:
        out = []
        for row in self.rows:
            rec = dict(row)
            rec["theta_hat"] = self.theta_hat
            rec["fit_residual"] = self.residual
            out.append(rec)
        return out

    def plot_columns(self):
        xs = [math.log(r["n_index"]) for r in self.rows if r["converged"]]
        ys = [math.log(r["norm_lower_bound"]) for r in self.rows
              if r["converged"] and r["norm_lower_bound"] > 0]
        return ("log_n", "log_norm"), xs, ys


def fit_theta(n_values, norms, min_n: float = 2.0) -> tuple:
    """Least-squares slope of log(norm) against log(n), using rows with
    n >= min_n (the additive-constant regime is excluded); returns
    (theta_hat, rms_residual), NaN when fewer than two usable rows."""
    xs, ys = [], []
    for nv, nm in zip(n_values, norms):
        if nv >= min_n and nm > 0:
            xs.append(math.log(nv))
            ys.append(math.log(nm))
    if len(xs) < 2:
        return math.nan, math.nan
    A = np.vstack([xs, np.ones(len(xs))]).T
    sol, *_ = np.linalg.lstsq(A, np.array(ys), rcond=None)
    resid = np.array(ys) - A @ sol
    return float(sol[0]), float(np.sqrt(np.mean(resid**2)))


def run_scaling(config: ExperimentConfig) -> ScalingReport:
    """Estimate the mixed-norm operator norm across the N grid and fit the
    growth exponent against the truncation index.

    The Hilbert case s = p = 2 uses the exact spectral oracle; other
    exponents use the generalized power iteration (best over restarts),
    with non-converged rows flagged and excluded from the fit.
    """
    config.validate()
    rows = []
    for idx, n in enumerate(sorted(set(int(x) for x in config.n_grid))):
        kernel = config.kernel_for(n, config.seed + idx)
        d = config.inner_dim(n)
        desc = MixedNormDescriptor(config.s, config.p, d)
        schur = kernel.schur_row_bound()
        trivial = (schur["max_col_sum"] ** (1.0 / desc.s_conj)
                   * schur["max_row_sum"] ** (1.0 / desc.s))
        if config.s == 2.0 and config.p == 2.0:
            norm = spectral_norm_oracle(kernel)
            converged = True
        else:
            res = operator_norm_lower_bound(kernel, desc, seed=config.seed + idx)
            norm = res.estimate
            converged = res.converged
        rows.append({
            "N": n,
            "n_index": kernel.truncation_index,
            "s": config.s,
            "p": config.p,
            "d": d,
            "norm_lower_bound": norm,
            "trivial_bound": trivial,
            "converged": converged,
        })
    usable = [r for r in rows if r["converged"]]
    theta, resid = fit_theta([r["n_index"] for r in usable],
                             [r["norm_lower_bound"] for r in usable])
    return ScalingReport(rows, theta, resid,
                         config_tag=f"{config.family}-s{config.s}-p{config.p}")


# -- byte-stable emission --------------------------------------------------------------

def format_float(x) -> str:
    """Fixed 12-significant-digit decimal formatting (byte stable)."""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.12g}"


def _flat_records(report) -> list:
    records = report.records()
    out = []
    for rec in records:
        out.append({k: rec[k] for k in sorted(rec)})
    return out


def emit_report(report, fmt: str, path) -> None:
    """Write a report as csv, json-lines, or two-column plot-data.

    Identical reports produce identical bytes: keys are sorted, floats
    are printed at 12 significant digits, rows keep report order.
    """
    if fmt not in ("csv", "json-lines", "plot-data"):
        raise ValueError(f"unknown report format {fmt!r}")
    try:
        if fmt == "plot-data":
            (xl, yl), xs, ys = report.plot_columns()
            lines = [f"# {xl} {yl}"]
            lines += [f"{format_float(x)} {format_float(y)}" for x, y in zip(xs, ys)]
            payload = "\n".join(lines) + "\n"
        elif fmt == "csv":
            records = _flat_records(report)
            if not records:
                payload = "\n"
            else:
                cols = sorted(records[0])
                lines = [",".join(cols)]
                for rec in records:
                    lines.append(",".join(format_float(rec[c]) for c in cols))
                payload = "\n".join(lines) + "\n"
        else:
            records = _flat_records(report)
            lines = []
            for rec in records:
                clean = {k: (format_float(v) if isinstance(v, (float, np.floating))
                             else (bool(v) if isinstance(v, (bool, np.bool_)) else v))
                         for k, v in rec.items()}
                lines.append(json.dumps(clean, sort_keys=True))
            payload = "\n".join(lines) + "\n"
        with open(path, "w") as fh:
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc


# -- focused grid study (the `grids` subcommand) -----------------------------------------

@dataclass
class GridReport:
    rows: list

    def records(self) -> list:
        return [dict(r) for r in self.rows]

    def plot_columns(self):
        xs = [r["eps"] for r in self.rows if r["kind"] == "boundary"]
        ys = [r["exact"] for r in self.rows if r["kind"] == "boundary"]
        return ("eps", "boundary_probability"), xs, ys


def run_grid_study(n: int, eps_values, trials: int, seed: int) -> GridReport:
    """Boundary-layer and common-ancestor statistics on shifted grids."""
    space = make_path_space(n)
    family = ShiftedGridFamily(space)
    rows = []
    level = 1
    for eps in eps_values:
        exact = boundary_layer_exact(family, level, eps)
        est = boundary_layer_probability(family, level, eps, trials, seed)
        probe = int(np.argmax(exact))
        rows.append({
            "kind": "boundary",
            "eps": eps,
            "level": level,
            "exact": float(exact[probe]),
            "mc": float(est.frequencies[probe]),
            "wilson_lo": float(est.wilson_lo[probe]),
            "wilson_hi": float(est.wilson_hi[probe]),
            "within_wilson": bool(est.wilson_lo[probe] <= exact[probe]
                                  <= est.wilson_hi[probe]),
        })
    m0 = m0_for(min(eps_values), 0.5)
    for m in range(m0, family.depth + 1):
        k = family.depth - m
        u = n // 2
        v = u + 1
        eps = max(eps_values)
        bound = 0.5 * eps * 0.5**k * 2**family.depth
        if space.dist[u, v] > bound:
            continue
        exact_p = common_ancestor_exact(family, u, v, k, m, eps)
        est = common_ancestor_probability(family, u, v, k, m, eps,
                                          min(trials, 4000), seed + m)
        rows.append({
            "kind": "ancestor",
            "eps": eps,
            "level": k,
            "m": m,
            "exact": exact_p,
            "mc": est.frequency,
            "wilson_lo": est.wilson_lo,
            "wilson_hi": est.wilson_hi,
            "within_wilson": bool(est.wilson_lo <= exact_p <= est.wilson_hi),
        })
    return GridReport(rows)
