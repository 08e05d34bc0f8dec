import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from czkit.fields import (
    MixedNormDescriptor,
    VectorField,
    duality_map,
    mixed_norm,
    pairing,
)
from czkit.kernel import finite_hilbert_kernel
from czkit.norms import (
    MatrixOperator,
    martingale_cotype_constant,
    martingale_type_constant,
    operator_norm_lower_bound,
    operator_norm_oracle_small,
    spectral_norm_oracle,
)
from czkit.space import FiniteMetricMeasureSpace, make_path_space


def weighted_space(rng, n):
    return FiniteMetricMeasureSpace(make_path_space(n).dist,
                                    rng.uniform(0.5, 1.5, n))


class TestDescriptor:
    def test_conjugates(self):
        d = MixedNormDescriptor(2.0, 4.0, 3)
        assert d.s_conj == pytest.approx(2.0)
        assert d.p_conj == pytest.approx(4.0 / 3.0)
        assert MixedNormDescriptor(2.0, 1.0).p_conj == math.inf
        assert MixedNormDescriptor(2.0, math.inf).p_conj == 1.0
        dd = d.dual().dual()
        assert dd.s == pytest.approx(d.s) and dd.p == pytest.approx(d.p)
        assert dd.d == d.d

    def test_validation(self):
        with pytest.raises(ValueError):
            MixedNormDescriptor(1.0, 2.0)
        with pytest.raises(ValueError):
            MixedNormDescriptor(2.0, 0.5)
        with pytest.raises(ValueError):
            MixedNormDescriptor(2.0, 2.0, 0)


class TestMixedNorm:
    def test_zero_field(self):
        sp = make_path_space(4)
        assert mixed_norm(VectorField.zeros(sp, 3), MixedNormDescriptor(2.0, 2.0, 3)) == 0.0

    def test_scalar_reduces_to_weighted_ls(self):
        rng = np.random.default_rng(0)
        sp = weighted_space(rng, 12)
        v = rng.standard_normal(12)
        f = VectorField(sp, v)
        for s in (1.5, 2.0, 3.0):
            expected = float((sp.weight * np.abs(v) ** s).sum() ** (1 / s))
            got = mixed_norm(f, MixedNormDescriptor(s, 2.0, 1))
            assert got == pytest.approx(expected, rel=1e-12)

    def test_homogeneity(self):
        rng = np.random.default_rng(1)
        sp = weighted_space(rng, 9)
        f = VectorField.random(sp, 3, rng)
        desc = MixedNormDescriptor(2.5, 1.5, 3)
        assert mixed_norm(-3.25 * f, desc) == pytest.approx(
            3.25 * mixed_norm(f, desc), rel=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6),
           st.sampled_from([1.5, 2.0, 3.0]),
           st.sampled_from([1.0, 1.5, 2.0, 4.0, math.inf]))
    def test_triangle_inequality(self, seed, s, p):
        rng = np.random.default_rng(seed)
        sp = make_path_space(8)
        f = VectorField.random(sp, 3, rng)
        g = VectorField.random(sp, 3, rng)
        desc = MixedNormDescriptor(s, p, 3)
        assert mixed_norm(f + g, desc) <= (
            mixed_norm(f, desc) + mixed_norm(g, desc) + 1e-12)

    def test_infinity_inner(self):
        sp = make_path_space(2)
        f = VectorField(sp, np.array([[3.0, -4.0], [1.0, 1.0]]))
        got = mixed_norm(f, MixedNormDescriptor(2.0, math.inf, 2))
        assert got == pytest.approx(math.sqrt(16.0 + 1.0))


class TestDualityMap:
    def test_hilbert_case_is_normalization(self):
        rng = np.random.default_rng(2)
        sp = weighted_space(rng, 10)
        f = VectorField.random(sp, 2, rng)
        desc = MixedNormDescriptor(2.0, 2.0, 2)
        g = duality_map(f, desc)
        assert np.abs(g.values - f.values / mixed_norm(f, desc)).max() <= 1e-12

    @pytest.mark.parametrize("s", [1.5, 2.0, 3.0, 4.0])
    @pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 4.0])
    def test_norming_identities(self, s, p):
        rng = np.random.default_rng(int(10 * s + p))
        sp = weighted_space(rng, 14)
        f = VectorField.random(sp, 3, rng)
        desc = MixedNormDescriptor(s, p, 3)
        g = duality_map(f, desc)
        assert pairing(f, g) == pytest.approx(mixed_norm(f, desc), rel=1e-10)
        assert mixed_norm(g, desc.dual()) == pytest.approx(1.0, abs=1e-10)

    def test_scalar_quartic(self):
        rng = np.random.default_rng(3)
        sp = make_path_space(6)
        v = rng.standard_normal(6)
        f = VectorField(sp, v)
        g = duality_map(f, MixedNormDescriptor(4.0, 2.0, 1))
        expected = np.sign(v) * np.abs(v) ** 3
        ratio = g.values[:, 0] / expected
        assert np.abs(ratio - ratio[0]).max() <= 1e-12

    def test_subgradient_cases(self):
        rng = np.random.default_rng(4)
        sp = weighted_space(rng, 8)
        f = VectorField.random(sp, 3, rng)
        for p in (1.0, math.inf):
            desc = MixedNormDescriptor(2.0, p, 3)
            g = duality_map(f, desc)
            assert pairing(f, g) == pytest.approx(mixed_norm(f, desc), rel=1e-10)
            assert mixed_norm(g, desc.dual()) == pytest.approx(1.0, abs=1e-10)

    def test_zero_field_rejected(self):
        sp = make_path_space(4)
        with pytest.raises(ValueError):
            duality_map(VectorField.zeros(sp, 2), MixedNormDescriptor(2.0, 2.0, 2))


class TestPowerIteration:
    def test_matches_spectral_oracle(self):
        rng = np.random.default_rng(5)
        for k in range(10):
            n, d = int(rng.integers(2, 17)), int(rng.integers(1, 4))
            sp = weighted_space(rng, n)
            op = MatrixOperator(sp, rng.standard_normal((n, n)))
            res = operator_norm_lower_bound(op, MixedNormDescriptor(2.0, 2.0, d),
                                            seed=k)
            oracle = spectral_norm_oracle(op)
            assert res.estimate == pytest.approx(oracle, rel=1e-6)
            assert res.estimate <= oracle * (1 + 1e-9)  # certified lower bound

    def test_diagonal_operator(self):
        sp = make_path_space(2)
        op = MatrixOperator(sp, np.diag([3.0, 1.0]))
        for (s, p) in ((1.5, 2.0), (3.0, 1.5), (2.0, 4.0)):
            res = operator_norm_lower_bound(op, MixedNormDescriptor(s, p, 1), seed=0)
            assert res.estimate == pytest.approx(3.0, rel=1e-9)

    def test_certificate_realizes_estimate(self):
        rng = np.random.default_rng(6)
        sp = weighted_space(rng, 8)
        op = MatrixOperator(sp, rng.standard_normal((8, 8)))
        desc = MixedNormDescriptor(3.0, 1.5, 2)
        res = operator_norm_lower_bound(op, desc, seed=1)
        f = res.certificate
        realized = mixed_norm(op.apply(f), desc) / mixed_norm(f, desc)
        assert realized == pytest.approx(res.estimate, rel=1e-9)

    def test_extreme_inner_exponents_rejected(self):
        sp = make_path_space(4)
        op = MatrixOperator(sp, np.eye(4))
        for p in (1.0, math.inf):
            with pytest.raises(ValueError, match="oracle"):
                operator_norm_lower_bound(op, MixedNormDescriptor(2.0, p, 1))

    def test_nonconvergence_flagged(self):
        rng = np.random.default_rng(7)
        sp = make_path_space(16)
        op = MatrixOperator(sp, rng.standard_normal((16, 16)))
        res = operator_norm_lower_bound(op, MixedNormDescriptor(2.0, 2.0, 1),
                                        restarts=1, iterations=2, seed=0)
        assert not res.converged


class TestOracles:
    def test_identity_operator(self):
        sp = make_path_space(3)
        op = MatrixOperator(sp, np.eye(3))
        got = operator_norm_oracle_small(op, MixedNormDescriptor(2.0, 2.0, 1))
        assert got == pytest.approx(1.0, abs=1e-6)

    def test_rotation(self):
        sp = make_path_space(2)
        th = 0.7
        rot = np.array([[math.cos(th), -math.sin(th)],
                        [math.sin(th), math.cos(th)]])
        got = operator_norm_oracle_small(rot_op := MatrixOperator(sp, rot),
                                         MixedNormDescriptor(2.0, 2.0, 1))
        assert got == pytest.approx(1.0, abs=1e-9)
        assert spectral_norm_oracle(rot_op) == pytest.approx(1.0)

    def test_random_3x3_cross_check(self):
        rng = np.random.default_rng(8)
        sp = make_path_space(3)
        op = MatrixOperator(sp, rng.standard_normal((3, 3)))
        desc = MixedNormDescriptor(4.0, 2.0, 1)
        grid = operator_norm_oracle_small(op, desc)
        power = operator_norm_lower_bound(op, desc, seed=0).estimate
        assert power == pytest.approx(grid, rel=1e-3)

    def test_dimension_guard(self):
        sp = make_path_space(8)
        op = MatrixOperator(sp, np.eye(8))
        with pytest.raises(ValueError):
            operator_norm_oracle_small(op, MixedNormDescriptor(2.0, 2.0, 1))

    def test_spectral_examples(self):
        assert spectral_norm_oracle(finite_hilbert_kernel(2)) == pytest.approx(1.0)
        sp = make_path_space(4)
        assert spectral_norm_oracle(MatrixOperator(sp, np.zeros((4, 4)))) == 0.0

    def test_hilbert_norms_monotone_small(self):
        vals = [spectral_norm_oracle(finite_hilbert_kernel(n))
                for n in (2, 4, 8, 16, 32)]
        assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))
        assert vals[-1] <= math.pi + 0.01


class TestMartingaleConstants:
    def test_scalar_hilbert_case_is_exact(self):
        desc = MixedNormDescriptor(2.0, 2.0, 1)
        t = martingale_type_constant(desc, 2.0, trials=25, seed=0, n_points=32)
        c = martingale_cotype_constant(desc, 2.0, trials=25, seed=0, n_points=32)
        assert t == pytest.approx(1.0, abs=1e-12)
        assert c == pytest.approx(1.0, abs=1e-12)

    def test_l1_type_constant_grows_with_dimension(self):
        consts = {}
        for d in (2, 4, 8):
            desc = MixedNormDescriptor(2.0, 1.0, d)
            consts[d] = martingale_type_constant(desc, 2.0, trials=60, seed=1,
                                                 n_points=32)
        assert consts[8] > consts[2]

    def test_cotype_large_q_below_type_two(self):
        # pointwise the l_64 aggregate is below the l_2 aggregate, so the
        # cotype-64 ratio cannot exceed the type-2 ratio on the same draws
        desc = MixedNormDescriptor(2.0, 2.0, 2)
        t = martingale_type_constant(desc, 2.0, trials=30, seed=2, n_points=32)
        c = martingale_cotype_constant(desc, 64.0, trials=30, seed=2, n_points=32)
        assert c <= t + 1e-12

    def test_exponent_validation(self):
        desc = MixedNormDescriptor(2.0, 2.0, 1)
        with pytest.raises(ValueError):
            martingale_type_constant(desc, 2.5)
        with pytest.raises(ValueError):
            martingale_cotype_constant(desc, 1.5)
