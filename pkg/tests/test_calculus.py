import math

import numpy as np
import pytest

from czkit import calculus as calc
from czkit.dyadic import ShiftedGridFamily, build_shifted_integer_grid, m0_for
from czkit.fields import VectorField, pairing
from czkit.kernel import (
    ModulusOmega,
    TruncatedKernel,
    finite_hilbert_kernel,
    random_truncated_kernel,
)
from czkit.space import make_path_space


def zero_kernel(n, r=1.0, R=4.0):
    sp = make_path_space(n)
    return TruncatedKernel(sp, np.zeros((n, n)), r=r, R=R,
                           omega=ModulusOmega.power(1.0))


@pytest.fixture(scope="module")
def hilbert64():
    return finite_hilbert_kernel(64)


@pytest.fixture(scope="module")
def system64(hilbert64):
    return ShiftedGridFamily(hilbert64.space).sample(np.random.default_rng(21))


class TestTermLedger:
    def test_zero_fields_give_zero_terms(self, hilbert64, system64):
        f = VectorField.zeros(hilbert64.space, 2)
        led = calc.expand_pairing(hilbert64, system64, f, f)
        assert led.whole == 0.0 and led.coarse == 0.0 and led.tail == 0.0
        assert np.all(led.diagonal == 0.0)

    def test_full_range_tail_vanishes(self, hilbert64):
        sp = hilbert64.space
        system = build_shifted_integer_grid(sp, [0] * 6, 6)  # root = whole space
        rng = np.random.default_rng(1)
        f = VectorField.random(sp, 3, rng)
        g = VectorField.random(sp, 3, rng)
        led = calc.expand_pairing(hilbert64, system, f, g, sigma=0)
        assert led.tail == 0.0
        avg = (sp.weight[:, None] * f.values).sum(0) / sp.total_mass
        coarse_direct = pairing(
            hilbert64.apply(VectorField(sp, np.tile(avg, (64, 1)))), g)
        assert led.coarse == pytest.approx(coarse_direct, rel=1e-12)

    def test_identity_over_systems(self, hilbert64):
        family = ShiftedGridFamily(hilbert64.space)
        worst = 0.0
        for t in range(5):
            rng = np.random.default_rng(100 + t)
            system = family.sample(rng)
            for d in (1, 4):
                f = VectorField.random(hilbert64.space, d, rng)
                g = VectorField.random(hilbert64.space, d, rng)
                worst = max(worst,
                            calc.expand_pairing(hilbert64, system, f, g).residual())
        assert worst <= 1e-9

    def test_correction_closed_forms(self, hilbert64, system64):
        rng = np.random.default_rng(2)
        sp = hilbert64.space
        f = VectorField.random(sp, 2, rng)
        g = VectorField.random(sp, 2, rng)
        led = calc.expand_pairing(hilbert64, system64, f, g, sigma=1, tau=5)
        E1f = VectorField(sp, system64.average_values(f.values, 1))
        diff_g = VectorField(sp, system64.average_values(g.values, 5)
                             - system64.average_values(g.values, 1))
        assert led.correction_coarse == pytest.approx(
            pairing(hilbert64.apply(E1f), diff_g), rel=1e-9)
        diff_f = VectorField(sp, system64.average_values(f.values, 5)
                             - system64.average_values(f.values, 1))
        Fg = VectorField(sp, g.values - system64.average_values(g.values, 5))
        assert led.correction_tail == pytest.approx(
            pairing(diff_f, hilbert64.apply_adjoint(Fg)), rel=1e-9)

    def test_dimension_mismatch(self, hilbert64, system64):
        f = VectorField.ones(hilbert64.space, 2)
        g = VectorField.ones(hilbert64.space, 3)
        with pytest.raises(ValueError):
            calc.expand_pairing(hilbert64, system64, f, g)

    def test_records_roundtrip(self, hilbert64, system64):
        rng = np.random.default_rng(3)
        f = VectorField.random(hilbert64.space, 1, rng)
        led = calc.expand_pairing(hilbert64, system64, f, f)
        recs = led.records()
        names = {r["name"] for r in recs}
        assert {"whole", "coarse", "tail", "residual"} <= names

    def test_ledger_flows_through_reporter(self, hilbert64, system64, tmp_path):
        from czkit.experiments import emit_report

        rng = np.random.default_rng(3)
        f = VectorField.random(hilbert64.space, 1, rng)
        led = calc.expand_pairing(hilbert64, system64, f, f)
        path = tmp_path / "ledger.csv"
        emit_report(led, "csv", path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "name,value"
        assert len(lines) == len(led.records()) + 1


def cancellative_cubes(system, level, count):
    """Indices of level cubes carrying at least one Haar function."""
    out = [c for c in range(system.n_cubes[level])
           if system.haar(level, c).n_children >= 2]
    assert len(out) >= count, "fixture lacks multi-child cubes"
    return out[:count]


class TestHaarCoefficient:
    def test_zero_kernel(self, system64):
        z = zero_kernel(64)
        p, q = cancellative_cubes(system64, 2, 2)
        assert calc.haar_coefficient(z, system64, 2, p, 1, q, 1) == 0.0

    def test_adjoint_consistency(self, hilbert64, system64):
        n = 64
        p, q = cancellative_cubes(system64, 3, 2)
        hp = system64.haar(3, p)
        hq = system64.haar(3, q)
        f = VectorField(hilbert64.space, hp.to_function(1, n))
        g = VectorField(hilbert64.space, hq.to_function(1, n))
        lhs = pairing(hilbert64.apply(f), g)
        rhs = pairing(f, hilbert64.apply_adjoint(g))
        assert lhs == pytest.approx(rhs, abs=1e-12)
        assert calc.haar_coefficient(hilbert64, system64, 3, p, 1, q, 1) == (
            pytest.approx(lhs, abs=1e-12))

    def test_children_expansion_agrees(self, hilbert64, system64):
        p, q = cancellative_cubes(system64, 2, 2)
        for (a, b) in ((1, 1), (0, 1), (1, 0)):
            direct = calc.haar_coefficient(hilbert64, system64, 2, p, a, q, b)
            expanded = calc.haar_coefficient(hilbert64, system64, 2, p, a, q, b,
                                             via_children=True)
            assert direct == pytest.approx(expanded, abs=1e-12)

    def test_double_average_rejected(self, hilbert64, system64):
        with pytest.raises(ValueError):
            calc.haar_coefficient(hilbert64, system64, 2, 0, 0, 1, 0)


class TestHaarBounds:
    def test_zero_kernel_all_zero(self, system64):
        rep = calc.verify_haar_bounds(zero_kernel(64), system64)
        assert rep.max_ratio == 0.0

    def test_hilbert_finite(self, hilbert64, system64):
        rep = calc.verify_haar_bounds(hilbert64, system64)
        assert math.isfinite(rep.max_ratio) and rep.max_ratio > 0
        assert rep.n_pairs > 0

    def test_beyond_truncation_exact_zero(self, system64):
        sp = make_path_space(64)
        K = random_truncated_kernel(sp, 1.0, 16.0, seed=5)
        rep = calc.verify_haar_bounds(K, system64)
        assert rep.beyond_truncation_pairs > 0
        assert rep.beyond_truncation_max_abs == 0.0

    def test_max_ratio_matches_bruteforce(self):
        # independent oracle: explicit loops over levels, pairs and Haar
        # indices with the banded bound computed from its definition
        from czkit.calculus import band_of_pair
        from czkit.dyadic import m0_for

        K = finite_hilbert_kernel(16)
        system = ShiftedGridFamily(K.space).sample(np.random.default_rng(22))
        eps, delta = 0.25, system.delta
        m0 = m0_for(eps, delta)
        best = 0.0
        for lvl in range(system.depth):
            side = system.side(lvl)
            refs = system.refs[lvl]
            mass = system.cube_mass[lvl]
            for p in range(system.n_cubes[lvl]):
                hp = system.haar(lvl, p)
                for q in range(system.n_cubes[lvl]):
                    hq = system.haar(lvl, q)
                    m = band_of_pair(float(K.space.dist[refs[p], refs[q]]),
                                     side, eps, m0, delta)
                    vol = max(K.space.volume(system.centers[lvl][p],
                                             delta**-m * side),
                              K.space.weight[system.centers[lvl][p]])
                    bound = (K.omega(min(delta**m, 1.0))
                             * math.sqrt(mass[p] * mass[q]) / vol)
                    for a in range(hp.n_children):
                        for b in range(hq.n_children):
                            if (a, b) == (0, 0):
                                continue
                            c = calc.haar_coefficient(K, system, lvl, p, a, q, b)
                            best = max(best, abs(c) / bound)
        rep = calc.verify_haar_bounds(K, system, eps=eps)
        assert rep.max_ratio == pytest.approx(best, rel=1e-10)


class TestTestingQuantities:
    def test_zero_kernel(self, system64):
        z = zero_kernel(64)
        assert calc.weak_boundedness(z, system64) == 0.0
        assert calc.cube_testing(z, system64, 2.0) == 0.0
        assert calc.ball_testing(z, 2.0) == 0.0

    def test_wbp_below_cube_testing(self, system64):
        # Hoelder gives |<T1_Q, 1_Q>|/mu(Q) <= ||T1_Q||_s / mu(Q)^{1/s}
        sp = make_path_space(64)
        for seed in range(3):
            K = random_truncated_kernel(sp, 1.0, 32.0, seed=seed)
            wbp = calc.weak_boundedness(K, system64)
            assert wbp > 0
            for s in (1.5, 2.0, 3.0):
                assert wbp <= calc.cube_testing(K, system64, s) + 1e-12

    def test_single_pair_kernel_by_hand(self):
        sp = make_path_space(8)
        vals = np.zeros((8, 8))
        vals[2, 5] = 0.7
        K = TruncatedKernel(sp, vals, r=1.0, R=8.0, omega=ModulusOmega.power(1.0))
        system = build_shifted_integer_grid(sp, [0, 0, 0], 3)
        # smallest zero-shift cube containing both 2 and 5 is the root
        expected = 0.7 * 1.0 * 1.0 / 8.0
        assert calc.weak_boundedness(K, system) == pytest.approx(expected)

    def test_ball_testing_dominates_cube_testing_on_path(self, hilbert64, system64):
        # zero-shift cubes are intervals, hence balls; suprema over all balls
        # can only be larger
        s = 2.0
        assert calc.ball_testing(hilbert64, s) >= (
            calc.cube_testing(hilbert64, system64, s) - 1e-12)

    def test_exponent_validation(self, hilbert64, system64):
        with pytest.raises(ValueError):
            calc.cube_testing(hilbert64, system64, 1.0)
        with pytest.raises(ValueError):
            calc.ball_testing(hilbert64, math.inf)


class TestParaproduct:
    def test_constant_symbol_vanishes(self, system64):
        sp = make_path_space(64)
        f = VectorField.random(sp, 3, np.random.default_rng(4))
        out = calc.paraproduct(system64, np.full(64, 2.3), f)
        assert np.abs(out.values).max() <= 1e-12

    def test_constant_field_telescopes(self, hilbert64, system64):
        b = calc.extract_symbol(hilbert64)
        c = np.array([1.5, -0.5])
        f = VectorField(hilbert64.space, np.tile(c, (64, 1)))
        out = calc.paraproduct(system64, b, f)
        tele = (system64.average_values(b, system64.depth)
                - system64.average_values(b, 0))[:, None] * c
        assert np.abs(out.values - tele).max() <= 1e-12

    def test_duality_identity(self, hilbert64, system64):
        # sum_i <b, D_i g * E_i f> = <Pi_b f, g> for scalar fields
        rng = np.random.default_rng(5)
        sp = hilbert64.space
        b = calc.extract_symbol(hilbert64)
        fv = rng.standard_normal(64)
        gv = rng.standard_normal(64)
        lhs = 0.0
        for i in range(system64.depth):
            dg = system64.difference_values(gv, i)
            ef = system64.average_values(fv, i)
            lhs += float((sp.weight * b * dg * ef).sum())
        rhs = pairing(calc.paraproduct(system64, b, VectorField(sp, fv)),
                      VectorField(sp, gv))
        assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_extraction_residual(self, hilbert64, system64):
        rng = np.random.default_rng(6)
        f = VectorField.random(hilbert64.space, 2, rng)
        g = VectorField.random(hilbert64.space, 2, rng)
        assert calc.paraproduct_extraction_residual(
            hilbert64, system64, f, g) <= 1e-9

    def test_symbol_examples(self):
        assert np.all(calc.extract_symbol(zero_kernel(8)) == 0.0)
        K4 = finite_hilbert_kernel(4)
        b = calc.extract_symbol(K4)
        assert b[0] == pytest.approx(-(1.0 + 0.5 + 1.0 / 3.0))
        # antisymmetric kernel: the symbol integrates to zero
        K = finite_hilbert_kernel(32)
        b = calc.extract_symbol(K)
        assert abs((b * K.space.weight).sum()) <= 1e-12

    def test_symbol_bmo_dominated_by_testing(self):
        # ||T1||_BMO <= C (ball testing + smoothness constant); the achieved
        # C sits around 0.16 for the Hilbert kernel and stays stable in N
        from czkit.kernel import verify_standard_estimates

        ratios = []
        for n in (16, 64, 128):
            K = finite_hilbert_kernel(n)
            fam = ShiftedGridFamily(K.space)
            b = calc.extract_symbol(K)
            denom = calc.ball_testing(K, 2.0) + verify_standard_estimates(K).c_smooth
            worst = 0.0
            for t in range(5):
                system = fam.sample(np.random.default_rng(
                    np.random.SeedSequence([7, t])))
                worst = max(worst, calc.bmo_norm(system, b))
            ratios.append(worst / denom)
        assert all(r <= 1.0 for r in ratios)
        assert max(ratios) / min(ratios) <= 2.0


class TestBmoSquareDoob:
    def test_constants_vanish(self, system64):
        b = np.full(64, 3.7)
        assert calc.bmo_norm(system64, b) <= 1e-12
        assert calc.square_function(system64, b).max() <= 1e-12

    def test_truncated_square_identity(self, system64):
        rng = np.random.default_rng(7)
        b = rng.standard_normal(64)
        w = system64.space.weight
        for (lvl, cube) in ((0, 0), (1, 0), (2, 1)):
            if cube >= system64.n_cubes[lvl]:
                continue
            ts = calc.truncated_square(system64, b, lvl, cube)
            mask = system64.labels[lvl] == cube
            dev = (b - system64.average_values(b, lvl)) * mask
            assert abs((w * ts * ts).sum() - (w * dev * dev).sum()) <= 1e-10

    def test_single_haar_square_function(self, system64):
        hc = system64.haar(2, 1)
        if hc.n_children < 2:
            pytest.skip("fixture cube has a single child")
        b = hc.to_function(1, 64)
        sq = calc.square_function(system64, b)
        assert np.abs(sq - np.abs(b)).max() <= 1e-12
        got = calc.bmo_norm(system64, b)
        # brute-force BMO oracle over every cube
        best = 0.0
        w = system64.space.weight
        for lvl in range(system64.depth + 1):
            for c, pts in enumerate(system64.cube_points(lvl)):
                mu = w[pts].sum()
                avg = (w[pts] * b[pts]).sum() / mu
                best = max(best, (w[pts] * (b[pts] - avg) ** 2).sum() / mu)
        assert got == pytest.approx(math.sqrt(best), rel=1e-12)

    def test_doob_constant_field(self, system64):
        phi = np.full(64, 1.25)
        assert np.allclose(calc.doob_maximal(system64, phi), phi)

    def test_doob_two_point_example(self):
        sp = make_path_space(2)
        system = build_shifted_integer_grid(sp, [0], 1)
        out = calc.doob_maximal(system, np.array([1.0, 0.0]))
        assert np.allclose(out, [1.0, 0.5])

    def test_doob_l2_bound(self):
        sp = make_path_space(256)
        system = ShiftedGridFamily(sp).sample(np.random.default_rng(8))
        rng = np.random.default_rng(9)
        w = sp.weight
        for _ in range(5):
            phi = rng.standard_normal(256)
            m = calc.doob_maximal(system, phi)
            lhs = math.sqrt((w * m * m).sum())
            rhs = 2.0 * math.sqrt((w * phi * phi).sum())  # s/(s-1) = 2 at s=2
            assert lhs <= rhs + 1e-12


class TestStoppingFamily:
    def test_constant_inputs_initial_layer_only(self, system64):
        sp = make_path_space(64)
        f = VectorField.ones(sp, 1)
        fam = calc.stopping_family(system64, f, np.full(64, 1.0), lam=1.0)
        assert all(e.kind == "initial" for e in fam.entries)
        assert fam.min_major_fraction() == 1.0

    def test_mass_bounds_over_seeds(self):
        sp = make_path_space(256)
        family = ShiftedGridFamily(sp)
        fired_first = 0
        for t in range(8):
            rng = np.random.default_rng(200 + t)
            system = family.sample(rng)
            b = rng.standard_normal(256)
            fv = rng.standard_normal((256, 1))
            spikes = rng.random((256, 1)) < 0.1
            fv[spikes] *= 10.0
            fam = calc.stopping_family(system, VectorField(sp, fv), b)
            fired_first += sum(e.kind == "first" for e in fam.entries)
            assert fam.majors_disjoint()
            assert fam.min_major_fraction() >= 0.5
            assert fam.max_first_kind_fraction() <= 0.25
        assert fired_first > 0

    def test_second_kind_fires_at_smaller_threshold(self):
        # lam = 2 ||b||_BMO makes the second criterion hard to trip (each
        # chain step contributes at most about 2 BMO^2); a smaller lam
        # exercises that code path, the sparseness guarantee stays tied
        # to the default
        sp = make_path_space(256)
        system = ShiftedGridFamily(sp).sample(np.random.default_rng(33))
        rng = np.random.default_rng(34)
        b = np.cumsum(rng.choice([-1.0, 1.0], 256))  # walk: scale-spread symbol
        f = VectorField.ones(sp, 1)
        fam = calc.stopping_family(system, f, b,
                                   lam=0.4 * calc.bmo_norm(system, b))
        kinds = {e.kind for e in fam.entries}
        assert "second" in kinds
        assert fam.majors_disjoint()
        for i, e in enumerate(fam.entries):
            pts = fam.major_sets[i]
            assert np.all(system.labels[e.level][pts] == e.cube)  # E_S inside S

    def test_stopping_bound_record(self, system64):
        rng = np.random.default_rng(10)
        sp = make_path_space(64)
        b = rng.standard_normal(64)
        f = VectorField.random(sp, 1, rng)
        rec = calc.paraproduct_stopping_bound(system64, b, f, 2.0)
        assert rec["lhs"] <= rec["constant"] * rec["rhs"] + 1e-12
        # with mu(E_S) >= mu(S)/2, the E_S duality chain through the Doob
        # maximal operator gives ||sum 1_S <F>_S||_2 <= 2 * 2 * 2 ||F||_2
        assert 0.0 < rec["sparse_constant"] <= 8.0
        assert math.isfinite(rec["l2_paraproduct_constant"])
        rec0 = calc.paraproduct_stopping_bound(system64, np.ones(64), f, 2.0)
        assert rec0["lhs"] == 0.0


class TestSplitDifference:
    def test_constant_annihilated(self, system64):
        sp = make_path_space(64)
        f = VectorField.ones(sp, 2) * 4.0
        dm, d0m = calc.split_difference(system64, 1, 0, 2, f)
        assert np.abs(dm.values).max() <= 1e-12
        assert np.abs(d0m.values).max() <= 1e-12

    def test_depth_average_identity(self, system64):
        rng = np.random.default_rng(11)
        sp = make_path_space(64)
        f = VectorField.random(sp, 3, rng)
        lvl, cube, m = 1, 0, 3
        _, d0m = calc.split_difference(system64, lvl, cube, m, f)
        em = calc.depth_average(system64, lvl, cube, m, f)
        mask = (system64.labels[lvl] == cube).astype(float)[:, None]
        w = sp.weight
        avg = (w[:, None] * em.values * mask).sum(0) / (w * mask[:, 0]).sum()
        ident = mask * (em.values - avg)
        assert np.abs(d0m.values - ident).max() <= 1e-10

    def test_scale_orthogonality(self, system64):
        rng = np.random.default_rng(12)
        sp = make_path_space(64)
        f = VectorField.random(sp, 2, rng)
        g = VectorField.random(sp, 2, rng)
        dm_f, _ = calc.split_difference(system64, 1, 0, 2, f)
        _, d0m_g = calc.split_difference(system64, 1, 0, 2, g)
        assert abs(pairing(dm_f, d0m_g)) <= 1e-10

    def test_preconditions(self, system64):
        f = VectorField.ones(make_path_space(64), 1)
        with pytest.raises(ValueError):
            calc.split_difference(system64, 0, 0, 0, f)
        with pytest.raises(ValueError):
            calc.split_difference(system64, 3, 0, system64.depth, f)


class TestBlockOperators:
    def test_zero_kernel_zero_block(self, system64):
        blk = calc.block_operator(zero_kernel(64), system64, 1, 0, 4,
                                  "cancellative")
        assert np.abs(blk.a).max() == 0.0

    def test_size_and_domination_constants(self, hilbert64, system64):
        rng = np.random.default_rng(13)
        f = VectorField.random(hilbert64.space, 2, rng)
        for flavor in ("cancellative", "para_left", "para_right"):
            blk = calc.block_operator(hilbert64, system64, 1, 0, 4, flavor)
            size_c = calc.block_size_constant(system64, hilbert64, blk)
            dom_c = calc.block_domination_constant(system64, hilbert64, blk, f)
            assert math.isfinite(size_c)
            assert math.isfinite(dom_c)

    def test_block_bilinear_matches_apply(self, hilbert64, system64):
        rng = np.random.default_rng(14)
        f = VectorField.random(hilbert64.space, 1, rng)
        g = VectorField.random(hilbert64.space, 1, rng)
        blk = calc.block_operator(hilbert64, system64, 1, 0, 4, "cancellative")
        direct = float(
            (g.values[:, 0] * hilbert64.space.weight) @ blk.a
            @ (f.values[:, 0] * hilbert64.space.weight))
        assert blk.bilinear(f, g) == pytest.approx(direct, rel=1e-12)

    def test_validation(self, hilbert64, system64):
        with pytest.raises(ValueError):
            calc.block_operator(hilbert64, system64, 1, 0, 4, "sideways")
        with pytest.raises(ValueError):
            calc.block_operator(hilbert64, system64, 1, 0, 1, "cancellative")

    def test_surely_vanishing_blocks_are_zero(self):
        sp = make_path_space(128)
        K = random_truncated_kernel(sp, 1.0, 4.0, seed=2)
        system = ShiftedGridFamily(sp).sample(np.random.default_rng(15))
        m0 = m0_for(0.25, 0.5)
        checked = 0
        for lvl in range(0, system.depth - m0):
            for m in range(m0, system.depth - lvl):
                if not calc.block_surely_vanishes(K, system, lvl + m, m):
                    continue
                for cube in range(system.n_cubes[lvl]):
                    blk = calc.block_operator(K, system, lvl, cube, m,
                                              "cancellative")
                    assert np.abs(blk.a).max() == 0.0
                    checked += 1
        assert checked > 0


class TestReorganizedSums:
    def test_enumeration_exact(self):
        for n in (8, 16):
            sp = make_path_space(n)
            K = finite_hilbert_kernel(n)
            family = ShiftedGridFamily(sp)
            rng = np.random.default_rng(7)
            f = VectorField.random(sp, 2, rng)
            g = VectorField.random(sp, 2, rng)
            ds = ws = 0.0
            for system in family.enumerate():
                res = calc.reorganized_pair_sum(K, system, f, g)
                ds += res["direct"]
                ws += res["weighted"]
                assert res["factors_out_of_range"] == 0
            scale = max(abs(ds), 1.0)
            assert abs(ds - ws) / scale <= 1e-12

    def test_mc_within_three_sigma(self, hilbert64):
        family = ShiftedGridFamily(hilbert64.space)
        rng = np.random.default_rng(16)
        f = VectorField.random(hilbert64.space, 2, rng)
        g = VectorField.random(hilbert64.space, 2, rng)
        res = calc.reorganized_sum_check(hilbert64, family, f, g,
                                         n_systems=120, seed=17)
        assert abs(res["mean_diff"]) <= 3.0 * res["se_diff"] + 1e-9
        assert res["factors_out_of_range"] == 0
