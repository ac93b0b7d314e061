import numpy as np
import pytest

from macsat.channel import ChannelPoint
from macsat.coupled import (
    CoupledState,
    _SymmetricRun,
    coupled_de_iterate,
    coupled_initial_state,
    coupled_run,
    coupled_threshold,
    extrinsic_profile,
    profile_csv_rows,
    window_g,
    window_gamma,
)
from macsat.densities import (
    DensityGrid,
    conv_vn,
    delta_inf,
    delta_zero,
    error_prob,
    mix,
    power_cn,
    power_vn,
)
from macsat.ensembles import CoupledSpec, regular
from macsat.jointde import de_iterate, initial_state

from conftest import random_density

SPEC = CoupledSpec(3, 6, 4, 2)


class TestWindows:
    def test_w1_collapses(self, tiny_grid):
        rng = np.random.default_rng(0)
        x = random_density(tiny_grid, rng)
        got = window_g([x], 3, 6, 1)
        expect = power_vn(power_cn(x, 5), 2)
        np.testing.assert_allclose(got.mass, expect.mass, atol=1e-13)

    def test_all_inf_propagates(self, tiny_grid):
        dinf = delta_inf(tiny_grid)
        assert window_g([dinf, dinf, dinf], 3, 6, 2).mass_pos_inf == 1.0
        assert window_gamma([dinf, dinf, dinf], 3, 6, 2).mass_pos_inf == 1.0

    def test_w2_hand_expansion(self):
        # window (delta_inf, x, delta_inf) at w=2: the two inner averages are
        # (inf+x)/2 and (x+inf)/2, so both check-side terms coincide
        grid = DensityGrid(0.25, 8.0)
        rng = np.random.default_rng(1)
        x = random_density(grid, rng)
        dinf = delta_inf(grid)
        inner = power_cn(mix([dinf, x], [0.5, 0.5]), 5)
        expect_g = power_vn(inner, 2)
        expect_gamma = power_vn(inner, 3)
        got_g = window_g([dinf, x, dinf], 3, 6, 2)
        got_gamma = window_gamma([dinf, x, dinf], 3, 6, 2)
        np.testing.assert_allclose(got_g.mass, expect_g.mass, atol=1e-13)
        assert got_g.mass_pos_inf == pytest.approx(expect_g.mass_pos_inf, abs=1e-13)
        np.testing.assert_allclose(got_gamma.mass, expect_gamma.mass, atol=1e-13)

    def test_window_size_checked(self, tiny_grid):
        with pytest.raises(ValueError):
            window_g([delta_inf(tiny_grid)], 3, 6, 2)


class TestIterate:
    def test_symmetries_at_unit_ratio(self, coarse_grid):
        ch = ChannelPoint(1.5, 1.0)
        st = coupled_initial_state(coarse_grid, SPEC)
        for _ in range(5):
            st = coupled_de_iterate(st, ch, SPEC, freeze=False)
        n = len(st.a_vec)
        for i in range(n):
            assert np.array_equal(st.a_vec[i].mass, st.b_vec[i].mass)
            assert np.array_equal(st.a_vec[i].mass, st.a_vec[n - 1 - i].mass)

    def test_symmetric_engine_matches_general(self, coarse_grid):
        ch = ChannelPoint(1.5, 1.0)
        st = coupled_initial_state(coarse_grid, SPEC)
        for _ in range(5):
            st = coupled_de_iterate(st, ch, SPEC, freeze=False)
        run = _SymmetricRun(coarse_grid, SPEC, ch, freeze=False)
        for _ in range(5):
            run.iterate()
        sym = run.full_state(5)
        for a, b in zip(st.a_vec, sym.a_vec):
            assert np.array_equal(a.mass, b.mass)

    def test_w1_positions_decouple(self, coarse_grid):
        spec1 = CoupledSpec(3, 6, 2, 1)
        ch = ChannelPoint(1.5, 1.0)
        st = coupled_initial_state(coarse_grid, spec1)
        ust = initial_state(coarse_grid)
        for _ in range(4):
            st = coupled_de_iterate(st, ch, spec1, freeze=False)
            ust = de_iterate(ust, ch, regular(3, 6))
        for d in st.a_vec:
            assert np.abs(d.mass - ust.a.mass).max() < 1e-13

    def test_update_matches_window_ops(self, coarse_grid):
        # one full update equals the displayed equation evaluated directly
        from macsat.channel import fn_operator

        ch = ChannelPoint(1.4, 1.0)
        rng = np.random.default_rng(2)
        vecs = tuple(random_density(coarse_grid, rng, symmetric=True) for _ in range(9))
        state = CoupledState(vecs, vecs, 4)
        new = coupled_de_iterate(state, ch, SPEC, freeze=False)
        dinf = delta_inf(coarse_grid)
        fn = fn_operator(coarse_grid, 1, ch)
        i = 0  # center position
        xs = [state.at(state.a_vec, p) if abs(p) <= 4 else dinf for p in range(i - 1, i + 2)]
        expect = conv_vn(fn.apply(window_gamma(xs, 3, 6, 2)), window_g(xs, 3, 6, 2))
        np.testing.assert_allclose(new.at(new.a_vec, 0).mass, expect.mass, atol=1e-12)


class TestRun:
    def test_wave_decodes_between_thresholds(self, coarse_grid):
        spec = CoupledSpec(3, 6, 8, 2)
        profiles = []
        fp = coupled_run(
            ChannelPoint(1.45, 1.0),
            spec,
            coarse_grid,
            max_iters=3000,
            profile=lambda it, ea, eb: profiles.append((it, ea, eb)),
        )
        assert fp.decoded
        # boundary decodes first: mid-run error profile rises toward the center
        mid = profiles[len(profiles) // 3]
        ent = mid[1]
        left = ent[: spec.L + 1]
        assert left[0] <= left[-1] + 1e-12

    def test_spatial_monotonicity(self, coarse_grid):
        spec = CoupledSpec(3, 6, 8, 2)
        fp = coupled_run(ChannelPoint(1.2, 1.0), spec, coarse_grid, max_iters=80)
        prof = fp.error_profile()
        # |i| >= |j| implies error_prob(a_i) <= error_prob(a_j)
        for i in range(spec.L):
            assert prof[i] <= prof[i + 1] + 1e-9  # left half ascending
            assert prof[2 * spec.L - i] <= prof[2 * spec.L - i - 1] + 1e-9

    def test_freeze_ensures_exact_deltas(self, coarse_grid):
        spec = CoupledSpec(3, 6, 4, 2)
        fp = coupled_run(ChannelPoint(1.8, 1.0), spec, coarse_grid)
        assert fp.decoded
        assert all(error_prob(d) == 0.0 for d in fp.state.a_vec)

    def test_profile_rows(self, coarse_grid):
        spec = CoupledSpec(3, 6, 2, 2)
        rows = []
        coupled_run(
            ChannelPoint(1.9, 1.0),
            spec,
            coarse_grid,
            profile=lambda it, ea, eb: rows.append((it, ea, eb)),
        )
        flat = profile_csv_rows(rows)
        iters, positions = {r[0] for r in flat}, {r[1] for r in flat}
        assert positions == set(range(-2, 3))
        assert all(len(r) == 4 for r in flat)

    def test_general_path_nonunit_ratio(self, coarse_grid):
        spec = CoupledSpec(3, 6, 2, 2)
        fp = coupled_run(ChannelPoint(2.2, 0.5), spec, coarse_grid, max_iters=2000)
        assert fp.decoded


@pytest.mark.slow
class TestWaveStability:
    def test_wave_never_retreats(self, coarse_grid):
        # regression: folding conv tails to -inf used to grow unrecoverable
        # wrong-certainty at the front and collapse the wave periodically
        spec = CoupledSpec(3, 6, 16, 2)
        prev = None
        st = coupled_initial_state(coarse_grid, spec)
        ch = ChannelPoint(1.35, 1.0)
        decoded = False
        for _ in range(2500):
            st = coupled_de_iterate(st, ch, spec)
            errs = np.array([error_prob(d) for d in st.a_vec])
            if prev is not None:
                assert np.all(errs <= prev + 1e-9)
            prev = errs
            if errs.max() < 1e-10:
                decoded = True
                break
        assert decoded


@pytest.mark.slow
class TestThreshold:
    def test_w1_equals_uncoupled(self):
        # w = 1 decouples, so the coupled threshold equals the uncoupled one
        from macsat.jointde import bp_threshold

        grid = DensityGrid(30 / 512, 30.0)
        spec1 = CoupledSpec(3, 6, 1, 1)
        res_c = coupled_threshold(spec1, 1.0, tol=4e-3, grid=grid, bracket=(1.2, 2.2))
        res_u = bp_threshold(regular(3, 6), 1.0, tol=4e-3, grid=grid, bracket=(1.2, 2.2))
        assert res_c.alpha == pytest.approx(res_u.alpha, abs=0.01)

    def test_coupled_3_6_8_2_smoke(self, coarse_grid):
        # L = 8 at a coarse grid: threshold noticeably below uncoupled 1.69
        res = coupled_threshold(
            CoupledSpec(3, 6, 8, 2), 1.0, tol=0.01, grid=coarse_grid, bracket=(1.0, 2.0)
        )
        assert 1.2 < res.alpha < 1.45


class TestExtrinsic:
    def test_profile_shapes(self, coarse_grid):
        st = coupled_initial_state(coarse_grid, SPEC)
        ch = ChannelPoint(1.4, 1.0)
        st = coupled_de_iterate(st, ch, SPEC)
        prof = extrinsic_profile(st, SPEC)
        assert len(prof) == SPEC.n_positions
        ga, gb = prof[SPEC.L]  # center
        assert abs(ga.total_mass - 1.0) < 1e-9
