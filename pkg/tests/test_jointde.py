import numpy as np
import pytest

from macsat.channel import ChannelPoint
from macsat.densities import DensityGrid, entropy, error_prob
from macsat.ensembles import regular
from macsat.jointde import (
    BracketError,
    DeState,
    bp_acpr,
    bp_threshold,
    de_iterate,
    de_run,
    initial_state,
    vf_density,
)

ENS36 = regular(3, 6)


class TestIteration:
    def test_user_symmetry_exact(self, coarse_grid):
        # A = 1 with equal codes: both users follow bit-identical trajectories
        ch = ChannelPoint(1.5, 1.0)
        st = initial_state(coarse_grid)
        for _ in range(8):
            st = de_iterate(st, ch, ENS36)
            assert np.array_equal(st.a.mass, st.b.mass)
            assert st.a.mass_pos_inf == st.b.mass_pos_inf

    def test_error_prob_monotone_from_erasure(self, coarse_grid):
        ch = ChannelPoint(1.3, 0.8)
        st = initial_state(coarse_grid)
        prev_a, prev_b = 0.5, 0.5
        for _ in range(30):
            st = de_iterate(st, ch, ENS36)
            ea, eb = error_prob(st.a), error_prob(st.b)
            assert ea <= prev_a + 1e-9
            assert eb <= prev_b + 1e-9
            prev_a, prev_b = ea, eb

    def test_iteration_counter(self, coarse_grid):
        st = initial_state(coarse_grid)
        st = de_iterate(st, ChannelPoint(1.0, 1.0), ENS36)
        assert st.iteration == 1

    def test_sequential_differs_then_converges_same_side(self, coarse_grid):
        ch = ChannelPoint(1.9, 1.0)
        par = initial_state(coarse_grid)
        seq = initial_state(coarse_grid)
        for _ in range(4):
            par = de_iterate(par, ch, ENS36, schedule="parallel")
            seq = de_iterate(seq, ch, ENS36, schedule="sequential")
        assert not np.array_equal(par.b.mass, seq.b.mass)
        # both schedules decode comfortably above threshold
        assert de_run(ch, ENS36, coarse_grid, schedule="sequential").decoded


class TestRun:
    def test_zero_gain_stalls_at_full_entropy(self, coarse_grid):
        fp = de_run(ChannelPoint(0.0, 1.0), ENS36, coarse_grid, max_iters=50)
        assert not fp.decoded
        assert entropy(fp.a) == pytest.approx(1.0, abs=1e-9)

    def test_above_threshold_decodes(self, coarse_grid):
        fp = de_run(ChannelPoint(1.8, 1.0), ENS36, coarse_grid)
        assert fp.decoded and fp.halt == "success"
        assert error_prob(fp.a) < 1e-10 and error_prob(fp.b) < 1e-10

    def test_below_threshold_stalls(self, coarse_grid):
        fp = de_run(ChannelPoint(1.55, 1.0), ENS36, coarse_grid)
        assert not fp.decoded and fp.halt == "stall"
        assert error_prob(fp.a) > 1e-2

    def test_fixed_point_residual(self, coarse_grid):
        fp = de_run(ChannelPoint(1.55, 1.0), ENS36, coarse_grid)
        st = DeState(fp.a, fp.b)
        nxt = de_iterate(st, fp.channel, ENS36)
        drift = abs(
            entropy(nxt.a) + entropy(nxt.b) - entropy(fp.a) - entropy(fp.b)
        )
        assert drift < 1e-8

    def test_genie_is_single_user(self, coarse_grid):
        # the genie channel is exactly the one the analytic density describes
        from macsat.channel import bawgn_density
        from macsat.densities import conv_vn, poly_cn, poly_vn

        ch = ChannelPoint(1.3, 1.0)
        st = initial_state(coarse_grid)
        st = de_iterate(st, ch, ENS36, genie=True)
        ref = bawgn_density(coarse_grid, 1.3)
        ca = np.cumsum(st.a.mass)
        cr = np.cumsum(ref.mass)
        assert np.abs(ca - cr).max() < 0.01


class TestThreshold:
    def test_threshold_36_smoke(self, coarse_grid):
        # coarse-grid sanity: the true value is 1.69 at fine grids
        res = bp_threshold(ENS36, 1.0, tol=0.02, grid=coarse_grid, bracket=(1.0, 2.5))
        assert res.alpha == pytest.approx(1.69, abs=0.08)
        alphas = [a for a, _ in res.probes]
        outcomes = dict(res.probes)
        for a1 in alphas:
            for a2 in alphas:
                if a1 < a2 and outcomes[a1]:
                    assert outcomes[a2]

    def test_genie_threshold_single_user(self):
        # (3,6) single-user BIAWGN threshold: 1/0.881 ~ 1.135
        grid = DensityGrid(30 / 512, 30.0)
        res = bp_threshold(ENS36, 1.0, tol=5e-3, grid=grid, genie=True, bracket=(0.8, 1.6))
        assert res.alpha == pytest.approx(1.135, abs=0.015)

    def test_bracket_errors(self, coarse_grid):
        with pytest.raises(BracketError):
            bp_threshold(ENS36, 1.0, tol=0.05, grid=coarse_grid, bracket=(2.5, 3.0))
        with pytest.raises(BracketError):
            bp_threshold(ENS36, 1.0, tol=0.05, grid=coarse_grid, bracket=(0.0, 1.2))

    def test_success_monotone_in_alpha(self, coarse_grid):
        lo = de_run(ChannelPoint(1.75, 1.0), ENS36, coarse_grid)
        hi = de_run(ChannelPoint(1.95, 1.0), ENS36, coarse_grid)
        assert lo.decoded and hi.decoded
        assert hi.iterations <= lo.iterations


@pytest.mark.slow
class TestAcpr:
    def test_mirrored_rays(self, coarse_grid):
        pts = bp_acpr(ENS36, [0.7, 1 / 0.7], tol=0.02, grid=coarse_grid)
        (h1a, h2a), (h1b, h2b) = pts
        assert h1a == pytest.approx(h2b, abs=0.06)
        assert h2a == pytest.approx(h1b, abs=0.06)

    def test_outside_capacity(self, coarse_grid):
        from macsat.channel import mac_acpr_point

        res = bp_threshold(ENS36, 1.0, tol=0.02, grid=coarse_grid, bracket=(1.0, 2.5))
        assert res.alpha >= mac_acpr_point((0.5, 0.5), 1.0)


class TestVfDensity:
    def test_regular_vf_is_full_aggregate(self, tiny_grid):
        from macsat.densities import conv_vn, poly_cn

        rng = np.random.default_rng(5)
        from conftest import random_density

        a = random_density(tiny_grid, rng)
        rho_a = poly_cn(ENS36.rho_coeffs, a)
        expect = conv_vn(conv_vn(rho_a, rho_a), rho_a)
        got = vf_density(ENS36, a)
        np.testing.assert_allclose(got.mass, expect.mass, atol=1e-12)
