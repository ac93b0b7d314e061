import numpy as np
import pytest

from macsat.channel import ChannelPoint, gauss_hermite, nu
from macsat.densities import DensityGrid, delta_zero, entropy, make_density
from macsat.ensembles import regular
from macsat.gexit import (
    GexitCurve,
    KernelLattice,
    MapBoundError,
    bp_gexit_value,
    extrinsic_fixed_point,
    fixed_entropy_de,
    gexit_kernel,
    lift,
    map_bound,
)
from macsat.jointde import DeFixedPoint, de_iterate, de_run, DeState

ENS36 = regular(3, 6)


class TestLift:
    def test_probability_vector(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            u, v = rng.normal(0, 5, 2)
            f = lift(u, v)
            assert np.all(f > 0)
            assert f.sum() == pytest.approx(1.0)

    def test_infinite_limits(self):
        f = lift(1000.0, 1000.0)
        np.testing.assert_allclose(f, [1, 0, 0, 0], atol=1e-300)
        f = lift(1000.0, -1000.0)
        np.testing.assert_allclose(f, [0, 1, 0, 0], atol=1e-300)


class TestKernel:
    def test_perfect_knowledge_zero(self):
        ch = ChannelPoint(1.1, 0.8)
        assert gexit_kernel(0, np.inf, np.inf, ch) == pytest.approx(0.0, abs=1e-9)

    def test_erasure_kernel_matches_independent_quadrature(self):
        # u = v = 0 lifts to the uniform vector; integrate the same expression
        # with plain Gauss-Hermite at doubled order as the oracle
        ch = ChannelPoint(0.9, 1.3)
        x = 0
        got = gexit_kernel(x, 0.0, 0.0, ch)

        y_off, w = gauss_hermite(257)
        mu = ch.means()
        s = ch.slopes()
        y = mu[x] + y_off
        mix = sum(0.25 * nu(xp, y, ch) for xp in range(4))
        integrand = np.log2(mix / (0.25 * nu(x, y, ch)))
        expect = float((w * y_off * s[x]) @ integrand)
        assert got == pytest.approx(expect, abs=1e-8)

    def test_user_relabeling_invariance(self):
        ch = ChannelPoint(1.2, 0.7)
        ch_swap = ChannelPoint(1.2 * 0.7, 1 / 0.7)  # h1' = h2, h2' = h1
        swap = {0: 0, 1: 2, 2: 1, 3: 3}
        for x in range(4):
            a = gexit_kernel(x, 1.3, -0.4, ch)
            b = gexit_kernel(swap[x], -0.4, 1.3, ch_swap)
            # alpha' = 0.7 alpha along the same ray, so kappa = 0.7 kappa'
            assert a == pytest.approx(0.7 * b, rel=1e-5, abs=1e-9)


class TestGexitValue:
    def test_decoded_fixed_point_vanishes(self, work_grid):
        from macsat.densities import delta_inf

        ch = ChannelPoint(1.8, 1.0)
        fp = DeFixedPoint(ch, delta_inf(work_grid), delta_inf(work_grid), 0.0, True, 1, "success")
        assert abs(bp_gexit_value(fp)) < 1e-5

    def test_zero_gain_vanishes(self, work_grid):
        ch = ChannelPoint(0.0, 1.0)
        fp = DeFixedPoint(ch, delta_zero(work_grid), delta_zero(work_grid), 0.0, False, 1, "stall")
        assert abs(bp_gexit_value(fp)) < 1e-9

    @pytest.mark.slow
    def test_fig3_sample_values(self, work_grid):
        # stable-branch values along A = 1 for the (3,6) ensemble
        targets = {0.5: -0.956902, 0.67: -1.0041, 1.0: -0.910315, 1.26: -0.752815}
        for alpha, ref in targets.items():
            fp = de_run(ChannelPoint(alpha, 1.0), ENS36, work_grid)
            g = bp_gexit_value(extrinsic_fixed_point(fp, ENS36))
            assert g == pytest.approx(ref, abs=5e-3)


class TestMapBound:
    def test_synthetic_linear_curve(self):
        # g = -alpha: integral from 0 to b is b^2/2 = 2r -> b = 2 sqrt(r)
        alphas = np.linspace(0, 2.5, 2501)
        curve = GexitCurve(1.0, "toy", [(a, -a, "stable") for a in alphas])
        assert map_bound(curve, 0.5) == pytest.approx(2.0 * np.sqrt(0.5), abs=1e-3)

    def test_unreachable_area(self):
        alphas = np.linspace(0, 0.5, 51)
        curve = GexitCurve(1.0, "toy", [(a, -a, "stable") for a in alphas])
        with pytest.raises(MapBoundError):
            map_bound(curve, 0.5)

    def test_curve_checks_sign(self):
        curve = GexitCurve(1.0, "toy", [(0.0, 0.0, "stable"), (0.1, 0.2, "stable")])
        with pytest.raises(ValueError):
            curve.check()


class TestFixedEntropy:
    def test_target_zero_returns_decoded_at_bracket_floor(self, coarse_grid):
        res = fixed_entropy_de(
            ENS36, 1.0, 0.0, grid=coarse_grid, alpha_bracket=(1.9, 2.4), max_outer=80
        )
        assert res.fixed_point.decoded
        assert res.alpha == pytest.approx(1.9, abs=1e-4)

    def test_consistency_with_stable_fixed_point(self, coarse_grid):
        # hitting the entropy of a known stable fixed point recovers its alpha
        ch = ChannelPoint(1.45, 1.0)
        fp = de_run(ch, ENS36, coarse_grid)
        target = 0.5 * (entropy(fp.a) + entropy(fp.b))
        res = fixed_entropy_de(
            ENS36, 1.0, target, grid=coarse_grid, alpha_bracket=(1.0, 1.69), max_outer=300
        )
        assert res.converged
        assert res.alpha == pytest.approx(1.45, abs=0.02)
        nxt = de_iterate(DeState(res.fixed_point.a, res.fixed_point.b), res.fixed_point.channel, ENS36)
        drift = abs(
            0.5 * (entropy(nxt.a) + entropy(nxt.b))
            - 0.5 * (entropy(res.fixed_point.a) + entropy(res.fixed_point.b))
        )
        assert drift < 1e-5

    @pytest.mark.slow
    def test_unstable_branch_exists(self):
        # for alpha between the area bound and the BP threshold there is an
        # unstable fixed point; fixed-entropy DE finds it
        grid = DensityGrid(30 / 512, 30.0)
        fp_bp = de_run(ChannelPoint(1.60, 1.0), ENS36, grid)
        h_stable = 0.5 * (entropy(fp_bp.a) + entropy(fp_bp.b))
        target = 0.5 * h_stable  # between decoded (0) and the stable stall
        res = fixed_entropy_de(
            ENS36, 1.0, target, grid=grid, alpha_bracket=(1.0, 2.2), max_outer=400, tol=1e-7
        )
        assert res.converged
        assert 1.20 < res.alpha < 1.72
        assert res.fixed_point.residual < 1e-6


class TestCoupledGexit:
    def test_identical_positions_match_uncoupled_value(self, coarse_grid):
        # w = 1 windows collapse, so a chain of identical densities carries
        # exactly the uncoupled GEXIT value
        from macsat.coupled import CoupledState, coupled_initial_state, coupled_run
        from macsat.ensembles import CoupledSpec
        from macsat.gexit import coupled_gexit_value
        from macsat.jointde import de_run, vf_density

        ch = ChannelPoint(1.4, 1.0)
        fp = de_run(ch, ENS36, coarse_grid)
        spec = CoupledSpec(3, 6, 3, 1)
        n = spec.n_positions
        state = CoupledState((fp.a,) * n, (fp.b,) * n, spec.L)
        got = coupled_gexit_value(state, spec, ch)
        u = vf_density(ENS36, fp.a)
        ref = bp_gexit_value(DeFixedPoint(ch, u, u, 0.0, False, 0, "stall"))
        assert got == pytest.approx(ref, abs=1e-12)

    @pytest.mark.slow
    def test_fig5_coupled_sample_value(self, work_grid):
        # coupled (3,6,16,2) stalled point at alpha = 0.5, A = 1
        from macsat.coupled import coupled_run
        from macsat.ensembles import CoupledSpec
        from macsat.gexit import coupled_gexit_value

        spec = CoupledSpec(3, 6, 16, 2)
        ch = ChannelPoint(0.5, 1.0)
        fp = coupled_run(ch, spec, work_grid)
        got = coupled_gexit_value(fp.state, spec, ch)
        assert got == pytest.approx(-0.950897, abs=5e-3)


@pytest.mark.slow
class TestCurve:
    def test_stable_branch_continuity_and_drop(self, work_grid):
        from macsat.gexit import bp_gexit_curve

        alphas = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8]
        curve = bp_gexit_curve(ENS36, 1.0, alphas, grid=work_grid)
        curve.check()
        stable = curve.stable()
        gs = [g for _, g in stable]
        # continuity below the drop, near-zero above the BP threshold
        for (a1, g1), (a2, g2) in zip(stable, stable[1:]):
            if a2 <= 1.6:
                assert abs(g2 - g1) < 0.25 * (a2 - a1) / 0.2 + 0.05
        assert abs(gs[-1]) < 1e-5  # 1.8 is beyond the threshold
        assert min(gs) < -1.0  # the deep part of the curve
