"""GEXIT kernel, BP-GEXIT curves, fixed-entropy DE and area-theorem bounds.

The GEXIT value of a DE fixed point is

    G = sum_x p(x) int F_x[a,b](u,v) kappa_x(u,v) du dv,

where (u, v) are the extrinsic variable-to-function LLRs of the two users,
F_x[a,b](u,v) = a(pi1(x) u) b(pi2(x) v), and the kernel integrates the
channel-parameter derivative of p(y|x) against the log-ratio of the lifted
extrinsic posterior.  With gains as the parameter the channel improves as
alpha grows, so G is negative; integrating the BP-GEXIT curve from 0 until
the area reaches twice the design rate yields an upper bound on the MAP
threshold (the area theorem).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelPoint, gauss_hermite
from .densities import DensityGrid, LlrDensity, entropy, make_density
from .ensembles import EnsembleSpec, design_rate
from .jointde import (
    BRACKET_ALPHA_MAX,
    DeFixedPoint,
    DeState,
    de_iterate,
    de_run,
    initial_state,
    vf_density,
)

LOG2E = 1.0 / np.log(2.0)
INF_LLR = 1000.0  # sentinel LLR for the +/-inf point masses inside kernels

KERNEL_ORDER = 129
LATTICE_BINS_DEFAULT = 128  # coarse half-width of the (u, v) kernel lattice


def lift(u: float, v: float) -> np.ndarray:
    """Extrinsic pair (u, v) lifted to the posterior 4-vector over symbols."""
    su = 1.0 / (1.0 + np.exp(-u))
    sv = 1.0 / (1.0 + np.exp(-v))
    return np.array([su * sv, su * (1 - sv), (1 - su) * sv, (1 - su) * (1 - sv)])


def gexit_kernel(x: int, u: float, v: float, ch: ChannelPoint, order: int = KERNEL_ORDER) -> float:
    """Kernel kappa_x(u, v): quadrature of dp/dalpha against the posterior log ratio.

    The term -log2(lift[x]) is constant in y and integrates against dp/dalpha
    to exactly zero (the quadrature nodes are symmetric), so it is dropped;
    this also gives the correct analytic limit when lift[x] = 0 at infinite
    extrinsic LLRs.
    """
    uu = np.clip(u, -INF_LLR, INF_LLR)
    vv = np.clip(v, -INF_LLR, INF_LLR)
    y_off, w = gauss_hermite(order)
    mu = ch.means()
    s = ch.slopes()
    y = mu[x] + y_off
    g = -0.5 * (y[:, None] - mu[None, :]) ** 2  # (Q, 4)
    lse = np.logaddexp(
        np.logaddexp(uu + vv + g[:, 0], uu + g[:, 1]),
        np.logaddexp(vv + g[:, 2], g[:, 3]),
    )
    log_z = np.logaddexp(0.0, uu) + np.logaddexp(0.0, vv)
    integrand = (lse - log_z - g[:, x]) * LOG2E
    return float((w * y_off * s[x]) @ integrand)


def _rebin(dens: LlrDensity, coarse: DensityGrid) -> tuple[np.ndarray, float, float]:
    """Conservative rebinning of a fine-grid density onto the kernel lattice."""
    ratio = dens.grid.k_max / coarse.k_max
    if abs(ratio - round(ratio)) > 1e-9:
        raise ValueError("lattice size must divide the density grid")
    ratio = int(round(ratio))
    k = np.arange(-dens.grid.k_max, dens.grid.k_max + 1)
    idx = np.rint(k / ratio).astype(np.int64) + coarse.k_max
    mass = np.bincount(idx, weights=dens.mass, minlength=coarse.n_bins)
    return mass, dens.mass_pos_inf, dens.mass_neg_inf


class KernelLattice:
    """kappa_x tabulated on a coarse (u, v) lattice for one channel point.

    The lattice is the density grid decimated to `bins` half-width plus two
    sentinel rows/columns for the +/-inf point masses.  Building costs
    order * (bins+2)^2 per symbol; evaluating a fixed point is then a single
    bilinear form per symbol, so tracing many fixed points at one channel
    (fixed-entropy DE, curve refinement) reuses the expensive part.
    """

    def __init__(
        self,
        ch: ChannelPoint,
        grid: DensityGrid,
        bins: int = LATTICE_BINS_DEFAULT,
        order: int = KERNEL_ORDER,
    ):
        if grid.k_max % bins != 0:
            raise ValueError(f"lattice bins {bins} must divide grid half-width {grid.k_max}")
        self.ch = ch
        self.grid = grid
        self.coarse = DensityGrid(grid.bin_width * (grid.k_max // bins), grid.half_range)
        vals = np.concatenate((self.coarse.centers(), [INF_LLR, -INF_LLR]))
        self.n = vals.size

        y_off, w = gauss_hermite(order)
        mu = ch.means()
        s = ch.slopes()
        self.kappa = np.zeros((4, self.n, self.n))
        uu = vals[:, None]
        vv = vals[None, :]
        for x in range(4):
            y = mu[x] + y_off
            g = -0.5 * (y[:, None] - mu[None, :]) ** 2  # (Q, 4)
            acc = np.zeros((self.n, self.n))
            cq = w * y_off * s[x] * LOG2E
            for q in range(y.size):
                if cq[q] == 0.0:
                    continue
                lse = np.logaddexp(
                    np.logaddexp(uu + vv + g[q, 0], uu + g[q, 1]),
                    np.logaddexp(vv + g[q, 2], g[q, 3]),
                )
                acc += cq[q] * (lse - g[q, x])
            self.kappa[x] = acc

    def _vector(self, dens: LlrDensity, reflect: bool) -> np.ndarray:
        mass, pinf, ninf = _rebin(dens, self.coarse)
        if reflect:
            mass = mass[::-1]
            pinf, ninf = ninf, pinf
        return np.concatenate((mass, [pinf, ninf]))

    def value(self, u_dens: LlrDensity, v_dens: LlrDensity) -> float:
        """BP-GEXIT value for extrinsic variable-to-function densities."""
        from .channel import PI1, PI2

        total = 0.0
        for x in range(4):
            au = self._vector(u_dens, PI1[x] < 0)
            bv = self._vector(v_dens, PI2[x] < 0)
            total += 0.25 * float(au @ self.kappa[x] @ bv)
        return total


_LATTICE_CACHE: dict[tuple, KernelLattice] = {}
_LATTICE_CACHE_LIMIT = 8


def kernel_lattice(
    ch: ChannelPoint, grid: DensityGrid, bins: int = LATTICE_BINS_DEFAULT, order: int = KERNEL_ORDER
) -> KernelLattice:
    key = (ch.alpha, ch.ratio, grid, bins, order)
    lat = _LATTICE_CACHE.get(key)
    if lat is None:
        if len(_LATTICE_CACHE) >= _LATTICE_CACHE_LIMIT:
            _LATTICE_CACHE.clear()
        lat = KernelLattice(ch, grid, bins, order)
        _LATTICE_CACHE[key] = lat
    return lat


def bp_gexit_value(
    fp: DeFixedPoint, bins: int = LATTICE_BINS_DEFAULT, order: int = KERNEL_ORDER
) -> float:
    """GEXIT value of a fixed point whose a/b fields hold the extrinsic
    variable-to-function densities L(rho(.))."""
    lat = kernel_lattice(fp.channel, fp.a.grid, bins, order)
    return lat.value(fp.a, fp.b)


def extrinsic_fixed_point(fp: DeFixedPoint, ens: EnsembleSpec) -> DeFixedPoint:
    """Map a variable-to-check fixed point to the variable-to-function one."""
    return DeFixedPoint(
        fp.channel,
        vf_density(ens, fp.a),
        vf_density(ens, fp.b),
        fp.residual,
        fp.decoded,
        fp.iterations,
        fp.halt,
    )


@dataclass
class GexitCurve:
    """Sampled BP-GEXIT curve along one ray."""

    ratio: float
    ensemble: str
    samples: list  # (alpha, g, branch) sorted by alpha within each branch
    metadata: dict = field(default_factory=dict)

    def stable(self) -> list[tuple[float, float]]:
        return [(a, g) for a, g, branch in self.samples if branch == "stable"]

    def check(self, slack: float = 1e-6):
        for _, g, _ in self.samples:
            if g > slack:
                raise ValueError(f"positive GEXIT value {g}")


class _CurveTracer:
    """Forward-DE sweep with warm starts plus GEXIT evaluation per alpha."""

    def __init__(self, ens, ratio, grid, bins, order, max_iters):
        self.ens = ens
        self.ratio = ratio
        self.grid = grid
        self.bins = bins
        self.order = order
        self.max_iters = max_iters
        self.states: list[tuple[float, DeState]] = []  # stalled states, ascending alpha

    def _start_for(self, alpha: float) -> DeState | None:
        best = None
        for a, st in self.states:
            if a <= alpha:
                best = st
        return best

    def eval_point(self, alpha: float) -> float:
        ch = ChannelPoint(alpha, self.ratio)
        start = self._start_for(alpha)
        fp = de_run(ch, self.ens, self.grid, max_iters=self.max_iters, start=start)
        if not fp.decoded:
            st = DeState(fp.a, fp.b)
            self.states.append((alpha, st))
            self.states.sort(key=lambda t: t[0])
        g = bp_gexit_value(extrinsic_fixed_point(fp, self.ens), self.bins, self.order)
        return g


def bp_gexit_curve(
    ens: EnsembleSpec,
    ratio: float,
    alphas,
    grid: DensityGrid | None = None,
    bins: int = LATTICE_BINS_DEFAULT,
    order: int = KERNEL_ORDER,
    max_iters: int = 10_000,
) -> GexitCurve:
    """Stable-branch BP-GEXIT curve: forward DE per alpha (warm-started along
    the sweep), GEXIT value at the resulting fixed point."""
    from .densities import default_grid

    if grid is None:
        grid = default_grid()
    tracer = _CurveTracer(ens, ratio, grid, bins, order, max_iters)
    samples = []
    for alpha in sorted(alphas):
        if alpha == 0.0:
            samples.append((0.0, 0.0, "stable"))
            continue
        samples.append((alpha, tracer.eval_point(alpha), "stable"))
    return GexitCurve(
        ratio,
        str(ens),
        samples,
        metadata={
            "grid_bins": grid.n_bins,
            "lattice_bins": bins,
            "order": order,
            "positions": "single",
        },
    )


def coupled_gexit_value(
    state, spec, ch: ChannelPoint, bins: int = LATTICE_BINS_DEFAULT, order: int = KERNEL_ORDER
) -> float:
    """Position-averaged GEXIT value of a coupled state: all 2L+1 positions
    enter the average (boundary positions included, noted in curve metadata)."""
    from .coupled import extrinsic_profile

    lat = kernel_lattice(ch, state.a_vec[0].grid, bins, order)
    vals = [lat.value(ga, gb) for ga, gb in extrinsic_profile(state, spec)]
    return float(np.mean(vals))


def coupled_bp_gexit_curve(
    spec,
    ratio: float,
    alphas,
    grid: DensityGrid | None = None,
    bins: int = LATTICE_BINS_DEFAULT,
    order: int = KERNEL_ORDER,
    max_iters: int | None = None,
) -> GexitCurve:
    """Stable-branch BP-GEXIT curve of the coupled system (forward coupled DE
    per alpha, warm-started along the sweep, position-averaged value)."""
    from .coupled import COUPLED_MAX_ITERS, coupled_run
    from .densities import default_grid

    if grid is None:
        grid = default_grid()
    if max_iters is None:
        max_iters = COUPLED_MAX_ITERS
    samples = []
    warm = []  # (alpha, stalled state) ascending
    for alpha in sorted(alphas):
        if alpha == 0.0:
            samples.append((0.0, 0.0, "stable"))
            continue
        ch = ChannelPoint(alpha, ratio)
        start = None
        for a_prev, st in warm:
            if a_prev <= alpha:
                start = st
        fp = coupled_run(ch, spec, grid, max_iters=max_iters, start=start)
        if not fp.decoded:
            warm.append((alpha, fp.state))
            warm.sort(key=lambda t: t[0])
        samples.append((alpha, coupled_gexit_value(fp.state, spec, ch, bins, order), "stable"))
    return GexitCurve(
        ratio,
        str(spec),
        samples,
        metadata={
            "grid_bins": grid.n_bins,
            "lattice_bins": bins,
            "order": order,
            "positions": "all (2L+1, boundaries included)",
        },
    )


# ---------------------------------------------------------------------------
# fixed-entropy DE
# ---------------------------------------------------------------------------


@dataclass
class FixedEntropyResult:
    fixed_point: DeFixedPoint
    alpha: float
    target: float
    converged: bool
    outer_iterations: int


def fixed_entropy_de(
    ens: EnsembleSpec,
    ratio: float,
    target_entropy: float,
    tol: float = 1e-6,
    grid: DensityGrid | None = None,
    alpha_bracket: tuple[float, float] = (1e-6, BRACKET_ALPHA_MAX),
    max_outer: int = 400,
    bisect_steps: int = 30,
) -> FixedEntropyResult:
    """Trace the (possibly unstable) fixed point with a prescribed average
    variable-to-check entropy by rescaling alpha after every DE sweep.

    Each outer step bisects for the smallest alpha in the bracket whose next
    DE state meets the entropy target, then commits that state; alpha and the
    state converge jointly to a point of the extended BP curve.
    """
    from .densities import default_grid

    if not (0.0 <= target_entropy < 1.0):
        raise ValueError("target entropy must lie in [0, 1)")
    if grid is None:
        grid = default_grid()

    state = initial_state(grid)
    alpha_prev = None
    converged = False
    outer = 0
    for outer in range(1, max_outer + 1):
        lo, hi = alpha_bracket

        def step_entropy(alpha: float) -> tuple[float, DeState]:
            nxt = de_iterate(state, ChannelPoint(alpha, ratio), ens)
            return 0.5 * (entropy(nxt.a) + entropy(nxt.b)), nxt

        h_hi, st_hi = step_entropy(hi)
        if h_hi > target_entropy + tol:
            alpha_star, nxt = hi, st_hi  # target unreachable this sweep; keep moving
        else:
            # smallest alpha in the bracket whose next state meets the target
            best = (hi, st_hi)
            for _ in range(bisect_steps):
                mid = 0.5 * (lo + hi)
                h_mid, st_mid = step_entropy(mid)
                if h_mid <= target_entropy + tol:
                    hi, best = mid, (mid, st_mid)
                else:
                    lo = mid
            alpha_star, nxt = best

        h_state = 0.5 * (entropy(nxt.a) + entropy(nxt.b))
        alpha_settled = (
            alpha_prev is not None and abs(alpha_star - alpha_prev) < 1e-6 * max(1.0, alpha_star)
        )
        state = DeState(nxt.a, nxt.b, outer)
        alpha_prev = alpha_star
        if abs(h_state - target_entropy) <= tol and alpha_settled:
            converged = True
            break

    ch = ChannelPoint(alpha_prev, ratio)
    nxt = de_iterate(state, ch, ens)
    residual = abs(
        0.5 * (entropy(nxt.a) + entropy(nxt.b)) - 0.5 * (entropy(state.a) + entropy(state.b))
    )
    fp = DeFixedPoint(
        ch,
        state.a,
        state.b,
        residual,
        decoded=entropy(state.a) < 1e-12,
        iterations=outer,
        halt="fixed_entropy" if converged else "max_outer",
    )
    return FixedEntropyResult(fp, alpha_prev, target_entropy, converged, outer)


# ---------------------------------------------------------------------------
# area-theorem MAP bound
# ---------------------------------------------------------------------------


class MapBoundError(RuntimeError):
    """The curve integral never reaches twice the design rate."""


def map_bound(curve: GexitCurve, rate: float) -> float:
    """Largest alpha_bar with int_{alpha_bar}^{0} g = 2 * rate, by trapezoid.

    Since g <= 0 under this parameterization the oriented integral from
    alpha_bar down to 0 is positive and increases with alpha_bar, so the
    crossing is unique; it is located by linear interpolation of the
    cumulative trapezoid sums.  The returned value satisfies
    alpha_MAP <= alpha_bar.
    """
    pts = curve.stable()
    if len(pts) < 3:
        raise ValueError("curve too sparse")
    alphas = np.array([p[0] for p in pts])
    gs = np.array([p[1] for p in pts])
    if alphas[0] > 1e-9:
        raise ValueError("curve must start at alpha = 0")
    cum = np.concatenate(([0.0], np.cumsum(0.5 * (-gs[1:] - gs[:-1]) * np.diff(alphas))))
    target = 2.0 * rate
    if cum[-1] < target:
        raise MapBoundError(
            f"integral reaches only {cum[-1]:.4f} < {target:.4f}; extend the curve"
        )
    i = int(np.searchsorted(cum, target))
    frac = (target - cum[i - 1]) / (cum[i] - cum[i - 1])
    return float(alphas[i - 1] + frac * (alphas[i] - alphas[i - 1]))


def map_bound_sweep(
    ens: EnsembleSpec,
    ratio: float,
    grid: DensityGrid | None = None,
    step: float = 0.01,
    refine_to: float = 1e-3,
    bins: int = LATTICE_BINS_DEFAULT,
    order: int = KERNEL_ORDER,
    alpha_max: float = BRACKET_ALPHA_MAX,
    max_iters: int = 10_000,
) -> tuple[float, GexitCurve]:
    """Compute alpha_bar for an ensemble: sweep the stable branch upward until
    the area reaches 2 * design_rate, then halve the step near the crossing
    until alpha_bar moves by less than refine_to."""
    from .densities import default_grid

    if grid is None:
        grid = default_grid()
    rate = design_rate(ens)
    target = 2.0 * rate
    tracer = _CurveTracer(ens, ratio, grid, bins, order, max_iters)

    samples: dict[float, float] = {0.0: 0.0}
    alpha = 0.0
    area = 0.0
    prev_g = 0.0
    while area < target * 1.02 + 2 * step:
        alpha = round(alpha + step, 12)
        if alpha > alpha_max:
            raise MapBoundError(f"area never reached {target} below alpha = {alpha_max}")
        g = tracer.eval_point(alpha)
        samples[alpha] = g
        area += 0.5 * (-g - prev_g) * step
        prev_g = g

    def current_bound() -> float:
        pts = sorted(samples.items())
        curve = GexitCurve(ratio, str(ens), [(a, g, "stable") for a, g in pts])
        return map_bound(curve, rate)

    bound = current_bound()
    span = step
    while span > refine_to:
        span /= 2.0
        for candidate in (round(bound - span, 12), round(bound + span, 12)):
            if 0.0 < candidate and candidate not in samples:
                samples[candidate] = tracer.eval_point(candidate)
        new_bound = current_bound()
        if abs(new_bound - bound) < refine_to:
            bound = new_bound
            break
        bound = new_bound

    pts = sorted(samples.items())
    curve = GexitCurve(
        ratio,
        str(ens),
        [(a, g, "stable") for a, g in pts],
        metadata={"grid_bins": grid.n_bins, "lattice_bins": bins, "order": order},
    )
    return bound, curve


def map_boundary(
    ens: EnsembleSpec,
    ray_grid,
    grid: DensityGrid | None = None,
    pmap=map,
    **kwargs,
) -> list[tuple[float, float]]:
    """Outer bound on the MAP boundary: (alpha_bar(A), A * alpha_bar(A)) per ray."""
    rays = list(ray_grid)
    if not rays:
        raise ValueError("empty ray grid")
    bounds = list(pmap(lambda a: map_bound_sweep(ens, a, grid=grid, **kwargs)[0], rays))
    return [(b, a * b) for a, b in zip(rays, bounds)]
