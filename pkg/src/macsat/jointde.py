"""Joint density evolution for the uncoupled two-user system.

One update is

    a' = fn(to user 1, L(rho(b))) * lambda(rho(a))
    b' = fn(to user 2, L(rho(a))) * lambda(rho(b))

with * the variable-node convolution; both users update simultaneously from
the previous state (Jacobi), which is what the displayed recursion expresses.
A sequential variant (user 1 first, then user 2 from the fresh user-1 state)
sits behind a flag for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelPoint, fn_operator
from .densities import (
    DensityGrid,
    LlrDensity,
    conv_vn,
    delta_inf,
    delta_zero,
    entropy,
    error_prob,
    poly_cn,
    poly_vn,
    poly_vn_node,
)
from .ensembles import EnsembleSpec

# halting defaults: success once both users are essentially error free, stall
# once entropy stops moving for a while (separates near-threshold slowdown
# from genuine failure)
SUCCESS_ERROR_PROB = 1e-10
STALL_ENTROPY_DELTA = 1e-9
STALL_PATIENCE = 10
MAX_ITERS = 10_000

BRACKET_ALPHA_MAX = 6.0


@dataclass(frozen=True)
class DeState:
    """Variable-to-check L-densities of the two users at one iteration."""

    a: LlrDensity
    b: LlrDensity
    iteration: int = 0


@dataclass(frozen=True)
class DeFixedPoint:
    channel: ChannelPoint
    a: LlrDensity
    b: LlrDensity
    residual: float
    decoded: bool
    iterations: int
    halt: str  # "success" | "stall" | "max_iters"


def initial_state(grid: DensityGrid) -> DeState:
    """No-knowledge start: both users at the 0-LLR delta."""
    return DeState(delta_zero(grid), delta_zero(grid))


def vf_density(ens: EnsembleSpec, a: LlrDensity) -> LlrDensity:
    """Density of variable-to-function messages, L(rho(a)): a degree-i
    variable node forwards the sum of all i of its check messages."""
    return poly_vn_node(ens.node_lambda, poly_cn(ens.rho_coeffs, a))


def de_iterate(
    state: DeState,
    ch: ChannelPoint,
    ens: EnsembleSpec,
    schedule: str = "parallel",
    genie: bool = False,
) -> DeState:
    """One joint DE update.  genie=True pins each user's partner to the
    perfectly-known delta at +inf (single-user diagnostic)."""
    grid = state.a.grid
    fn1 = fn_operator(grid, 1, ch)
    fn2 = fn_operator(grid, 2, ch)
    dinf = delta_inf(grid)

    rho_a = poly_cn(ens.rho_coeffs, state.a)
    rho_b = poly_cn(ens.rho_coeffs, state.b)
    vf_b = dinf if genie else poly_vn_node(ens.node_lambda, rho_b)
    a_next = conv_vn(fn1.apply(vf_b), poly_vn(ens.lambda_coeffs, rho_a))

    if schedule == "parallel":
        vf_a = dinf if genie else poly_vn_node(ens.node_lambda, rho_a)
    elif schedule == "sequential":
        vf_a = dinf if genie else poly_vn_node(ens.node_lambda, poly_cn(ens.rho_coeffs, a_next))
    else:
        raise ValueError(f"unknown schedule {schedule!r}")
    b_next = conv_vn(fn2.apply(vf_a), poly_vn(ens.lambda_coeffs, rho_b))

    return DeState(a_next, b_next, state.iteration + 1)


def de_run(
    ch: ChannelPoint,
    ens: EnsembleSpec,
    grid: DensityGrid,
    max_iters: int = MAX_ITERS,
    success_error: float = SUCCESS_ERROR_PROB,
    stall_delta: float = STALL_ENTROPY_DELTA,
    stall_patience: int = STALL_PATIENCE,
    schedule: str = "parallel",
    genie: bool = False,
    start: DeState | None = None,
    trace=None,
) -> DeFixedPoint:
    """Iterate DE until decoded, stalled at a nontrivial fixed point, or out
    of iterations (reported as nontrivial, conservatively)."""
    state = start if start is not None else initial_state(grid)
    h_prev = entropy(state.a) + entropy(state.b)
    quiet = 0
    residual = np.inf
    for _ in range(max_iters):
        state = de_iterate(state, ch, ens, schedule=schedule, genie=genie)
        h_now = entropy(state.a) + entropy(state.b)
        residual = abs(h_prev - h_now)
        if trace is not None:
            trace(state, h_now)
        if error_prob(state.a) < success_error and error_prob(state.b) < success_error:
            return DeFixedPoint(ch, state.a, state.b, residual, True, state.iteration, "success")
        quiet = quiet + 1 if residual < stall_delta else 0
        if quiet >= stall_patience:
            return DeFixedPoint(ch, state.a, state.b, residual, False, state.iteration, "stall")
        h_prev = h_now
    return DeFixedPoint(ch, state.a, state.b, residual, False, state.iteration, "max_iters")


class BracketError(RuntimeError):
    """Threshold bisection could not establish a success/failure bracket."""


@dataclass
class ThresholdResult:
    alpha: float
    tol: float
    ratio: float
    iterations: int  # total DE iterations spent
    probes: list  # (alpha, decoded) in evaluation order

    def as_record(self, ensemble: str) -> dict:
        return {
            "ensemble": ensemble,
            "A": self.ratio,
            "alpha_bp": self.alpha,
            "iters": self.iterations,
            "tol": self.tol,
        }


def bp_threshold(
    ens: EnsembleSpec,
    ratio: float,
    tol: float = 5e-3,
    grid: DensityGrid | None = None,
    bracket: tuple[float, float] = (0.0, BRACKET_ALPHA_MAX),
    genie: bool = False,
    max_iters: int = MAX_ITERS,
) -> ThresholdResult:
    """Bisect for the BP threshold on the ray h2 = ratio * h1.

    Returns the bracket midpoint once the half-width drops below tol.  DE
    outcomes must be monotone along the probes; a violation means the halting
    tolerances are fighting the quantization and is raised loudly.
    """
    from .densities import default_grid

    if grid is None:
        grid = default_grid()
    if not ratio >= 0:
        raise ValueError("ratio must be nonnegative")

    probes: list[tuple[float, bool]] = []
    spent = 0

    def decoded_at(alpha: float) -> bool:
        nonlocal spent
        fp = de_run(ChannelPoint(alpha, ratio), ens, grid, max_iters=max_iters, genie=genie)
        spent += fp.iterations
        probes.append((alpha, fp.decoded))
        return fp.decoded

    lo, hi = bracket
    if decoded_at(lo):
        raise BracketError(f"DE already succeeds at alpha={lo}")
    if not decoded_at(hi):
        raise BracketError(f"DE still fails at alpha={hi}")
    while hi - lo > 2.0 * tol:
        mid = 0.5 * (lo + hi)
        if decoded_at(mid):
            hi = mid
        else:
            lo = mid

    for a_lo, d_lo in probes:
        for a_hi, d_hi in probes:
            if a_lo < a_hi and d_lo and not d_hi:
                raise BracketError(f"non-monotone DE outcomes at {a_lo} vs {a_hi}")
    return ThresholdResult(0.5 * (lo + hi), tol, ratio, spent, probes)


def bp_acpr(
    ens: EnsembleSpec,
    ray_grid,
    tol: float = 5e-3,
    grid: DensityGrid | None = None,
    pmap=map,
) -> list[tuple[float, float]]:
    """BP-ACPR boundary: (threshold, ratio * threshold) per ray."""
    rays = list(ray_grid)
    if not rays:
        raise ValueError("empty ray grid")
    results = list(pmap(lambda a: bp_threshold(ens, a, tol=tol, grid=grid).alpha, rays))
    return [(alpha, ray * alpha) for ray, alpha in zip(rays, results)]
