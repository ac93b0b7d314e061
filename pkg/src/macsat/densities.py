"""Quantized LLR densities and the convolution algebra used by density evolution.

A density lives on a uniform grid of LLR bins plus two point masses at +/-inf.
All densities are conditioned on the transmission of a +1, so a "good" density
piles mass on positive LLRs and a perfectly decoded message is the delta at
+inf.  Variable-node combining is ordinary addition of LLRs (a linear
convolution, done with FFTs); check-node combining is the box-plus rule
2*atanh(tanh(x/2)*tanh(y/2)), done exactly on the quantized grid via a
precomputed output-bin table.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

LOG2E = 1.0 / np.log(2.0)


class GridMismatchError(ValueError):
    """Two densities on different grids were combined."""


@dataclass(frozen=True)
class DensityGrid:
    """Uniform symmetric LLR grid.

    bin centers are k*bin_width for k in [-k_max, k_max] with
    k_max = floor(half_range / bin_width), so the bin count is odd and 0 is a
    bin center.
    """

    bin_width: float
    half_range: float

    def __post_init__(self):
        if self.bin_width <= 0 or self.half_range <= 0:
            raise ValueError("bin_width and half_range must be positive")
        if self.k_max < 1:
            raise ValueError("grid must contain at least one positive bin")

    @property
    def k_max(self) -> int:
        return int(np.floor(self.half_range / self.bin_width + 1e-12))

    @property
    def n_bins(self) -> int:
        return 2 * self.k_max + 1

    @property
    def center(self) -> int:
        """Index of the 0-LLR bin inside the mass vector."""
        return self.k_max

    def centers(self) -> np.ndarray:
        k = np.arange(-self.k_max, self.k_max + 1)
        return k * self.bin_width

    def llr_to_index(self, llr: np.ndarray) -> np.ndarray:
        """Nearest-bin index (0-based into the mass vector), unclipped."""
        return np.floor(llr / self.bin_width + 0.5).astype(np.int64) + self.center


def default_grid() -> DensityGrid:
    # half_range 30, 4097 bins; threshold error from quantization is well
    # below the tolerances used by the acceptance checks.
    return DensityGrid(bin_width=30.0 / 2048.0, half_range=30.0)


@dataclass(frozen=True)
class LlrDensity:
    """Probability masses per LLR bin plus point masses at +/-inf.

    Instances are immutable values: the mass vector is frozen after
    construction and every operation returns a fresh density, so sweeps can
    evaluate densities in parallel without locking.
    """

    grid: DensityGrid
    mass: np.ndarray
    mass_pos_inf: float = 0.0
    mass_neg_inf: float = 0.0
    symmetric: bool = field(default=False, compare=False)

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=np.float64)
        if m.shape != (self.grid.n_bins,):
            raise ValueError(f"mass must have {self.grid.n_bins} entries")
        object.__setattr__(self, "mass", m)
        m.flags.writeable = False

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum() + self.mass_pos_inf + self.mass_neg_inf)

    def to_json(self) -> str:
        return json.dumps(
            {
                "grid": {"bin_width": self.grid.bin_width, "half_range": self.grid.half_range},
                "mass": self.mass.tolist(),
                "pos_inf": self.mass_pos_inf,
                "neg_inf": self.mass_neg_inf,
            }
        )

    @staticmethod
    def from_json(text: str) -> "LlrDensity":
        obj = json.loads(text)
        grid = DensityGrid(obj["grid"]["bin_width"], obj["grid"]["half_range"])
        return make_density(grid, np.asarray(obj["mass"]), obj["pos_inf"], obj["neg_inf"])


def _check_same_grid(a: LlrDensity, b: LlrDensity):
    if a.grid != b.grid:
        raise GridMismatchError(f"grid mismatch: {a.grid} vs {b.grid}")


def make_density(
    grid: DensityGrid,
    mass: np.ndarray,
    pos_inf: float = 0.0,
    neg_inf: float = 0.0,
    symmetric: bool = False,
) -> LlrDensity:
    """Validate and normalize raw masses into a density.

    Tiny negative entries from floating-point roundoff are clipped; the total
    is rescaled to exactly 1 provided it is already 1 within 1e-6 (anything
    worse is a bug upstream, not roundoff).
    """
    mass = np.asarray(mass, dtype=np.float64)
    low = min(mass.min(initial=0.0), pos_inf, neg_inf)
    if low < -1e-9:
        raise ValueError(f"negative mass {low}")
    mass = np.maximum(mass, 0.0)
    pos_inf = max(float(pos_inf), 0.0)
    neg_inf = max(float(neg_inf), 0.0)
    total = mass.sum() + pos_inf + neg_inf
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"total mass {total} too far from 1")
    return LlrDensity(grid, mass / total, pos_inf / total, neg_inf / total, symmetric)


def delta_inf(grid: DensityGrid) -> LlrDensity:
    """All mass at +inf (perfect knowledge of a transmitted +1)."""
    return LlrDensity(grid, np.zeros(grid.n_bins), 1.0, 0.0, symmetric=True)


def delta_neg_inf(grid: DensityGrid) -> LlrDensity:
    return LlrDensity(grid, np.zeros(grid.n_bins), 0.0, 1.0, symmetric=False)


def delta_zero(grid: DensityGrid) -> LlrDensity:
    """All mass at LLR 0 (erasure / no knowledge)."""
    m = np.zeros(grid.n_bins)
    m[grid.center] = 1.0
    return LlrDensity(grid, m, 0.0, 0.0, symmetric=True)


def delta_at(grid: DensityGrid, llr: float) -> LlrDensity:
    """Point mass at the bin nearest to `llr` (helper for tests/oracles)."""
    if np.isinf(llr):
        return delta_inf(grid) if llr > 0 else delta_neg_inf(grid)
    k = int(np.floor(llr / grid.bin_width + 0.5))
    if abs(k) > grid.k_max:
        return delta_inf(grid) if llr > 0 else delta_neg_inf(grid)
    m = np.zeros(grid.n_bins)
    m[grid.center + k] = 1.0
    return LlrDensity(grid, m, 0.0, 0.0, symmetric=(k == 0))


# ---------------------------------------------------------------------------
# variable-node convolution (LLR addition)
# ---------------------------------------------------------------------------


def is_delta_inf(a: LlrDensity) -> bool:
    return a.mass_pos_inf == 1.0


def is_delta_zero(a: LlrDensity) -> bool:
    return a.mass[a.grid.center] == 1.0


def conv_vn(a: LlrDensity, b: LlrDensity) -> LlrDensity:
    """Density of the sum of independent LLRs drawn from a and b.

    Out-of-range mass is clipped into the extreme finite bins: a saturated
    LLR must stay finite so that later additions can still outweigh it
    (folding it to -inf would manufacture unrecoverable wrong-certainty and
    destabilize the coupled decoding wave, since the infinities are absorbing
    under addition).  The true +/-inf point masses combine by saturation:
    +inf absorbs any finite value and the measure-zero pairing of +inf with
    -inf is resolved to the 0 bin.
    """
    _check_same_grid(a, b)
    if is_delta_zero(a):
        return b
    if is_delta_zero(b):
        return a
    if is_delta_inf(a) and is_delta_inf(b):
        return a
    g = a.grid
    k = g.k_max

    fin = fftconvolve(a.mass, b.mass)  # length 4k+1, center index 2k
    fin = np.maximum(fin, 0.0)
    core = fin[k : 3 * k + 1].copy()
    core[-1] += float(fin[3 * k + 1 :].sum())
    core[0] += float(fin[:k].sum())

    a_fin = float(a.mass.sum())
    b_fin = float(b.mass.sum())
    pos = a.mass_pos_inf * (b_fin + b.mass_pos_inf) + b.mass_pos_inf * a_fin
    neg = a.mass_neg_inf * (b_fin + b.mass_neg_inf) + b.mass_neg_inf * a_fin
    core[k] += a.mass_pos_inf * b.mass_neg_inf + a.mass_neg_inf * b.mass_pos_inf

    return make_density(g, core, pos, neg, symmetric=a.symmetric and b.symmetric)


# ---------------------------------------------------------------------------
# check-node convolution (box-plus), quantized table method
# ---------------------------------------------------------------------------
#
# For x, y > 0 the box-plus output is
#     z = min(x, y) + ln(1 + e^-(x+y)) - ln(1 + e^-|x-y|),
# so on the grid (x = i*d, y = j*d) the nearest output bin is
#     out(i, j) = min(i, j) + round(phi(i+j) - phi(|i-j|)),
# with phi(m) = ln(1 + e^(-m*d)) / d.  Outside a band |i-j| <= W the rounded
# correction is exactly 0 and the pair contributes to bin min(i, j); those
# contributions reduce to prefix sums.  Inside the band the output indices are
# tabulated once per grid.  Signs factor out of the magnitude computation:
# with p/n the positive/reflected-negative parts of a density, both signed
# outputs come from two magnitude passes over (p+n) and (p-n).


class BoxPlusTable:
    """Per-grid cache for the quantized box-plus reduction."""

    def __init__(self, grid: DensityGrid):
        self.grid = grid
        k = grid.k_max
        d = grid.bin_width

        loaded = self._load_cached(grid)
        if loaded is not None:
            self.band_width, self.ii, self.jj, self.oo = loaded
            return

        m = np.arange(0, 2 * k + 1, dtype=np.float64)
        phi = np.log1p(np.exp(-m * d)) / d
        # smallest W with phi(W+1) < 1/2: beyond it the correction rounds to 0
        w = int(np.searchsorted(-phi, -0.5, side="right"))  # first phi < 0.5
        self.band_width = max(w - 1, 0)

        ii_parts, jj_parts, oo_parts = [], [], []
        for dd in range(-self.band_width, self.band_width + 1):
            i = np.arange(max(1, 1 - dd), min(k, k - dd) + 1, dtype=np.int64)
            if i.size == 0:
                continue
            j = i + dd
            corr = np.floor(phi[i + j] - phi[abs(dd)] + 0.5).astype(np.int64)
            out = np.minimum(i, j) + corr
            ii_parts.append(i)
            jj_parts.append(j)
            oo_parts.append(np.maximum(out, 0))
        self.ii = np.concatenate(ii_parts).astype(np.intp)
        self.jj = np.concatenate(jj_parts).astype(np.intp)
        self.oo = np.concatenate(oo_parts).astype(np.intp)
        self._store_cached(grid)

    @staticmethod
    def _cache_path(grid: DensityGrid):
        root = os.environ.get("MACSAT_CACHE_DIR")
        if not root:
            return None
        os.makedirs(root, exist_ok=True)
        tag = f"boxplus_{grid.bin_width:.12g}_{grid.half_range:.12g}.npz"
        return os.path.join(root, tag)

    def _load_cached(self, grid):
        path = self._cache_path(grid)
        if path is None or not os.path.exists(path):
            return None
        try:
            data = np.load(path)
            return int(data["band_width"]), data["ii"], data["jj"], data["oo"]
        except Exception:
            return None

    def _store_cached(self, grid):
        path = self._cache_path(grid)
        if path is None:
            return
        try:
            np.savez_compressed(
                path, band_width=self.band_width, ii=self.ii, jj=self.jj, oo=self.oo
            )
        except OSError:
            pass

    def magnitude_op(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Bilinear magnitude combine: inputs indexed 1..k (entry 0 ignored),
        output indexed 0..k."""
        k = self.grid.k_max
        out = np.bincount(self.oo, weights=p[self.ii] * q[self.jj], minlength=k + 1)
        # off-band pairs land exactly on the smaller index
        w = self.band_width
        sq = np.concatenate((np.cumsum(q[::-1])[::-1], [0.0]))  # sq[i] = sum_{j>=i} q[j]
        sp = np.concatenate((np.cumsum(p[::-1])[::-1], [0.0]))
        hi = np.arange(1, k + 1) + w + 1
        hi = np.minimum(hi, k + 1)
        out[1:] += p[1:] * sq[hi] + q[1:] * sp[hi]
        return out


_BOXPLUS_TABLES: dict[DensityGrid, BoxPlusTable] = {}


def _boxplus_table(grid: DensityGrid) -> BoxPlusTable:
    tab = _BOXPLUS_TABLES.get(grid)
    if tab is None:
        tab = BoxPlusTable(grid)
        _BOXPLUS_TABLES[grid] = tab
    return tab


def boxplus_scalar(x: float, y: float) -> float:
    """Exact two-argument box-plus, used by oracles and the BP decoder."""
    if x == 0.0 or y == 0.0:
        return 0.0
    if np.isinf(x):
        return y if x > 0 else -y
    if np.isinf(y):
        return x if y > 0 else -x
    s = np.sign(x) * np.sign(y)
    ax, ay = abs(x), abs(y)
    return float(s * (min(ax, ay) + np.log1p(np.exp(-(ax + ay))) - np.log1p(np.exp(-abs(ax - ay)))))


def conv_cn(a: LlrDensity, b: LlrDensity) -> LlrDensity:
    """Density of boxplus(x, y) for independent x ~ a, y ~ b."""
    _check_same_grid(a, b)
    if is_delta_inf(a):
        return b
    if is_delta_inf(b):
        return a
    if is_delta_zero(a):
        return a
    if is_delta_zero(b):
        return b
    g = a.grid
    k = g.k_max
    c = g.center
    tab = _boxplus_table(g)

    a0 = float(a.mass[c])
    b0 = float(b.mass[c])

    # positive parts / reflected negative parts, indexed 1..k with a leading 0
    ap = np.concatenate(([0.0], a.mass[c + 1 :]))
    an = np.concatenate(([0.0], a.mass[c - 1 :: -1]))
    bp = np.concatenate(([0.0], b.mass[c + 1 :]))
    bn = np.concatenate(([0.0], b.mass[c - 1 :: -1]))

    ms = tab.magnitude_op(ap + an, bp + bn)
    md = tab.magnitude_op(ap - an, bp - bn)
    out_pos = 0.5 * (ms[1:] + md[1:])
    out_neg = 0.5 * (ms[1:] - md[1:])

    mass = np.zeros(g.n_bins)
    mass[c + 1 :] = out_pos
    mass[c - 1 :: -1] = out_neg
    # anything box-plussed with an erasure is an erasure
    mass[c] += ms[0] + a0 + b0 - a0 * b0

    # +inf is the identity, -inf reflects
    fin_nz_b = b.mass.copy()
    fin_nz_b[c] = 0.0
    fin_nz_a = a.mass.copy()
    fin_nz_a[c] = 0.0
    mass += a.mass_pos_inf * fin_nz_b + b.mass_pos_inf * fin_nz_a
    mass += a.mass_neg_inf * fin_nz_b[::-1] + b.mass_neg_inf * fin_nz_a[::-1]

    pos = a.mass_pos_inf * b.mass_pos_inf + a.mass_neg_inf * b.mass_neg_inf
    neg = a.mass_pos_inf * b.mass_neg_inf + a.mass_neg_inf * b.mass_pos_inf

    return make_density(g, mass, pos, neg, symmetric=a.symmetric and b.symmetric)


# ---------------------------------------------------------------------------
# mixtures, polynomials, functionals
# ---------------------------------------------------------------------------


def mix(densities: list[LlrDensity], weights) -> LlrDensity:
    """Convex mixture of densities on a common grid."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(densities) != weights.size or len(densities) == 0:
        raise ValueError("need one weight per density")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be a probability vector")
    g = densities[0].grid
    for d in densities[1:]:
        if d.grid != g:
            raise GridMismatchError("mixture over mismatched grids")
    mass = np.zeros(g.n_bins)
    pos = neg = 0.0
    for wgt, d in zip(weights, densities):
        mass += wgt * d.mass
        pos += wgt * d.mass_pos_inf
        neg += wgt * d.mass_neg_inf
    return make_density(g, mass, pos, neg, symmetric=all(d.symmetric for d in densities))


def power_vn(a: LlrDensity, n: int) -> LlrDensity:
    """n-fold variable-node self-convolution; n = 0 gives the 0-LLR delta."""
    if n < 0:
        raise ValueError("negative power")
    result = delta_zero(a.grid)
    base = a
    while n:
        if n & 1:
            result = conv_vn(result, base)
        n >>= 1
        if n:
            base = conv_vn(base, base)
    return result

def power_cn(a: LlrDensity, n: int) -> LlrDensity:
    """n-fold box-plus self-convolution; n = 0 gives the +inf delta."""
    if n < 0:
        raise ValueError("negative power")
    result = delta_inf(a.grid)
    base = a
    while n:
        if n & 1:
            result = conv_cn(result, base)
        n >>= 1
        if n:
            base = conv_cn(base, base)
    return result


def _check_poly(coeffs: np.ndarray):
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 1 or coeffs.size < 2 or coeffs[0] != 0.0:
        raise ValueError("polynomial needs degree-indexed coefficients starting at degree 1")
    if np.any(coeffs < 0) or abs(coeffs.sum() - 1.0) > 1e-9:
        raise ValueError("coefficients must be nonnegative and sum to 1")
    return coeffs


def _poly_apply(coeffs, a: LlrDensity, conv, power_fn, unit: LlrDensity, edge: bool) -> LlrDensity:
    """Mixture sum_i coeffs[i] * a^(i-1) (edge perspective) or a^i (node)."""
    coeffs = _check_poly(coeffs)
    nonzero = np.nonzero(coeffs)[0]
    if nonzero.size == 1:
        # regular polynomial: one power, computed by repeated squaring
        deg = int(nonzero[0])
        return power_fn(a, deg - 1 if edge else deg)
    parts, weights = [], []
    power = unit if edge else conv(unit, a)  # degree-1 term
    for i in range(1, coeffs.size):
        if coeffs[i] > 0:
            parts.append(power)
            weights.append(coeffs[i])
        if i + 1 < coeffs.size:
            power = conv(power, a)
    return mix(parts, np.asarray(weights) / sum(weights)) if len(parts) > 1 else parts[0]


def poly_vn(coeffs, a: LlrDensity) -> LlrDensity:
    """Edge-perspective variable polynomial: sum_i coeffs[i] a^{*(i-1)}.

    coeffs is indexed by degree (coeffs[0] unused and must be 0).
    """
    return _poly_apply(coeffs, a, conv_vn, power_vn, delta_zero(a.grid), edge=True)


def poly_cn(coeffs, a: LlrDensity) -> LlrDensity:
    """Edge-perspective check polynomial: sum_i coeffs[i] a^{boxplus(i-1)}."""
    return _poly_apply(coeffs, a, conv_cn, power_cn, delta_inf(a.grid), edge=True)


def poly_vn_node(coeffs, a: LlrDensity) -> LlrDensity:
    """Node-perspective polynomial sum_i coeffs[i] a^{*i}: a degree-i variable
    node aggregates all i of its check edges toward the function node."""
    return _poly_apply(coeffs, a, conv_vn, power_vn, delta_zero(a.grid), edge=False)


_ENTROPY_KERNELS: dict[DensityGrid, np.ndarray] = {}


def _entropy_kernel(grid: DensityGrid) -> np.ndarray:
    kern = _ENTROPY_KERNELS.get(grid)
    if kern is None:
        z = grid.centers()
        kern = np.logaddexp(0.0, -z) * LOG2E
        _ENTROPY_KERNELS[grid] = kern
    return kern


def entropy(a: LlrDensity) -> float:
    """Entropy functional sum a(z) log2(1 + e^-z), in bits.

    Equals H(X|Y) in [0, 1] for symmetric densities.  Mass at -inf was folded
    from beyond -half_range, so it is charged the boundary kernel value.
    """
    kern = _entropy_kernel(a.grid)
    h = float(a.mass @ kern)
    if a.mass_neg_inf:
        h += a.mass_neg_inf * float(np.logaddexp(0.0, a.grid.half_range) * LOG2E)
    return h


def error_prob(a: LlrDensity) -> float:
    """Probability of a sign error: negative mass plus half the 0-bin mass."""
    c = a.grid.center
    return float(a.mass[:c].sum() + 0.5 * a.mass[c] + a.mass_neg_inf)


def symmetry_residual(a: LlrDensity) -> float:
    """sum_{z>0} |a(-z) - e^-z a(z)| * bin_width; 0 for exactly symmetric."""
    c = a.grid.center
    z = a.grid.centers()[c + 1 :]
    pos = a.mass[c + 1 :]
    neg = a.mass[c - 1 :: -1]
    return float(np.abs(neg - np.exp(-z) * pos).sum() * a.grid.bin_width)
