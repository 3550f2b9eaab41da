"""Occupation measures, local-time estimates and the analytic integrals
behind the dimension lower bounds.

Local times are estimated with a Gaussian kernel of precision n in value
space.  The kernel is normalized as a probability density, so
integrating the estimate over u recovers the region area exactly in the
n -> infinity limit of the occupation density formula.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from .simulate import FieldSample


def local_times_exist(d: int) -> bool:
    """Local times exist on every rectangle iff d < 6."""
    if int(d) != d or d < 1:
        raise ValueError(f"d must be a positive integer, got {d}")
    return d < 6


# ---------------------------------------------------------------------------
# Regions and node weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Region:
    t_min: float
    t_max: float
    x_min: float
    x_max: float

    def __post_init__(self):
        if not (self.t_min < self.t_max and self.x_min < self.x_max):
            raise ValueError(f"degenerate region {self}")

    @property
    def area(self) -> float:
        return (self.t_max - self.t_min) * (self.x_max - self.x_min)

    @classmethod
    def of_grid(cls, grid) -> "Region":
        return cls(grid.t_min, grid.t_max, grid.x_min, grid.x_max)


def _axis_weights(nodes: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Weights w with sum w_i f(nodes_i) = int_lo^hi of the linear interpolant of f.

    Reduces to the trapezoid rule when lo and hi are nodes.
    """
    a, b = nodes[:-1], nodes[1:]
    c = np.clip(a, lo, hi)
    d = np.clip(b, lo, hi)
    h = b - a
    # integrals of the two hat-function pieces over [c, d]
    wa = ((b - c) ** 2 - (b - d) ** 2) / (2 * h)
    wb = ((d - a) ** 2 - (c - a) ** 2) / (2 * h)
    w = np.zeros(nodes.size)
    w[:-1] += wa
    w[1:] += wb
    return w


def node_weights(field: FieldSample, region: Optional[Region] = None) -> np.ndarray:
    """(n_t, n_x) quadrature weights of the bilinear interpolant; they sum to the region area."""
    g = field.grid
    region = region or Region.of_grid(g)
    if (region.t_min < g.t_min or region.t_max > g.t_max
            or region.x_min < g.x_min or region.x_max > g.x_max):
        raise ValueError(f"region {region} lies outside the grid")
    return np.outer(_axis_weights(g.times, region.t_min, region.t_max),
                    _axis_weights(g.xs, region.x_min, region.x_max))


# ---------------------------------------------------------------------------
# Occupation histogram
# ---------------------------------------------------------------------------

@dataclass
class OccupationHistogram:
    d: int
    bin_edges: list  # one edge array per axis
    masses: np.ndarray  # shape (bins,) * d
    region_area: float

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def bin_centers(self) -> list:
        return [0.5 * (e[1:] + e[:-1]) for e in self.bin_edges]

    def density(self) -> np.ndarray:
        vol = np.ones(self.masses.shape)
        for axis, e in enumerate(self.bin_edges):
            shape = [1] * self.d
            shape[axis] = -1
            vol = vol * np.diff(e).reshape(shape)
        return self.masses / vol

    def integrate(self, f: Callable) -> float:
        """Midpoint approximation of the integral of f against the measure."""
        grids = np.meshgrid(*self.bin_centers(), indexing="ij")
        v = np.stack(grids, axis=-1)
        return float(np.sum(self.masses * f(v if self.d > 1 else v[..., 0])))


def occupation_histogram(field: FieldSample, region: Optional[Region] = None,
                         bins: int = 128, span: float = 4.0) -> OccupationHistogram:
    """Binned occupation measure of ``field`` over ``region``.

    Bins cover mean +- ``span`` empirical standard deviations per axis;
    values outside are clipped into the edge bins so no mass is lost.
    """
    if field.d > 3:
        raise ValueError(f"d = {field.d} is too large to bin; use local_time_at instead")
    if bins < 1:
        raise ValueError("bins must be positive")
    w = node_weights(field, region)
    mask = w > 0
    vals = field.values[mask]  # (m, d)
    wts = w[mask]
    area = float(w.sum())
    edges = []
    for j in range(field.d):
        mean = np.average(vals[:, j], weights=wts)
        sd = math.sqrt(np.average((vals[:, j] - mean) ** 2, weights=wts))
        half = span * sd if sd > 0 else 1.0
        edges.append(np.linspace(mean - half, mean + half, bins + 1))
    idx = []
    for j, e in enumerate(edges):
        k = np.searchsorted(e, vals[:, j], side="right") - 1
        idx.append(np.clip(k, 0, bins - 1))
    masses = np.zeros((bins,) * field.d)
    np.add.at(masses, tuple(idx), wts)
    return OccupationHistogram(field.d, edges, masses, area)


# ---------------------------------------------------------------------------
# Local time
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalTimeEstimate:
    u: tuple
    n: float
    value: float


def _kernel_sum(vals: np.ndarray, wts: np.ndarray, u: np.ndarray, n: float) -> np.ndarray:
    # vals (m, d), u (k, d) -> (k,)
    d = vals.shape[1]
    norm = (n / (2 * math.pi)) ** (d / 2)
    out = np.empty(u.shape[0])
    for start in range(0, u.shape[0], 256):
        blk = u[start:start + 256]
        sq = np.sum((vals[None, :, :] - blk[:, None, :]) ** 2, axis=2)
        out[start:start + 256] = norm * (np.exp(-0.5 * n * sq) @ wts)
    return out


def _field_mass(field: FieldSample, region: Optional[Region]):
    w = node_weights(field, region)
    mask = w > 0
    return field.values[mask], w[mask]


def local_time_at(field: FieldSample, region: Optional[Region], u, n: float) -> LocalTimeEstimate:
    """Gaussian-kernel estimate of the local time l(u, region)."""
    if not n > 0:
        raise ValueError("n must be positive")
    u = np.broadcast_to(np.asarray(u, dtype=float), (field.d,))
    vals, wts = _field_mass(field, region)
    value = float(_kernel_sum(vals, wts, u[None, :], n)[0])
    return LocalTimeEstimate(tuple(float(v) for v in u), float(n), max(value, 0.0))


def local_time_curve(field: FieldSample, region: Optional[Region], u_grid, n: float) -> np.ndarray:
    """Estimates at every point of a 1-D value grid (d = 1)."""
    if field.d != 1:
        raise ValueError("local_time_curve is for d = 1 fields")
    vals, wts = _field_mass(field, region)
    return _kernel_sum(vals, wts, np.asarray(u_grid, dtype=float)[:, None], n)


@dataclass
class DensityFormulaCheck:
    direct: float  # integral of f(U) over the region
    via_local_time: float  # integral of f(u) l(u) du
    rel_error: float


def density_formula_check(field: FieldSample, f: Callable, n: float = 1e3,
                          region: Optional[Region] = None, pad: float = 8.0,
                          points: int = 4001) -> DensityFormulaCheck:
    """Compare both sides of the occupation density formula for d = 1."""
    vals, wts = _field_mass(field, region)
    direct = float(np.sum(wts * f(vals[:, 0])))
    reach = pad / math.sqrt(n)
    u = np.linspace(vals.min() - reach, vals.max() + reach, points)
    lt = local_time_curve(field, region, u, n)
    other = float(integrate.trapezoid(f(u) * lt, u))
    rel = abs(direct - other) / abs(direct) if direct != 0 else abs(other)
    return DensityFormulaCheck(direct, other, rel)


# ---------------------------------------------------------------------------
# J(a, b) and its three regimes
# ---------------------------------------------------------------------------

def j_integral(a: float, b: float, alpha: float, beta: float, eta: float) -> float:
    """J(a, b) = int_0^1 dt / ((a + t^alpha)^beta (b + t)^eta)."""
    for name, v in (("a", a), ("b", b), ("alpha", alpha)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    if beta < 0 or eta < 0:
        raise ValueError("beta and eta must be nonnegative")

    def g(t):
        return 1.0 / ((a + t ** alpha) ** beta * (b + t) ** eta)

    # the integrand changes shape near t = a^(1/alpha) and t = b; one
    # breakpoint per decade above the smaller kink keeps quad on smooth pieces
    kinks = [c for c in (a ** (1 / alpha), b) if 0 < c < 1]
    cuts = set(kinks)
    if kinks:
        cuts.update(10.0 ** np.arange(math.ceil(math.log10(min(kinks))), 0))
    edges = [0.0] + sorted(c for c in cuts if 0 < c < 1) + [1.0]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(g, lo, hi, epsabs=0.0, epsrel=1e-10, limit=400)
        total += val
    return total


class Regime(str, enum.Enum):
    STRONG = "alpha*beta>1"
    CRITICAL = "alpha*beta=1"
    WEAK = "alpha*beta<1"


def classify_regime(alpha: float, beta: float, eta: float, tol: float = 1e-12) -> Regime:
    ab = alpha * beta
    if abs(ab - 1) <= tol:
        return Regime.CRITICAL
    if ab > 1:
        return Regime.STRONG
    if abs(ab + eta - 1) <= tol:
        raise ValueError("alpha*beta + eta = 1 is excluded from the alpha*beta < 1 regime")
    return Regime.WEAK


def bound_shape(regime: Regime, a: float, b: float, alpha: float, beta: float, eta: float,
                exponent_shift: float = 0.0) -> float:
    """The a, b dependence of the upper bound on J, without its constant.

    ``exponent_shift`` perturbs the power of a in the alpha*beta > 1 shape;
    a nonzero shift should break boundedness of J / shape.
    """
    if regime is Regime.STRONG:
        return 1.0 / (a ** (beta - 1 / alpha + exponent_shift) * b ** eta)
    if regime is Regime.CRITICAL:
        return math.log1p(b * a ** (-1 / alpha)) / b ** eta
    return b ** -(alpha * beta + eta - 1) + 1.0


@dataclass
class Lemma22Report:
    regime: Regime
    alpha: float
    beta: float
    eta: float
    b: float
    side_c: float  # a^(1/alpha) <= side_c * b over the sweep
    a_values: np.ndarray
    ratios: np.ndarray
    exponent_shift: float = 0.0
    growth_limit: float = 10.0

    @property
    def sup_ratio(self) -> float:
        return float(np.max(self.ratios))

    @property
    def growth(self) -> float:
        return float(np.max(self.ratios) / np.min(self.ratios))

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.ratios)) and self.growth < self.growth_limit)

    def as_dict(self) -> dict:
        return {"regime": self.regime.value, "alpha": self.alpha, "beta": self.beta,
                "eta": self.eta, "b": self.b, "side_c": self.side_c,
                "exponent_shift": self.exponent_shift, "sup_ratio": self.sup_ratio,
                "growth": self.growth, "bounded": self.bounded}


def verify_lemma22_regimes(alpha: float, beta: float, eta: float,
                           a_values: Optional[Sequence[float]] = None, b: float = 1.0,
                           exponent_shift: float = 0.0, growth_limit: float = 10.0) -> Lemma22Report:
    """Sweep a (b fixed) and record J / bound_shape for the applicable regime.

    The ratio counts as bounded when its max/min spread over the sweep
    stays under ``growth_limit``; the sweep covers seven decades of a, so
    a wrong power of a shows up as a spread of many decades.
    """
    regime = classify_regime(alpha, beta, eta)
    if a_values is None:
        a_values = np.logspace(-1, -8, 15)
    a_values = np.asarray(a_values, dtype=float)
    if np.any(a_values <= 0) or not b > 0:
        raise ValueError("sweep needs a > 0 and b > 0")
    side_c = float(np.max(a_values ** (1 / alpha)) / b)
    ratios = np.array([
        j_integral(a, b, alpha, beta, eta) / bound_shape(regime, a, b, alpha, beta, eta, exponent_shift)
        for a in a_values
    ])
    return Lemma22Report(regime, alpha, beta, eta, b, side_c, a_values, ratios,
                         exponent_shift, growth_limit)


# ---------------------------------------------------------------------------
# Energy majorant
# ---------------------------------------------------------------------------

def energy_integral(gamma_exp: float, resolution: int) -> float:
    """Midpoint value of int_[0,1]^4 (|s-t|^(1/2) + |x-y|)^(-gamma/2).

    With u = |s - t| and v = |x - y| (densities 2(1-u), 2(1-v)) the 4-fold
    integral is exactly int int 4 (1-u)(1-v) (u^(1/2) + v)^(-gamma/2) du dv.
    The u-axis is parametrized by w = u^(1/2), and a resolution x
    resolution midpoint grid in (w, v) is used; no node lies on the
    singular corner w = v = 0.
    """
    if not gamma_exp > 0:
        raise ValueError("gamma_exp must be positive")
    if resolution < 1:
        raise ValueError("resolution must be positive")
    m = (np.arange(resolution) + 0.5) / resolution
    w = m[:, None]
    v = m[None, :]
    f = 8.0 * w * (1 - w * w) * (1 - v) * (w + v) ** (-gamma_exp / 2)
    return float(f.sum() / resolution ** 2)


def energy_integral_4d(gamma_exp: float, resolution: int) -> float:
    """Brute-force 4-fold midpoint sum on a staggered grid (t and x shifted
    half a cell against s and y); only for checking the reduction."""
    m = (np.arange(resolution) + 0.5) / resolution
    shift = 0.5 / resolution
    ds = np.abs(m[:, None] - (m[None, :] + shift))  # s vs t
    dx = ds
    total = 0.0
    for row in ds:
        total += np.sum((np.sqrt(row)[:, None, None] + dx[None, :, :]) ** (-gamma_exp / 2))
    return float(total / resolution ** 4)
