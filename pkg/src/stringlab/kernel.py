"""Covariance kernel of the stationary pinned string.

Each component U^j of the string is a centred Gaussian field on
[0, inf) x R with stationary increments and increment variance

    gamma((t, x), (s, y)) = |x - y|                              if t == s
                          = |t - s|^(1/2) H(|x - y| |t - s|^(-1/2))  otherwise

where H(x) = E|Z - x| for Z ~ N(0, 2) (Z has the heat kernel G_1 as its
density).  This is what the Green's-function representation of the
string gives once space is normalized so that equal-time increments
have variance |x - y|.  The profile

    F(a) = H(|a|) - (2 pi)^(-1/2)

is kept as its own function (``f_func``) for the bound and asymptotic
checks, but it is not used as the variogram profile: polarizing
|t - s|^(1/2) F(...) gives indefinite covariance matrices.

The field is pinned, U_0(0) = 0, so covariances follow from gamma by
polarization.  This module also carries the brute-force checks of the
local nondeterminism inequalities (conditional variances of points and
of increments).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import special

SQRT2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
DEGENERATE_VARIANCE = 1e-14


class KernelMode(str, enum.Enum):
    CLOSED_FORM = "closed_form"
    QUADRATURE = "quadrature"


@dataclass(frozen=True)
class KernelConfig:
    """How H (and hence F and gamma) is evaluated.

    The quadrature route is Gauss-Legendre on [-W, W], split at the kink
    of |z - x| so that each piece is smooth.
    """

    quadrature_half_width: float = 12.0
    quadrature_points: int = 256
    mode: KernelMode = KernelMode.CLOSED_FORM

    def __post_init__(self):
        if self.quadrature_half_width < 8:
            raise ValueError("quadrature_half_width must be >= 8")
        if self.quadrature_points < 64:
            raise ValueError("quadrature_points must be >= 64")
        object.__setattr__(self, "mode", KernelMode(self.mode))


DEFAULT_CONFIG = KernelConfig()
QUADRATURE_CONFIG = KernelConfig(mode=KernelMode.QUADRATURE)


class SpaceTimePoint(NamedTuple):
    t: float
    x: float

    def check(self) -> "SpaceTimePoint":
        if not self.t >= 0:
            raise ValueError(f"time must be nonnegative, got t={self.t}")
        return self


ORIGIN = SpaceTimePoint(0.0, 0.0)


def _point(p) -> SpaceTimePoint:
    return SpaceTimePoint(float(p[0]), float(p[1])).check()


# ---------------------------------------------------------------------------
# Profile functions G_1, H, F
# ---------------------------------------------------------------------------

def green_g1(z):
    """Heat kernel at unit time, (4 pi)^(-1/2) exp(-z^2 / 4)."""
    z = np.asarray(z, dtype=float)
    out = np.exp(-0.25 * z * z) / math.sqrt(4.0 * math.pi)
    return out[()] if out.ndim == 0 else out


def h_tail(x):
    """H(x) - x for x >= 0, i.e. 2 * int_x^inf (z - x) G_1(z) dz.

    Written as 2 sigma (phi(x/sigma) - (x/sigma) Phi(-x/sigma)) with
    sigma = sqrt(2); erfc keeps it accurate far into the tail.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("h_tail is defined for x >= 0")
    w = np.minimum(x / SQRT2, 60.0)  # the tail underflows to 0 well before w = 60
    phi = np.exp(-0.5 * w * w) * INV_SQRT_2PI
    upper = 0.5 * special.erfc(w / SQRT2)
    out = 2.0 * SQRT2 * (phi - w * upper)
    out = np.maximum(out, 0.0)
    return out[()] if out.ndim == 0 else out


def _gauss_legendre(n: int):
    return np.polynomial.legendre.leggauss(n)


def _h_quadrature(x: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    w_half = cfg.quadrature_half_width
    m = cfg.quadrature_points // 2
    nodes, weights = _gauss_legendre(m)
    out = np.empty_like(x)
    for idx, xv in np.ndenumerate(x):
        lo, hi = -w_half, w_half
        if lo < xv < hi:
            pieces = [(lo, xv), (xv, hi)]
        else:
            pieces = [(lo, hi)]
        total = 0.0
        for a, b in pieces:
            half = 0.5 * (b - a)
            z = 0.5 * (a + b) + half * nodes
            total += half * np.sum(weights * green_g1(z) * np.abs(z - xv))
        out[idx] = total
    return out


def h_func(x, cfg: KernelConfig = DEFAULT_CONFIG):
    """H(x) = int G_1(z) |z - x| dz, the mean absolute deviation about x
    of a N(0, 2) variable.  Even in x."""
    x = np.asarray(x, dtype=float)
    if cfg.mode is KernelMode.QUADRATURE:
        out = _h_quadrature(x, cfg)
    else:
        ax = np.abs(x)
        out = ax + h_tail(ax)
    return out[()] if np.ndim(out) == 0 else out


def increment_profile(a, cfg: KernelConfig = DEFAULT_CONFIG):
    """gamma((1, 0), (0, a)) = H(|a|); gamma scales as |t - s|^(1/2) times this."""
    return h_func(np.abs(np.asarray(a, dtype=float)), cfg)


def f_func(a, cfg: KernelConfig = DEFAULT_CONFIG):
    """F(a) = H(|a|) - (2 pi)^(-1/2).  Bounded below by (2 pi)^(-1/2)."""
    return h_func(np.abs(np.asarray(a, dtype=float)), cfg) - INV_SQRT_2PI


def f_double_integral(a: float, n: int = 64, half_width: float = 12.0) -> float:
    """F(a) from its original two-dimensional form

        (2 pi)^(-1/2) + 1/2 int int G_1(a - z) G_1(a - z') (|z| + |z'| - |z - z'|) dz dz'

    by iterated Gauss-Legendre: the inner z' rule is split at the kinks
    z' = 0 and z' = z, the outer z rule at z = 0.  Oracle only.
    """
    nodes, weights = _gauss_legendre(n)

    def rule(breaks):
        zs, ws = [], []
        for lo, hi in zip(breaks[:-1], breaks[1:]):
            if hi > lo:
                half = 0.5 * (hi - lo)
                zs.append(0.5 * (lo + hi) + half * nodes)
                ws.append(half * weights)
        return np.concatenate(zs), np.concatenate(ws)

    lo, hi = a - half_width, a + half_width

    def inner(z):
        zp, wp = rule(sorted({lo, hi, min(max(0.0, lo), hi), min(max(z, lo), hi)}))
        integrand = green_g1(a - zp) * (abs(z) + np.abs(zp) - np.abs(z - zp))
        return np.sum(wp * integrand)

    zo, wo = rule(sorted({lo, hi, min(max(0.0, lo), hi)}))
    total = sum(w * green_g1(a - z) * inner(z) for z, w in zip(zo, wo))
    return INV_SQRT_2PI + 0.5 * float(total)


# ---------------------------------------------------------------------------
# Variogram and covariance
# ---------------------------------------------------------------------------

def variogram(t1, x1, t2, x2, cfg: KernelConfig = DEFAULT_CONFIG):
    """Vectorized gamma between (t1, x1) and (t2, x2).

    For t1 != t2 it is evaluated as |dx| + |dt|^(1/2) (H(a) - a) with
    a = |dx| / |dt|^(1/2), which equals |dt|^(1/2) H(a) without the
    cancellation at large a.
    """
    t1, x1, t2, x2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (t1, x1, t2, x2)))
    shape = t1.shape
    dt = np.abs(t1 - t2).ravel()
    dx = np.abs(x1 - x2).ravel()
    out = dx.copy()
    moving = dt > 0
    if np.any(moving):
        root = np.sqrt(dt[moving])
        a = dx[moving] / root
        if cfg.mode is KernelMode.QUADRATURE:
            tail = h_func(a, cfg) - a
        else:
            tail = h_tail(a)
        out[moving] = dx[moving] + root * tail
    out = out.reshape(shape)
    return out[()] if out.ndim == 0 else out


def gamma(p, q, cfg: KernelConfig = DEFAULT_CONFIG) -> float:
    """E[(U_t(x) - U_s(y))^2] for one component, p = (t, x), q = (s, y)."""
    p, q = _point(p), _point(q)
    return float(variogram(p.t, p.x, q.t, q.x, cfg))


def point_variance(t, x, cfg: KernelConfig = DEFAULT_CONFIG):
    """sigma^2(t, x) = gamma((t, x), (0, 0))."""
    return variogram(t, x, 0.0, 0.0, cfg)


def covariance(t1, x1, t2, x2, cfg: KernelConfig = DEFAULT_CONFIG):
    """Vectorized pinned covariance by polarization."""
    return 0.5 * (
        point_variance(t1, x1, cfg)
        + point_variance(t2, x2, cfg)
        - variogram(t1, x1, t2, x2, cfg)
    )


def pinned_cov(p, q, cfg: KernelConfig = DEFAULT_CONFIG) -> float:
    p, q = _point(p), _point(q)
    return float(covariance(p.t, p.x, q.t, q.x, cfg))


def covariance_matrix(points, cfg: KernelConfig = DEFAULT_CONFIG, block: int = 512) -> np.ndarray:
    """[pinned_cov(p_i, p_j)] for an (n, 2) array of (t, x) rows, filled in row blocks."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if np.any(pts[:, 0] < 0):
        raise ValueError("times must be nonnegative")
    t, x = pts[:, 0], pts[:, 1]
    n = len(pts)
    var = point_variance(t, x, cfg) if n else np.empty(0)
    cov = np.empty((n, n))
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        vg = variogram(t[lo:hi, None], x[lo:hi, None], t[None, :], x[None, :], cfg)
        cov[lo:hi] = 0.5 * (var[lo:hi, None] + var[None, :] - vg)
    # polarization is symmetric up to rounding; mirror the upper triangle
    iu = np.triu_indices(n, 1)
    cov[(iu[1], iu[0])] = cov[iu]
    return cov


def scaling_check(p, q, c: float, cfg: KernelConfig = DEFAULT_CONFIG) -> float:
    """|gamma(c^4 t, c^2 x; c^4 s, c^2 y) - c^2 gamma(t, x; s, y)|."""
    if not c > 0:
        raise ValueError("c must be positive")
    p, q = _point(p), _point(q)
    c2, c4 = c * c, c ** 4
    lhs = gamma((c4 * p.t, c2 * p.x), (c4 * q.t, c2 * q.x), cfg)
    return abs(lhs - c2 * gamma(p, q, cfg))


# ---------------------------------------------------------------------------
# Conditional variances
# ---------------------------------------------------------------------------

class CondTarget(str, enum.Enum):
    POINT = "point-given-point"
    INCREMENT = "increment-given-increment"


@dataclass(frozen=True)
class CondVarQuery:
    """Var(X | Y) for a Gaussian pair.

    POINT: points = (p, q), X = U(p), Y = U(q).
    INCREMENT: points = (p1, p2, q1, q2), X = U(p2) - U(p1), Y = U(q2) - U(q1).
    """

    target: CondTarget
    points: tuple

    def __post_init__(self):
        target = CondTarget(self.target)
        object.__setattr__(self, "target", target)
        pts = tuple(_point(p) for p in self.points)
        need = 2 if target is CondTarget.POINT else 4
        if len(pts) != need:
            raise ValueError(f"{target.value} needs {need} points, got {len(pts)}")
        object.__setattr__(self, "points", pts)


class DegenerateConditioningError(ValueError):
    pass


def rho2_increments(t1, x1, t2, x2, s1, y1, s2, y2, cfg: KernelConfig = DEFAULT_CONFIG):
    """E[(X - Y)^2] for X = U_{t2}(x2) - U_{t1}(x1), Y = U_{s2}(y2) - U_{s1}(y1).

    With a, b, c, d = U(t2, x2), U(t1, x1), U(s1, y1), U(s2, y2),
    (a - b + c - d)^2 expands into six squared differences, each a
    variogram value.  Vectorized over its arguments.
    """
    for v in (t1, t2, s1, s2):
        if np.any(np.asarray(v) < 0):
            raise ValueError("times must be nonnegative")
    g = lambda ta, xa, tb, xb: variogram(ta, xa, tb, xb, cfg)
    out = (
        g(t2, x2, t1, x1)
        + g(s1, y1, s2, y2)
        + g(t2, x2, s2, y2)
        + g(t1, x1, s1, y1)
        - g(t2, x2, s1, y1)
        - g(t1, x1, s2, y2)
    )
    out = np.maximum(out, 0.0)
    return out[()] if np.ndim(out) == 0 else out


def cond_var_from_rho(sigma_x2, sigma_y2, rho2):
    """Var(X | Y) from sigma_X^2, sigma_Y^2 and rho^2 = E[(X - Y)^2]."""
    sx, sy = np.sqrt(sigma_x2), np.sqrt(sigma_y2)
    num = (rho2 - (sx - sy) ** 2) * ((sx + sy) ** 2 - rho2)
    return np.maximum(num / (4.0 * sigma_y2), 0.0)


def _increment_cov_direct(pts, cfg):
    p1, p2, q1, q2 = pts
    cov = covariance_matrix([p1, p2, q1, q2], cfg)
    ex = np.array([-1.0, 1.0, 0.0, 0.0])
    ey = np.array([0.0, 0.0, -1.0, 1.0])
    return ex @ cov @ ex, ey @ cov @ ey, ex @ cov @ ey


def cond_var(query: CondVarQuery, cfg: KernelConfig = DEFAULT_CONFIG, method: str = "auto") -> float:
    """Conditional variance Var(X | Y).

    ``method`` is "direct" (Var X - Cov^2 / Var Y from pinned
    covariances) or "rho" (the sigma/rho identity, increments only);
    "auto" picks "rho" for increments and "direct" for points.
    """
    if method == "auto":
        method = "rho" if query.target is CondTarget.INCREMENT else "direct"
    if query.target is CondTarget.POINT:
        if method != "direct":
            raise ValueError("point-given-point supports only the direct method")
        p, q = query.points
        vx, vy, cxy = pinned_cov(p, p, cfg), pinned_cov(q, q, cfg), pinned_cov(p, q, cfg)
    else:
        p1, p2, q1, q2 = query.points
        if method == "rho":
            vx = gamma(p1, p2, cfg)
            vy = gamma(q1, q2, cfg)
            if vy <= DEGENERATE_VARIANCE:
                raise DegenerateConditioningError(f"conditioning variance {vy:.3e} is degenerate")
            rho2 = rho2_increments(p1.t, p1.x, p2.t, p2.x, q1.t, q1.x, q2.t, q2.x, cfg)
            return float(cond_var_from_rho(vx, vy, rho2))
        if method != "direct":
            raise ValueError(f"unknown method {method!r}")
        vx, vy, cxy = _increment_cov_direct(query.points, cfg)
    if vy <= DEGENERATE_VARIANCE:
        raise DegenerateConditioningError(f"conditioning variance {vy:.3e} is degenerate")
    return float(max(vx - cxy * cxy / vy, 0.0))


# ---------------------------------------------------------------------------
# Local nondeterminism scans
# ---------------------------------------------------------------------------

class Lemma(str, enum.Enum):
    L13 = "L13"  # point given point
    L14 = "L14"  # increments over well-separated times
    L15 = "L15"  # same-time spatial increments, |s - t| small


@dataclass
class LNDScanResult:
    lemma: Lemma
    min_ratio: float
    argmin: dict
    samples: int
    ratios: np.ndarray

    def summary(self) -> dict:
        return {"lemma": self.lemma.value, "min_ratio": self.min_ratio,
                "samples": self.samples, "argmin": self.argmin}


class EmptyRegionError(ValueError):
    pass


def _uniform_pairs_separated(rng, lo, hi, sep, size):
    """Pairs (u, v) uniform on [lo, hi]^2 subject to |u - v| >= sep."""
    if hi - lo < sep:
        raise EmptyRegionError(f"separation {sep} does not fit in [{lo}, {hi}]")
    out_u = np.empty(0)
    out_v = np.empty(0)
    while out_u.size < size:
        u = rng.uniform(lo, hi, 2 * size)
        v = rng.uniform(lo, hi, 2 * size)
        keep = np.abs(u - v) >= sep
        out_u = np.concatenate([out_u, u[keep]])
        out_v = np.concatenate([out_v, v[keep]])
    return out_u[:size], out_v[:size]


def _increment_ratio_terms(t1, x1, t2, x2, s1, y1, s2, y2, cfg):
    vx = variogram(t1, x1, t2, x2, cfg)
    vy = variogram(s1, y1, s2, y2, cfg)
    rho2 = rho2_increments(t1, x1, t2, x2, s1, y1, s2, y2, cfg)
    return cond_var_from_rho(vx, vy, rho2)


def lnd_ratio_scan(
    lemma,
    epsilon: float,
    L: float = 0.3,
    samples: int = 10_000,
    seed: int = 0,
    h0: float | None = 0.01,
    cfg: KernelConfig = DEFAULT_CONFIG,
) -> LNDScanResult:
    """Uniform brute-force scan of Var(X|Y) / (separation bracket).

    Configurations live in the box [eps, 1/eps] x [-1/eps, 1/eps].
    L14 draws time pairs with |t2 - t1|, |s2 - s1| >= L.  L15 draws a
    common time per increment with |s - t| <= h0 (h0=None lifts the
    restriction), |x2 - x1|, |y2 - y1| >= L and |x_k - y_k| <= L/2.
    The result is a function of the arguments and seed only.
    """
    lemma = Lemma(lemma)
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if samples < 1:
        raise ValueError("samples must be positive")
    rng = np.random.default_rng(seed)
    t_lo, t_hi = epsilon, 1.0 / epsilon
    x_lo, x_hi = -1.0 / epsilon, 1.0 / epsilon
    n = samples

    if lemma is Lemma.L13:
        t = rng.uniform(t_lo, t_hi, n)
        x = rng.uniform(x_lo, x_hi, n)
        s = rng.uniform(t_lo, t_hi, n)
        y = rng.uniform(x_lo, x_hi, n)
        vx = point_variance(t, x, cfg)
        vy = point_variance(s, y, cfg)
        cxy = covariance(t, x, s, y, cfg)
        num = np.maximum(vx - cxy ** 2 / vy, 0.0)
        den = np.abs(x - y) + np.sqrt(np.abs(t - s))
        cols = {"t": t, "x": x, "s": s, "y": y}
    elif lemma is Lemma.L14:
        if not L > 0:
            raise ValueError("L must be positive")
        t1, t2 = _uniform_pairs_separated(rng, t_lo, t_hi, L, n)
        s1, s2 = _uniform_pairs_separated(rng, t_lo, t_hi, L, n)
        x1, x2, y1, y2 = (rng.uniform(x_lo, x_hi, n) for _ in range(4))
        num = _increment_ratio_terms(t1, x1, t2, x2, s1, y1, s2, y2, cfg)
        den = (np.abs(x1 - y1) + np.abs(x2 - y2)
               + np.sqrt(np.abs(t1 - s1)) + np.sqrt(np.abs(t2 - s2)))
        cols = {"t1": t1, "x1": x1, "t2": t2, "x2": x2,
                "s1": s1, "y1": y1, "s2": s2, "y2": y2}
    else:
        if not L > 0:
            raise ValueError("L must be positive")
        if h0 is not None and not 0 < h0:
            raise ValueError("h0 must be positive")
        if x_hi - x_lo < L:
            raise EmptyRegionError(f"L={L} does not fit in the spatial box")
        t = rng.uniform(t_lo, t_hi, n)
        if h0 is None:
            s = rng.uniform(t_lo, t_hi, n)
        else:
            # s uniform on [t - h0, t + h0] intersected with the box
            lo = np.maximum(t - h0, t_lo)
            hi = np.minimum(t + h0, t_hi)
            s = lo + (hi - lo) * rng.uniform(size=n)
        x1, x2 = _uniform_pairs_separated(rng, x_lo, x_hi, L, n)
        # y_k within L/2 of x_k, inside the box, with |y2 - y1| >= L
        y1 = np.empty(n)
        y2 = np.empty(n)
        todo = np.arange(n)
        for _ in range(10_000):
            if todo.size == 0:
                break
            a1 = np.clip(x1[todo] - L / 2, x_lo, x_hi)
            b1 = np.clip(x1[todo] + L / 2, x_lo, x_hi)
            a2 = np.clip(x2[todo] - L / 2, x_lo, x_hi)
            b2 = np.clip(x2[todo] + L / 2, x_lo, x_hi)
            c1 = a1 + (b1 - a1) * rng.uniform(size=todo.size)
            c2 = a2 + (b2 - a2) * rng.uniform(size=todo.size)
            ok = np.abs(c2 - c1) >= L
            y1[todo[ok]] = c1[ok]
            y2[todo[ok]] = c2[ok]
            todo = todo[~ok]
        if todo.size:
            raise EmptyRegionError("could not place separated y-pairs")
        num = _increment_ratio_terms(t, x1, t, x2, s, y1, s, y2, cfg)
        den = np.sqrt(np.abs(s - t)) + np.abs(x1 - y1) + np.abs(x2 - y2)
        cols = {"t": t, "s": s, "x1": x1, "x2": x2, "y1": y1, "y2": y2}

    ratios = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf)
    k = int(np.argmin(ratios))
    argmin = {name: float(v[k]) for name, v in cols.items()}
    return LNDScanResult(lemma, float(ratios[k]), argmin, n, ratios)


def h0_sweep(h0_values: Sequence[float], epsilon=0.2, L=0.3, samples=10_000, seed=0,
             cfg: KernelConfig = DEFAULT_CONFIG) -> list[tuple[float, float]]:
    """(h0, min_ratio) pairs for the same-time increment scan."""
    return [(float(h), lnd_ratio_scan(Lemma.L15, epsilon, L, samples, seed, h0=h, cfg=cfg).min_ratio)
            for h in h0_values]


def sandwich_ratios(n_pairs: int = 10_000, seed: int = 0, cfg: KernelConfig = DEFAULT_CONFIG) -> np.ndarray:
    """gamma / (|x - y| + |t - s|^(1/2)) over uniform pairs in [0, 1]^2."""
    rng = np.random.default_rng(seed)
    t, x, s, y = rng.uniform(0.0, 1.0, (4, n_pairs))
    den = np.abs(x - y) + np.sqrt(np.abs(t - s))
    return variogram(t, x, s, y, cfg) / den
