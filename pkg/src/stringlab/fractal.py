"""Dimension formulas, random-set extraction and box counting.

The closed-form dimensions are for the range, graph, level sets and the
two kinds of double times of an R^d-valued string.  The empirical side
extracts eps-thickened versions of those sets from simulated fields and
fits box-counting slopes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .simulate import FieldSample


class _Empty:
    """Marker for a dimension formula whose set is a.s. empty."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "EMPTY"

    __str__ = __repr__

    def __reduce__(self):
        return (_Empty, ())


EMPTY = _Empty()


def _check_d(d):
    if int(d) != d or d < 1:
        raise ValueError(f"d must be a positive integer, got {d}")
    return int(d)


def dim_range(d: int) -> float:
    """Hausdorff (and packing) dimension of u([0, 1]^2)."""
    d = _check_d(d)
    return float(min(d, 6))


def dim_graph(d: int) -> float:
    d = _check_d(d)
    if d < 4:
        return 2 + 0.75 * d
    if d < 6:
        return 3 + 0.5 * d
    return 6.0


def dim_level(d: int):
    """Dimension of L_u intersected with [0, 1]^2; EMPTY when d >= 6."""
    d = _check_d(d)
    if d < 4:
        return 2 - 0.25 * d
    if d < 6:
        return 3 - 0.5 * d
    return EMPTY


def dim_double_I(d: int):
    d = _check_d(d)
    if d < 8:
        return 4 - 0.25 * d
    if d < 12:
        return 6 - 0.5 * d
    return EMPTY


def dim_double_II(d: int):
    d = _check_d(d)
    if d < 4:
        return 3 - 0.25 * d
    if d < 8:
        return 4 - 0.5 * d
    return EMPTY


def dim_image_product(dim_e1: float, dim_e2: float, d: int) -> float:
    """dim u(E1 x E2) = min(d, 4 dim E1 + 2 dim E2) for a time set E1 and space set E2."""
    d = _check_d(d)
    for v in (dim_e1, dim_e2):
        if not 0 <= v <= 1:
            raise ValueError(f"set dimensions must lie in [0, 1], got {v}")
    return float(min(d, 4 * dim_e1 + 2 * dim_e2))


def hits_points(d: int) -> bool:
    return _check_d(d) < 6


def has_double_I(d: int) -> bool:
    return _check_d(d) < 12


def has_double_II(d: int) -> bool:
    return _check_d(d) < 8


def theory_table(d_values=range(1, 14)) -> list[dict]:
    return [
        {"d": d, "range": dim_range(d), "graph": dim_graph(d), "level": dim_level(d),
         "double_I": dim_double_I(d), "double_II": dim_double_II(d)}
        for d in d_values
    ]


# ---------------------------------------------------------------------------
# Clouds
# ---------------------------------------------------------------------------

@dataclass
class CellCloud:
    """Finite point set fed to the box counters.

    ``lower``/``upper`` optionally give the closed domain box; the counting
    lattice is then anchored at ``lower`` and points on the upper faces
    are folded into the last lattice cell.
    """

    points: np.ndarray  # (n, ambient_dim)
    cell_size: Optional[float] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise ValueError("points must be a 2-D array (n, ambient_dim)")
        self.points = pts
        for name in ("lower", "upper"):
            v = getattr(self, name)
            if v is not None:
                v = np.broadcast_to(np.asarray(v, dtype=float), (pts.shape[1],)).copy()
                setattr(self, name, v)

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]


def level_eps(grid, kappa: float = 1.0) -> float:
    """Default thickening for level sets: kappa (dt^(1/4) + dx^(1/2))."""
    return kappa * (grid.dt ** 0.25 + grid.dx ** 0.5)


def extract_level_set(field: FieldSample, u, eps: float) -> CellCloud:
    """Grid nodes (t, x) with max_j |U^j_t(x) - u_j| <= eps."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    u = np.broadcast_to(np.asarray(u, dtype=float), (field.d,))
    dev = np.max(np.abs(field.values - u), axis=2)
    it, ix = np.nonzero(dev <= eps)
    g = field.grid
    return CellCloud(np.column_stack([g.times[it], g.xs[ix]]), cell_size=min(g.dt, g.dx),
                     lower=(g.t_min, g.x_min), upper=(g.t_max, g.x_max))


class NoAdmissiblePairsError(ValueError):
    pass


def extract_double_I(field: FieldSample, eps: float, L: float, chunk: int = 256) -> CellCloud:
    """Node pairs (t1, x1, t2, x2), t2 - t1 >= L, with |U(t2, x2) - U(t1, x1)| <= eps (max-norm).

    Each unordered pair appears once, ordered so that t1 < t2.
    """
    grid = field.grid
    if grid.t_max - grid.t_min < L:
        raise NoAdmissiblePairsError(f"time range {grid.t_max - grid.t_min} is shorter than L={L}")
    nodes = grid.nodes()
    vals = field.values.reshape(-1, field.d)
    t = nodes[:, 0]
    out = []
    for start in range(0, len(nodes), chunk):
        sl = slice(start, start + chunk)
        sep = t[None, :] - t[sl, None] >= L - 1e-12
        if np.isinf(eps):
            close = sep
        else:
            diff = np.max(np.abs(vals[None, :, :] - vals[sl, None, :]), axis=2)
            close = sep & (diff <= eps)
        i, j = np.nonzero(close)
        i += start
        out.append(np.column_stack([nodes[i], nodes[j]]))
    pts = np.concatenate(out) if out else np.empty((0, 4))
    box = np.array([grid.t_min, grid.x_min, grid.t_max, grid.x_max])
    return CellCloud(pts, cell_size=min(grid.dt, grid.dx),
                     lower=np.tile(box[:2], 2), upper=np.tile(box[2:], 2))


def extract_double_II(field: FieldSample, eps: float, kappa: float) -> CellCloud:
    """Triples (t, x1, x2), x2 - x1 >= kappa, with |U_t(x2) - U_t(x1)| <= eps (max-norm)."""
    grid = field.grid
    if grid.x_max - grid.x_min < kappa:
        raise NoAdmissiblePairsError(f"space range {grid.x_max - grid.x_min} is shorter than kappa={kappa}")
    xs = grid.xs
    sep = xs[None, :] - xs[:, None] >= kappa - 1e-12
    out = []
    for i, t in enumerate(grid.times):
        row = field.values[i]
        if np.isinf(eps):
            close = sep
        else:
            diff = np.max(np.abs(row[None, :, :] - row[:, None, :]), axis=2)
            close = sep & (diff <= eps)
        a, b = np.nonzero(close)
        out.append(np.column_stack([np.full(a.size, t), xs[a], xs[b]]))
    return CellCloud(np.concatenate(out), cell_size=min(grid.dt, grid.dx),
                     lower=(grid.t_min, grid.x_min, grid.x_min),
                     upper=(grid.t_max, grid.x_max, grid.x_max))


def graph_cloud(coords, values, spacing: float) -> CellCloud:
    """Points of the piecewise-linear graph of a sampled path.

    Each segment between consecutive samples is subdivided so that
    neighbouring points are at most ``spacing`` apart; box counts at
    scales above ``spacing`` then see the continuous curve rather than
    isolated samples.
    """
    coords = np.asarray(coords, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    pts = np.column_stack([coords, values])
    seg = np.diff(pts, axis=0)
    pieces = np.maximum(1, np.ceil(np.max(np.abs(seg), axis=1) / spacing)).astype(int)
    starts = np.repeat(pts[:-1], pieces, axis=0)
    steps = np.repeat(seg / pieces[:, None], pieces, axis=0)
    offsets = np.concatenate([np.arange(k) for k in pieces])
    dense = starts + steps * offsets[:, None]
    return CellCloud(np.vstack([dense, pts[-1:]]), cell_size=spacing)


def range_cloud(field: FieldSample) -> CellCloud:
    return CellCloud(field.values.reshape(-1, field.d))


def field_graph_cloud(field: FieldSample) -> CellCloud:
    nodes = field.grid.nodes()
    return CellCloud(np.column_stack([nodes, field.values.reshape(-1, field.d)]))


# ---------------------------------------------------------------------------
# Box counting
# ---------------------------------------------------------------------------

class Metric(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    PARABOLIC = "parabolic"


def box_count(cloud: CellCloud, r: float, metric="euclidean") -> int:
    """Occupied boxes of the lattice anchored at 0 (or at ``cloud.lower``).

    Euclidean boxes have side r on every axis; parabolic boxes (ambient
    dimension 2 only) have side r^4 in time and r^2 in space.
    """
    metric = Metric(metric)
    if not r > 0:
        raise ValueError("r must be positive")
    if len(cloud) == 0:
        raise ValueError("cloud is empty")
    if metric is Metric.PARABOLIC:
        if cloud.ambient_dim != 2:
            raise ValueError("parabolic boxes need a (t, x) cloud")
        sides = np.array([r ** 4, r ** 2])
    else:
        sides = np.full(cloud.ambient_dim, float(r))
    if cloud.lower is None:
        idx = np.floor(cloud.points / sides).astype(np.int64)
    else:
        idx = np.floor((cloud.points - cloud.lower) / sides).astype(np.int64)
        if cloud.upper is not None:
            last = np.ceil((cloud.upper - cloud.lower) / sides - 1e-9).astype(np.int64) - 1
            idx = np.minimum(idx, np.maximum(last, 0))
    return _distinct_rows(idx)


def _distinct_rows(idx: np.ndarray) -> int:
    # fold each integer row into one int64 key; far cheaper than unique(axis=0)
    idx = idx - idx.min(axis=0)
    dims = idx.max(axis=0) + 1
    if np.prod(dims.astype(float)) < 2.0 ** 62:
        keys = np.ravel_multi_index(idx.T, dims)
        return int(np.unique(keys).size)
    return int(np.unique(idx, axis=0).shape[0])


@dataclass
class DimEstimate:
    slope: float
    stderr: float
    intercept: float
    scales: list  # [(r, N(r)), ...]
    fit_range: tuple  # (first, last) inclusive indices into scales

    def as_dict(self) -> dict:
        return {"slope": self.slope, "stderr": self.stderr, "intercept": self.intercept,
                "scales": [[float(r), int(n)] for r, n in self.scales],
                "fit_range": list(self.fit_range)}


class TooFewScalesError(ValueError):
    pass


def octave_scales(largest: float, smallest: float) -> list[float]:
    """r = largest * 2^-k down to ``smallest``."""
    k_max = int(math.floor(math.log2(largest / smallest) + 1e-9))
    return [largest * 2.0 ** -k for k in range(k_max + 1)]


def fit_counts(scales: Sequence[float], counts: Sequence[int], n_points: float,
               min_count: int = 4, saturation: float = 0.9) -> DimEstimate:
    """Least-squares slope of log N(r) against log(1/r) with the count guards."""
    order = np.argsort(-np.asarray(scales, dtype=float))
    scales = [float(scales[i]) for i in order]
    counts = [int(counts[i]) for i in order]
    if len(scales) < 4:
        raise TooFewScalesError("need at least 4 scales")
    usable = [i for i, n in enumerate(counts) if min_count < n < saturation * n_points]
    if len(usable) < 4:
        raise TooFewScalesError(f"only {len(usable)} usable scales out of {len(scales)}: counts {counts}")
    lo, hi = usable[0], usable[-1]
    x = -np.log(np.array(scales[lo:hi + 1]))
    y = np.log(np.array(counts[lo:hi + 1], dtype=float))
    fit = stats.linregress(x, y)
    return DimEstimate(float(fit.slope), float(fit.stderr), float(fit.intercept),
                       list(zip(scales, counts)), (lo, hi))


def estimate_dim(cloud: CellCloud, scales: Sequence[float], metric="euclidean",
                 min_count: int = 4, saturation: float = 0.9) -> DimEstimate:
    """Box-counting dimension of a cloud.

    Scales with N(r) <= ``min_count`` or N(r) >= ``saturation`` * len(cloud)
    are excluded from the fit.
    """
    counts = [box_count(cloud, r, metric) for r in scales]
    return fit_counts(list(scales), counts, len(cloud), min_count, saturation)


def graph_box_count(coords, values, r: float, value_scale: float = 1.0) -> int:
    """Exact occupied-box count of a piecewise-linear path graph.

    The path through (coords[i], value_scale * values[i]) is continuous,
    so inside each lattice column it hits every box between its column
    minimum and maximum; those extremes are attained at samples or at
    the column edges.  Matches ``box_count(graph_cloud(...), r)`` as the
    cloud spacing goes to 0, without building the cloud.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    x = np.asarray(coords, dtype=float)
    v = value_scale * np.asarray(values, dtype=float)
    origin = x[0]
    col = np.floor((x - origin) / r).astype(np.int64)
    last = max(int(np.ceil((x[-1] - origin) / r - 1e-9)) - 1, 0)
    col = np.minimum(col, last)
    edges = origin + r * np.arange(1, last + 1)
    ev = np.interp(edges, x, v)
    ncol = last + 1
    lo = np.full(ncol, np.inf)
    hi = np.full(ncol, -np.inf)
    np.minimum.at(lo, col, v)
    np.maximum.at(hi, col, v)
    ecol = np.arange(1, last + 1)
    for c in (ecol - 1, ecol):  # an edge value belongs to both neighbouring columns
        np.minimum.at(lo, c, ev)
        np.maximum.at(hi, c, ev)
    ok = np.isfinite(lo)
    return int(np.sum(np.floor(hi[ok] / r) - np.floor(lo[ok] / r) + 1))


def auto_value_scale(values) -> float:
    """1 / (mean absolute one-step increment).

    In these units one grid step moves the path by about one value unit,
    so at every fitted scale a column holds many boxes and the extra box
    per column stops biasing the slope downward.
    """
    step = float(np.mean(np.abs(np.diff(np.asarray(values, dtype=float)))))
    return 1.0 / step if step > 0 else 1.0


def estimate_graph_dim(coords, values, scales: Sequence[float], value_scale="auto",
                       min_count: int = 4) -> DimEstimate:
    """Box-counting dimension of the graph of a sampled 1-D path."""
    if value_scale == "auto":
        value_scale = auto_value_scale(values)
    counts = [graph_box_count(coords, values, r, value_scale) for r in scales]
    return fit_counts(list(scales), counts, np.inf, min_count)
