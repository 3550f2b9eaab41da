"""Exact Gaussian simulation of the pinned string on space-time grids.

Values are drawn through a Cholesky factor of the pinned covariance
matrix.  Nodes with zero variance (the pinned origin) are dropped from
the factorization and set to exactly 0.

Random streams: component j of replica k under base seed s uses a
Philox generator keyed by SeedSequence([s, k, j]), so every sample is a
deterministic function of (grid, d, s, k) regardless of how replicas are
scheduled.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.linalg import lapack

from . import kernel

NODE_BUDGET = 10_000
JITTER_LADDER = (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
ZERO_VARIANCE = 1e-300


class FactorizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    t_min: float
    t_max: float
    x_min: float
    x_max: float
    n_t: int
    n_x: int

    def __post_init__(self):
        if not 0 <= self.t_min < self.t_max:
            raise ValueError(f"need 0 <= t_min < t_max, got [{self.t_min}, {self.t_max}]")
        if not self.x_min < self.x_max:
            raise ValueError(f"need x_min < x_max, got [{self.x_min}, {self.x_max}]")
        if self.n_t < 2 or self.n_x < 2:
            raise ValueError("n_t and n_x must both be >= 2")
        if self.n_t * self.n_x > NODE_BUDGET:
            raise ValueError(f"grid has {self.n_t * self.n_x} nodes, budget is {NODE_BUDGET}")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.n_t)

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)

    @property
    def dt(self) -> float:
        return (self.t_max - self.t_min) / (self.n_t - 1)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x - 1)

    @property
    def size(self) -> int:
        return self.n_t * self.n_x

    def nodes(self) -> np.ndarray:
        """(n_t * n_x, 2) array of (t, x), t-major."""
        tt, xx = np.meshgrid(self.times, self.xs, indexing="ij")
        return np.column_stack([tt.ravel(), xx.ravel()])


@dataclass(frozen=True)
class FieldSample:
    grid: GridSpec
    d: int
    values: np.ndarray  # (n_t, n_x, d)
    seed: int
    jitter_used: float = 0.0
    replica: int = 0

    def __post_init__(self):
        self.values.setflags(write=False)

    def component(self, j: int) -> np.ndarray:
        return self.values[:, :, j]

    def metadata(self) -> dict:
        return {"grid": asdict(self.grid), "d": self.d, "seed": self.seed,
                "replica": self.replica, "jitter_used": self.jitter_used}


@dataclass
class ReplicaBatch:
    base_seed: int
    count: int
    samples: list = field(default_factory=list)


def build_cov_matrix(grid: GridSpec, cfg: kernel.KernelConfig = kernel.DEFAULT_CONFIG) -> np.ndarray:
    return kernel.covariance_matrix(grid.nodes(), cfg)


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower factor over the nonzero-variance nodes of a point set."""

    lower: np.ndarray
    active: np.ndarray  # indices into the point set
    n: int
    jitter_used: float

    def draw(self, normals: np.ndarray) -> np.ndarray:
        """Map standard normals (len(active), ...) to field values (n, ...)."""
        out = np.zeros((self.n,) + normals.shape[1:])
        out[self.active] = self.lower @ normals
        return out


def factorize(cov: np.ndarray) -> CholeskyFactor:
    """Cholesky with escalating diagonal jitter (relative to the mean diagonal).

    Zero-variance rows (the pinned origin) are left out of the factor.
    """
    diag = np.diag(cov)
    active = np.flatnonzero(diag > ZERO_VARIANCE)
    sub = cov if active.size == cov.shape[0] else cov[np.ix_(active, active)]
    return _factor_active(sub, active, cov.shape[0])


def _factor_active(sub: np.ndarray, active: np.ndarray, n: int) -> CholeskyFactor:
    base = np.diag(sub).copy()
    scale = float(np.mean(base)) if base.size else 0.0
    diag_view = np.einsum("ii->i", sub)
    try:
        for lam in JITTER_LADDER:
            diag_view[:] = base + lam * scale
            lower, info = lapack.dpotrf(sub, lower=1, clean=1, overwrite_a=0)
            if info == 0:
                lower.setflags(write=False)
                return CholeskyFactor(lower, active, n, lam * scale)
    finally:
        diag_view[:] = base
    smallest = float(np.linalg.eigvalsh(sub)[0])
    raise FactorizationError(
        f"covariance not factorizable at jitter {JITTER_LADDER[-1]:g}; smallest eigenvalue {smallest:.3e}"
    )


def _active_points(points: np.ndarray, cfg) -> np.ndarray:
    var = kernel.point_variance(points[:, 0], points[:, 1], cfg)
    return np.flatnonzero(np.atleast_1d(var) > ZERO_VARIANCE)


@lru_cache(maxsize=2)
def _grid_factor(grid: GridSpec, cfg: kernel.KernelConfig) -> CholeskyFactor:
    nodes = grid.nodes()
    active = _active_points(nodes, cfg)
    cov = kernel.covariance_matrix(nodes[active], cfg)
    return _factor_active(cov, active, len(nodes))


@lru_cache(maxsize=4)
def _points_factor(points: tuple, cfg: kernel.KernelConfig) -> CholeskyFactor:
    pts = np.array(points)
    active = _active_points(pts, cfg)
    cov = kernel.covariance_matrix(pts[active], cfg)
    return _factor_active(cov, active, len(pts))


def component_rng(seed: int, replica: int, component: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), int(replica), int(component)])
    return np.random.Generator(np.random.Philox(ss))


def _normals(size: int, d: int, seed: int, replica: int) -> np.ndarray:
    return np.column_stack([component_rng(seed, replica, j).standard_normal(size) for j in range(d)])


def sample_field(grid: GridSpec, d: int = 1, seed: int = 0, replica: int = 0,
                 cfg: kernel.KernelConfig = kernel.DEFAULT_CONFIG) -> FieldSample:
    """One exact draw of the d-component string on ``grid``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    factor = _grid_factor(grid, cfg)
    z = _normals(factor.active.size, d, seed, replica)
    values = factor.draw(z).reshape(grid.n_t, grid.n_x, d)
    return FieldSample(grid, d, values, seed, factor.jitter_used, replica)


def sample_replicas(grid: GridSpec, d: int, base_seed: int, count: int, workers: int = 1,
                    cfg: kernel.KernelConfig = kernel.DEFAULT_CONFIG) -> ReplicaBatch:
    """``count`` independent fields; sample k depends only on (base_seed, k)."""
    _grid_factor(grid, cfg)  # factor once before fanning out

    def one(k):
        return sample_field(grid, d, base_seed, k, cfg)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            samples = list(pool.map(one, range(count)))
    else:
        samples = [one(k) for k in range(count)]
    return ReplicaBatch(base_seed, count, samples)


def _check_increasing(values, name):
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size < 2:
        raise ValueError(f"{name} must be a 1-D grid with at least 2 nodes")
    if np.any(np.diff(values) <= 0):
        raise ValueError(f"{name} must be strictly increasing")
    if values.size > NODE_BUDGET:
        raise ValueError(f"{name} has {values.size} nodes, budget is {NODE_BUDGET}")
    return values


def _slice_paths(points: np.ndarray, seed: int, replicas, cfg) -> np.ndarray:
    factor = _points_factor(tuple(map(tuple, points)), cfg)
    z = np.column_stack([component_rng(seed, k, 0).standard_normal(factor.active.size) for k in replicas])
    return factor.draw(z)


def sample_time_slice(x: float, t_grid, seed: int = 0, replicas=None,
                      cfg: kernel.KernelConfig = kernel.DEFAULT_CONFIG) -> np.ndarray:
    """Exact path t -> U_t(x) of one component.

    With ``replicas`` (an iterable of replica indices) returns an array of
    shape (len(t_grid), len(replicas)); otherwise the single path for
    replica 0.
    """
    t_grid = _check_increasing(t_grid, "t_grid")
    if t_grid[0] < 0:
        raise ValueError("times must be nonnegative")
    pts = np.column_stack([t_grid, np.full_like(t_grid, float(x))])
    if replicas is None:
        return _slice_paths(pts, seed, [0], cfg)[:, 0]
    return _slice_paths(pts, seed, list(replicas), cfg)


def sample_space_slice(t: float, x_grid, seed: int = 0, replicas=None,
                       cfg: kernel.KernelConfig = kernel.DEFAULT_CONFIG) -> np.ndarray:
    """Exact path x -> U_t(x) of one component (Brownian in x)."""
    if not t > 0:
        raise ValueError("t must be positive")
    x_grid = _check_increasing(x_grid, "x_grid")
    pts = np.column_stack([np.full_like(x_grid, float(t)), x_grid])
    if replicas is None:
        return _slice_paths(pts, seed, [0], cfg)[:, 0]
    return _slice_paths(pts, seed, list(replicas), cfg)


# ---------------------------------------------------------------------------
# Field dump: CSV (t,x,j,value) plus a JSON metadata sidecar
# ---------------------------------------------------------------------------

def field_to_csv(sample: FieldSample) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "x", "j", "value"])
    times, xs = sample.grid.times, sample.grid.xs
    for i, t in enumerate(times):
        for k, x in enumerate(xs):
            for j in range(sample.d):
                writer.writerow([repr(float(t)), repr(float(x)), j, repr(float(sample.values[i, k, j]))])
    return buf.getvalue()


def save_field(sample: FieldSample, path) -> Path:
    """Write ``path`` (CSV) and ``path`` + '.meta.json'; returns the sidecar path."""
    path = Path(path)
    path.write_text(field_to_csv(sample), newline="")
    meta = path.with_name(path.name + ".meta.json")
    meta.write_text(json.dumps(sample.metadata(), indent=2, sort_keys=True) + "\n")
    return meta


def load_field(path) -> FieldSample:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".meta.json").read_text())
    grid = GridSpec(**meta["grid"])
    d = int(meta["d"])
    values = np.empty((grid.n_t, grid.n_x, d))
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if len(rows) != grid.size * d:
        raise ValueError(f"{path}: expected {grid.size * d} rows, found {len(rows)}")
    times, xs = grid.times, grid.xs
    for n, row in enumerate(rows):
        j = n % d
        node = n // d
        i, k = divmod(node, grid.n_x)
        if int(row["j"]) != j or not math.isclose(float(row["t"]), times[i]) \
                or not math.isclose(float(row["x"]), xs[k], abs_tol=1e-12):
            raise ValueError(f"{path}: row {n + 2} out of t-major order")
        values[i, k, j] = float(row["value"])
    return FieldSample(grid, d, values, int(meta["seed"]), float(meta["jitter_used"]),
                       int(meta.get("replica", 0)))
