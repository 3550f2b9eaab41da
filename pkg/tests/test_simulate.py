import math

import numpy as np
import pytest

from stringlab import kernel
from stringlab.simulate import (
    FactorizationError, GridSpec, build_cov_matrix, factorize, field_to_csv, load_field,
    sample_field, sample_replicas, sample_space_slice, sample_time_slice, save_field,
)

H0 = 2 / math.sqrt(math.pi)


def ztest(samples, target):
    """|mean - target| in units of the standard error."""
    samples = np.asarray(samples)
    se = samples.std(ddof=1) / math.sqrt(samples.size)
    return abs(samples.mean() - target) / se


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(1, 0.5, 0, 1, 4, 4)
    with pytest.raises(ValueError):
        GridSpec(-0.1, 1, 0, 1, 4, 4)
    with pytest.raises(ValueError):
        GridSpec(0, 1, 0, 1, 1, 4)
    with pytest.raises(ValueError):
        GridSpec(0, 1, 0, 1, 101, 100)
    g = GridSpec(0, 1, -1, 1, 3, 5)
    assert g.size == 15 and g.dt == 0.5 and g.dx == 0.5
    nodes = g.nodes()
    assert tuple(nodes[1]) == (0.0, -0.5)  # t-major
    assert tuple(nodes[5]) == (0.5, -1.0)


def test_cov_matrix_examples():
    g = GridSpec(1, 2, 0, 1, 2, 2)
    cov = build_cov_matrix(g)
    s0 = kernel.point_variance(1.0, 0.0)
    s1 = kernel.point_variance(1.0, 1.0)
    assert cov[0, 1] == pytest.approx(0.5 * (s0 + s1 - 1.0), abs=1e-14)
    assert np.allclose(cov, cov.T)
    assert np.allclose(np.diag(cov), kernel.point_variance(g.nodes()[:, 0], g.nodes()[:, 1]))
    cov0 = build_cov_matrix(GridSpec(0, 1, 0, 1, 3, 3))
    assert np.all(cov0[0] == 0) and np.all(cov0[:, 0] == 0)


def test_psd_small_eigenvalue():
    cov = build_cov_matrix(GridSpec(0.5, 1, 0, 1, 16, 16))
    assert np.linalg.eigvalsh(cov)[0] >= -1e-8


def test_determinism_and_pinning():
    g = GridSpec(0, 1, 0, 1, 8, 8)
    a = sample_field(g, 3, seed=7)
    b = sample_field(g, 3, seed=7)
    assert np.array_equal(a.values, b.values)
    assert np.all(a.values[0, 0] == 0)
    assert not np.array_equal(a.values, sample_field(g, 3, seed=8).values)
    assert a.jitter_used <= 1e-6 * np.mean(np.diag(build_cov_matrix(g)))
    with pytest.raises(ValueError):
        a.values[1, 1, 0] = 1.0


def test_replicas_independent_of_workers():
    g = GridSpec(0.5, 1, 0, 1, 6, 6)
    a = sample_replicas(g, 2, 11, 4, workers=1)
    b = sample_replicas(g, 2, 11, 4, workers=3)
    for x, y in zip(a.samples, b.samples):
        assert np.array_equal(x.values, y.values)
    assert np.array_equal(a.samples[2].values, sample_field(g, 2, 11, replica=2).values)


def test_factorization_failure_names_eigenvalue():
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(FactorizationError, match="smallest eigenvalue"):
        factorize(bad)


def test_spatial_increments_mc():
    g = GridSpec(0.5, 1, 0, 1, 16, 16)
    batch = sample_replicas(g, 1, 0, 200)
    v = np.array([s.values[-1, :, 0] for s in batch.samples])
    for i, j in [(0, 5), (3, 15), (7, 8)]:
        assert ztest((v[:, j] - v[:, i]) ** 2, abs(g.xs[j] - g.xs[i])) < 3


def test_temporal_increments_mc():
    g = GridSpec(0.5, 1, 0, 1, 16, 16)
    batch = sample_replicas(g, 1, 1, 200)
    v = np.array([s.values[:, 4, 0] for s in batch.samples])
    for i, j in [(0, 15), (2, 9)]:
        dt = g.times[j] - g.times[i]
        assert ztest((v[:, j] - v[:, i]) ** 2, math.sqrt(dt) * H0) < 3


def test_time_slice_variance():
    t = np.array([0.5, 1.0])
    paths = sample_time_slice(0.3, t, seed=2, replicas=range(500))
    assert ztest((paths[1] - paths[0]) ** 2, math.sqrt(0.5) * H0) < 3
    assert np.array_equal(sample_time_slice(0.3, t, seed=2), sample_time_slice(0.3, t, seed=2))


def test_space_slice_quadratic_variation():
    x = np.linspace(0, 1, 4097)
    path = sample_space_slice(1.0, x, seed=3)
    qv = np.sum(np.diff(path) ** 2)
    assert qv == pytest.approx(1.0, rel=0.05)
    with pytest.raises(ValueError):
        sample_space_slice(0.0, x)
    with pytest.raises(ValueError):
        sample_space_slice(1.0, x[::-1])


def test_scaling_law_mc():
    c = 2.0
    base = GridSpec(0.25, 0.5, 0, 0.5, 4, 4)
    scaled = GridSpec(c ** 4 * 0.25, c ** 4 * 0.5, 0, c * c * 0.5, 4, 4)
    batch = sample_replicas(scaled, 1, 4, 400)
    v = np.array([s.values.reshape(-1) for s in batch.samples]) / c
    exact = build_cov_matrix(base)
    for i, j in [(0, 0), (3, 12), (5, 10), (15, 15)]:
        assert ztest(v[:, i] * v[:, j], exact[i, j]) < 3


def test_exchangeable_components():
    g = GridSpec(0.5, 1, 0, 1, 6, 6)
    batch = sample_replicas(g, 3, 5, 300)
    vals = np.array([s.values[-1, -1] for s in batch.samples])  # (300, 3)
    var = vals.var(axis=0, ddof=1)
    se = var * math.sqrt(2 / (vals.shape[0] - 1))
    assert np.ptp(var) < 3 * math.sqrt(2) * se.max()
    assert abs(np.corrcoef(vals.T)[0, 1]) < 0.2


def test_csv_round_trip(tmp_path):
    g = GridSpec(0, 1, -0.5, 0.5, 3, 4)
    s = sample_field(g, 2, seed=9, replica=1)
    text = field_to_csv(s)
    assert text.splitlines()[0] == "t,x,j,value"
    assert "\r" not in text
    assert len(text.splitlines()) == 1 + 3 * 4 * 2
    path = tmp_path / "f.csv"
    save_field(s, path)
    back = load_field(path)
    assert back.grid == g and back.d == 2 and back.seed == 9 and back.replica == 1
    assert np.array_equal(back.values, s.values)


def test_load_rejects_shuffled(tmp_path):
    s = sample_field(GridSpec(0.5, 1, 0, 1, 2, 2), 1)
    path = tmp_path / "f.csv"
    save_field(s, path)
    lines = path.read_text().splitlines()
    lines[1], lines[2] = lines[2], lines[1]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="order"):
        load_field(path)
