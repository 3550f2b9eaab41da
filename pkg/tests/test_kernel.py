import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from stringlab import kernel
from stringlab.kernel import (
    CondTarget, CondVarQuery, DegenerateConditioningError, KernelConfig, Lemma, QUADRATURE_CONFIG,
    f_func, gamma, green_g1, h_func, h_tail, pinned_cov, rho2_increments,
)

C = 1 / math.sqrt(2 * math.pi)


def heat(t, x):
    return math.exp(-x * x / (4 * t)) / math.sqrt(4 * math.pi * t)


def h_by_quad(x):
    # independent oracle: adaptive quadrature of E|Z - x|, Z with density G_1
    f = lambda z: green_g1(z) * abs(z - x)
    return integrate.quad(f, -40, x, epsabs=1e-13, limit=200)[0] + integrate.quad(f, x, 40, epsabs=1e-13, limit=200)[0]


def unit_time_variogram_by_heat_kernel(a):
    """E[(U_1(a) - U_0(0))^2] from the white-noise integral with heat kernel G_t.

    Computed for the equation with generator d^2/dx^2, whose spatial
    increment variance is |x - y| / 2; doubling normalizes it to |x - y|.
    """
    g = lambda w: heat(2 + 2 * w, 0) + heat(2 * w, 0) - 2 * heat(1 + 2 * w, a)
    tail = integrate.quad(g, 0, 1, limit=200)[0] + integrate.quad(g, 1, np.inf, limit=200)[0]
    return 2 * (C + tail)


def test_green_g1():
    assert green_g1(0.0) == pytest.approx(0.2820947918, abs=1e-10)
    assert green_g1(50.0) < 1e-200
    assert integrate.quad(green_g1, -12, 12, epsabs=1e-13)[0] == pytest.approx(1, abs=1e-10)
    assert green_g1(1.3) == green_g1(-1.3)


@pytest.mark.parametrize("x", [0.0, 0.3, 1.0, 1.7, 3.0, 6.5, 10.0])
def test_h_closed_form_against_adaptive_quadrature(x):
    assert float(h_func(x)) == pytest.approx(h_by_quad(x), abs=1e-10)
    assert float(h_func(x, QUADRATURE_CONFIG)) == pytest.approx(h_by_quad(x), abs=1e-10)


def test_h_values():
    assert float(h_func(0.0)) == pytest.approx(2 / math.sqrt(math.pi), abs=1e-10)
    assert abs(float(h_func(10.0)) - 10) <= 1e-6
    for x in (0.3, 1.7):
        assert h_func(-x) == h_func(x)
        assert h_func(-x, QUADRATURE_CONFIG) == pytest.approx(float(h_func(x, QUADRATURE_CONFIG)), abs=1e-14)


def test_h_tail():
    assert float(h_tail(0.0)) == pytest.approx(2 / math.sqrt(math.pi), abs=1e-10)
    assert h_tail(10.0) <= 1e-6
    assert h_tail(1) > h_tail(2) > h_tail(4) > 0
    with pytest.raises(ValueError):
        h_tail(-1.0)


def test_f_double_integral_sign():
    # the original double integral with the minus sign reproduces H - c
    for a in (0.0, 0.5, 2.0):
        assert kernel.f_double_integral(a) == pytest.approx(float(f_func(a)), abs=1e-9)
    assert float(f_func(0.0)) == pytest.approx(2 / math.sqrt(math.pi) - C, abs=1e-9)


def test_f_lower_bound_and_linear_growth():
    a = np.linspace(0, 20, 2001)
    assert np.min(f_func(a)) >= C
    assert abs(float(f_func(10.0)) / 10 - 1) < 0.05
    assert float(f_func(1e4)) / 1e4 == pytest.approx(1, abs=1e-4)


@pytest.mark.parametrize("a", [0.0, 0.4, 1.0, 2.5])
def test_variogram_matches_heat_kernel_integral(a):
    assert gamma((1.0, a), (0.0, 0.0)) == pytest.approx(unit_time_variogram_by_heat_kernel(a), abs=1e-7)


def test_gamma_examples():
    assert gamma((1, 0.3), (1, 0.7)) == pytest.approx(0.4, abs=1e-15)
    assert gamma((2, -1), (2, -1)) == 0
    assert gamma((1, 0), (0, 0)) == pytest.approx(2 / math.sqrt(math.pi), abs=1e-12)
    assert gamma((4, 0), (0, 0)) == pytest.approx(2 * 2 / math.sqrt(math.pi), abs=1e-12)


def test_covariance_with_f_profile_is_indefinite():
    # documents why the variogram profile is H: using F = H - c instead
    # makes the pinned covariance of this grid indefinite
    tt, xx = np.meshgrid(np.linspace(0.5, 1, 12), np.linspace(0, 1, 12), indexing="ij")
    p = np.column_stack([tt.ravel(), xx.ravel()])

    def vg(t1, x1, t2, x2):
        dt = np.abs(t1 - t2)
        out = np.abs(x1 - x2).astype(float)
        m = dt > 0
        out[m] = np.sqrt(dt[m]) * f_func(out[m] / np.sqrt(dt[m]))
        return out

    T1, T2 = np.meshgrid(p[:, 0], p[:, 0], indexing="ij")
    X1, X2 = np.meshgrid(p[:, 1], p[:, 1], indexing="ij")
    s1 = vg(p[:, 0], p[:, 1], 0 * p[:, 0], 0 * p[:, 1])
    cov_bad = 0.5 * (s1[:, None] + s1[None, :] - vg(T1, X1, T2, X2))
    assert np.linalg.eigvalsh(cov_bad)[0] < -0.1
    assert np.linalg.eigvalsh(kernel.covariance_matrix(p))[0] > -1e-8


def test_pinned_cov_examples():
    assert pinned_cov((0, 0), (0, 0)) == 0
    assert pinned_cov((0, 0.7), (0, 0.7)) == pytest.approx(0.7)
    assert pinned_cov((0, -0.7), (0, -0.7)) == pytest.approx(0.7)
    assert pinned_cov((1, 0.5), (1, 0.5)) == pytest.approx(float(h_func(0.5)), abs=1e-12)
    assert pinned_cov((0, 0), (1.3, 0.2)) == 0
    p, q = (1, 0.0), (1, 1.0)
    want = 0.5 * (gamma(p, (0, 0)) + gamma(q, (0, 0)) - 1.0)
    assert pinned_cov(p, q) == pytest.approx(want, abs=1e-15)


times = st.floats(0, 5, allow_nan=False)
spaces = st.floats(-5, 5, allow_nan=False)
points = st.tuples(times, spaces)


@given(points, points)
def test_gamma_symmetric_and_nonnegative(p, q):
    assert gamma(p, q) == gamma(q, p)
    assert gamma(p, q) >= 0
    if gamma(p, q) == 0:
        assert p == q or (p[0] == q[0] and p[1] == q[1])


@given(points, points, st.sampled_from([0.5, 2.0, 3.0]))
def test_scaling_identity(p, q, c):
    ref = max(1.0, c * c * gamma(p, q))
    assert kernel.scaling_check(p, q, c) <= 1e-12 * ref


def test_scaling_examples():
    assert kernel.scaling_check((1, 0), (1, 1), 2) <= 1e-12 * 4
    assert kernel.scaling_check((1, 0), (0, 0), 1) == 0
    assert kernel.scaling_check((1, 0), (0, 0), 3) <= 1e-12 * 9 * 1.2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_random_point_sets_psd(seed):
    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.uniform(0, 3, 50), rng.uniform(-3, 3, 50)])
    assert np.linalg.eigvalsh(kernel.covariance_matrix(pts))[0] >= -1e-8


def test_sandwich():
    r = kernel.sandwich_ratios(10_000, seed=1)
    assert r.max() <= 2
    assert r.min() > 0.2


def test_config_validation():
    with pytest.raises(ValueError):
        KernelConfig(quadrature_half_width=4)
    with pytest.raises(ValueError):
        KernelConfig(quadrature_points=16)
    with pytest.raises(ValueError):
        kernel.SpaceTimePoint(-1.0, 0.0).check()


def test_rho2_examples():
    assert rho2_increments(1, 0, 1, 1, 1, 0, 1, 1) == 0
    # same-time increments: the six-term identity against the 4x4 covariance
    pts = [(0.8, 0.1), (0.8, 0.9), (0.85, 0.2), (0.85, 1.05)]
    cov = kernel.covariance_matrix(pts)
    e = np.array([-1.0, 1.0, 1.0, -1.0])
    r = rho2_increments(0.8, 0.1, 0.8, 0.9, 0.85, 0.2, 0.85, 1.05)
    assert r == pytest.approx(e @ cov @ e, abs=1e-12)
    # far-apart increments are nearly independent
    sx = gamma((1, 0), (1, 1))
    sy = gamma((1, 100), (1, 101))
    assert rho2_increments(1, 0, 1, 1, 1, 100, 1, 101) == pytest.approx(sx + sy, rel=0.05)


def test_cond_var_points():
    q = CondVarQuery(CondTarget.POINT, ((1, 0), (1, 0)))
    assert kernel.cond_var(q) == pytest.approx(0, abs=1e-12)
    p, r = (1, 0), (1, 5)
    cov = kernel.covariance_matrix([p, r])
    want = cov[0, 0] - cov[0, 1] ** 2 / cov[1, 1]
    assert kernel.cond_var(CondVarQuery(CondTarget.POINT, (p, r))) == pytest.approx(want, abs=1e-12)
    v = kernel.cond_var(CondVarQuery(CondTarget.POINT, ((1, 0), (1.25, 0.3))))
    assert v / (0.3 + 0.5) > 0.05


def test_cond_var_degenerate():
    with pytest.raises(DegenerateConditioningError):
        kernel.cond_var(CondVarQuery(CondTarget.POINT, ((1, 0), (0, 0))))
    with pytest.raises(DegenerateConditioningError):
        kernel.cond_var(CondVarQuery(CondTarget.INCREMENT, ((1, 0), (1, 1), (2, 3), (2, 3))))
    with pytest.raises(ValueError):
        CondVarQuery(CondTarget.INCREMENT, ((1, 0), (1, 1)))


def test_cond_var_paths_agree():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        t = rng.uniform(0.1, 3, 4)
        x = rng.uniform(-2, 2, 4)
        q = CondVarQuery(CondTarget.INCREMENT, tuple(zip(t, x)))
        a = kernel.cond_var(q, method="rho")
        b = kernel.cond_var(q, method="direct")
        worst = max(worst, abs(a - b))
    assert worst <= 1e-10


@pytest.mark.parametrize("lemma", list(Lemma))
def test_lnd_scans_positive_and_deterministic(lemma):
    a = kernel.lnd_ratio_scan(lemma, 0.2, 0.3, 2000, seed=5)
    b = kernel.lnd_ratio_scan(lemma, 0.2, 0.3, 2000, seed=5)
    assert a.min_ratio > 0
    assert a.min_ratio == b.min_ratio and a.argmin == b.argmin


def test_lnd_restriction_lowers_floor():
    restricted = kernel.lnd_ratio_scan(Lemma.L15, 0.2, 0.3, 5000, seed=0, h0=0.01)
    free = kernel.lnd_ratio_scan(Lemma.L15, 0.2, 0.3, 5000, seed=0, h0=None)
    assert free.min_ratio < restricted.min_ratio


def test_lnd_errors():
    with pytest.raises(ValueError):
        kernel.lnd_ratio_scan(Lemma.L13, 1.5)
    with pytest.raises(kernel.EmptyRegionError):
        kernel.lnd_ratio_scan(Lemma.L15, 0.2, L=50.0, samples=10)


def test_h0_sweep_reports_pairs():
    out = kernel.h0_sweep([0.01, 0.1], samples=500)
    assert [h for h, _ in out] == [0.01, 0.1]
    assert all(r > 0 for _, r in out)
