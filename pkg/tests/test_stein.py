import numpy as np
import pytest

from openkpz import stein
from openkpz.fields import GridSpec, SmoothingParams
from openkpz.kernels import BoundaryParams, DomainError, zigzag


# ---------------------------------------------------------------------------
# batteries
# ---------------------------------------------------------------------------


def test_spatial_battery_size_and_support():
    bat = stein.spatial_battery()
    assert len(bat) == 20
    xs = np.linspace(0, 1, 2001)
    for sf in bat:
        vals = np.asarray(sf.f(xs))
        assert np.all(vals[xs < 0.1 - 1e-9] == 0.0)
        assert np.all(vals[xs > 0.9 + 1e-9] == 0.0)
        assert np.max(np.abs(vals)) > 0.5


def test_spatial_battery_norms_match_quadrature():
    xs = np.linspace(0, 1, 200001)
    for sf in stein.spatial_battery():
        q = float(np.trapezoid(np.asarray(sf.f(xs)) ** 2, xs))
        assert abs(q - sf.norm2) < 1e-8


def test_spatial_battery_derivatives():
    rng = np.random.default_rng(3)
    x = rng.uniform(0.11, 0.89, 400)
    h = 1e-7
    for sf in stein.spatial_battery():
        fd = (np.asarray(sf.f(x + h)) - np.asarray(sf.f(x - h))) / (2 * h)
        assert np.max(np.abs(fd - np.asarray(sf.df(x)))) < 1e-4


def test_outer_battery_derivatives():
    y = np.linspace(-4, 4, 81)
    h = 1e-6
    for outer in stein.outer_battery():
        fd = (np.asarray(outer.F(y + h)) - np.asarray(outer.F(y - h))) / (2 * h)
        assert np.max(np.abs(fd - np.asarray(outer.dF(y)))) < 1e-6


def test_outer_bump_compact_support():
    bump = stein.outer_battery()[-1]
    y = np.array([-5.0, -3.0, 3.0, 10.0])
    assert np.all(np.asarray(bump.F(y)) == 0.0)
    assert np.all(np.asarray(bump.dF(y)) == 0.0)


# ---------------------------------------------------------------------------
# Stein residual harness
# ---------------------------------------------------------------------------


def test_gaussian_selftest_all_within_three_se():
    report = stein.stein_residual_gaussian_selftest(20_000, seed=7)
    assert len(report.rows) == 100
    assert report.all_within(3.0)


def test_gaussian_selftest_zscores_standard_normal():
    # harness soundness: residual / SE should itself look standard normal
    report = stein.stein_residual_gaussian_selftest(20_000, seed=21)
    zs = np.array([r["residual"] / r["stderr"] for r in report.rows])
    assert np.mean(np.abs(zs)) < 1.5


def test_selftest_rejects_small_samples():
    with pytest.raises(DomainError):
        stein.stein_residual_gaussian_selftest(100, seed=0)


def test_gaussianity_battery_calibration():
    rng = np.random.default_rng(11)
    norm2 = 0.15
    y = np.sqrt(norm2) * rng.standard_normal(10_000)
    rows = stein.gaussianity_battery(y, norm2)
    assert [r["test_name"] for r in rows] == ["mean", "variance", "ks"]
    assert all(r["passed"] for r in rows)


def test_gaussianity_battery_detects_shift():
    # mean test must reject a 0.5 shift at >= 5 SE for n = 1e4
    rng = np.random.default_rng(12)
    norm2 = 0.15
    y = 0.5 + np.sqrt(norm2) * rng.standard_normal(10_000)
    rows = stein.gaussianity_battery(y, norm2)
    mean_row = rows[0]
    assert abs(mean_row["statistic"]) > 5.0
    assert not mean_row["passed"]


def test_gaussianity_battery_detects_wrong_shape():
    rng = np.random.default_rng(13)
    y = rng.uniform(-1, 1, 10_000)
    rows = stein.gaussianity_battery(y, float(np.var(y)))
    assert not rows[2]["passed"]  # KS flags the uniform


def test_gaussianity_battery_needs_enough_samples():
    with pytest.raises(DomainError):
        stein.gaussianity_battery(np.zeros(10), 1.0)


# ---------------------------------------------------------------------------
# SBE observables
# ---------------------------------------------------------------------------


def _small_grid():
    # dt <= dx^2 / 2 as the discrete flow requires
    return GridSpec(nx=16, nt=160, t_final=0.25)


def test_sbe_observables_centered_and_scaled():
    grid = _small_grid()
    bp = BoundaryParams(alpha=0.0, beta=0.0)
    bat = stein.spatial_battery()[:2]
    samples = stein.sbe_observable_samples(grid, bp, None, bat, 256, seed=5)
    for sf in bat:
        y = samples[sf.name]
        se = np.sqrt(sf.norm2 / y.size)
        assert abs(np.mean(y)) < 4 * se
        # variance should be near ||f||^2 (coarse grid => loose factor)
        assert 0.5 * sf.norm2 < np.var(y) < 1.7 * sf.norm2


def test_stein_residual_sbe_flow_smoke():
    grid = GridSpec(nx=32, nt=512, t_final=0.25)
    bp = BoundaryParams(alpha=0.0, beta=0.0)
    bat = stein.spatial_battery()[:1]
    report = stein.stein_residual_sbe(grid, bp, None, bat, 256, seed=9)
    assert len(report.rows) == 5
    assert report.all_within(4.0)


def test_smoothed_route_variance_approaches_white_noise():
    # the smoothed field's Y variance climbs toward ||f||^2 as the
    # smoothing scales shrink
    grid = GridSpec(nx=32, nt=64, t_final=0.25)
    bp = BoundaryParams(alpha=0.0, beta=0.0)
    sf = stein.spatial_battery()[1]  # widest bump
    mids = grid.x_mids()
    n2 = float(np.sum(np.asarray(sf.f(mids)) ** 2) * grid.dx)
    variances = []
    for eps in (1e-1, 1e-2):
        sp = SmoothingParams.for_eps(eps, eps, grid.nx)
        s = stein.sbe_observable_samples(grid, bp, sp, [sf], 150, seed=17)
        variances.append(float(np.var(s[sf.name])))
    assert variances[0] < variances[1] < 1.2 * n2


def test_stein_residual_requires_zero_drift_sum():
    grid = _small_grid()
    with pytest.raises(DomainError):
        stein.stein_residual_sbe(
            grid, BoundaryParams(alpha=1.0, beta=1.0), None,
            stein.spatial_battery()[:1], 100, seed=0,
        )


# ---------------------------------------------------------------------------
# endpoint correction terms
# ---------------------------------------------------------------------------


def test_bracket_matrix_matches_zigzag_off_diagonal():
    # the bracket equals zeta(x1/2) at every pair off the coincidence set
    rng = np.random.default_rng(19)
    a = rng.uniform(-1, 1, 100_000)
    b = rng.uniform(-1, 1, 100_000)
    keep = (
        (np.abs(a - np.round(a)) > 1e-9)
        & (np.abs((a - b) / 2 - np.round((a - b) / 2)) > 1e-9)
        & (np.abs((a + b) / 2 - np.round((a + b) / 2)) > 1e-9)
    )
    a, b = a[keep], b[keep]
    assert a.size > 90_000
    from openkpz.kernels import altsign, reflect

    bracket = (
        0.5 * np.asarray(zigzag(0.5 * (a - b)))
        + 0.5 * np.asarray(zigzag(0.5 * (a + b)))
        + np.asarray(altsign(a)) * (np.asarray(reflect(a)) <= np.asarray(reflect(b)))
    )
    assert np.max(np.abs(bracket - np.asarray(zigzag(0.5 * a)))) < 1e-12


def test_gamma_groups_cancel_small_scale():
    grid = GridSpec(nx=32, nt=64, t_final=0.25)
    sp = SmoothingParams.for_eps(0.01, 0.01, grid.nx)
    bp = BoundaryParams(alpha=0.0, beta=0.0)
    sf = stein.spatial_battery()[1]
    res = stein.gamma_terms(grid, sp, bp, sf, n_samples=60, seed=11, n_nodes=128)
    assert abs(res["groups23"]) <= 4 * res["groups23_se"]
    assert abs(res["total"]) <= 4 * res["total_se"]
    # the two-resolution extrapolation leaves group one far below the
    # statistical resolution of the other groups
    assert abs(res["group1"]) < res["groups23_se"]


def test_gamma_terms_nonzero_drift():
    grid = GridSpec(nx=32, nt=64, t_final=0.25)
    sp = SmoothingParams.for_eps(0.01, 0.01, grid.nx)
    bp = BoundaryParams(alpha=1.0, beta=-1.0)
    sf = stein.spatial_battery()[0]
    res = stein.gamma_terms(grid, sp, bp, sf, n_samples=40, seed=23, n_nodes=128)
    assert abs(res["total"]) <= 4 * res["total_se"]


def test_gamma_terms_domain_errors():
    grid = GridSpec(nx=32, nt=64, t_final=0.25)
    sf = stein.spatial_battery()[0]
    sp_big = SmoothingParams.for_eps(0.05, 0.05, grid.nx)
    with pytest.raises(DomainError):
        stein.gamma_terms(
            grid, sp_big, BoundaryParams(0.0, 0.0), sf, 4, seed=0
        )
    sp = SmoothingParams.for_eps(0.01, 0.01, grid.nx)
    with pytest.raises(DomainError):
        stein.gamma_terms(
            grid, sp, BoundaryParams(1.0, 1.0), sf, 4, seed=0
        )
    with pytest.raises(DomainError):
        stein.gamma_terms(
            grid, sp, BoundaryParams(0.0, 0.0), sf, 4, seed=0, n_nodes=129
        )
