import math

import numpy as np
import pytest
from scipy.linalg import solve_banded

from openkpz import fields as F
from openkpz import kernels as K
from openkpz import polymer as PL
from openkpz import she_pde as S


BP = K.BoundaryParams(alpha=0.5, beta=-0.5)


def _march(ab, rb, z, steps):
    for _ in range(steps):
        z = solve_banded((1, 1), ab, S._cn_apply_rhs(rb, z))
    return z


def test_cn_neumann_fixes_constants_and_mass():
    grid = F.GridSpec(nx=64, nt=100, t_final=0.1)
    ab, rb = S._cn_bands(grid.nx, grid.dx, grid.dt)
    z = _march(ab, rb, np.ones(grid.nx + 1), 100)
    assert np.max(np.abs(z - 1.0)) < 1e-12
    x = grid.x_nodes()
    z0 = np.exp(-30 * (x - 0.4) ** 2)
    z = _march(ab, rb, z0.copy(), 100)
    assert np.trapezoid(z, x) == pytest.approx(np.trapezoid(z0, x), abs=1e-10)
    assert np.all(z > 0)


def test_cn_robin_exponential_steady_profile():
    # with ghosts alpha_hat = c, beta_hat = -c the profile e^{cx} is steady
    grid = F.GridSpec(nx=128, nt=400, t_final=0.2)
    c = 0.8
    ab, rb = S._cn_bands(grid.nx, grid.dx, grid.dt, alpha_hat=c, beta_hat=-c)
    x = grid.x_nodes()
    z = _march(ab, rb, np.exp(c * x), 400)
    prof = z / np.exp(c * x)
    assert np.max(np.abs(prof / prof[0] - 1.0)) < 1e-4


def test_solve_smoothed_pde_positive_and_deterministic():
    grid = F.GridSpec(nx=64, nt=128, t_final=0.1)
    sp = F.SmoothingParams.for_eps(0.05, 0.05, grid.nx)
    idata = F.sample_initial(grid, 0.5, seed=3)
    ids = F.smooth_initial(idata, sp)
    nr = F.sample_noise(grid, sp, seed=5)
    a = S.solve_smoothed_pde(nr, ids, sp, BP, grid)
    b = S.solve_smoothed_pde(nr, ids, sp, BP, grid)
    np.testing.assert_array_equal(a.z_values, b.z_values)
    assert np.all(a.z_values > 0)
    assert a.t_index == grid.nt


def test_solve_smoothed_pde_zero_noise_matches_fk():
    grid = F.GridSpec(nx=64, nt=256, t_final=0.25)
    sp = F.SmoothingParams.for_eps(0.05, 0.05, grid.nx)
    nr = F.NoiseRealization(coeffs=np.zeros((grid.nt, sp.n_modes + 1)), seed=0)
    ids = (lambda x: np.zeros_like(np.asarray(x, float)),)
    fs = S.solve_smoothed_pde(nr, ids, sp, BP, grid)
    rep = PL.Z_theta(0.5, None, (ids[0],), sp, BP, grid, n_paths=8000, seed=2)
    pde = fs.z_values[32]
    assert abs(rep.estimate - pde) < 3 * rep.stderr + 0.005 * pde


def test_solve_smoothed_pde_self_convergence():
    # same continuum noise on a refined grid: sup |log Z_f - log Z_c| small
    coarse = F.GridSpec(nx=128, nt=1024, t_final=0.25)
    fine = F.GridSpec(nx=256, nt=4096, t_final=0.25)
    sp = F.SmoothingParams.for_eps(0.05, 0.05, 128)
    nr_fine = F.sample_noise(fine, sp, seed=9)
    coarse_coeffs = nr_fine.coeffs.reshape(coarse.nt, 4, -1).mean(axis=1)
    nr_coarse = F.NoiseRealization(coeffs=coarse_coeffs, seed=9)
    idata = F.sample_initial(coarse, 0.5, seed=10)
    ids = F.smooth_initial(idata, sp)
    zc = S.solve_smoothed_pde(nr_coarse, ids, sp, BP, coarse)
    zf = S.solve_smoothed_pde(nr_fine, ids, sp, BP, fine)
    diff = np.log(zf.z_values[::2]) - np.log(zc.z_values)
    assert np.max(np.abs(diff)) <= 1e-3


def test_flow_sbe_preconditions():
    grid = F.GridSpec(nx=32, nt=64, t_final=1.0)  # dt far above dx^2/2
    idata = F.sample_initial(grid, 0.0, seed=0)
    with pytest.raises(K.DomainError):
        S.flow_sbe(idata, BP, grid, seed=0)
    ok_grid = F.GridSpec(nx=16, nt=1024, t_final=1.0)
    with pytest.raises(K.DomainError):
        S.flow_sbe(F.sample_initial(ok_grid, 1.0, seed=0),
                   K.BoundaryParams(1.0, 0.0), ok_grid, seed=0)


def test_flow_sbe_noise_off_keeps_interior_drift():
    # short horizon: the hatted boundary layers have not reached the interior
    nx = 32
    t = 0.02
    nt = math.ceil(t / (1 / nx**2 / 2))
    grid = F.GridSpec(nx=nx, nt=nt, t_final=t)
    alpha = 1.0
    u0 = np.full(nx + 1, alpha)
    h0 = np.linspace(0, alpha, nx + 1)
    idata = F.InitialData(u0_values=u0, h0_values=h0, alpha=alpha)
    u, h = S.flow_sbe(idata, K.BoundaryParams(alpha, -alpha), grid, seed=0,
                      noise_on=False)
    interior = u[8:-8]
    assert np.max(np.abs(interior - alpha)) < 0.05


def test_flow_sbe_determinism_and_sharding():
    nx = 16
    grid = F.GridSpec(nx=nx, nt=2 * nx * nx, t_final=0.5)
    idatas = [F.sample_initial(grid, 0.0, seed=50 + i) for i in range(4)]
    u_all, h_all = S.flow_sbe_batch(idatas, BP, grid, seed=3)
    # shard: realizations 2,3 computed alone with an index offset
    u_part, h_part = S.flow_sbe_batch(idatas[2:], BP, grid, seed=3, index_offset=2)
    np.testing.assert_array_equal(u_all[2:], u_part)
    np.testing.assert_array_equal(h_all[2:], h_part)
    # single-realization wrapper agrees
    u0, h0 = S.flow_sbe(idatas[0], BP, grid, seed=3)
    np.testing.assert_array_equal(u_all[0], u0)


def test_flow_sbe_height_variance():
    nx = 32
    grid = F.GridSpec(nx=nx, nt=2 * nx * nx, t_final=1.0)
    n = 400
    idatas = [F.sample_initial(grid, 0.0, seed=900 + i) for i in range(n)]
    u, h = S.flow_sbe_batch(idatas, K.BoundaryParams(0.0, 0.0), grid, seed=4)
    dh = h[:, -1] - h[:, 0]
    assert np.var(dh) == pytest.approx(1.0, rel=0.2)
    f = np.cos(np.pi * (grid.x_mids() - 0.5) / 0.4) ** 2
    f[(grid.x_mids() < 0.3) | (grid.x_mids() > 0.7)] = 0.0
    Y = u @ f / nx
    assert abs(Y.mean()) < 3 * Y.std() / math.sqrt(n)


def test_torus_step_matrix_stochastic():
    lat = S.TorusLattice.make(128)
    k = lat.step_matrix(0.01)
    assert np.all(k > 0)
    np.testing.assert_allclose(k.sum(axis=1), 1.0, atol=1e-12)


def test_torus_propagator_reproduces_kernel():
    lat = S.TorusLattice.make(160)
    nt = 16
    dt = 0.25 / nt
    g = S.propagate_torus(lat, dt, np.zeros((nt, lat.nodes.size)))
    expected = np.asarray(
        K.R_periodic(0.25, lat.nodes[:, None] - lat.nodes[None, :])
    )
    np.testing.assert_allclose(g, expected, atol=1e-10)


def test_torus_propagator_constant_potential():
    lat = S.TorusLattice.make(96)
    nt = 8
    dt = 0.1 / nt
    g0 = S.propagate_torus(lat, dt, np.zeros((nt, lat.nodes.size)))
    gc = S.propagate_torus(lat, dt, np.full((nt, lat.nodes.size), 2.0))
    np.testing.assert_allclose(gc, g0 * math.exp(2.0 * 0.1), atol=1e-8)
