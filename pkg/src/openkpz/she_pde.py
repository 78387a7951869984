"""Grid solvers for the smoothed multiplicative heat equation.

Two solvers share this module:

* solve_smoothed_pde: deterministic Crank-Nicolson oracle for
  dZ = 1/2 Z'' + (xi_eps - 1/2 C_eps + V_eps) Z on a frozen noise field, with
  homogeneous Neumann walls (the physical Robin data lives inside V_eps).
  Used as the dual of the path-sampling estimate of the same quantity.

* flow_sbe: the end-to-end positivity-preserving flow whose slope field is
  tested for white-noise invariance.  Multiplicative exponential noise per
  node, Crank-Nicolson diffusion, Robin ghost points with the half-shifted
  parameters.

A small exact-kernel torus propagator is also provided for quadratures over
path endpoints on the doubled interval [-1, 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from . import fields as fields_mod
from .fields import GridSpec, InitialData, NoiseRealization, SmoothingParams
from .kernels import BoundaryParams, C_eps, DomainError, R_periodic, V_eps
from .util import stream_rng


class SchemeError(RuntimeError):
    """Positivity loss or non-finite values in a PDE step."""


@dataclass(frozen=True)
class FieldState:
    z_values: np.ndarray  # nx+1 positive reals
    t_index: int


def _cn_bands(nx: int, dx: float, dt: float, alpha_hat: float = 0.0,
              beta_hat: float = 0.0):
    """Banded LHS/RHS for Crank-Nicolson on dZ = 1/2 Z'' with ghost points.

    Ghost values encode (Z_1 - Z_-1)/(2 dx) = alpha_hat Z_0 at the left wall
    and (Z_{nx+1} - Z_{nx-1})/(2 dx) = -beta_hat Z_nx at the right one;
    alpha_hat = beta_hat = 0 gives homogeneous Neumann.
    """
    n = nx + 1
    r = dt / (4.0 * dx * dx)  # CN half-coefficient of the 1/2-Laplacian
    # row-major coefficients: sub[i] z_{i-1} + diag[i] z_i + sup[i] z_{i+1}
    sub = np.full(n, -r)
    diag = np.full(n, 1.0 + 2.0 * r)
    sup = np.full(n, -r)
    rsub = np.full(n, r)
    rdiag = np.full(n, 1.0 - 2.0 * r)
    rsup = np.full(n, r)
    # left ghost Z_-1 = Z_1 - 2 dx alpha_hat Z_0:
    #   (1/2) Z''_0 -> (2 Z_1 - (2 + 2 dx alpha_hat) Z_0) / dx^2
    sup[0] = -2.0 * r
    rsup[0] = 2.0 * r
    diag[0] = 1.0 + 2.0 * r + 2.0 * r * dx * alpha_hat
    rdiag[0] = 1.0 - 2.0 * r - 2.0 * r * dx * alpha_hat
    # right ghost Z_{nx+1} = Z_{nx-1} - 2 dx beta_hat Z_nx
    sub[n - 1] = -2.0 * r
    rsub[n - 1] = 2.0 * r
    diag[n - 1] = 1.0 + 2.0 * r + 2.0 * r * dx * beta_hat
    rdiag[n - 1] = 1.0 - 2.0 * r - 2.0 * r * dx * beta_hat
    ab = np.zeros((3, n))
    ab[0, 1:] = sup[:-1]
    ab[1, :] = diag
    ab[2, :-1] = sub[1:]
    return ab, (rsub, rdiag, rsup)


def _cn_apply_rhs(bands, z: np.ndarray) -> np.ndarray:
    """RHS tridiagonal product with row-major band coefficients."""
    rl, rd, ru = bands
    if z.ndim == 1:
        out = rd * z
        out[:-1] += ru[:-1] * z[1:]
        out[1:] += rl[1:] * z[:-1]
        return out
    out = rd[:, None] * z
    out[:-1] += ru[:-1, None] * z[1:]
    out[1:] += rl[1:, None] * z[:-1]
    return out


def solve_smoothed_pde(
    nr: NoiseRealization,
    id_smooth,
    sp: SmoothingParams,
    bp: BoundaryParams,
    grid: GridSpec,
) -> FieldState:
    """March Z(0,.) = exp(h0_kappa) to t_final on one frozen noise field."""
    h0k = id_smooth[0] if isinstance(id_smooth, tuple) else id_smooth
    x = grid.x_nodes()
    z = np.exp(np.asarray(h0k(x), dtype=float))
    ab, rhs_bands = _cn_bands(grid.nx, grid.dx, grid.dt)
    static_pot = -0.5 * C_eps(sp.eps, x) + V_eps(sp.eps, x, bp)
    xi_tab = fields_mod.xi_eps_table(nr, sp, x)
    for k in range(grid.nt):
        z = z * np.exp(grid.dt * (xi_tab[k] + static_pot))
        z = solve_banded((1, 1), ab, _cn_apply_rhs(rhs_bands, z))
        if not np.all(np.isfinite(z)) or np.any(z <= 0):
            raise SchemeError(f"positivity lost at step {k}; reduce dt")
    return FieldState(z_values=z, t_index=grid.nt)


def _flow_bands(grid: GridSpec, bp: BoundaryParams):
    return _cn_bands(grid.nx, grid.dx, grid.dt, bp.alpha_hat, bp.beta_hat)


def flow_sbe(
    idata: InitialData,
    bp: BoundaryParams,
    grid: GridSpec,
    seed: int,
    noise_on: bool = True,
):
    """One realization of the discrete Hopf-Cole flow; see flow_sbe_batch."""
    u, h = flow_sbe_batch([idata], bp, grid, seed, noise_on=noise_on)
    return u[0], h[0]


def flow_sbe_batch(
    idatas,
    bp: BoundaryParams,
    grid: GridSpec,
    seed: int,
    noise_on: bool = True,
    index_offset: int = 0,
    time_block: int = 256,
):
    """Evolve several independent realizations of the discrete flow at once.

    Realization j draws its per-step node noise from the stream
    (seed, index_offset + j), so any sharding of realizations across workers
    reproduces the serial run bit for bit.

    Returns (u_fields (n, nx), h_fields (n, nx+1)): the forward-difference
    slope of log Z and the height log Z - log Z(t, 0).
    """
    if not bp.drift_symmetric:
        raise DomainError("flow_sbe requires alpha + beta = 0")
    if grid.dt > grid.dx**2 / 2 + 1e-15:
        raise DomainError(
            f"dt={grid.dt} exceeds dx^2/2={grid.dx ** 2 / 2}; refine the time grid"
        )
    n = len(idatas)
    nxp1 = grid.nx + 1
    z = np.empty((nxp1, n))
    for j, idata in enumerate(idatas):
        z[:, j] = np.exp(idata.h0_values - idata.h0_values.mean())
    ab, rhs_bands = _flow_bands(grid, bp)
    gens = [stream_rng(seed, index_offset + j) for j in range(n)]
    sq = math.sqrt(grid.dt / grid.dx)
    ito_shift = grid.dt / (2.0 * grid.dx)
    done = 0
    while done < grid.nt:
        block = min(time_block, grid.nt - done)
        if noise_on:
            dw = np.empty((n, block, nxp1))
            for j, g in enumerate(gens):
                dw[j] = g.standard_normal((block, nxp1))
            factors = np.exp(sq * dw - ito_shift)
        for b in range(block):
            if noise_on:
                z = z * factors[:, b, :].T
            z = solve_banded((1, 1), ab, _cn_apply_rhs(rhs_bands, z))
            if not np.all(z > 0):
                raise SchemeError(f"positivity lost at step {done + b}")
        done += block
        # renormalize to keep exp(h) in floating range; a common factor per
        # realization never changes u or height differences
        z /= z.max(axis=0, keepdims=True)
    logz = np.log(z.T)  # (n, nx+1)
    u_fields = np.diff(logz, axis=1) / grid.dx
    h_fields = logz - logz[:, :1]
    return u_fields, h_fields


# ---------------------------------------------------------------------------
# Torus propagator on [-1, 1): exact kernel steps for endpoint quadratures.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TorusLattice:
    nodes: np.ndarray  # n points on [-1, 1), offset off the lattice 2Z
    weight: float  # quadrature weight 2/n

    @classmethod
    def make(cls, n: int, offset: float = 0.3) -> "TorusLattice":
        step = 2.0 / n
        nodes = -1.0 + (np.arange(n) + offset) * step
        return cls(nodes=nodes, weight=step)

    def step_matrix(self, dt: float) -> np.ndarray:
        """K[i, j] = R_periodic(dt, x_i - x_j) * weight; rows sum to ~1."""
        diff = self.nodes[:, None] - self.nodes[None, :]
        return np.asarray(R_periodic(dt, diff)) * self.weight


def propagate_torus(
    lat: TorusLattice, dt: float, potentials: np.ndarray
) -> np.ndarray:
    """Feynman-Kac propagator G[i, j] ~ E_xj[exp(sum_k V_k(X_k) dt); X_t ~ x_i].

    potentials has shape (nt, n): the potential on the lattice per time slice,
    applied at the left point.  Columns of the result are endpoint densities
    (with respect to the lattice quadrature) started from each node.
    """
    n = lat.nodes.size
    g = np.eye(n) / lat.weight
    k_dt = lat.step_matrix(dt)
    for v in potentials:
        g = k_dt @ (np.exp(dt * v)[:, None] * g)
    return g
