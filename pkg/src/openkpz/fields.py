"""Random inputs: mollified space-time white noise and Brownian initial data.

The noise lives in the Neumann cosine basis phi_0 = 1, phi_m = sqrt(2) cos(m pi x),
where the half-Laplacian semigroup is diagonal.  A field smoothed "for time eps"
means convolution with p_neumann(eps, ., .), i.e. mode decay exp(-eps (m pi)^2 / 2);
two smoothing passes reproduce p_neumann(2 eps), which is the covariance identity
the tests lean on.  Initial slopes are smoothed in the sine (Dirichlet) basis so
that differentiation commutes with smoothing exactly, with the mean drift alpha
carried outside the expansion and re-added unsmoothed.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .kernels import DomainError, altsign, reflect
from .util import stream_rng

_MAGIC = b"OKPZ1"
_TAIL = 1e-12  # relative size of the first dropped spectral mode


@dataclass(frozen=True)
class GridSpec:
    nx: int
    nt: int
    t_final: float

    def __post_init__(self):
        if self.nx < 8 or self.nt < 8:
            raise DomainError(f"grid too coarse: nx={self.nx}, nt={self.nt}")
        if self.t_final <= 0:
            raise DomainError(f"t_final must be positive, got {self.t_final}")

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def dt(self) -> float:
        return self.t_final / self.nt

    def x_nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nx + 1)

    def x_mids(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx


def modes_for_scale(scale: float, nx: int) -> int:
    """Number of cosine/sine modes kept after smoothing for time `scale`.

    Chosen so the first dropped mode's amplitude factor exp(-scale (M pi)^2 / 2)
    is below _TAIL, with a hard cap of 4*nx (resolution beyond the grid is wasted).
    """
    if scale <= 0:
        raise DomainError(f"smoothing scale must be positive, got {scale}")
    m = math.ceil(math.sqrt(2.0 * math.log(1.0 / _TAIL) / scale) / math.pi)
    return max(1, min(m, 4 * nx))


@dataclass(frozen=True)
class SmoothingParams:
    eps: float
    kappa: float
    n_modes: int

    def __post_init__(self):
        if self.eps <= 0 or self.kappa <= 0:
            raise DomainError("eps and kappa must be positive")
        if self.n_modes < 1:
            raise DomainError("n_modes must be >= 1")

    @classmethod
    def for_eps(cls, eps: float, kappa: float, nx: int) -> "SmoothingParams":
        return cls(eps=eps, kappa=kappa, n_modes=modes_for_scale(eps, nx))

    def mode_decay(self) -> np.ndarray:
        m = np.arange(self.n_modes + 1)
        return np.exp(-0.5 * self.eps * (m * np.pi) ** 2)


@dataclass(frozen=True)
class NoiseRealization:
    coeffs: np.ndarray  # (nt, n_modes+1), i.i.d. N(0, 1/dt)
    seed: int


@dataclass(frozen=True)
class InitialData:
    u0_values: np.ndarray  # nx+1 values, alpha + N(0, 1/dx) i.i.d.
    h0_values: np.ndarray  # nx+1 cumulative values, h0[0] = 0
    alpha: float
    seed: int = 0


def sample_noise(grid: GridSpec, sp: SmoothingParams, seed: int) -> NoiseRealization:
    rng = stream_rng(seed, 0)
    coeffs = rng.standard_normal((grid.nt, sp.n_modes + 1)) / math.sqrt(grid.dt)
    return NoiseRealization(coeffs=coeffs, seed=int(seed))


def _phi_table(n_modes: int, x: np.ndarray) -> np.ndarray:
    """Basis matrix phi[m, j] = phi_m(reflect(x_j))."""
    r = reflect(np.atleast_1d(x))
    m = np.arange(n_modes + 1)[:, None]
    tab = math.sqrt(2.0) * np.cos(m * np.pi * r[None, :])
    tab[0, :] = 1.0
    return tab


def _dphi_table(n_modes: int, x: np.ndarray) -> np.ndarray:
    """Derivative basis through the reflection: sign(x) * phi_m'(reflect(x))."""
    xa = np.atleast_1d(x)
    r = reflect(xa)
    sgn = altsign(xa)
    m = np.arange(n_modes + 1)[:, None]
    tab = -math.sqrt(2.0) * (m * np.pi) * np.sin(m * np.pi * r[None, :])
    tab[0, :] = 0.0
    return tab * sgn[None, :]


def xi_eps(nr: NoiseRealization, sp: SmoothingParams, t_index: int, x):
    """Mollified noise at a time slice; reflect-extended beyond [0,1]."""
    weights = nr.coeffs[t_index] * sp.mode_decay()
    out = weights @ _phi_table(sp.n_modes, x)
    return float(out[0]) if np.isscalar(x) else out


def d_xi_eps(nr: NoiseRealization, sp: SmoothingParams, t_index: int, x):
    weights = nr.coeffs[t_index] * sp.mode_decay()
    out = weights @ _dphi_table(sp.n_modes, x)
    return float(out[0]) if np.isscalar(x) else out


def xi_eps_table(nr: NoiseRealization, sp: SmoothingParams, x: np.ndarray) -> np.ndarray:
    """All time slices at once: (nt, len(x)); the hot-loop form."""
    return (nr.coeffs * sp.mode_decay()[None, :]) @ _phi_table(sp.n_modes, x)


def d_xi_eps_table(nr: NoiseRealization, sp: SmoothingParams, x: np.ndarray) -> np.ndarray:
    return (nr.coeffs * sp.mode_decay()[None, :]) @ _dphi_table(sp.n_modes, x)


def sample_initial(grid: GridSpec, alpha: float, seed: int) -> InitialData:
    rng = stream_rng(seed, 1)
    u0 = alpha + rng.standard_normal(grid.nx + 1) / math.sqrt(grid.dx)
    h0 = np.zeros(grid.nx + 1)
    h0[1:] = np.cumsum(u0[:-1]) * grid.dx
    return InitialData(u0_values=u0, h0_values=h0, alpha=float(alpha), seed=int(seed))


def smooth_initial(idata: InitialData, sp: SmoothingParams):
    """Smoothed initial pair (h0_kappa, u0_kappa) as reflect-extended callables.

    The centered slope u0 - alpha is expanded in sin(m pi x) on cell midpoints
    and damped by exp(-kappa (m pi)^2 / 2); its antiderivative gives the height.
    The drift alpha is added back exactly, so the mean is never smoothed away.
    """
    nx = len(idata.u0_values) - 1
    dx = 1.0 / nx
    kappa = sp.kappa
    n_modes = modes_for_scale(kappa, nx)
    mids = (np.arange(nx) + 0.5) * dx
    u0c = idata.u0_values[:nx] - idata.alpha
    m = np.arange(1, n_modes + 1)
    # b_m = 2 * integral of u0c * sin(m pi x), midpoint rule
    b = 2.0 * dx * (np.sin(np.outer(m * np.pi, mids)) @ u0c)
    damp = np.exp(-0.5 * kappa * (m * np.pi) ** 2)
    bd = b * damp
    alpha = idata.alpha

    def h0_kappa(x):
        xa = np.atleast_1d(np.asarray(x, dtype=float))
        r = reflect(xa)
        vals = alpha * r + (bd / (m * np.pi)) @ (1.0 - np.cos(np.outer(m * np.pi, r)))
        return float(vals[0]) if np.isscalar(x) else vals

    def u0_kappa(x):
        xa = np.atleast_1d(np.asarray(x, dtype=float))
        r = reflect(xa)
        sgn = altsign(xa)
        vals = sgn * (alpha + bd @ np.sin(np.outer(m * np.pi, r)))
        return float(vals[0]) if np.isscalar(x) else vals

    return h0_kappa, u0_kappa


def dump_noise(path: str, nr: NoiseRealization, grid: GridSpec):
    nt, n_modes_p1 = nr.coeffs.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<4q", grid.nx, nt, n_modes_p1 - 1, nr.seed))
        fh.write(np.ascontiguousarray(nr.coeffs, dtype="<f8").tobytes())


def load_noise(path: str) -> tuple[NoiseRealization, int]:
    """Returns (noise, nx) from a flat binary dump."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != _MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        nx, nt, n_modes, seed = struct.unpack("<4q", fh.read(32))
        coeffs = np.frombuffer(fh.read(), dtype="<f8").reshape(nt, n_modes + 1)
    return NoiseRealization(coeffs=coeffs.copy(), seed=seed), nx


def dump_initial(path: str, idata: InitialData):
    nx = len(idata.u0_values) - 1
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<4q", nx, 0, 0, idata.seed))
        payload = np.concatenate([[idata.alpha], idata.u0_values, idata.h0_values])
        fh.write(np.ascontiguousarray(payload, dtype="<f8").tobytes())


def load_initial(path: str) -> InitialData:
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != _MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        nx, _, _, seed = struct.unpack("<4q", fh.read(32))
        payload = np.frombuffer(fh.read(), dtype="<f8")
    alpha = float(payload[0])
    u0 = payload[1 : nx + 2].copy()
    h0 = payload[nx + 2 :].copy()
    return InitialData(u0_values=u0, h0_values=h0, alpha=alpha, seed=seed)
