"""Heat kernels on [0,1] by the method of images, and the piecewise special
functions (reflection, zig-zag, alternating sign) they interact with.

All functions are pure and vectorized: scalar in, scalar out; arrays broadcast.
The infinite image sums are truncated with a provable Gaussian tail bound, so
identity tests downstream can pin absolute tolerances.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

__all__ = [
    "DomainError",
    "TruncationError",
    "KernelConfig",
    "BoundaryParams",
    "DEFAULT_CONFIG",
    "reflect",
    "zigzag",
    "altsign",
    "gauss_kernel",
    "p_neumann",
    "p_dirichlet",
    "R_periodic",
    "d_R_periodic",
    "d_p_neumann",
    "r_antiderivative",
    "zeta_smooth",
    "sigma_smooth",
    "C_eps",
    "d_C_eps",
    "V_eps",
    "d_V_eps",
    "identity_report",
]

_SQRT2PI = math.sqrt(2.0 * math.pi)


class DomainError(ValueError):
    """Input outside an operation's domain (non-finite x, or t <= 0)."""


class TruncationError(RuntimeError):
    """Image sum would need more terms than ``max_images`` allows."""


@dataclass(frozen=True)
class KernelConfig:
    """Truncation policy for the image sums.

    tail_tolerance is an absolute budget for the omitted Gaussian tail per
    kernel evaluation; max_images caps the number of image terms.
    """

    tail_tolerance: float = 1e-14
    max_images: int = 10_000

    def __post_init__(self) -> None:
        if not (self.tail_tolerance > 0):
            raise ValueError("tail_tolerance must be positive")
        if self.max_images < 1:
            raise ValueError("max_images must be >= 1")


DEFAULT_CONFIG = KernelConfig()


@dataclass(frozen=True)
class BoundaryParams:
    """Boundary slope parameters (alpha, beta) and their half-shifted forms."""

    alpha: float
    beta: float

    @property
    def alpha_hat(self) -> float:
        return self.alpha - 0.5

    @property
    def beta_hat(self) -> float:
        return self.beta - 0.5

    @property
    def drift_symmetric(self) -> bool:
        return self.alpha + self.beta == 0.0


def _checked(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("non-finite input")
    return arr


def _check_t(t: float) -> float:
    t = float(t)
    if not math.isfinite(t) or t <= 0.0:
        raise DomainError(f"time parameter must be positive and finite, got {t}")
    return t


def _maybe_scalar(out: np.ndarray, like: np.ndarray):
    return float(out) if like.ndim == 0 and out.ndim == 0 else out


def reflect(x):
    """Fold the real line onto [0,1]: 2-periodic, even about every integer."""
    arr = _checked(x)
    out = 1.0 - np.abs(1.0 - np.mod(arr, 2.0))
    return _maybe_scalar(out, arr)


def zigzag(x):
    """Zero on integers; decreases linearly from 1 to -1 on each (n, n+1)."""
    arr = _checked(x)
    frac = np.mod(arr, 1.0)
    out = np.where(frac == 0.0, 0.0, 1.0 - 2.0 * frac)
    return _maybe_scalar(out, arr)


def altsign(x):
    """+1 on (2n, 2n+1), -1 on (2n-1, 2n), 0 on integers."""
    arr = _checked(x)
    fl = np.floor(arr)
    sign = np.where(np.mod(fl, 2.0) == 0.0, 1.0, -1.0)
    out = np.where(arr == fl, 0.0, sign)
    return _maybe_scalar(out, arr)


def gauss_kernel(t, x):
    """Standard heat kernel (2*pi*t)^(-1/2) * exp(-x^2 / 2t)."""
    t = _check_t(t)
    arr = _checked(x)
    out = np.exp(-arr * arr / (2.0 * t)) / math.sqrt(2.0 * math.pi * t)
    return _maybe_scalar(out, arr)


def _image_range(t: float, lo: float, hi: float, cfg: KernelConfig) -> np.ndarray:
    # Include every n with lo - L <= 2n <= hi + L; the omitted terms are
    # Gaussian tails beyond L = sqrt(2 t log(1/tol)) + 2 and sum below budget.
    length = math.sqrt(2.0 * t * math.log(1.0 / cfg.tail_tolerance)) + 2.0
    n0 = math.floor((lo - length) / 2.0)
    n1 = math.ceil((hi + length) / 2.0)
    if n1 - n0 + 1 > cfg.max_images:
        raise TruncationError(
            f"image sum needs {n1 - n0 + 1} terms, cap is {cfg.max_images}"
        )
    return np.arange(n0, n1 + 1, dtype=float)


def R_periodic(t, x, cfg: KernelConfig = DEFAULT_CONFIG):
    """2-periodic Gaussian train: sum over n of p(t, x - 2n); unit mass per period."""
    t = _check_t(t)
    arr = _checked(x)
    w = np.mod(arr, 2.0)
    ns = _image_range(t, 0.0, 2.0, cfg)
    z = w[..., None] - 2.0 * ns
    out = np.exp(-z * z / (2.0 * t)).sum(axis=-1) / math.sqrt(2.0 * math.pi * t)
    return _maybe_scalar(out, arr)


def d_R_periodic(t, x, cfg: KernelConfig = DEFAULT_CONFIG):
    """Spatial derivative of R_periodic (term-wise)."""
    t = _check_t(t)
    arr = _checked(x)
    w = np.mod(arr, 2.0)
    ns = _image_range(t, 0.0, 2.0, cfg)
    z = w[..., None] - 2.0 * ns
    out = (-(z / t) * np.exp(-z * z / (2.0 * t))).sum(axis=-1) / math.sqrt(
        2.0 * math.pi * t
    )
    return _maybe_scalar(out, arr)


def p_neumann(t, x, y, cfg: KernelConfig = DEFAULT_CONFIG):
    """Neumann heat kernel on [0,1] as a truncated image sum.

    Even and 2-periodic in both spatial arguments, hence invariant under
    x -> reflect(x), y -> reflect(y).
    """
    xa, ya = _checked(x), _checked(y)
    out = R_periodic(t, np.asarray(xa - ya), cfg) + R_periodic(
        t, np.asarray(xa + ya), cfg
    )
    out = np.asarray(out)
    return _maybe_scalar(out, np.asarray(np.broadcast_arrays(xa, ya)[0]))


def d_p_neumann(t, x, y, cfg: KernelConfig = DEFAULT_CONFIG):
    """Derivative of p_neumann in the first spatial argument."""
    xa, ya = _checked(x), _checked(y)
    out = np.asarray(
        d_R_periodic(t, np.asarray(xa - ya), cfg)
        + d_R_periodic(t, np.asarray(xa + ya), cfg)
    )
    return _maybe_scalar(out, np.asarray(np.broadcast_arrays(xa, ya)[0]))


def p_dirichlet(t, x, y, cfg: KernelConfig = DEFAULT_CONFIG):
    """Dirichlet heat kernel on [0,1]: alternating-sign image sum.

    Vanishes at x in {0,1}; small negative values from float rounding are
    clamped to zero.
    """
    t = _check_t(t)
    xa, ya = _checked(x), _checked(y)
    w1 = np.asarray(xa - ya)
    w2 = np.asarray(xa + ya)
    lo = float(min(w1.min(), w2.min()))
    hi = float(max(w1.max(), w2.max()))
    ns = _image_range(t, lo, hi, cfg)
    z1 = w1[..., None] - 2.0 * ns
    z2 = w2[..., None] - 2.0 * ns
    out = (np.exp(-z1 * z1 / (2.0 * t)) - np.exp(-z2 * z2 / (2.0 * t))).sum(
        axis=-1
    ) / math.sqrt(2.0 * math.pi * t)
    out = np.where((out < 0.0) & (out > -1e-12), 0.0, out)
    return _maybe_scalar(np.asarray(out), np.asarray(np.broadcast_arrays(xa, ya)[0]))


def r_antiderivative(t, x, cfg: KernelConfig = DEFAULT_CONFIG):
    """Antiderivative of R_periodic - 1/2 from 0, via error-function terms.

    2-periodic with r_t(0) = 0; converges to zigzag(x/2)/2 as t -> 0.
    """
    t = _check_t(t)
    arr = _checked(x)
    w = np.mod(arr, 2.0)
    st = math.sqrt(t)
    ns = _image_range(t, 0.0, 2.0, cfg)
    centers = 2.0 * ns
    terms = ndtr((w[..., None] - centers) / st) - ndtr(-centers / st)
    out = terms.sum(axis=-1) - 0.5 * w
    return _maybe_scalar(out, arr)


def zeta_smooth(p, x, cfg: KernelConfig = DEFAULT_CONFIG):
    """Smooth approximant of the zig-zag function: 2*(r_p(x) + r_p(x+1))."""
    arr = _checked(x)
    out = 2.0 * (
        np.asarray(r_antiderivative(p, arr, cfg))
        + np.asarray(r_antiderivative(p, arr + 1.0, cfg))
    )
    return _maybe_scalar(out, arr)


def sigma_smooth(p, x, cfg: KernelConfig = DEFAULT_CONFIG):
    """Smooth approximant of the alternating sign: 2*(r_p(x) - r_p(x+1))."""
    arr = _checked(x)
    out = 2.0 * (
        np.asarray(r_antiderivative(p, arr, cfg))
        - np.asarray(r_antiderivative(p, arr + 1.0, cfg))
    )
    return _maybe_scalar(out, arr)


def C_eps(eps, x, cfg: KernelConfig = DEFAULT_CONFIG):
    """Diagonal normalization kernel p_neumann(2*eps, x, x)."""
    return p_neumann(2.0 * float(eps), x, x, cfg)


def d_C_eps(eps, x, cfg: KernelConfig = DEFAULT_CONFIG):
    """Total spatial derivative of C_eps: 2 * R'_{2 eps}(2x)."""
    arr = _checked(x)
    out = 2.0 * np.asarray(d_R_periodic(2.0 * float(eps), 2.0 * arr, cfg))
    return _maybe_scalar(out, arr)


def V_eps(eps, x, bp: BoundaryParams, cfg: KernelConfig = DEFAULT_CONFIG):
    """Boundary local-time potential.

    -1/2 * (alpha_hat * p_neumann(eps, x, 0) + beta_hat * p_neumann(eps, x, 1)).
    """
    arr = _checked(x)
    out = -0.5 * (
        bp.alpha_hat * np.asarray(p_neumann(eps, arr, 0.0, cfg))
        + bp.beta_hat * np.asarray(p_neumann(eps, arr, 1.0, cfg))
    )
    return _maybe_scalar(out, arr)


def d_V_eps(eps, x, bp: BoundaryParams, cfg: KernelConfig = DEFAULT_CONFIG):
    """Spatial derivative of V_eps (term-wise)."""
    arr = _checked(x)
    out = -0.5 * (
        bp.alpha_hat * np.asarray(d_p_neumann(eps, arr, 0.0, cfg))
        + bp.beta_hat * np.asarray(d_p_neumann(eps, arr, 1.0, cfg))
    )
    return _maybe_scalar(out, arr)


# ---------------------------------------------------------------------------
# identity self-test


def _gauss_legendre01(n: int):
    nodes, weights = np.polynomial.legendre.leggauss(n)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def bracket_identity_residual(x1, x2):
    """Residual of the two-point bracket identity (valid off a null set):

    zeta((x1-x2)/2)/2 + zeta((x1+x2)/2)/2
        + altsign(x1) * 1{reflect(x1) <= reflect(x2)}  ==  zeta(x1/2).
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    ind = (np.asarray(reflect(x1)) <= np.asarray(reflect(x2))).astype(float)
    lhs = (
        0.5 * np.asarray(zigzag(0.5 * (x1 - x2)))
        + 0.5 * np.asarray(zigzag(0.5 * (x1 + x2)))
        + np.asarray(altsign(x1)) * ind
    )
    return lhs - np.asarray(zigzag(0.5 * x1))


def _ae_samples(rng: np.random.Generator, n: int, excl: float = 1e-9):
    """Sample (x1, x2) pairs off the almost-everywhere failure set."""
    out1 = np.empty(n)
    out2 = np.empty(n)
    filled = 0
    while filled < n:
        x1 = rng.uniform(-4.0, 4.0, size=2 * (n - filled))
        x2 = rng.uniform(-4.0, 4.0, size=2 * (n - filled))

        def far(v, period):
            return np.abs(v / period - np.round(v / period)) * period > excl

        ok = (
            far(x1, 1.0)
            & far(x2, 1.0)
            & far(x1 - x2, 2.0)
            & far(x1 + x2, 2.0)
            & (np.abs(np.asarray(reflect(x1)) - np.asarray(reflect(x2))) > excl)
        )
        take = min(int(ok.sum()), n - filled)
        out1[filled : filled + take] = x1[ok][:take]
        out2[filled : filled + take] = x2[ok][:take]
        filled += take
    return out1, out2


def identity_report(n_samples: int = 100_000, seed: int = 0,
                    cfg: KernelConfig = DEFAULT_CONFIG) -> list[dict]:
    """Run the kernel identity battery; one row per identity.

    Rows carry (identity_name, max_abs_residual, n_samples, threshold, passed).
    """
    rng = np.random.default_rng(seed)
    rows: list[dict] = []

    def add(name, residual, n, threshold):
        rows.append(
            {
                "identity_name": name,
                "max_abs_residual": float(residual),
                "n_samples": int(n),
                "threshold": float(threshold),
                "passed": bool(residual <= threshold),
            }
        )

    # rho-invariance of the Neumann kernel
    xs = rng.uniform(-4.0, 4.0, 2000)
    ys = rng.uniform(-4.0, 4.0, 2000)
    ts = rng.uniform(1e-3, 1.0, 2000)
    res = 0.0
    for t in (1e-3, 1e-2, 0.1, 1.0):
        a = np.asarray(p_neumann(t, xs, ys, cfg))
        b = np.asarray(p_neumann(t, reflect(xs), reflect(ys), cfg))
        res = max(res, float(np.max(np.abs(a - b))))
    add("rho_invariance_p_neumann", res, 4 * len(xs), 1e-12)
    del ts

    # mass conservation and Chapman-Kolmogorov by Gauss-Legendre quadrature
    nodes, weights = _gauss_legendre01(129)
    res_mass = 0.0
    res_ck_neu = 0.0
    res_ck_dir = 0.0
    for t in (1e-3, 1e-2, 0.1, 1.0):
        for xq in (0.0, 0.17, 0.5, 0.83, 1.0):
            mass = float(np.sum(weights * np.asarray(p_neumann(t, xq, nodes, cfg))))
            res_mass = max(res_mass, abs(mass - 1.0))
    for s in (1e-3, 0.05, 0.5):
        for t in (1e-3, 0.1, 1.0):
            for xq, yq in ((0.1, 0.7), (0.5, 0.5), (0.9, 0.2)):
                lhs = float(
                    np.sum(
                        weights
                        * np.asarray(p_neumann(s, xq, nodes, cfg))
                        * np.asarray(p_neumann(t, nodes, yq, cfg))
                    )
                )
                res_ck_neu = max(res_ck_neu, abs(lhs - p_neumann(s + t, xq, yq, cfg)))
                lhs_d = float(
                    np.sum(
                        weights
                        * np.asarray(p_dirichlet(s, xq, nodes, cfg))
                        * np.asarray(p_dirichlet(t, nodes, yq, cfg))
                    )
                )
                res_ck_dir = max(res_ck_dir, abs(lhs_d - p_dirichlet(s + t, xq, yq, cfg)))
    add("neumann_mass_conservation", res_mass, 20, 1e-10)
    add("chapman_kolmogorov_neumann", res_ck_neu, 27, 1e-8)
    add("chapman_kolmogorov_dirichlet", res_ck_dir, 27, 1e-8)

    # derivative kernel vs central finite differences
    h = 1e-5
    xs = rng.uniform(0.0, 1.0, 400)
    ys = rng.uniform(0.0, 1.0, 400)
    res_fd = 0.0
    for t in (1e-2, 0.1, 1.0):
        fd = (
            np.asarray(p_neumann(t, xs + h, ys, cfg))
            - np.asarray(p_neumann(t, xs - h, ys, cfg))
        ) / (2.0 * h)
        res_fd = max(res_fd, float(np.max(np.abs(fd - np.asarray(d_p_neumann(t, xs, ys, cfg))))))
    add("d_p_neumann_vs_finite_difference", res_fd, 1200, 1e-6)

    # derivative bound |d_p_neumann(s)| <= 2 s^{-1/2} p_neumann(2s)
    s_grid = np.exp(np.linspace(math.log(1e-4), 0.0, 20))
    ratio_max = 0.0
    for s_val in s_grid:
        xs = rng.uniform(0.0, 1.0, 500)
        ys = rng.uniform(0.0, 1.0, 500)
        num = np.abs(np.asarray(d_p_neumann(s_val, xs, ys, cfg)))
        den = (1.0 / math.sqrt(s_val)) * np.asarray(
            p_neumann(2.0 * s_val, xs, ys, cfg)
        )
        ok = den > 0.0
        if np.any(ok):
            ratio_max = max(ratio_max, float(np.max(num[ok] / den[ok])))
    add("d_p_neumann_ratio_bound_minus_2", max(ratio_max - 2.0, 0.0), 10_000, 0.0)

    # a.e. identities
    x1, x2 = _ae_samples(rng, n_samples)
    add(
        "bracket_identity",
        float(np.max(np.abs(bracket_identity_residual(x1, x2)))),
        n_samples,
        1e-12,
    )
    res_half = np.abs(
        0.5 * np.asarray(zigzag(x1)) + 0.5 * np.asarray(altsign(x1))
        - np.asarray(zigzag(0.5 * x1))
    )
    add("half_zeta_plus_half_sigma", float(np.max(res_half)), n_samples, 1e-12)

    xg = x1[np.abs(x1) < 2.0]
    res_sgn = np.abs(
        0.5 * np.asarray(zigzag(0.5 * xg)) - 0.5 * (np.sign(xg) - xg)
    )
    add("sgn_agreement_on_(-2,2)", float(np.max(res_sgn)), len(xg), 1e-12)

    # r_t -> zigzag(x/2)/2 away from the jump set 2Z
    grid = np.arange(-2.0, 2.0 + 1e-12, 0.005)
    grid = grid[np.abs(grid / 2.0 - np.round(grid / 2.0)) * 2.0 > 0.05]
    res_r = np.abs(
        np.asarray(r_antiderivative(1e-4, grid, cfg))
        - 0.5 * np.asarray(zigzag(0.5 * grid))
    )
    add("r_t_to_half_zeta_half", float(np.max(res_r)), len(grid), 1e-3)

    # regrouped image sum: p_neumann = R(x-y) + R(x+y)
    xs = rng.uniform(-2.0, 2.0, 1000)
    ys = rng.uniform(-2.0, 2.0, 1000)
    res_rg = 0.0
    for t in (2e-3, 0.2):
        a = np.asarray(p_neumann(t, xs, ys, cfg))
        b = np.asarray(R_periodic(t, xs - ys, cfg)) + np.asarray(
            R_periodic(t, xs + ys, cfg)
        )
        res_rg = max(res_rg, float(np.max(np.abs(a - b))))
    add("p_neumann_regrouping", res_rg, 2000, 1e-12)

    # truncation stability: doubling max_images changes nothing beyond budget
    wide = KernelConfig(cfg.tail_tolerance, cfg.max_images * 2)
    xs = rng.uniform(-2.0, 2.0, 1000)
    res_tr = 0.0
    for t in (1e-3, 1.0):
        res_tr = max(
            res_tr,
            float(
                np.max(
                    np.abs(
                        np.asarray(R_periodic(t, xs, cfg))
                        - np.asarray(R_periodic(t, xs, wide))
                    )
                )
            ),
        )
    add("truncation_doubling", res_tr, 2000, cfg.tail_tolerance)

    # antiperiodicity of sigma_smooth
    xs = rng.uniform(-3.0, 3.0, 1000)
    res_ap = float(
        np.max(
            np.abs(
                np.asarray(sigma_smooth(0.01, xs, cfg))
                + np.asarray(sigma_smooth(0.01, xs + 1.0, cfg))
            )
        )
    )
    add("sigma_smooth_antiperiodicity", res_ap, 1000, 1e-12)

    return rows
