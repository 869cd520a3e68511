"""Bivariate Gaussian and Von Mises output distributions.

Output states are stored as arrays whose last axis holds seven values in the
fixed order ``(mu_x, mu_y, sigma_x, sigma_y, rho, eta, kappa)``. The same
layout is used for the unconstrained network outputs before
:func:`constrain_params`.

The Gaussian negative log-likelihood omits the additive ``log(2*pi)``
constant while the Von Mises one keeps its ``log(2*pi)``; a bivariate
Gaussian NLL here is therefore ``log(2*pi)`` below the true value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import wrap_angle

__all__ = [
    "MU_X",
    "MU_Y",
    "SIGMA_X",
    "SIGMA_Y",
    "RHO",
    "ETA",
    "KAPPA",
    "N_PARAMS",
    "SIGMA_FLOOR",
    "Gauss2",
    "VonMisesDist",
    "TrajectoryDistribution",
    "bessel_i0",
    "bessel_i1",
    "log_bessel_i0",
    "bessel_ratio",
    "gauss2_nll",
    "vonmises_nll",
    "gauss2_pdf",
    "vonmises_pdf",
    "softplus",
    "constrain_params",
    "constrain_jacobian",
    "se2_transform_output",
    "se2_transform_output_vjp",
]

MU_X, MU_Y, SIGMA_X, SIGMA_Y, RHO, ETA, KAPPA = range(7)
N_PARAMS = 7
SIGMA_FLOOR = 1e-4
LOG_2PI = math.log(2.0 * math.pi)

# Above this the power series is replaced by the large-argument expansion.
_SERIES_LIMIT = 50.0


@dataclass(frozen=True)
class Gauss2:
    mu: tuple[float, float]
    sigma_x: float
    sigma_y: float
    rho: float

    def __post_init__(self):
        if not (self.sigma_x > 0 and self.sigma_y > 0 and abs(self.rho) < 1):
            raise ValueError(
                f"invalid Gaussian parameters sigma=({self.sigma_x}, {self.sigma_y}), rho={self.rho}"
            )

    @property
    def covariance(self) -> np.ndarray:
        sxy = self.rho * self.sigma_x * self.sigma_y
        return np.array([[self.sigma_x**2, sxy], [sxy, self.sigma_y**2]])


@dataclass(frozen=True)
class VonMisesDist:
    eta: float
    kappa: float

    def __post_init__(self):
        if not self.kappa >= 0:
            raise ValueError(f"kappa must be non-negative, got {self.kappa}")
        object.__setattr__(self, "eta", wrap_angle(self.eta))


@dataclass
class TrajectoryDistribution:
    """Per-timestep Gaussian waypoints and Von Mises headings in an actor frame."""

    params: np.ndarray  # (T, 7)

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float)
        if self.params.ndim != 2 or self.params.shape[1] != N_PARAMS:
            raise ValueError(f"expected (T, {N_PARAMS}) parameters, got {self.params.shape}")

    @property
    def n_steps(self) -> int:
        return self.params.shape[0]

    @property
    def mu(self) -> np.ndarray:
        return self.params[:, [MU_X, MU_Y]]

    def gauss(self, t: int) -> Gauss2:
        p = self.params[t]
        return Gauss2((p[MU_X], p[MU_Y]), p[SIGMA_X], p[SIGMA_Y], p[RHO])

    def vonmises(self, t: int) -> VonMisesDist:
        return VonMisesDist(self.params[t, ETA], self.params[t, KAPPA])

    def covariances(self) -> np.ndarray:
        p = self.params
        sxy = p[:, RHO] * p[:, SIGMA_X] * p[:, SIGMA_Y]
        cov = np.empty((len(p), 2, 2))
        cov[:, 0, 0] = p[:, SIGMA_X] ** 2
        cov[:, 1, 1] = p[:, SIGMA_Y] ** 2
        cov[:, 0, 1] = cov[:, 1, 0] = sxy
        return cov

    def transformed(self, rotation: float, translation=(0.0, 0.0)) -> "TrajectoryDistribution":
        return TrajectoryDistribution(se2_transform_output(self.params, rotation, translation))


# ---------------------------------------------------------------------------
# Modified Bessel functions of the first kind


def _check_kappa(kappa) -> np.ndarray:
    k = np.asarray(kappa, dtype=float)
    if np.any(k < 0) or np.any(np.isnan(k)):
        raise ValueError("Bessel functions are only defined here for kappa >= 0")
    return k


def _series(k: np.ndarray, order: int) -> np.ndarray:
    """Power series sum_m (k/2)^(2m+order) / (m! (m+order)!)."""
    half = 0.5 * k
    q = half * half
    term = np.ones_like(k) if order == 0 else half.copy()
    total = term.copy()
    m = 0
    while True:
        m += 1
        term = term * q / (m * (m + order))
        total = total + term
        if np.all(term <= 1e-17 * total):
            return total


def _asymptotic_scaled(k: np.ndarray, order: int, n_terms: int = 24) -> np.ndarray:
    """exp(-k) * I_order(k) from the large-argument expansion."""
    mu = 4.0 * order * order
    term = np.ones_like(k)
    total = term.copy()
    for j in range(1, n_terms):
        term = -term * (mu - (2 * j - 1) ** 2) / (j * 8.0 * k)
        total = total + term
    return total / np.sqrt(2.0 * np.pi * k)


def _piecewise(k, small, large):
    k = _check_kappa(k)
    out = np.empty_like(k)
    lo = k <= _SERIES_LIMIT
    if np.any(lo):
        out[lo] = small(k[lo])
    if np.any(~lo):
        out[~lo] = large(k[~lo])
    return out if out.ndim else float(out)


def bessel_i0(kappa):
    """Modified Bessel function I0 for kappa >= 0."""
    with np.errstate(over="ignore"):
        return _piecewise(kappa, lambda k: _series(k, 0), lambda k: np.exp(k) * _asymptotic_scaled(k, 0))


def bessel_i1(kappa):
    with np.errstate(over="ignore"):
        return _piecewise(kappa, lambda k: _series(k, 1), lambda k: np.exp(k) * _asymptotic_scaled(k, 1))


def log_bessel_i0(kappa):
    """log I0, finite for arbitrarily large kappa."""
    return _piecewise(kappa, lambda k: np.log(_series(k, 0)), lambda k: k + np.log(_asymptotic_scaled(k, 0)))


def bessel_ratio(kappa):
    """I1(kappa) / I0(kappa), the derivative of log I0."""
    return _piecewise(
        kappa,
        lambda k: _series(k, 1) / _series(k, 0),
        lambda k: _asymptotic_scaled(k, 1) / _asymptotic_scaled(k, 0),
    )


# ---------------------------------------------------------------------------
# Negative log-likelihoods


def gauss2_nll(mu, sigma_x, sigma_y, rho, x):
    """Bivariate Gaussian NLL without the log(2 pi) constant.

    Arguments broadcast; ``mu`` and ``x`` carry a trailing axis of size 2.
    Returns ``(loss, grads)`` with ``grads`` keyed by ``mu``, ``sigma_x``,
    ``sigma_y``, ``rho`` and ``x``.
    """
    mu = np.asarray(mu, dtype=float)
    x = np.asarray(x, dtype=float)
    sx = np.asarray(sigma_x, dtype=float)
    sy = np.asarray(sigma_y, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(sx <= 0) or np.any(sy <= 0) or np.any(np.abs(rho) >= 1):
        raise ValueError("covariance is not positive definite")
    dx = (x[..., 0] - mu[..., 0]) / sx
    dy = (x[..., 1] - mu[..., 1]) / sy
    r = 1.0 - rho * rho
    q = (dx * dx - 2.0 * rho * dx * dy + dy * dy) / r
    loss = np.log(sx) + np.log(sy) + 0.5 * np.log(r) + 0.5 * q

    ex = (dx - rho * dy) / r
    ey = (dy - rho * dx) / r
    g_x = np.stack([ex / sx, ey / sy], axis=-1)
    grads = {
        "mu": -g_x,
        "x": g_x,
        "sigma_x": (1.0 - dx * ex) / sx,
        "sigma_y": (1.0 - dy * ey) / sy,
        "rho": (rho * q - rho - dx * dy) / r,
    }
    return loss, grads


def vonmises_nll(eta, kappa, theta):
    """Von Mises NLL ``-kappa cos(theta - eta) + log(2 pi I0(kappa))``."""
    eta = np.asarray(eta, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    theta = np.asarray(theta, dtype=float)
    d = theta - eta
    cos_d, sin_d = np.cos(d), np.sin(d)
    loss = -kappa * cos_d + LOG_2PI + log_bessel_i0(kappa)
    grads = {
        "eta": -kappa * sin_d,
        "theta": kappa * sin_d,
        "kappa": bessel_ratio(kappa) - cos_d,
    }
    return loss, grads


def gauss2_pdf(mu, sigma_x, sigma_y, rho, x):
    loss, _ = gauss2_nll(mu, sigma_x, sigma_y, rho, x)
    return np.exp(-loss - LOG_2PI)


def vonmises_pdf(eta, kappa, theta):
    loss, _ = vonmises_nll(eta, kappa, theta)
    return np.exp(-loss)


# ---------------------------------------------------------------------------
# Constraint map and rigid transformation of output states


def softplus(x):
    return np.logaddexp(0.0, x)


def constrain_params(raw):
    """Map unconstrained outputs (..., 7) to valid distribution parameters."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape[-1] != N_PARAMS:
        raise ValueError(f"expected trailing dimension {N_PARAMS}, got {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise ValueError("raw parameters must be finite")
    out = raw.copy()
    out[..., SIGMA_X] = softplus(raw[..., SIGMA_X]) + SIGMA_FLOOR
    out[..., SIGMA_Y] = softplus(raw[..., SIGMA_Y]) + SIGMA_FLOOR
    out[..., RHO] = np.tanh(raw[..., RHO])
    out[..., ETA] = wrap_angle(raw[..., ETA])
    out[..., KAPPA] = softplus(raw[..., KAPPA])
    return out


def constrain_jacobian(raw) -> np.ndarray:
    """Elementwise derivative of :func:`constrain_params` (the map is diagonal)."""
    raw = np.asarray(raw, dtype=float)
    jac = np.ones_like(raw)
    for idx in (SIGMA_X, SIGMA_Y, KAPPA):
        jac[..., idx] = 0.5 * (1.0 + np.tanh(0.5 * raw[..., idx]))
    jac[..., RHO] = 1.0 - np.tanh(raw[..., RHO]) ** 2
    return jac


def _rotated_cov(params, rotation):
    c = np.cos(rotation)
    s = np.sin(rotation)
    sx, sy, rho = params[..., SIGMA_X], params[..., SIGMA_Y], params[..., RHO]
    a, b, cxy = sx * sx, sy * sy, rho * sx * sy
    a2 = c * c * a - 2 * c * s * cxy + s * s * b
    b2 = s * s * a + 2 * c * s * cxy + c * c * b
    c2 = c * s * (a - b) + (c * c - s * s) * cxy
    return c, s, a2, b2, c2


def se2_transform_output(params, rotation, translation=(0.0, 0.0)):
    """Apply a rigid transform to constrained output states.

    ``params`` has shape (..., 7); ``rotation`` broadcasts against
    ``params[..., 0]`` and ``translation`` against ``params[..., :2]``.
    """
    params = np.asarray(params, dtype=float)
    rotation = np.asarray(rotation, dtype=float)
    translation = np.asarray(translation, dtype=float)
    c, s, a2, b2, c2 = _rotated_cov(params, rotation)
    out = np.array(params, copy=True)
    mx, my = params[..., MU_X], params[..., MU_Y]
    out[..., MU_X] = c * mx - s * my + translation[..., 0]
    out[..., MU_Y] = s * mx + c * my + translation[..., 1]
    sx2, sy2 = np.sqrt(a2), np.sqrt(b2)
    out[..., SIGMA_X] = sx2
    out[..., SIGMA_Y] = sy2
    out[..., RHO] = c2 / (sx2 * sy2)
    out[..., ETA] = wrap_angle(params[..., ETA] + rotation)
    return out


def se2_transform_output_vjp(params, rotation, grad_out):
    """Gradient of :func:`se2_transform_output` with respect to ``params``.

    The transform itself is treated as a constant.
    """
    params = np.asarray(params, dtype=float)
    rotation = np.asarray(rotation, dtype=float)
    c, s, a2, b2, c2 = _rotated_cov(params, rotation)
    sx2, sy2 = np.sqrt(a2), np.sqrt(b2)
    rho2 = c2 / (sx2 * sy2)
    g = grad_out
    g_a2 = g[..., SIGMA_X] / (2 * sx2) - g[..., RHO] * rho2 / (2 * a2)
    g_b2 = g[..., SIGMA_Y] / (2 * sy2) - g[..., RHO] * rho2 / (2 * b2)
    g_c2 = g[..., RHO] / (sx2 * sy2)
    g_a = c * c * g_a2 + s * s * g_b2 + c * s * g_c2
    g_b = s * s * g_a2 + c * c * g_b2 - c * s * g_c2
    g_c = -2 * c * s * g_a2 + 2 * c * s * g_b2 + (c * c - s * s) * g_c2
    sx, sy, rho = params[..., SIGMA_X], params[..., SIGMA_Y], params[..., RHO]

    grad = np.zeros(np.broadcast_shapes(params.shape, np.shape(g)))
    grad[..., MU_X] = c * g[..., MU_X] + s * g[..., MU_Y]
    grad[..., MU_Y] = -s * g[..., MU_X] + c * g[..., MU_Y]
    grad[..., SIGMA_X] = 2 * sx * g_a + rho * sy * g_c
    grad[..., SIGMA_Y] = 2 * sy * g_b + rho * sx * g_c
    grad[..., RHO] = sx * sy * g_c
    grad[..., ETA] = g[..., ETA]
    grad[..., KAPPA] = g[..., KAPPA]
    return grad
