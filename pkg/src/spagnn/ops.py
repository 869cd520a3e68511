"""Differentiable wrappers around the output-state math in :mod:`spagnn.distributions`.

Each function takes and returns :class:`~spagnn.nn.Tensor` objects whose last
axis uses the seven-value output layout. Backward passes reuse the analytic
gradients of the numpy implementations.
"""

from __future__ import annotations

import numpy as np

from .distributions import (
    ETA,
    KAPPA,
    MU_X,
    MU_Y,
    N_PARAMS,
    RHO,
    SIGMA_X,
    SIGMA_Y,
    constrain_jacobian,
    constrain_params,
    gauss2_nll,
    se2_transform_output,
    se2_transform_output_vjp,
    vonmises_nll,
)
from .nn.tensor import Tensor, as_tensor, custom_op

__all__ = ["constrain", "transform_output", "state_features", "N_STATE_FEATURES", "trajectory_nll"]

N_STATE_FEATURES = 8
# Metres are divided by this before entering a network.
POSITION_SCALE = 10.0


def constrain(raw: Tensor) -> Tensor:
    raw = as_tensor(raw)
    jac = constrain_jacobian(raw.data)
    return custom_op([raw], constrain_params(raw.data), lambda g: (g * jac,))


def transform_output(params: Tensor, rotation, translation) -> Tensor:
    """Rigidly transform constrained output states; the transform is a constant."""
    params = as_tensor(params)
    rotation = np.asarray(rotation, dtype=float)
    out = se2_transform_output(params.data, rotation, translation)
    return custom_op([params], out, lambda g: (se2_transform_output_vjp(params.data, rotation, g),))


def state_features(params: Tensor) -> Tensor:
    """Network-friendly encoding of constrained states, 8 values per timestep.

    ``(mu_x/10, mu_y/10, log sigma_x, log sigma_y, rho, cos eta, sin eta, log(1+kappa))``
    """
    params = as_tensor(params)
    p = params.data
    ce, se = np.cos(p[..., ETA]), np.sin(p[..., ETA])
    out = np.stack(
        [
            p[..., MU_X] / POSITION_SCALE,
            p[..., MU_Y] / POSITION_SCALE,
            np.log(p[..., SIGMA_X]),
            np.log(p[..., SIGMA_Y]),
            p[..., RHO],
            ce,
            se,
            np.log1p(p[..., KAPPA]),
        ],
        axis=-1,
    )

    def backward(g):
        grad = np.zeros_like(p)
        grad[..., MU_X] = g[..., 0] / POSITION_SCALE
        grad[..., MU_Y] = g[..., 1] / POSITION_SCALE
        grad[..., SIGMA_X] = g[..., 2] / p[..., SIGMA_X]
        grad[..., SIGMA_Y] = g[..., 3] / p[..., SIGMA_Y]
        grad[..., RHO] = g[..., 4]
        grad[..., ETA] = -se * g[..., 5] + ce * g[..., 6]
        grad[..., KAPPA] = g[..., 7] / (1.0 + p[..., KAPPA])
        return (grad,)

    return custom_op([params], out, backward)


def trajectory_nll(params: Tensor, targets) -> Tensor:
    """Summed Gaussian plus Von Mises NLL of ``targets`` (..., 3) = (x, y, theta).

    ``params`` holds constrained states of matching leading shape.
    """
    params = as_tensor(params)
    targets = np.asarray(targets, dtype=float)
    p = params.data
    if p.shape[-1] != N_PARAMS or p.shape[:-1] != targets.shape[:-1] or targets.shape[-1] != 3:
        raise ValueError(f"incompatible states {p.shape} and targets {targets.shape}")
    lg, gg = gauss2_nll(p[..., :2], p[..., SIGMA_X], p[..., SIGMA_Y], p[..., RHO], targets[..., :2])
    lv, gv = vonmises_nll(p[..., ETA], p[..., KAPPA], targets[..., 2])

    def backward(g):
        grad = np.empty_like(p)
        grad[..., :2] = gg["mu"]
        grad[..., SIGMA_X] = gg["sigma_x"]
        grad[..., SIGMA_Y] = gg["sigma_y"]
        grad[..., RHO] = gg["rho"]
        grad[..., ETA] = gv["eta"]
        grad[..., KAPPA] = gv["kappa"]
        return (grad * g,)

    return custom_op([params], np.asarray(np.sum(lg) + np.sum(lv)), backward)
