"""
Finite-difference PDE residuals and the physics-informed loss.

The batched tensor functions are differentiable with respect to the
prediction and are what training uses; ``fd_derivative``, ``pde_residual``
and ``pi_loss`` wrap them for single numpy fields.

Tensor layouts: dynamic predictions are [batch, time, *space], Darcy
predictions are [batch, x1, x2]; inputs ``a`` are [batch, *space].
"""

import logging
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
import torch
from torch import Tensor

from .errors import AxisTooShort, ConfigError, ShapeMismatch
from .field import Field, GridSpec
from .solvers import PdeInstance, PdeKind, forcing_field

logger = logging.getLogger(__name__)

Boundary = Literal["periodic", "one_sided"]


@dataclass
class PiWeights:
    lam: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        for name, value in (("lam", self.lam), ("mu", self.mu)):
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be finite and non-negative, got {value}")


def fd_derivative_tensor(
    values: Tensor, axis: int, spacing: float, order: int = 1, boundary: Boundary = "periodic"
) -> Tensor:
    n = values.shape[axis]
    if n < 3:
        raise AxisTooShort(f"axis {axis} has {n} points, need at least 3")
    if order not in (1, 2):
        raise ConfigError(f"derivative order must be 1 or 2, got {order}")

    if boundary == "periodic":
        fwd = torch.roll(values, -1, axis)
        bwd = torch.roll(values, 1, axis)
        if order == 1:
            return (fwd - bwd) / (2 * spacing)
        return (fwd - 2 * values + bwd) / spacing**2
    if boundary != "one_sided":
        raise ConfigError(f"unknown boundary treatment {boundary!r}")

    def pt(i: int) -> Tensor:
        return values.narrow(axis, i if i >= 0 else n + i, 1)

    ahead = values.narrow(axis, 2, n - 2)
    mid = values.narrow(axis, 1, n - 2)
    behind = values.narrow(axis, 0, n - 2)
    if order == 1:
        interior = (ahead - behind) / (2 * spacing)
        first = (-3 * pt(0) + 4 * pt(1) - pt(2)) / (2 * spacing)
        last = (3 * pt(-1) - 4 * pt(-2) + pt(-3)) / (2 * spacing)
    else:
        interior = (ahead - 2 * mid + behind) / spacing**2
        if n >= 4:
            first = (2 * pt(0) - 5 * pt(1) + 4 * pt(2) - pt(3)) / spacing**2
            last = (2 * pt(-1) - 5 * pt(-2) + 4 * pt(-3) - pt(-4)) / spacing**2
        else:
            first = last = (pt(0) - 2 * pt(1) + pt(2)) / spacing**2
    return torch.cat([first, interior, last], dim=axis)


def _ns_velocity(w: Tensor, grid: GridSpec) -> tuple[Tensor, Tensor]:
    n = grid.n_points
    m1 = torch.fft.fftfreq(n, d=1.0 / n, dtype=torch.float64)[:, None]
    m2 = torch.fft.rfftfreq(n, d=1.0 / n, dtype=torch.float64)[None, :]
    k1 = 2 * np.pi * m1 / grid.domain_length
    k2 = 2 * np.pi * m2 / grid.domain_length
    lap = k1**2 + k2**2
    inv_lap = torch.where(lap > 0, 1.0 / torch.where(lap > 0, lap, torch.ones_like(lap)), 0.0)
    psi_h = torch.fft.rfft2(w) * inv_lap
    u = torch.fft.irfft2(1j * k2 * psi_h, s=(n, n))
    v = torch.fft.irfft2(-1j * k1 * psi_h, s=(n, n))
    return u, v


def check_shapes(kind: PdeKind, grid: GridSpec, a: Tensor, pred: Tensor) -> None:
    if tuple(pred.shape[1:]) != grid.shape:
        raise ShapeMismatch(f"prediction shape {tuple(pred.shape[1:])} != grid shape {grid.shape}")
    if tuple(a.shape[1:]) != grid.spatial_shape or a.shape[0] != pred.shape[0]:
        raise ShapeMismatch(f"input shape {tuple(a.shape)} does not match prediction batch")


def residual_tensor(
    kind: PdeKind, grid: GridSpec, params: dict[str, float], a: Tensor, pred: Tensor
) -> Tensor:
    check_shapes(kind, grid, a, pred)
    h = grid.h
    if kind == PdeKind.DARCY:
        d = lambda f, ax, o=1: fd_derivative_tensor(f, ax, h, o, "one_sided")  # noqa: E731
        u = pred
        grad_dot = d(a, 1) * d(u, 1) + d(a, 2) * d(u, 2)
        lap = d(u, 1, 2) + d(u, 2, 2)
        r = -(grad_dot + a * lap) - params["beta"]
        return r[:, 1:-1, 1:-1]

    ut = fd_derivative_tensor(pred, 1, grid.dt, 1, "one_sided")
    dx = lambda f, ax, o=1: fd_derivative_tensor(f, ax, h, o, "periodic")  # noqa: E731
    if kind == PdeKind.ADVECTION:
        return ut + params["beta"] * dx(pred, 2)
    if kind == PdeKind.BURGERS:
        return ut + dx(0.5 * pred**2, 2) - params["nu"] / np.pi * dx(pred, 2, 2)
    if kind == PdeKind.NAVIER_STOKES:
        u, v = _ns_velocity(pred, grid)
        advect = u * dx(pred, -2) + v * dx(pred, -1)
        lap = dx(pred, -2, 2) + dx(pred, -1, 2)
        f = torch.as_tensor(forcing_field(grid, params["forcing_amplitude"]))
        return ut + advect - params["nu"] * lap - f
    raise ConfigError(f"no residual for {kind}")


def residual_weight(kind: PdeKind, grid: GridSpec) -> float:
    """Quadrature weight per residual entry; weights sum to the measure of the evaluation region."""
    if kind.dynamic:
        return grid.dt * grid.cell_volume
    return grid.measure / (grid.n_points - 2) ** 2


def _sum_except_batch(t: Tensor) -> Tensor:
    return t.reshape(t.shape[0], -1).sum(dim=1)


def pi_loss_tensor(
    kind: PdeKind,
    grid: GridSpec,
    params: dict[str, float],
    a: Tensor,
    pred: Tensor,
    weights: PiWeights,
) -> Tensor:
    """Per-sample physics-informed loss, shape [batch]."""
    r = residual_tensor(kind, grid, params, a, pred)
    loss = _sum_except_batch(r**2) * residual_weight(kind, grid)
    if kind.dynamic:
        # periodic problems carry no boundary penalty
        if weights.mu:
            ic = _sum_except_batch((pred[:, 0] - a) ** 2) * grid.cell_volume
            loss = loss + weights.mu * ic
    elif weights.lam:
        total = _sum_except_batch(pred**2)
        interior = _sum_except_batch(pred[:, 1:-1, 1:-1] ** 2)
        loss = loss + weights.lam * (total - interior) * grid.h
    return loss


def residual_grid(kind: PdeKind, grid: GridSpec) -> GridSpec:
    """Grid the residual lives on: the full grid, or the interior nodes for Darcy."""
    if kind.dynamic:
        return grid
    return replace(grid, n_points=grid.n_points - 2, domain_length=(grid.n_points - 3) * grid.h)


@dataclass
class ResidualField:
    values: Field
    weight: float
    l2sq: float


def fd_derivative(
    field: Field, axis: int, order: int = 1, boundary: Boundary = "periodic"
) -> Field:
    """Derivative along an axis of field.values; axis 0 is time on dynamic grids."""
    grid = field.grid
    spacing = grid.dt if grid.dynamic and axis == 0 else grid.h
    values = torch.as_tensor(field.values)
    out = fd_derivative_tensor(values, axis, spacing, order, boundary)
    return Field(out.numpy(), grid)


def _as_batch(instance: PdeInstance, prediction: Field) -> tuple[Tensor, Tensor]:
    if prediction.grid != instance.grid:
        raise ShapeMismatch("prediction grid differs from the instance grid")
    a = torch.as_tensor(instance.input.values)[None]
    return a, torch.as_tensor(prediction.values)[None]


def pde_residual(instance: PdeInstance, prediction: Field) -> ResidualField:
    a, pred = _as_batch(instance, prediction)
    r = residual_tensor(instance.kind, instance.grid, instance.params, a, pred)[0].numpy()
    weight = residual_weight(instance.kind, instance.grid)
    values = Field(r, residual_grid(instance.kind, instance.grid))
    return ResidualField(values, weight, float(np.sum(r**2) * weight))


def pi_loss(instance: PdeInstance, prediction: Field, weights: PiWeights | None = None) -> float:
    a, pred = _as_batch(instance, prediction)
    loss = pi_loss_tensor(
        instance.kind, instance.grid, instance.params, a, pred, weights or PiWeights()
    )
    return float(loss[0])


def test_fd_second_derivative_quadratic():
    x = torch.linspace(0, 1, 7, dtype=torch.float64)
    d2 = fd_derivative_tensor(x**2, 0, float(x[1] - x[0]), 2, "one_sided")
    assert torch.allclose(d2, torch.full_like(x, 2.0))
