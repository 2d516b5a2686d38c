"""
Reference solvers for the four benchmark PDEs.

Advection is transported exactly in Fourier space, Burgers uses an
integrating-factor RK4 pseudospectral scheme, Navier-Stokes (vorticity form)
uses Crank-Nicolson diffusion with a Heun step for advection and forcing, and
Darcy flow is relaxed to steady state by explicit pseudo-time stepping.
"""

import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from .errors import CflViolation, ConfigError, GridError, NoConvergence, NonFiniteState
from .field import Field, GridSpec, downsample
from .util import Stopwatch, num_workers

logger = logging.getLogger(__name__)


class PdeKind(str, Enum):
    ADVECTION = "advection"
    BURGERS = "burgers"
    DARCY = "darcy"
    NAVIER_STOKES = "navier_stokes"

    @property
    def dynamic(self) -> bool:
        return self != PdeKind.DARCY

    @property
    def spatial_dims(self) -> int:
        return 1 if self in (PdeKind.ADVECTION, PdeKind.BURGERS) else 2


DEFAULT_PARAMS: dict[PdeKind, dict[str, float]] = {
    PdeKind.ADVECTION: {"beta": 0.1},
    PdeKind.BURGERS: {"nu": 0.01},
    PdeKind.DARCY: {"beta": 1.0},
    PdeKind.NAVIER_STOKES: {"nu": 1e-3, "forcing_amplitude": 0.1},
}

DEFAULT_SUBSTEPS = {PdeKind.BURGERS: 100, PdeKind.NAVIER_STOKES: 50}


def default_grid(
    kind: PdeKind,
    n_points: int,
    n_time: int | None = None,
    t_final: float | None = None,
) -> GridSpec:
    if kind == PdeKind.DARCY:
        return GridSpec(2, n_points, periodic=False)
    if kind == PdeKind.NAVIER_STOKES:
        return GridSpec(2, n_points, n_time=n_time or 21, t_final=t_final or 1.0)
    return GridSpec(1, n_points, n_time=n_time or 41, t_final=t_final or 2.0)


@dataclass(frozen=True, eq=False)
class PdeInstance:
    kind: PdeKind
    params: dict[str, float]
    input: Field
    grid: GridSpec

    def __post_init__(self):
        kind = self.kind
        if self.grid.spatial_dims != kind.spatial_dims:
            raise GridError(f"{kind.value} needs a {kind.spatial_dims}D grid")
        if kind.dynamic and not self.grid.dynamic:
            raise GridError(f"{kind.value} needs n_time >= 2")
        if not kind.dynamic and self.grid.dynamic:
            raise GridError("darcy instances are stationary (n_time = 0)")
        if kind == PdeKind.DARCY and self.grid.periodic:
            raise GridError("darcy instances use a vertex grid (periodic=False)")
        if kind != PdeKind.DARCY and not self.grid.periodic:
            raise GridError(f"{kind.value} instances use a periodic grid")
        if self.input.grid != self.grid.stationary():
            raise GridError("input field does not live on the instance grid")
        if kind == PdeKind.DARCY and np.any(self.input.values <= 0):
            raise ConfigError("darcy coefficient must be strictly positive")
        if kind == PdeKind.ADVECTION and self.params["beta"] <= 0:
            raise ConfigError("advection speed must be positive")
        if kind == PdeKind.DARCY and self.params["beta"] < 0:
            raise ConfigError("darcy forcing must be non-negative")
        if kind in (PdeKind.BURGERS, PdeKind.NAVIER_STOKES) and self.params["nu"] <= 0:
            raise ConfigError("viscosity must be positive")

    def downsampled(self, factor: int) -> "PdeInstance":
        return PdeInstance(
            self.kind,
            self.params,
            downsample(self.input, factor),
            self.grid.coarsened(factor),
        )


def make_instance(
    kind: PdeKind, input: Field, grid: GridSpec, params: dict[str, float] | None = None
) -> PdeInstance:
    unknown = set(params or {}) - set(DEFAULT_PARAMS[kind])
    if unknown:
        raise ConfigError(f"unknown parameters for {kind.value}: {sorted(unknown)}")
    return PdeInstance(kind, {**DEFAULT_PARAMS[kind], **(params or {})}, input, grid)


@dataclass(frozen=True, eq=False)
class LabeledSample:
    instance: PdeInstance
    solution: Field
    sim_seconds: float = field(default=0.0)


def forcing_field(grid: GridSpec, amplitude: float) -> np.ndarray:
    x1, x2 = grid.mesh()
    phase = 2 * np.pi * (x1 + x2) / grid.domain_length
    return amplitude * (np.sin(phase) + np.cos(phase))


def dealias_cutoff(n: int) -> int:
    """Largest retained wavenumber under the 2/3 rule."""
    return (n - 1) // 3


def _check_finite(u: np.ndarray, kind: PdeKind, frame: int) -> None:
    if not np.all(np.isfinite(u)):
        raise NonFiniteState(f"{kind.value} solution blew up at frame {frame}")


def solve_advection(instance: PdeInstance, **_: Any) -> LabeledSample:
    sw = Stopwatch()
    with sw.measure():
        grid = instance.grid
        n = grid.n_points
        beta = instance.params["beta"]
        u0 = instance.input.values
        k = np.fft.rfftfreq(n, d=1.0 / n) / grid.domain_length
        phase = np.exp(-2j * np.pi * np.outer(grid.times, k) * beta)
        if n % 2 == 0:
            # a shifted Nyquist mode is not representable on the grid; keep it so norms hold
            phase[:, -1] = 1.0
        frames = np.fft.irfft(np.fft.rfft(u0)[None, :] * phase, n=n, axis=-1)
        frames[0] = u0
    return LabeledSample(instance, Field(frames, grid), sw.seconds)


def solve_burgers(instance: PdeInstance, n_substeps: int | None = None, **_: Any) -> LabeledSample:
    n_substeps = n_substeps or DEFAULT_SUBSTEPS[PdeKind.BURGERS]
    sw = Stopwatch()
    with sw.measure():
        grid = instance.grid
        n = grid.n_points
        u0 = instance.input.values
        nu = instance.params["nu"] / np.pi
        dt = grid.dt / n_substeps

        modes = np.fft.rfftfreq(n, d=1.0 / n)
        k = 2 * np.pi * modes / grid.domain_length
        mask = modes <= dealias_cutoff(n)
        E = np.exp(-nu * k**2 * dt / 2)
        E2 = E * E
        g = -0.5j * dt * k * mask

        def nonlinear(v):
            return g * np.fft.rfft(np.fft.irfft(v, n=n) ** 2)

        def check_cfl(u, frame, substep):
            cfl = np.max(np.abs(u)) * dt / grid.h
            if cfl > 1:
                raise CflViolation(
                    f"CFL number {cfl:.3g} > 1 before substep {substep} of frame {frame}"
                )

        u = u0
        v = np.fft.rfft(u0) * mask
        frames = [u0]
        for frame in range(1, grid.n_time):
            for substep in range(n_substeps):
                check_cfl(u, frame, substep)
                a = nonlinear(v)
                b = nonlinear(E * (v + a / 2))
                c = nonlinear(E * v + b / 2)
                d = nonlinear(E2 * v + E * c)
                v = E2 * v + (E2 * a + 2 * E * (b + c) + d) / 6
                u = np.fft.irfft(v, n=n)
            _check_finite(u, instance.kind, frame)
            check_cfl(u, frame, n_substeps)
            frames.append(u)
    return LabeledSample(instance, Field(np.stack(frames), grid), sw.seconds)


def solve_navier_stokes(
    instance: PdeInstance, n_substeps: int | None = None, **_: Any
) -> LabeledSample:
    n_substeps = n_substeps or DEFAULT_SUBSTEPS[PdeKind.NAVIER_STOKES]
    sw = Stopwatch()
    with sw.measure():
        grid = instance.grid
        n = grid.n_points
        L = grid.domain_length
        nu = instance.params["nu"]
        dt = grid.dt / n_substeps
        w0 = instance.input.values

        m1 = np.fft.fftfreq(n, d=1.0 / n)[:, None]
        m2 = np.fft.rfftfreq(n, d=1.0 / n)[None, :]
        cutoff = dealias_cutoff(n)
        mask = (np.abs(m1) <= cutoff) & (m2 <= cutoff)
        k1 = 2 * np.pi * m1 / L
        k2 = 2 * np.pi * m2 / L
        lap = k1**2 + k2**2
        inv_lap = np.divide(1.0, lap, out=np.zeros_like(lap), where=lap > 0)

        f = forcing_field(grid, instance.params["forcing_amplitude"])
        f_h = np.fft.rfft2(f) * mask
        shape = (n, n)

        def advection(w_h):
            psi_h = w_h * inv_lap
            u = np.fft.irfft2(1j * k2 * psi_h, s=shape)
            v = np.fft.irfft2(-1j * k1 * psi_h, s=shape)
            w_x1 = np.fft.irfft2(1j * k1 * w_h, s=shape)
            w_x2 = np.fft.irfft2(1j * k2 * w_h, s=shape)
            return np.fft.rfft2(u * w_x1 + v * w_x2) * mask

        implicit = 1 + 0.5 * dt * nu * lap
        explicit = 1 - 0.5 * dt * nu * lap

        w_h = np.fft.rfft2(w0) * mask
        frames = [w0]
        for frame in range(1, grid.n_time):
            for _ in range(n_substeps):
                F = advection(w_h)
                w_tilde = (-dt * F + dt * f_h + explicit * w_h) / implicit
                F_tilde = advection(w_tilde)
                w_h = (-0.5 * dt * (F + F_tilde) + dt * f_h + explicit * w_h) / implicit
            w = np.fft.irfft2(w_h, s=shape)
            _check_finite(w, instance.kind, frame)
            frames.append(w)
    return LabeledSample(instance, Field(np.stack(frames), grid), sw.seconds)


def face_coefficients(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Harmonic means of the coefficient on faces normal to x1 and to x2."""
    a1 = 2 * a[:-1, :] * a[1:, :] / (a[:-1, :] + a[1:, :])
    a2 = 2 * a[:, :-1] * a[:, 1:] / (a[:, :-1] + a[:, 1:])
    return a1, a2


def darcy_operator(a: np.ndarray, u: np.ndarray, h: float) -> np.ndarray:
    """div(a grad u) on interior nodes with the flux-form 5-point stencil."""
    a1, a2 = face_coefficients(a)
    flux1 = a1 * (u[1:, :] - u[:-1, :])
    flux2 = a2 * (u[:, 1:] - u[:, :-1])
    return (
        flux1[1:, 1:-1] - flux1[:-1, 1:-1] + flux2[1:-1, 1:] - flux2[1:-1, :-1]
    ) / h**2


def solve_darcy(
    instance: PdeInstance,
    tol: float = 1e-6,
    max_iter: int = 200_000,
    check_every: int = 50,
    **_: Any,
) -> LabeledSample:
    sw = Stopwatch()
    with sw.measure():
        grid = instance.grid
        a = instance.input.values
        beta = instance.params["beta"]
        h = grid.h
        u = np.zeros(grid.shape)
        if beta != 0:
            dtau = 0.9 * h**2 / (4 * a.max())
            b_norm = abs(beta) * (grid.n_points - 2)
            for it in range(max_iter + 1):
                r = darcy_operator(a, u, h) + beta
                if it % check_every == 0 or it == max_iter:
                    rel = np.linalg.norm(r) / b_norm
                    if not np.isfinite(rel):
                        raise NonFiniteState(f"darcy iteration diverged at step {it}")
                    if rel < tol:
                        logger.debug(f"darcy converged after {it} iterations (rel. residual {rel:.2e})")
                        break
                if it == max_iter:
                    raise NoConvergence(
                        f"darcy residual {rel:.2e} still above {tol:.0e} after {max_iter} iterations"
                    )
                u[1:-1, 1:-1] += dtau * r
    return LabeledSample(instance, Field(u, grid), sw.seconds)


def center_value(field: Field) -> float:
    """Value at the domain centre, averaging the nodes around it when it falls between them."""
    n = field.grid.n_points
    vals = field.values
    if field.grid.periodic:
        idx = [n // 2] if n % 2 == 0 else [n // 2, n // 2 + 1]
    else:
        idx = [n // 2] if n % 2 == 1 else [n // 2 - 1, n // 2]
    return float(np.mean(vals[np.ix_(idx, idx)]))


SOLVERS: dict[PdeKind, Callable[..., LabeledSample]] = {
    PdeKind.ADVECTION: solve_advection,
    PdeKind.BURGERS: solve_burgers,
    PdeKind.DARCY: solve_darcy,
    PdeKind.NAVIER_STOKES: solve_navier_stokes,
}


def solve(instance: PdeInstance, **options: Any) -> LabeledSample:
    return SOLVERS[instance.kind](instance, **options)


Solver = Callable[..., LabeledSample]


def solve_many(
    instances: Sequence[PdeInstance],
    solver: Solver = solve,
    workers: int | None = None,
    **options: Any,
) -> list[LabeledSample]:
    """Solves instances in parallel; results keep the input order."""
    workers = min(num_workers(workers), max(1, len(instances)))
    if workers == 1:
        return [solver(inst, **options) for inst in instances]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda inst: solver(inst, **options), instances))


def test_center_value_odd_vertex_grid():
    grid = GridSpec(2, 5, periodic=False)
    vals = np.zeros((5, 5))
    vals[2, 2] = 1.0
    assert center_value(Field(vals, grid)) == 1.0
