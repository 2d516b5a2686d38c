"""Random input functions: sinusoidal initial conditions and Gaussian random fields."""

import logging

import numpy as np

from .errors import ConfigError, GridError
from .field import Field, GridSpec

logger = logging.getLogger(__name__)

P_ABS = 0.1
P_WINDOW = 0.1


def _require_dims(grid: GridSpec, dims: int) -> None:
    if grid.spatial_dims != dims:
        raise GridError(f"expected a {dims}D grid, got {grid.spatial_dims}D")


def window(grid: GridSpec) -> np.ndarray:
    return np.sin(np.pi * grid.coords / grid.domain_length) ** 2


def sinusoid(
    grid: GridSpec,
    amplitudes: np.ndarray,
    modes: np.ndarray,
    phases: np.ndarray,
) -> Field:
    """Sum of A_i sin(2 pi n_i x + phi_i) on a 1D grid."""
    _require_dims(grid, 1)
    x = grid.coords
    u = np.zeros(grid.n_points)
    for amp, mode, phase in zip(amplitudes, modes, phases):
        u += amp * np.sin(2 * np.pi * mode * x + phase)
    return Field(u, grid.stationary())


def sample_sinusoidal_ic(
    rng_seed: int,
    grid: GridSpec,
    n_waves: tuple[int, int] = (2, 2),
    mode_range: tuple[int, int] = (1, 8),
) -> Field:
    _require_dims(grid, 1)
    lo, hi = mode_range
    if lo < 1 or hi < lo:
        raise ConfigError(f"empty mode range {mode_range}")
    if n_waves[0] < 1 or n_waves[1] < n_waves[0]:
        raise ConfigError(f"empty wave-count range {n_waves}")
    if grid.n_points < 2 * hi:
        raise GridError(f"{grid.n_points} points cannot resolve mode {hi}")

    rng = np.random.default_rng(rng_seed)
    count = int(rng.integers(n_waves[0], n_waves[1] + 1))
    modes = rng.integers(lo, hi + 1, size=count)
    amplitudes = rng.uniform(0.0, 1.0, size=count)
    phases = rng.uniform(0.0, 2 * np.pi, size=count)
    # both coins are always drawn so the stream does not depend on the outcome
    take_abs, take_window = rng.random(2) < (P_ABS, P_WINDOW)

    u = sinusoid(grid, amplitudes, modes, phases).values
    if take_abs:
        u = np.abs(u)
    if take_window:
        u = u * window(grid)
    return Field(u, grid.stationary())


def wavenumbers_2d(n: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.fft.fftfreq(n, d=1.0 / n)
    return np.meshgrid(k, k, indexing="ij")


def _synthesize(rng_seed: int, n: int, sqrt_eig: np.ndarray) -> np.ndarray:
    """
    Colours white noise in Fourier space. The noise is real, so its transform
    is Hermitian and the result is real up to rounding; the returned array is
    complex so callers can inspect the residue.
    """
    rng = np.random.default_rng(rng_seed)
    xi = rng.standard_normal((n, n))
    return n * np.fft.ifft2(sqrt_eig * np.fft.fft2(xi))


def ns_sqrt_eigenvalues(n: int) -> np.ndarray:
    k1, k2 = wavenumbers_2d(n)
    sqrt_eig = 7.0**0.75 * (4 * np.pi**2 * (k1**2 + k2**2) + 49.0) ** -1.25
    sqrt_eig[0, 0] = 0.0
    return sqrt_eig


def darcy_sqrt_eigenvalues(n: int) -> np.ndarray:
    k1, k2 = wavenumbers_2d(n)
    sqrt_eig = (4 * np.pi**2 * (k1**2 + k2**2) + 9.0) ** -1.0
    sqrt_eig[0, 0] = 0.0
    return sqrt_eig


def sample_ns_vorticity(rng_seed: int, grid: GridSpec) -> Field:
    _require_dims(grid, 2)
    if not grid.periodic:
        raise GridError("vorticity fields need a periodic grid")
    w = _synthesize(rng_seed, grid.n_points, ns_sqrt_eigenvalues(grid.n_points))
    return Field(w.real, grid.stationary())


def sample_darcy_coefficient(rng_seed: int, grid: GridSpec) -> Field:
    _require_dims(grid, 2)
    g = _synthesize(rng_seed, grid.n_points, darcy_sqrt_eigenvalues(grid.n_points)).real
    return Field(np.where(g >= 0, 12.0, 3.0), grid.stationary())


def test_window_vanishes_at_ends():
    grid = GridSpec(1, 64)
    w = window(grid)
    assert w[0] == 0.0
    assert np.isclose(w[32], 1.0)
