import numpy as np
import pytest

from picore.errors import ConfigError, GridError
from picore.field import GridSpec
from picore.samplers import (
    _synthesize,
    ns_sqrt_eigenvalues,
    sample_darcy_coefficient,
    sample_ns_vorticity,
    sample_sinusoidal_ic,
    sinusoid,
)


def test_single_mode_identity():
    grid = GridSpec(1, 64)
    f = sinusoid(grid, np.array([1.0]), np.array([1]), np.array([0.0]))
    assert np.array_equal(f.values, np.sin(2 * np.pi * grid.coords))


def test_sinusoidal_ic_deterministic():
    grid = GridSpec(1, 128)
    a = sample_sinusoidal_ic(7, grid)
    b = sample_sinusoidal_ic(7, grid)
    c = sample_sinusoidal_ic(8, grid)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_sinusoidal_ic_bounded():
    grid = GridSpec(1, 128)
    for seed in range(50):
        u = sample_sinusoidal_ic(seed, grid, n_waves=(1, 3))
        # amplitudes are drawn from [0, 1]; the window only shrinks values
        assert np.max(np.abs(u.values)) <= 3.0


def test_sinusoidal_ic_rejects_bad_ranges():
    with pytest.raises(ConfigError):
        sample_sinusoidal_ic(0, GridSpec(1, 64), mode_range=(5, 2))
    with pytest.raises(GridError):
        sample_sinusoidal_ic(0, GridSpec(1, 8))
    with pytest.raises(GridError):
        sample_sinusoidal_ic(0, GridSpec(2, 64))


def test_darcy_coefficient_values():
    grid = GridSpec(2, 32, periodic=False)
    a = sample_darcy_coefficient(3, grid)
    assert set(np.unique(a.values)) <= {3.0, 12.0}
    assert np.array_equal(a.values, sample_darcy_coefficient(3, grid).values)


def test_darcy_coefficient_balance():
    grid = GridSpec(2, 64, periodic=False)
    fractions = [np.mean(sample_darcy_coefficient(s, grid).values == 12.0) for s in range(100)]
    assert abs(np.mean(fractions) - 0.5) <= 0.05


def test_ns_vorticity_zero_mean_and_real():
    grid = GridSpec(2, 32)
    w = sample_ns_vorticity(0, grid)
    assert abs(w.values.mean()) < 1e-12
    raw = _synthesize(0, 32, ns_sqrt_eigenvalues(32))
    assert np.max(np.abs(raw.imag)) < 1e-12


def test_ns_vorticity_variance():
    n = 32
    grid = GridSpec(2, n)
    expected = np.sum(ns_sqrt_eigenvalues(n) ** 2)
    samples = np.stack([sample_ns_vorticity(s, grid).values for s in range(200)])
    # the field is stationary, so pooling all grid points estimates the pointwise variance
    assert abs(np.mean(samples**2) / expected - 1) < 0.15


def test_ns_vorticity_needs_periodic_grid():
    with pytest.raises(GridError):
        sample_ns_vorticity(0, GridSpec(2, 32, periodic=False))
