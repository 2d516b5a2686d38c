"""
Uniform grids and the fields that live on them.

Periodic grids place points at x_j = j*h with h = L/n. Vertex grids
(``periodic=False``, used for Dirichlet problems) include both domain ends,
so h = L/(n-1).
"""

import logging
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from .errors import GridError, NonDivisibleFactor, NonFiniteState

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridSpec:
    spatial_dims: int
    n_points: int
    domain_length: float = 1.0
    n_time: int = 0
    t_final: float | None = None
    periodic: bool = True

    def __post_init__(self):
        if self.spatial_dims not in (1, 2):
            raise GridError(f"spatial_dims must be 1 or 2, got {self.spatial_dims}")
        if self.n_points < 4:
            raise GridError(f"need at least 4 points per axis, got {self.n_points}")
        if self.domain_length <= 0:
            raise GridError(f"domain_length must be positive, got {self.domain_length}")
        if self.n_time:
            if self.n_time < 2:
                raise GridError(f"dynamic grids need n_time >= 2, got {self.n_time}")
            if self.t_final is None or self.t_final <= 0:
                raise GridError(f"dynamic grids need t_final > 0, got {self.t_final}")

    @property
    def dynamic(self) -> bool:
        return self.n_time > 0

    @property
    def h(self) -> float:
        if self.periodic:
            return self.domain_length / self.n_points
        return self.domain_length / (self.n_points - 1)

    @property
    def dt(self) -> float:
        if not self.dynamic:
            raise GridError("stationary grid has no time step")
        assert self.t_final is not None
        return self.t_final / (self.n_time - 1)

    @property
    def times(self) -> np.ndarray:
        assert self.t_final is not None
        return np.linspace(0.0, self.t_final, self.n_time)

    @property
    def coords(self) -> np.ndarray:
        return np.arange(self.n_points) * self.h

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return (self.n_points,) * self.spatial_dims

    @property
    def shape(self) -> tuple[int, ...]:
        if self.dynamic:
            return (self.n_time,) + self.spatial_shape
        return self.spatial_shape

    @property
    def cell_volume(self) -> float:
        return self.h**self.spatial_dims

    @property
    def measure(self) -> float:
        return self.domain_length**self.spatial_dims

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays with spatial_shape, axis order (x1, x2)."""
        return tuple(np.meshgrid(*([self.coords] * self.spatial_dims), indexing="ij"))

    def stationary(self) -> "GridSpec":
        return replace(self, n_time=0, t_final=None)

    def coarsened(self, factor: int) -> "GridSpec":
        if factor < 1:
            raise NonDivisibleFactor(f"factor must be a positive integer, got {factor}")
        if self.periodic:
            if self.n_points % factor:
                raise NonDivisibleFactor(f"{factor} does not divide {self.n_points}")
            n = self.n_points // factor
        else:
            if (self.n_points - 1) % factor:
                raise NonDivisibleFactor(f"{factor} does not divide {self.n_points - 1} cells")
            n = (self.n_points - 1) // factor + 1
        return replace(self, n_points=n)

    def factor_to(self, n_points: int) -> int:
        """Downsampling factor that takes this grid to n_points per axis."""
        cells, target = (
            (self.n_points, n_points) if self.periodic else (self.n_points - 1, n_points - 1)
        )
        if target < 1 or cells % target:
            raise NonDivisibleFactor(
                f"cannot reach {n_points} points from {self.n_points} by subsampling"
            )
        return cells // target

    def json_dict(self) -> dict[str, Any]:
        return {
            "spatial_dims": self.spatial_dims,
            "n_points": self.n_points,
            "domain_length": self.domain_length,
            "n_time": self.n_time,
            "t_final": self.t_final,
            "periodic": self.periodic,
        }

    @classmethod
    def from_json_dict(cls, data: dict[str, Any]) -> "GridSpec":
        return cls(**data)


@dataclass(frozen=True, eq=False)
class Field:
    values: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.shape != self.grid.shape:
            raise GridError(f"values of shape {values.shape} do not fit grid shape {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteState("field contains non-finite values")

    def l2sq(self) -> float:
        """Squared discrete L2 norm, weighted by the grid measure."""
        weight = self.grid.cell_volume
        if self.grid.dynamic:
            weight *= self.grid.dt
        return float(np.sum(self.values**2) * weight)

    def frame(self, t: int) -> "Field":
        return Field(self.values[t], self.grid.stationary())


def downsample(field: Field, factor: int) -> Field:
    """Keeps every factor-th point along each spatial axis, leaving time frames alone."""
    grid = field.grid.coarsened(factor)
    if factor == 1:
        return field
    index: tuple[Any, ...] = (slice(None),) if field.grid.dynamic else ()
    index += (slice(None, None, factor),) * field.grid.spatial_dims
    return Field(np.ascontiguousarray(field.values[index]), grid)


def test_downsample_composition():
    grid = GridSpec(1, 256)
    f = Field(np.sin(2 * np.pi * grid.coords), grid)
    a = downsample(downsample(f, 2), 2)
    b = downsample(f, 4)
    assert a.grid == b.grid
    assert np.array_equal(a.values, b.values)
