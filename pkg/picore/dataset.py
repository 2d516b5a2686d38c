"""
Datasets of PDE instances with optional (lazily simulated) labels.

Inputs and solutions are kept at the generation resolution; ``factor``
subsamples them to the working resolution on access. On disk a dataset is a
directory with ``manifest.json``, ``inputs/`` and ``solutions/`` (one PICF
record per sample, solutions only for labelled samples).
"""

import json
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .__about__ import __version__
from .errors import MissingLabels, RecordFormatError
from .field import Field, GridSpec, downsample
from .records import read_record, write_record
from .samplers import sample_darcy_coefficient, sample_ns_vorticity, sample_sinusoidal_ic
from .solvers import PdeInstance, PdeKind, Solver, make_instance, solve, solve_many

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1


def sample_seeds(base_seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(base_seed).generate_state(n)]


def sample_input(kind: PdeKind, seed: int, grid: GridSpec) -> Field:
    if kind == PdeKind.DARCY:
        return sample_darcy_coefficient(seed, grid)
    if kind == PdeKind.NAVIER_STOKES:
        return sample_ns_vorticity(seed, grid)
    return sample_sinusoidal_ic(seed, grid)


@dataclass
class Dataset:
    kind: PdeKind
    grid: GridSpec
    params: dict[str, float]
    seeds: list[int]
    inputs: list[Field]
    factor: int = 1
    solutions: dict[int, Field] = field(default_factory=dict)
    sim_seconds: dict[int, float] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def working_grid(self) -> GridSpec:
        return self.grid.coarsened(self.factor)

    @property
    def labeled(self) -> list[int]:
        return sorted(self.solutions)

    def at_resolution(self, n_points: int) -> "Dataset":
        """Same samples and labels, accessed at another resolution."""
        factor = self.grid.factor_to(n_points)
        return Dataset(
            self.kind, self.grid, self.params, self.seeds, self.inputs, factor,
            self.solutions, self.sim_seconds, self.meta,
        )

    def unlabeled_copy(self) -> "Dataset":
        return Dataset(
            self.kind, self.grid, self.params, self.seeds, self.inputs, self.factor,
            meta=dict(self.meta),
        )

    def instance(self, i: int) -> PdeInstance:
        """Instance at the generation resolution, which is what gets simulated."""
        return make_instance(self.kind, self.inputs[i], self.grid, self.params)

    def input_values(self, i: int) -> np.ndarray:
        return downsample(self.inputs[i], self.factor).values

    def solution_values(self, i: int) -> np.ndarray:
        if i not in self.solutions:
            raise MissingLabels(f"sample {i} has not been labelled")
        return downsample(self.solutions[i], self.factor).values

    def input_matrix(self, indices: Iterable[int] | None = None) -> np.ndarray:
        """Flattened working-resolution inputs, one row per sample."""
        idx = range(len(self)) if indices is None else indices
        return np.stack([self.input_values(i).ravel() for i in idx])

    def label(
        self,
        indices: Sequence[int],
        solver: Solver = solve,
        workers: int | None = None,
        **options: Any,
    ) -> float:
        """
        Simulates labels for the given indices that do not have one yet.
        Returns the simulation seconds spent in this call.
        """
        missing = sorted(set(int(i) for i in indices) - set(self.solutions))
        if not missing:
            return 0.0
        samples = solve_many([self.instance(i) for i in missing], solver, workers, **options)
        spent = 0.0
        for i, sample in zip(missing, samples):
            self.solutions[i] = sample.solution
            self.sim_seconds[i] = sample.sim_seconds
            spent += sample.sim_seconds
        logger.info(f"Simulated {len(missing)} labels in {spent:.2f}s")
        return spent

    def manifest(self) -> dict[str, Any]:
        return {
            "version": MANIFEST_VERSION,
            "tool_version": __version__,
            "kind": self.kind.value,
            "grid": self.working_grid.json_dict(),
            "generation_grid": self.grid.json_dict(),
            "factor": self.factor,
            "params": self.params,
            "seeds": self.seeds,
            "labeled": self.labeled,
            "sim_seconds": {str(i): s for i, s in sorted(self.sim_seconds.items())},
            **self.meta,
        }

    def save(self, path: Path | str) -> Path:
        path = Path(path)
        (path / "inputs").mkdir(parents=True, exist_ok=True)
        (path / "solutions").mkdir(exist_ok=True)
        for i, f in enumerate(self.inputs):
            write_record(path / "inputs" / f"{i:06d}.picf", f.values)
        for i, f in self.solutions.items():
            write_record(path / "solutions" / f"{i:06d}.picf", f.values)
        with open(path / "manifest.json", "w") as fh:
            json.dump(self.manifest(), fh, indent=2)
        logger.info(f"Wrote dataset with {len(self)} samples ({len(self.solutions)} labelled) to {path}")
        return path

    @classmethod
    def load(cls, path: Path | str) -> "Dataset":
        path = Path(path)
        with open(path / "manifest.json") as fh:
            manifest = json.load(fh)
        if manifest.get("version") != MANIFEST_VERSION:
            raise RecordFormatError(
                f"{path}: manifest version {manifest.get('version')} != {MANIFEST_VERSION}"
            )
        grid = GridSpec.from_json_dict(manifest["generation_grid"])
        kind = PdeKind(manifest["kind"])
        inputs = [
            Field(read_record(path / "inputs" / f"{i:06d}.picf"), grid.stationary())
            for i in range(len(manifest["seeds"]))
        ]
        solutions = {
            i: Field(read_record(path / "solutions" / f"{i:06d}.picf"), grid)
            for i in manifest["labeled"]
        }
        sim_seconds = {int(i): s for i, s in manifest["sim_seconds"].items()}
        known = {
            "version", "tool_version", "kind", "grid", "generation_grid", "factor",
            "params", "seeds", "labeled", "sim_seconds",
        }
        meta = {k: v for k, v in manifest.items() if k not in known}
        logger.info(f"Loaded {len(inputs)} samples from {path}")
        return cls(
            kind, grid, manifest["params"], manifest["seeds"], inputs,
            manifest["factor"], solutions, sim_seconds, meta,
        )


def generate_dataset(
    kind: PdeKind,
    n: int,
    grid: GridSpec,
    base_seed: int,
    factor: int = 1,
    params: dict[str, float] | None = None,
    meta: dict[str, Any] | None = None,
) -> Dataset:
    """Draws n unlabelled inputs on the generation grid."""
    grid.coarsened(factor)
    seeds = sample_seeds(base_seed, n)
    inputs = [sample_input(kind, s, grid.stationary()) for s in seeds]
    instance_params = make_instance(kind, inputs[0], grid, params).params
    logger.info(f"Generated {n} {kind.value} inputs at {grid.n_points} points")
    return Dataset(kind, grid, instance_params, seeds, inputs, factor, meta=dict(meta or {}))
