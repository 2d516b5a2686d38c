import json
import logging
from copy import deepcopy
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import numpy as np
import toml

from .__about__ import __version__
from .errors import BudgetOutOfRange, ConfigError
from .residuals import PiWeights
from .solvers import DEFAULT_PARAMS, PdeKind
from .util import config_hash

logger = logging.getLogger(__name__)

rootdir = Path(__file__).resolve().parent.parent
homedir = Path.home()
configdir = homedir / ".config" / "picore"

MODES = ("picore", "supervised", "unsupervised", "full")
DEFAULT_BETAS = (0.2, 0.3, 0.4, 0.6, 0.8, 1.0)

_testing = False
_config: dict | None = None


def set_global_testing():
    logger.info("Setting global testing flag")
    global _testing
    _testing = True


def load_config(testing=False) -> dict:
    global _config

    testing = testing or _testing
    if _config is not None:
        return _config

    filepath = None
    for path in (configdir, rootdir):
        path = path / "config.toml"
        if path.exists():
            filepath = path

    if not filepath or testing:
        if not filepath:
            logger.warning("No config found, falling back to example config")
        if testing:
            logger.info("Using example config for testing")
        filepath = rootdir / "config.example.toml"

    logger.info(f"Using config file at {filepath}")
    if filepath.exists():
        with open(filepath) as f:
            config = toml.load(f)
    else:
        logger.warning(f"Config file {filepath} missing, using built-in defaults")
        config = {}
    _config = config
    return config


def reset_config():
    """Drops the cached global config (used by tests)."""
    global _config, _testing
    _config = None
    _testing = False


@dataclass
class DatasetConfig:
    kind: str = "advection"
    n_train: int = 64
    n_test: int | None = None
    resolution: int = 64
    gen_resolution: int | None = None
    seed: int = 0
    test_seed: int | None = None
    params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        try:
            PdeKind(self.kind)
        except ValueError:
            raise ConfigError(
                f"Unknown PDE kind {self.kind!r}, expected one of {[k.value for k in PdeKind]}"
            ) from None
        if self.n_train < 1:
            raise ConfigError(f"n_train must be positive, got {self.n_train}")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.pde_kind])
        if unknown:
            raise ConfigError(f"Unknown parameters for {self.kind}: {sorted(unknown)}")

    @property
    def pde_kind(self) -> PdeKind:
        return PdeKind(self.kind)

    @property
    def test_size(self) -> int:
        return self.n_test if self.n_test is not None else max(1, self.n_train // 4)

    @property
    def test_base_seed(self) -> int:
        return self.test_seed if self.test_seed is not None else self.seed + 1

    @property
    def generation_resolution(self) -> int:
        if self.gen_resolution is not None:
            return self.gen_resolution
        # Darcy is generated directly at the working resolution
        return self.resolution if self.pde_kind == PdeKind.DARCY else 256

    @property
    def pde_params(self) -> dict[str, float]:
        return {**DEFAULT_PARAMS[self.pde_kind], **self.params}


@dataclass
class SolverConfig:
    n_time: int | None = None
    t_final: float | None = None
    n_substeps: int | None = None
    tol: float = 1e-6
    max_iter: int = 200_000
    # Synthetic seconds per simulated label, for hardware-independent accounting
    sim_cost_seconds: float | None = None

    def options(self) -> dict[str, Any]:
        opts: dict[str, Any] = {"tol": self.tol, "max_iter": self.max_iter}
        if self.n_substeps is not None:
            opts["n_substeps"] = self.n_substeps
        return opts


@dataclass
class FnoSettings:
    modes: int | None = None
    width: int = 32
    n_layers: int = 4


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    fno: FnoSettings = field(default_factory=FnoSettings)
    pi: PiWeights = field(default_factory=PiWeights)
    algorithm: str = "el2n"
    mode: str = "picore"
    beta: float = 0.2
    warmup_epochs: int = 25
    epochs: int = 500
    lr: float = 1e-3
    lr_min: float = 1e-5
    batch_size: int = 16
    seeds: list[int] = field(default_factory=lambda: [0])
    scoring_loss: str | None = None
    craig_subsample: int | None = None
    gradmatch_ridge: float = 1e-4
    adacore_eps: float = 1e-6
    hutchinson_probes: int = 10
    kmeans_iters: int = 100
    super_res: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"Unknown mode {self.mode!r}, expected one of {MODES}")
        if not 0 < self.beta <= 1:
            raise BudgetOutOfRange(f"beta must lie in (0, 1], got {self.beta}")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.warmup_epochs and self.warmup_epochs >= self.epochs:
            raise ConfigError(
                f"warmup_epochs ({self.warmup_epochs}) must be smaller than epochs ({self.epochs})"
            )
        if self.scoring_loss not in (None, "data", "physics"):
            raise ConfigError(f"Unknown scoring loss {self.scoring_loss!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")

    @property
    def scoring(self) -> str:
        if self.scoring_loss is not None:
            return self.scoring_loss
        return "data" if self.mode == "supervised" else "physics"

    def run_seeds(self, seed: int) -> tuple[int, int, int]:
        """(init, shuffle, selection) seeds derived from one run seed."""
        init, shuffle, selection = np.random.SeedSequence(seed).generate_state(3)
        return int(init), int(shuffle), int(selection)

    def json_dict(self) -> dict[str, Any]:
        return asdict(self)

    def json_str(self) -> str:
        return json.dumps(self.json_dict(), indent=2)

    @property
    def hash(self) -> str:
        return config_hash(self.json_dict())

    def replace(self, **overrides) -> "ExperimentConfig":
        data = self.json_dict()
        for key, value in overrides.items():
            _set_path(data, key.split("."), value)
        return experiment_from_dict(data)


def _set_path(data: dict, path: list[str], value: Any) -> None:
    for key in path[:-1]:
        data = data.setdefault(key, {})
    data[path[-1]] = value


def _build(cls, data: dict[str, Any], where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"Expected a table for {where}, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"Unknown keys in {where}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        default = known[key].default_factory  # type: ignore[misc]
        if callable(default) and is_dataclass(sample := default()):
            kwargs[key] = _build(type(sample), value, f"{where}.{key}")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"Invalid {where}: {e}") from e


def _merge(base: dict, override: dict) -> dict:
    merged = deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def experiment_from_dict(data: dict[str, Any]) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "experiment")


def read_experiment_file(path: Path | str) -> dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file {path} does not exist")
    with open(path) as f:
        if path.suffix == ".json":
            data = json.load(f)
        else:
            data = toml.load(f)
    # experiment files may either be bare or wrap everything in [experiment]
    return data.get("experiment", data)


def load_experiment(
    path: Path | str | None = None, overrides: dict[str, Any] | None = None
) -> ExperimentConfig:
    """
    Resolves an experiment config: the global config's [experiment] table,
    then the given file, then dotted-key overrides (e.g. from CLI flags).
    """
    data = deepcopy(load_config().get("experiment", {}))
    if path is not None:
        data = _merge(data, read_experiment_file(path))
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_path(data, key.split("."), value)
    config = experiment_from_dict(data)
    logger.debug(f"Resolved experiment config {config.hash}")
    return config


def output_dir() -> Path:
    return Path(load_config().get("output", {}).get("dir", "out"))


def configured_workers() -> int | None:
    return load_config().get("workers", {}).get("num_workers")


def stamp() -> dict[str, str]:
    return {"version": __version__}


def test_unknown_key_rejected():
    import pytest

    with pytest.raises(ConfigError):
        experiment_from_dict({"dataset": {"kindd": "burgers"}})


def test_overrides_change_hash():
    config = experiment_from_dict({"beta": 0.4})
    assert config.replace(beta=0.6).hash != config.hash
    assert config.replace(**{"dataset.kind": "burgers"}).dataset.kind == "burgers"
