"""
Experiment orchestration.

Modes:
  picore        physics-informed warm start, label-free scoring and selection,
                then labels are simulated only for the selected samples
  supervised    every sample is labelled up front; warm start and scoring use the data loss
  unsupervised  selection on raw inputs (k-means, cosine, herding, random), lazy labelling
  full          every sample is labelled and trained on; the acceleration baseline

In every mode the network trained on the labelled subset starts from the same
initialization that was drawn before any warm start.
"""

import logging
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .__about__ import __version__
from .config import ExperimentConfig, configured_workers, experiment_from_dict
from .coreset import (
    GRADIENT_SELECTORS,
    INPUT_SELECTORS,
    CoresetSelection,
    budget,
    hutchinson_diag,
    select,
)
from .dataset import Dataset, generate_dataset
from .errors import ConfigError, SelectorLabelRequired, ZeroDenominator
from .fno import Batch, FnoConfig, FnoParams, evaluate_nrmse, fno_init, last_layer_hvp, per_sample_features
from .report import centroid_spread, evaluate_super_resolution
from .solvers import Solver, default_grid, solve
from .train import TrainRecord, train, train_on_selection
from .util import Stopwatch, array_digest

logger = logging.getLogger(__name__)


@dataclass
class CostLedger:
    sim_seconds_total: float = 0.0
    warmup_seconds: float = 0.0
    scoring_seconds: float = 0.0
    selection_seconds: float = 0.0
    training_seconds: float = 0.0
    n_labeled: int = 0
    sim_seconds_modeled: float | None = None

    def sim_seconds(self, modeled: bool = False) -> float:
        if not modeled:
            return self.sim_seconds_total
        if self.sim_seconds_modeled is None:
            raise ConfigError("ledger has no modelled simulation cost (set solver.sim_cost_seconds)")
        return self.sim_seconds_modeled

    @property
    def overhead_seconds(self) -> float:
        return self.warmup_seconds + self.scoring_seconds + self.selection_seconds

    def __add__(self, other: "CostLedger") -> "CostLedger":
        modeled = None
        if self.sim_seconds_modeled is not None and other.sim_seconds_modeled is not None:
            modeled = self.sim_seconds_modeled + other.sim_seconds_modeled
        return CostLedger(
            self.sim_seconds_total + other.sim_seconds_total,
            self.warmup_seconds + other.warmup_seconds,
            self.scoring_seconds + other.scoring_seconds,
            self.selection_seconds + other.selection_seconds,
            self.training_seconds + other.training_seconds,
            self.n_labeled + other.n_labeled,
            modeled,
        )

    def json_dict(self) -> dict[str, Any]:
        return asdict(self)


def account_costs(baseline: CostLedger, candidate: CostLedger, modeled: bool = False) -> float:
    """Baseline (simulation + training) time over the candidate's total time."""
    numerator = baseline.sim_seconds(modeled) + baseline.training_seconds
    denominator = (
        candidate.sim_seconds(modeled) + candidate.overhead_seconds + candidate.training_seconds
    )
    if denominator <= 0:
        raise ZeroDenominator("candidate ledger has zero total cost")
    return numerator / denominator


@dataclass
class RunResult:
    seed: int
    test_nrmse: float
    ledger: CostLedger
    selection: CoresetSelection | None
    init_hash: str
    train_start_hash: str
    records: list[TrainRecord] = field(default_factory=list)
    super_res: dict[int, float] = field(default_factory=dict)
    centroid_spread: float | None = None
    params: FnoParams | None = field(default=None, repr=False, compare=False)

    def json_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "test_nrmse": self.test_nrmse,
            "ledger": self.ledger.json_dict(),
            "selection": None if self.selection is None else self.selection.json_dict(),
            "init_hash": self.init_hash,
            "train_start_hash": self.train_start_hash,
            "records": [r.json_dict() for r in self.records],
            "super_res": {str(k): v for k, v in self.super_res.items()},
            "centroid_spread": self.centroid_spread,
        }

    @classmethod
    def from_json_dict(cls, data: dict[str, Any]) -> "RunResult":
        selection = data["selection"]
        return cls(
            seed=data["seed"],
            test_nrmse=data["test_nrmse"],
            ledger=CostLedger(**data["ledger"]),
            selection=None if selection is None else CoresetSelection.from_json_dict(selection),
            init_hash=data["init_hash"],
            train_start_hash=data["train_start_hash"],
            records=[TrainRecord(**r) for r in data["records"]],
            super_res={int(k): v for k, v in data["super_res"].items()},
            centroid_spread=data["centroid_spread"],
        )


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    runs: list[RunResult]
    fno: dict[str, Any] = field(default_factory=dict)
    acceleration: float | None = None
    acceleration_modeled: float | None = None
    n_warnings: int = 0
    version: str = __version__

    @property
    def label(self) -> str:
        if self.config.mode == "full":
            return "full"
        return f"{self.config.mode}-{self.config.algorithm}"

    @property
    def per_seed_nrmse(self) -> list[float]:
        return [r.test_nrmse for r in self.runs]

    @property
    def test_nrmse_mean(self) -> float:
        return float(np.mean(self.per_seed_nrmse))

    @property
    def test_nrmse_stderr(self) -> float:
        values = self.per_seed_nrmse
        if len(values) < 2:
            return 0.0
        return float(np.std(values, ddof=1) / np.sqrt(len(values)))

    @property
    def ledger(self) -> CostLedger:
        total = CostLedger()
        for run in self.runs:
            total = total + run.ledger
        return total

    def with_baseline(self, baseline: "ExperimentReport") -> "ExperimentReport":
        self.acceleration = account_costs(baseline.ledger, self.ledger)
        if self.config.solver.sim_cost_seconds is not None:
            self.acceleration_modeled = account_costs(baseline.ledger, self.ledger, modeled=True)
        return self

    def json_dict(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "config_hash": self.config.hash,
            "config": self.config.json_dict(),
            "fno": self.fno,
            "label": self.label,
            "test_nrmse": {
                "mean": self.test_nrmse_mean,
                "stderr": self.test_nrmse_stderr,
                "per_seed": self.per_seed_nrmse,
            },
            "ledger": self.ledger.json_dict(),
            "acceleration": self.acceleration,
            "acceleration_modeled": self.acceleration_modeled,
            "n_warnings": self.n_warnings,
            "runs": [r.json_dict() for r in self.runs],
        }

    @classmethod
    def from_json_dict(cls, data: dict[str, Any]) -> "ExperimentReport":
        return cls(
            config=experiment_from_dict(data["config"]),
            runs=[RunResult.from_json_dict(r) for r in data["runs"]],
            fno=data.get("fno", {}),
            acceleration=data.get("acceleration"),
            acceleration_modeled=data.get("acceleration_modeled"),
            n_warnings=data.get("n_warnings", 0),
            version=data.get("version", __version__),
        )


@dataclass
class ExperimentData:
    train: Dataset
    test: Dataset


def prepare_data(
    config: ExperimentConfig, solver: Solver = solve, workers: int | None = None
) -> ExperimentData:
    """Unlabelled training inputs plus a labelled held-out test set."""
    ds = config.dataset
    kind = ds.pde_kind
    gen_grid = default_grid(
        kind, ds.generation_resolution, config.solver.n_time, config.solver.t_final
    )
    factor = gen_grid.factor_to(ds.resolution)
    meta = {"config_hash": config.hash}
    train_ds = generate_dataset(kind, ds.n_train, gen_grid, ds.seed, factor, ds.params, meta)
    test_ds = generate_dataset(kind, ds.test_size, gen_grid, ds.test_base_seed, factor, ds.params, meta)
    test_ds.label(range(len(test_ds)), solver, workers, **config.solver.options())
    return ExperimentData(train_ds, test_ds)


def full_selection(n: int, beta: float = 1.0) -> CoresetSelection:
    return CoresetSelection(list(range(n)), [1.0] * n, "full", beta)


def top_up(selection: CoresetSelection, k: int, scores: np.ndarray) -> CoresetSelection:
    """Fills a short selection with the highest-scoring unselected samples at unit weight."""
    missing = k - len(selection)
    if missing <= 0:
        return selection
    chosen = set(selection.indices)
    extra = [int(i) for i in np.argsort(-scores, kind="stable") if int(i) not in chosen][:missing]
    logger.warning(
        f"{selection.algorithm} returned {len(selection)} of {k} samples, topping up with {len(extra)}"
    )
    return CoresetSelection(
        selection.indices + extra,
        selection.weights + [1.0] * len(extra),
        selection.algorithm,
        selection.beta,
        selection.seed,
        topped_up=len(extra),
        extra=selection.extra,
    )


def fno_config_for(config: ExperimentConfig, dataset: Dataset) -> FnoConfig:
    return FnoConfig.for_task(
        dataset.kind, dataset.working_grid, config.fno.modes, config.fno.width, config.fno.n_layers
    )


def _select_from_scores(
    config: ExperimentConfig,
    dataset: Dataset,
    params0: FnoParams,
    k: int,
    selection_seed: int,
    shuffle_seed: int,
    ledger: CostLedger,
) -> CoresetSelection:
    scoring = config.scoring
    algorithm = config.algorithm
    if config.mode == "picore" and scoring == "data":
        raise SelectorLabelRequired("picore scoring must not use labels; use scoring_loss = physics")
    if algorithm not in GRADIENT_SELECTORS:
        raise ConfigError(f"{algorithm} selects on inputs; use mode = unsupervised")

    batch = Batch.from_dataset(dataset, labels=scoring == "data")
    sw = Stopwatch()
    with sw.measure():
        logger.info(f"Warm start: {config.warmup_epochs} epochs of {scoring} loss on {len(batch)} samples")
        warm, _ = train(
            params0, batch, None, config.warmup_epochs, scoring, config.lr, config.pi,
            config.batch_size, shuffle_seed, config.lr_min,
        )
    ledger.warmup_seconds = sw.seconds

    sw = Stopwatch()
    hess_diag = None
    with sw.measure():
        features = per_sample_features(warm, batch, scoring, config.pi)
        if algorithm == "adacore":
            hvp = last_layer_hvp(warm, batch, scoring, config.pi)
            hess_diag = hutchinson_diag(hvp, features.d, config.hutchinson_probes, selection_seed)
    ledger.scoring_seconds = sw.seconds
    logger.info(f"Scored {features.n} samples ({features.d} features) in {sw.seconds:.2f}s")

    sw = Stopwatch()
    with sw.measure():
        selection = select(
            algorithm, k, features=features, hess_diag=hess_diag, rng_seed=selection_seed,
            subsample=config.craig_subsample, ridge=config.gradmatch_ridge, eps=config.adacore_eps,
        )
        selection = top_up(selection, k, features.per_sample_loss)
    ledger.selection_seconds = sw.seconds
    return selection


def _select_from_inputs(
    config: ExperimentConfig, dataset: Dataset, k: int, selection_seed: int, ledger: CostLedger
) -> CoresetSelection:
    if config.algorithm not in INPUT_SELECTORS:
        raise ConfigError(
            f"unsupervised mode needs one of {INPUT_SELECTORS}, got {config.algorithm!r}"
        )
    sw = Stopwatch()
    with sw.measure():
        selection = select(
            config.algorithm, k, inputs=dataset.input_matrix(), rng_seed=selection_seed,
            iters=config.kmeans_iters,
        )
    ledger.selection_seconds = sw.seconds
    return selection


def choose_subset(
    config: ExperimentConfig,
    dataset: Dataset,
    params0: FnoParams,
    seed: int,
    ledger: CostLedger | None = None,
) -> CoresetSelection | None:
    """
    Selection phase of one run: None in full mode, every sample at full
    budget, otherwise the configured selector's pick. `dataset` must already
    carry labels when the scoring loss is the data loss.
    """
    ledger = ledger if ledger is not None else CostLedger()
    _, shuffle_seed, selection_seed = config.run_seeds(seed)
    n = len(dataset)
    if config.mode == "full":
        return None
    k = budget(config.beta, n)
    if k == n:
        selection = full_selection(n, config.beta)
    elif config.mode == "unsupervised":
        selection = _select_from_inputs(config, dataset, k, selection_seed, ledger)
    else:
        selection = _select_from_scores(
            config, dataset, params0, k, selection_seed, shuffle_seed, ledger
        )
    selection.beta = config.beta
    logger.info(f"Selected {len(selection)} of {n} samples with {selection.algorithm}")
    return selection


def run_seed(
    config: ExperimentConfig,
    data: ExperimentData,
    seed: int,
    solver: Solver = solve,
    workers: int | None = None,
) -> RunResult:
    mode = config.mode
    init_seed, shuffle_seed, _ = config.run_seeds(seed)
    dataset = data.train.unlabeled_copy()
    n = len(dataset)
    options = config.solver.options()

    params0 = fno_init(fno_config_for(config, dataset), init_seed)
    init_hash = array_digest(params0.flat())
    ledger = CostLedger()

    if mode in ("supervised", "full"):
        ledger.sim_seconds_total += dataset.label(range(n), solver, workers, **options)

    selection = choose_subset(config, dataset, params0, seed, ledger)
    if selection is not None:
        ledger.sim_seconds_total += dataset.label(selection.indices, solver, workers, **options)
    ledger.n_labeled = len(dataset.labeled)
    if config.solver.sim_cost_seconds is not None:
        ledger.sim_seconds_modeled = ledger.n_labeled * config.solver.sim_cost_seconds

    # training always restarts from the untouched initialization
    params = params0
    train_start_hash = array_digest(params.flat())
    sw = Stopwatch()
    with sw.measure():
        trained, records = train_on_selection(
            params, dataset, selection, config.epochs, "data", config.lr, config.pi,
            batch_size=config.batch_size, seed=shuffle_seed, lr_min=config.lr_min,
        )
    ledger.training_seconds = sw.seconds
    logger.info(f"Trained {config.epochs} epochs on {ledger.n_labeled} labels in {sw.seconds:.2f}s")

    test_nrmse = evaluate_nrmse(trained, Batch.from_dataset(data.test))
    super_res = {
        res: evaluate_super_resolution(trained, data.test, res) for res in config.super_res
    }
    indices = range(n) if selection is None else selection.indices
    spread = centroid_spread(dataset.input_matrix(indices))
    logger.info(f"Seed {seed}: test NRMSE {test_nrmse:.4e}")
    return RunResult(
        seed, test_nrmse, ledger, selection, init_hash, train_start_hash, records,
        super_res, spread, trained,
    )


def run_experiment(
    config: ExperimentConfig,
    solver: Solver = solve,
    data: ExperimentData | None = None,
    workers: int | None = None,
    baseline: ExperimentReport | None = None,
) -> ExperimentReport:
    workers = workers or configured_workers()
    if data is None:
        data = prepare_data(config, solver, workers)
    runs = [run_seed(config, data, seed, solver, workers) for seed in config.seeds]
    fno = fno_config_for(config, data.train).json_dict()
    report = ExperimentReport(config, runs, fno)
    if baseline is not None:
        report.with_baseline(baseline)
    return report


def _require_mode(config: ExperimentConfig, mode: str) -> ExperimentConfig:
    return config if config.mode == mode else config.replace(mode=mode)


def run_picore(config: ExperimentConfig, **kwargs) -> ExperimentReport:
    return run_experiment(_require_mode(config, "picore"), **kwargs)


def run_supervised(config: ExperimentConfig, **kwargs) -> ExperimentReport:
    return run_experiment(_require_mode(config, "supervised"), **kwargs)


def run_unsupervised_baseline(config: ExperimentConfig, **kwargs) -> ExperimentReport:
    return run_experiment(_require_mode(config, "unsupervised"), **kwargs)


def run_full(config: ExperimentConfig, **kwargs) -> ExperimentReport:
    return run_experiment(config.replace(mode="full", beta=1.0), **kwargs)


def compare_methods(
    config: ExperimentConfig,
    betas: Sequence[float],
    methods: Sequence[tuple[str, str]],
    solver: Solver = solve,
    workers: int | None = None,
) -> list[ExperimentReport]:
    """
    Runs the full-data baseline and every (mode, algorithm) pair at every
    budget on shared data, with accelerations relative to the baseline.
    """
    data = prepare_data(config, solver, workers)
    baseline = run_full(config, solver=solver, data=data, workers=workers)
    baseline.with_baseline(baseline)
    reports = [baseline]
    for mode, algorithm in methods:
        for beta in sorted(betas):
            variant = config.replace(mode=mode, algorithm=algorithm, beta=beta)
            reports.append(
                run_experiment(variant, solver, data, workers, baseline=baseline)
            )
    return reports
