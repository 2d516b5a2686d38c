"""
Evaluation extras and report artifacts: zero-shot super-resolution, centroid
spread, per-run CSV rows and the method-by-budget NRMSE table.
"""

import json
import logging
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
import pandas as pd

from .dataset import Dataset
from .errors import ConfigError, MixedDatasets, ResolutionTooLow
from .fno import Batch, FnoParams, evaluate_nrmse

if TYPE_CHECKING:
    from .pipeline import ExperimentReport

logger = logging.getLogger(__name__)

ACCELERATION_ROW = "acceleration"


def evaluate_super_resolution(params: FnoParams, dataset: Dataset, n_points: int) -> float:
    """Mean NRMSE of a trained operator evaluated at another resolution of a labelled dataset."""
    if n_points < 2 * params.config.modes:
        raise ResolutionTooLow(
            f"{n_points} points cannot carry {params.config.modes} retained modes"
        )
    fine = dataset.at_resolution(n_points)
    value = evaluate_nrmse(params, Batch.from_dataset(fine))
    logger.info(f"NRMSE at resolution {n_points}: {value:.4e}")
    return value


def centroid_spread(inputs: np.ndarray) -> float:
    """Mean Euclidean distance of the rows of `inputs` to their centroid."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if len(x) == 0:
        raise ConfigError("centroid spread needs at least one vector")
    return float(np.linalg.norm(x - x.mean(axis=0), axis=1).mean())


def _dataset_key(report: "ExperimentReport") -> str:
    return json.dumps(
        {"dataset": report.config.json_dict()["dataset"], "fno": report.fno}, sort_keys=True
    )


def check_same_dataset(reports: Sequence["ExperimentReport"]) -> None:
    keys = {_dataset_key(r) for r in reports}
    if len(keys) > 1:
        raise MixedDatasets(f"reports span {len(keys)} different dataset/operator setups")


def runs_frame(reports: Iterable["ExperimentReport"]) -> pd.DataFrame:
    """One row per report and seed."""
    rows = []
    for report in reports:
        for run in report.runs:
            ledger = run.ledger
            rows.append(
                {
                    "config_hash": report.config.hash,
                    "version": report.version,
                    "kind": report.config.dataset.kind,
                    "mode": report.config.mode,
                    "algorithm": report.label.split("-", 1)[-1],
                    "beta": report.config.beta,
                    "seed": run.seed,
                    "test_nrmse": run.test_nrmse,
                    "n_labeled": ledger.n_labeled,
                    "sim_seconds": ledger.sim_seconds_total,
                    "sim_seconds_modeled": ledger.sim_seconds_modeled,
                    "warmup_seconds": ledger.warmup_seconds,
                    "scoring_seconds": ledger.scoring_seconds,
                    "selection_seconds": ledger.selection_seconds,
                    "training_seconds": ledger.training_seconds,
                    "topped_up": 0 if run.selection is None else run.selection.topped_up,
                    "centroid_spread": run.centroid_spread,
                    "acceleration": report.acceleration,
                    "acceleration_modeled": report.acceleration_modeled,
                    **{f"nrmse_{res}": v for res, v in run.super_res.items()},
                }
            )
    return pd.DataFrame(rows)


def spread_by_method(reports: Iterable["ExperimentReport"]) -> pd.DataFrame:
    """Centroid spread of each report's labelled inputs, mean and standard error over seeds."""
    rows = []
    for report in reports:
        values = np.array([r.centroid_spread for r in report.runs if r.centroid_spread is not None])
        if len(values) == 0:
            continue
        stderr = float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
        rows.append(
            {
                "method": report.label,
                "beta": report.config.beta,
                "spread_mean": float(values.mean()),
                "spread_stderr": stderr,
            }
        )
    return pd.DataFrame(rows, columns=["method", "beta", "spread_mean", "spread_stderr"])


def render_report(reports: Sequence["ExperimentReport"]) -> pd.DataFrame:
    """
    Mean test NRMSE with (group, method) rows and ascending-budget columns.
    Each method group (the run mode) gets an acceleration row when any of its
    reports was compared against a baseline.
    """
    if not reports:
        raise ConfigError("no reports to render")
    check_same_dataset(reports)

    cells: dict[tuple[str, str], dict[float, float]] = {}
    accelerations: dict[str, dict[float, list[float]]] = {}
    for report in reports:
        group = report.config.mode
        beta = report.config.beta
        cells.setdefault((group, report.label), {})[beta] = report.test_nrmse_mean
        if report.acceleration is not None:
            accelerations.setdefault(group, {}).setdefault(beta, []).append(report.acceleration)

    betas = sorted({r.config.beta for r in reports})
    index: list[tuple[str, str]] = []
    for group in dict.fromkeys(g for g, _ in cells):
        index.extend(key for key in cells if key[0] == group)
        if group in accelerations:
            key = (group, ACCELERATION_ROW)
            cells[key] = {b: float(np.mean(v)) for b, v in accelerations[group].items()}
            index.append(key)

    table = pd.DataFrame(
        [[cells[key].get(b, np.nan) for b in betas] for key in index],
        index=pd.MultiIndex.from_tuples(index, names=["group", "method"]),
        columns=pd.Index(betas, name="beta"),
    )
    return table


def markdown_table(table: pd.DataFrame) -> str:
    def fmt(method: str, value: float) -> str:
        if np.isnan(value):
            return "-"
        if method == ACCELERATION_ROW:
            return f"{value:.2f}x"
        return f"{value:.2e}"

    header = ["method"] + [f"{b:.0%}" for b in table.columns]
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join("---" for _ in header) + "|",
    ]
    for (group, method), row in table.iterrows():
        label = f"{group} {method}" if method == ACCELERATION_ROW else method
        cells = [fmt(method, v) for v in row.to_numpy(dtype=np.float64)]
        lines.append("| " + " | ".join([label] + cells) + " |")
    return "\n".join(lines) + "\n"


def write_table(table: pd.DataFrame, path: Path | str) -> None:
    table.to_csv(path)


def read_table(path: Path | str) -> pd.DataFrame:
    table = pd.read_csv(path, index_col=[0, 1], float_precision="round_trip")
    table.columns = pd.Index([float(c) for c in table.columns], name="beta")
    return table


def write_report(report: "ExperimentReport", out: Path | str) -> Path:
    """Writes report.json, runs.csv and one selection file per seed."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as f:
        json.dump(report.json_dict(), f, indent=2)
    runs_frame([report]).to_csv(out / "runs.csv", index=False)
    for run in report.runs:
        if run.selection is None:
            continue
        doc: dict[str, Any] = {
            "version": report.version,
            "config_hash": report.config.hash,
            **run.selection.json_dict(),
        }
        with open(out / f"selection_seed{run.seed}.json", "w") as f:
            json.dump(doc, f, indent=2)
    logger.info(f"Wrote report {report.config.hash} to {out}")
    return out


def load_report(path: Path | str) -> "ExperimentReport":
    from .pipeline import ExperimentReport

    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    with open(path) as f:
        return ExperimentReport.from_json_dict(json.load(f))


def write_tables(reports: Sequence["ExperimentReport"], out: Path | str) -> pd.DataFrame:
    """Writes table.csv, table.md, runs.csv and spread.csv for a set of reports."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    table = render_report(reports)
    write_table(table, out / "table.csv")
    (out / "table.md").write_text(markdown_table(table))
    runs_frame(reports).to_csv(out / "runs.csv", index=False)
    spread_by_method(reports).to_csv(out / "spread.csv", index=False)
    logger.info(f"Wrote tables for {len(reports)} reports to {out}")
    return table


def test_centroid_spread_midpoint():
    p, q = np.array([0.0, 0.0]), np.array([3.0, 4.0])
    assert centroid_spread(np.stack([p, q])) == 2.5
    assert centroid_spread(np.ones((4, 3))) == 0.0
