#!/bin/env python3

import json
import logging
import sys
from pathlib import Path

import click

from .__about__ import __version__
from .config import configured_workers, load_config, load_experiment, output_dir, set_global_testing
from .coreset import CoresetSelection
from .dataset import Dataset
from .errors import PicoreError
from .fno import Batch, evaluate_nrmse, fno_init, load_checkpoint, save_checkpoint
from .pipeline import (
    choose_subset,
    compare_methods,
    fno_config_for,
    prepare_data,
    run_experiment,
)
from .report import (
    evaluate_super_resolution,
    load_report,
    markdown_table,
    render_report,
    write_report,
    write_tables,
)
from .train import train_on_selection
from .util import MsgCounterHandler

logger = logging.getLogger(__name__)

counter = MsgCounterHandler()


class PicoreGroup(click.Group):
    """Maps configuration errors to exit code 2 and numerical failures to 3."""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except PicoreError as e:
            logger.error(f"{type(e).__name__}: {e}")
            sys.exit(getattr(e, "exit_code", 1))


@click.group(cls=PicoreGroup)
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True)
@click.option("--testing", is_flag=True, help="run with testing config")
def main(verbose=False, testing=False):
    """picore selects physics-informed coresets for training neural operators."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname).4s | %(module)-8s |  %(message)s",
    )
    root = logging.getLogger()
    if counter not in root.handlers:
        root.addHandler(counter)

    if testing:
        set_global_testing()
    load_config()


def experiment_options(f):
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="experiment TOML/JSON file"),
        click.option("--dataset", "kind", type=click.Choice(["advection", "burgers", "darcy", "navier_stokes"]), help="PDE family"),
        click.option("--algorithm", help="selector name"),
        click.option("--beta", type=float, help="labelling budget as a fraction of the training set"),
        click.option("--mode", type=click.Choice(["picore", "supervised", "unsupervised", "full"])),
        click.option("--seed", "seeds", type=int, multiple=True, help="run seed (repeatable)"),
        click.option("--resolution", type=int, help="working resolution"),
        click.option("--n-train", type=int, help="number of training inputs"),
        click.option("--epochs", type=int),
        click.option("--warmup-epochs", type=int),
        click.option("--super-res", type=int, multiple=True, help="extra evaluation resolution (repeatable)"),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def resolve_experiment(config_path, kind, algorithm, beta, mode, seeds, resolution, n_train, epochs, warmup_epochs, super_res):
    overrides = {
        "dataset.kind": kind,
        "dataset.resolution": resolution,
        "dataset.n_train": n_train,
        "algorithm": algorithm,
        "beta": beta,
        "mode": mode,
        "seeds": list(seeds) or None,
        "epochs": epochs,
        "warmup_epochs": warmup_epochs,
        "super_res": list(super_res) or None,
    }
    return load_experiment(config_path, overrides)


def _out(out: str | None, name: str) -> Path:
    return Path(out) if out else output_dir() / name


@main.command(help="generate an input dataset (and a labelled test set)")
@experiment_options
@click.option("--label", is_flag=True, help="also simulate labels for every training input")
@click.option("--out", type=click.Path(file_okay=False), help="output directory")
def generate(label: bool, out: str | None, **kwargs) -> None:
    config = resolve_experiment(**kwargs)
    out_path = _out(out, f"data-{config.hash}")
    data = prepare_data(config, workers=configured_workers())
    if label:
        data.train.label(range(len(data.train)), workers=configured_workers(), **config.solver.options())
    data.train.save(out_path / "train")
    data.test.save(out_path / "test")
    print(out_path)


@main.command(help="select a coreset from a generated dataset")
@experiment_options
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), required=True, help="training dataset directory")
@click.option("--out", type=click.Path(dir_okay=False), help="selection JSON path")
def select(data_dir: str, out: str | None, **kwargs) -> None:
    config = resolve_experiment(**kwargs)
    dataset = Dataset.load(data_dir)
    if config.scoring == "data":
        dataset.label(range(len(dataset)), workers=configured_workers(), **config.solver.options())
    seed = config.seeds[0]
    init_seed, _, _ = config.run_seeds(seed)
    params0 = fno_init(fno_config_for(config, dataset), init_seed)
    selection = choose_subset(config, dataset, params0, seed)
    if selection is None:
        raise click.UsageError("full mode does not select a subset")
    out_path = Path(out) if out else output_dir() / f"selection-{config.hash}.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"version": __version__, "config_hash": config.hash, **selection.json_dict()}
    out_path.write_text(json.dumps(doc, indent=2))
    logger.info(f"Wrote selection of {len(selection)} samples to {out_path}")
    print(out_path)


@main.command(help="train an operator on a (selected, lazily labelled) dataset")
@experiment_options
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), required=True, help="training dataset directory")
@click.option("--selection", "selection_path", type=click.Path(exists=True, dir_okay=False), help="selection JSON; trains on all samples if omitted")
@click.option("--out", type=click.Path(dir_okay=False), help="checkpoint path")
def train(data_dir: str, selection_path: str | None, out: str | None, **kwargs) -> None:
    config = resolve_experiment(**kwargs)
    dataset = Dataset.load(data_dir)
    selection = None
    if selection_path:
        doc = json.loads(Path(selection_path).read_text())
        selection = CoresetSelection.from_json_dict(
            {k: v for k, v in doc.items() if k not in ("version", "config_hash")}
        )
    indices = range(len(dataset)) if selection is None else selection.indices
    dataset.label(indices, workers=configured_workers(), **config.solver.options())
    dataset.save(data_dir)

    seed = config.seeds[0]
    init_seed, shuffle_seed, _ = config.run_seeds(seed)
    params = fno_init(fno_config_for(config, dataset), init_seed)
    trained, records = train_on_selection(
        params, dataset, selection, config.epochs, "data", config.lr, config.pi,
        batch_size=config.batch_size, seed=shuffle_seed, lr_min=config.lr_min,
    )
    out_path = Path(out) if out else output_dir() / f"checkpoint-{config.hash}.picf"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"config_hash": config.hash, "seed": seed, "final_loss": records[-1].loss if records else None}
    save_checkpoint(out_path, trained, meta)
    logger.info(f"Wrote checkpoint to {out_path}")
    print(out_path)


@main.command(help="run an experiment end to end and write its report")
@experiment_options
@click.option("--betas", help="comma-separated budgets; runs the comparison harness")
@click.option("--methods", help="comma-separated mode:algorithm pairs for the comparison harness")
@click.option("--out", type=click.Path(file_okay=False), help="output directory")
def run(betas: str | None, methods: str | None, out: str | None, **kwargs) -> None:
    config = resolve_experiment(**kwargs)
    out_path = _out(out, f"run-{config.hash}")
    workers = configured_workers()
    if betas is None and methods is None:
        report = run_experiment(config, workers=workers)
        report.n_warnings = counter.level2count["WARNING"]
        write_report(report, out_path)
        print(markdown_table(render_report([report])))
        return

    beta_list = [float(b) for b in betas.split(",")] if betas else [config.beta]
    pairs = [tuple(m.split(":", 1)) for m in methods.split(",")] if methods else [(config.mode, config.algorithm)]
    if any(len(p) != 2 for p in pairs):
        raise click.BadParameter("methods must look like mode:algorithm", param_hint="--methods")
    reports = compare_methods(config, beta_list, pairs, workers=workers)  # type: ignore[arg-type]
    for report in reports:
        report.n_warnings = counter.level2count["WARNING"]
        write_report(report, out_path / f"{report.label}-{report.config.beta:g}")
    table = write_tables(reports, out_path)
    print(markdown_table(table))


@main.command(help="evaluate a checkpoint on a labelled dataset, optionally at finer resolutions")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), required=True, help="labelled dataset directory")
@click.option("--super-res", type=int, multiple=True, help="extra evaluation resolution (repeatable)")
def evaluate(checkpoint: str, data_dir: str, super_res: tuple[int, ...]) -> None:
    params, meta = load_checkpoint(checkpoint)
    dataset = Dataset.load(data_dir)
    results = {dataset.working_grid.n_points: evaluate_nrmse(params, Batch.from_dataset(dataset))}
    for n_points in super_res:
        results[n_points] = evaluate_super_resolution(params, dataset, n_points)
    for n_points, value in results.items():
        print(f"resolution {n_points}: NRMSE {value:.4e}")
    logger.debug(f"checkpoint config hash {meta.get('config_hash')}")


@main.command(help="render a table from written reports")
@click.argument("reports", nargs=-1, type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(file_okay=False), help="output directory for table.csv/table.md")
def report(reports: tuple[str, ...], out: str | None) -> None:
    loaded = [load_report(p) for p in reports]
    table = write_tables(loaded, _out(out, "tables"))
    print(markdown_table(table))


if __name__ == "__main__":
    main()
