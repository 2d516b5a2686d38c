import logging
from collections.abc import Sequence
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .coreset import CoresetSelection
from .dataset import Dataset
from .errors import ConfigError
from .fno import Batch, FnoParams, LossKind, loss_and_grad
from .optim import adam_init, adam_step, cosine_lr
from .residuals import PiWeights
from .util import Stopwatch

logger = logging.getLogger(__name__)


@dataclass
class TrainRecord:
    epoch: int
    loss: float
    wall_seconds: float
    loss_kind: str

    def json_dict(self) -> dict:
        return asdict(self)


def train(
    params: FnoParams,
    batch: Batch,
    weights: Sequence[float] | np.ndarray | None = None,
    epochs: int = 1,
    loss_kind: LossKind = "data",
    lr: float = 1e-3,
    pi: PiWeights | None = None,
    batch_size: int = 16,
    seed: int = 0,
    lr_min: float = 1e-5,
) -> tuple[FnoParams, list[TrainRecord]]:
    """
    Minibatch Adam over every sample of the batch, in a seeded shuffled order
    each epoch. The loss of a minibatch is sum(w * loss) / sum(w).
    """
    n = len(batch)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,) or np.any(w <= 0):
        raise ConfigError("weights must be positive and align with the batch")
    if batch_size < 1:
        raise ConfigError("batch_size must be positive")

    rng = np.random.default_rng(seed)
    state = adam_init(params)
    records: list[TrainRecord] = []
    for epoch in range(epochs):
        sw = Stopwatch()
        lr_epoch = cosine_lr(epoch, epochs, lr, lr_min)
        with sw.measure():
            order = rng.permutation(n)
            weighted_sum = 0.0
            weight_total = 0.0
            for start in range(0, n, batch_size):
                idx = order[start : start + batch_size]
                loss, grads = loss_and_grad(params, batch.subset(idx), w[idx], loss_kind, pi)
                params, state = adam_step(params, grads, state, lr_epoch)
                weighted_sum += loss * w[idx].sum()
                weight_total += w[idx].sum()
        record = TrainRecord(epoch, weighted_sum / weight_total, sw.seconds, loss_kind)
        logger.debug(f"epoch {epoch}: {loss_kind} loss {record.loss:.4e} ({record.wall_seconds:.2f}s)")
        records.append(record)
    return params, records


def selection_batch(
    dataset: Dataset, selection: CoresetSelection | None, labels: bool = True
) -> tuple[Batch, np.ndarray]:
    """Batch of the selected samples in ascending index order, with aligned weights."""
    if selection is None:
        return Batch.from_dataset(dataset, labels=labels), np.ones(len(dataset))
    order = np.argsort(selection.indices, kind="stable")
    indices = np.asarray(selection.indices)[order]
    weights = np.asarray(selection.weights, dtype=np.float64)[order]
    return Batch.from_dataset(dataset, indices.tolist(), labels=labels), weights


def train_on_selection(
    params: FnoParams,
    dataset: Dataset,
    selection: CoresetSelection | None,
    epochs: int,
    loss_kind: LossKind = "data",
    lr: float = 1e-3,
    pi: PiWeights | None = None,
    **kwargs,
) -> tuple[FnoParams, list[TrainRecord]]:
    batch, weights = selection_batch(dataset, selection, labels=loss_kind == "data")
    return train(params, batch, weights, epochs, loss_kind, lr, pi, **kwargs)


def test_zero_epochs_is_identity():
    from .field import GridSpec
    from .fno import FnoConfig, fno_init
    from .solvers import PdeKind

    config = FnoConfig(1, modes=2, width=2, n_layers=1, in_channels=2, out_channels=2)
    params = fno_init(config, 0)
    grid = GridSpec(1, 8, n_time=2, t_final=1.0)
    batch = Batch(PdeKind.ADVECTION, grid, {"beta": 0.1}, torch.zeros(1, 8, dtype=torch.float64))
    trained, records = train(params, batch, epochs=0)
    assert trained is params
    assert records == []
