import os

import numpy as np
import pytest
import torch

from picore.coreset import CoresetSelection
from picore.dataset import generate_dataset
from picore.errors import ConfigError
from picore.fno import Batch, FnoConfig, evaluate_nrmse, fno_init
from picore.optim import adam_init, adam_step, cosine_lr
from picore.solvers import PdeKind, default_grid
from picore.train import selection_batch, train, train_on_selection

slow = pytest.mark.skipif(not os.environ.get("PICORE_SLOW"), reason="set PICORE_SLOW=1 to run")


def labelled_advection(n: int = 6, n_points: int = 32, factor: int = 2, seed: int = 5):
    grid = default_grid(PdeKind.ADVECTION, n_points, n_time=5, t_final=1.0)
    ds = generate_dataset(PdeKind.ADVECTION, n, grid, base_seed=seed, factor=factor)
    ds.label(range(n))
    return ds


def tiny_params(ds, seed: int = 0):
    config = FnoConfig.for_task(ds.kind, ds.working_grid, modes=4, width=4, n_layers=1)
    return fno_init(config, seed)


def test_adam_zero_gradient_is_a_no_op():
    params = tiny_params(labelled_advection(n=1))
    zeros = {k: torch.zeros_like(t) for k, t in params.tensors.items()}
    stepped, state = adam_step(params, zeros, adam_init(params), lr=1e-2)
    assert np.array_equal(stepped.flat(), params.flat())
    assert state.step == 1


def test_adam_first_step_has_size_lr():
    params = tiny_params(labelled_advection(n=1))
    before = params.flat()
    grads = {k: torch.full_like(t, 0.5) for k, t in params.tensors.items()}
    stepped, _ = adam_step(params, grads, adam_init(params), lr=1e-3)
    assert np.allclose(before - stepped.flat(), 1e-3, rtol=1e-6)
    # the input parameters are left untouched
    assert np.array_equal(params.flat(), before)


def test_cosine_schedule():
    assert cosine_lr(5, 11, 1e-3, 0.0) == pytest.approx(5e-4)
    assert cosine_lr(0, 1, 1e-3) == 1e-3
    values = [cosine_lr(e, 20, 1e-3) for e in range(20)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_training_is_deterministic():
    ds = labelled_advection()
    batch = Batch.from_dataset(ds)
    params = tiny_params(ds)
    a, rec_a = train(params, batch, epochs=3, batch_size=4, seed=9)
    b, rec_b = train(params, batch, epochs=3, batch_size=4, seed=9)
    assert np.array_equal(a.flat(), b.flat())
    assert [r.loss for r in rec_a] == [r.loss for r in rec_b]
    c, _ = train(params, batch, epochs=3, batch_size=4, seed=10)
    assert not np.array_equal(a.flat(), c.flat())


def test_unit_weight_selection_reproduces_full_training():
    ds = labelled_advection()
    params = tiny_params(ds)
    full = CoresetSelection(list(range(len(ds))), [1.0] * len(ds), "full", 1.0)
    a, _ = train_on_selection(params, ds, full, 4, batch_size=4, seed=3)
    b, _ = train(params, Batch.from_dataset(ds), None, 4, batch_size=4, seed=3)
    assert np.array_equal(a.flat(), b.flat())


def test_selection_batch_sorts_indices():
    ds = labelled_advection()
    selection = CoresetSelection([4, 1, 2], [3.0, 1.0, 2.0], "craig", 0.5)
    batch, weights = selection_batch(ds, selection)
    assert len(batch) == 3
    assert torch.equal(batch.inputs[0], torch.as_tensor(ds.input_values(1)))
    assert weights.tolist() == [1.0, 2.0, 3.0]


def test_loss_decreases():
    ds = labelled_advection(n=8)
    params = tiny_params(ds)
    _, records = train(params, Batch.from_dataset(ds), epochs=30, lr=1e-2, batch_size=8)
    assert records[-1].loss < records[0].loss
    assert [r.epoch for r in records] == list(range(30))


def test_physics_training_needs_no_labels():
    grid = default_grid(PdeKind.ADVECTION, 32, n_time=5, t_final=1.0)
    ds = generate_dataset(PdeKind.ADVECTION, 4, grid, base_seed=1, factor=2)
    params = tiny_params(ds)
    trained, records = train_on_selection(params, ds, None, 2, "physics", batch_size=2)
    assert len(records) == 2
    assert records[0].loss_kind == "physics"
    assert not np.array_equal(trained.flat(), params.flat())


def test_invalid_weights():
    ds = labelled_advection(n=2)
    batch = Batch.from_dataset(ds)
    with pytest.raises(ConfigError):
        train(tiny_params(ds), batch, [1.0, 0.0])
    with pytest.raises(ConfigError):
        train(tiny_params(ds), batch, [1.0])


@slow
def test_fits_advection():
    ds = labelled_advection(n=32, n_points=64, factor=1)
    config = FnoConfig.for_task(ds.kind, ds.working_grid, modes=12, width=16, n_layers=4)
    params = fno_init(config, 0)
    batch = Batch.from_dataset(ds)
    trained, _ = train(params, batch, epochs=200, lr=1e-3, batch_size=8)
    assert evaluate_nrmse(trained, batch) < 0.1
