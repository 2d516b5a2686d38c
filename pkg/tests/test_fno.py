import numpy as np
import pytest
import torch

from picore.errors import MissingLabels, ResolutionTooLow, ShapeMismatch, ZeroReference
from picore.field import Field, GridSpec
from picore.fno import (
    LAST_LAYER,
    Batch,
    FnoConfig,
    FnoParams,
    fno_forward,
    fno_init,
    forward,
    last_layer_hvp,
    load_checkpoint,
    loss_and_grad,
    nrmse,
    param_shapes,
    per_sample_features,
    per_sample_loss,
    save_checkpoint,
)
from picore.residuals import PiWeights
from picore.samplers import sample_sinusoidal_ic
from picore.solvers import PdeKind


def tiny_task(n: int = 16, batch: int = 3, seed: int = 0):
    grid = GridSpec(1, n, n_time=4, t_final=1.0)
    config = FnoConfig.for_task(PdeKind.ADVECTION, grid, modes=4, width=4, n_layers=2)
    params = fno_init(config, seed)
    rng = np.random.default_rng(seed)
    inputs = torch.as_tensor(
        np.stack([sample_sinusoidal_ic(int(s), grid, mode_range=(1, 4)).values for s in rng.integers(0, 1000, batch)])
    )
    labels = torch.as_tensor(rng.normal(size=(batch, 4, n)))
    return params, Batch(PdeKind.ADVECTION, grid, {"beta": 0.1}, inputs, labels)


def test_init_is_deterministic():
    config = FnoConfig(1, modes=16, width=32, n_layers=4, in_channels=2, out_channels=41)
    a, b, c = fno_init(config, 1), fno_init(config, 1), fno_init(config, 2)
    assert np.array_equal(a.flat(), b.flat())
    assert not np.array_equal(a.flat(), c.flat())


def test_parameter_count_closed_form():
    W, m, L, out = 32, 16, 4, 41
    config = FnoConfig(1, modes=m, width=W, n_layers=L, in_channels=2, out_channels=out)
    expected = (2 * W + W) + L * (W * W * m * 2 + W * W + W) + (W * W + W) + (W * out + out)
    assert fno_init(config, 0).count() == expected
    assert sum(int(np.prod(s)) for s in param_shapes(config).values()) == expected


def test_for_task_encoding():
    dyn = FnoConfig.for_task(PdeKind.BURGERS, GridSpec(1, 64, n_time=41, t_final=2.0))
    assert (dyn.in_channels, dyn.out_channels, dyn.modes) == (2, 41, 16)
    darcy = FnoConfig.for_task(PdeKind.DARCY, GridSpec(2, 33, periodic=False))
    assert (darcy.in_channels, darcy.out_channels, darcy.modes) == (3, 1, 12)
    with pytest.raises(ResolutionTooLow):
        FnoConfig.for_task(PdeKind.ADVECTION, GridSpec(1, 16, n_time=4, t_final=1.0), modes=16)


def test_zero_projection_gives_zero_output():
    params, batch = tiny_task()
    zeroed = params.with_tensors(
        **{"proj2.weight": torch.zeros(4, 4, dtype=torch.float64), "proj2.bias": torch.zeros(4, dtype=torch.float64)}
    )
    out = forward(zeroed, batch.inputs, batch.kind, batch.grid)
    assert torch.all(out == 0)


def test_single_spectral_layer_matches_dense_dft():
    n, modes = 16, 4
    config = FnoConfig(1, modes=modes, width=1, n_layers=1, in_channels=2, out_channels=1, activation="linear")
    rng = np.random.default_rng(3)
    spectral = torch.as_tensor(rng.normal(size=(1, 1, modes, 2)))
    zeros = lambda *s: torch.zeros(*s, dtype=torch.float64)  # noqa: E731
    ones = lambda *s: torch.ones(*s, dtype=torch.float64)  # noqa: E731
    params = FnoParams(
        config,
        {
            "lift.weight": torch.tensor([[1.0], [0.0]], dtype=torch.float64),
            "lift.bias": zeros(1),
            "spectral.0": spectral,
            "bypass.0.weight": zeros(1, 1),
            "bypass.0.bias": zeros(1),
            "proj1.weight": ones(1, 1),
            "proj1.bias": zeros(1),
            "proj2.weight": ones(1, 1),
            "proj2.bias": zeros(1),
        },
    )
    grid = GridSpec(1, n, n_time=2, t_final=1.0)
    x = rng.normal(size=n)
    out = forward(params, torch.as_tensor(x)[None], PdeKind.ADVECTION, grid)[0, 0].numpy()

    w = spectral[0, 0, :, 0].numpy() + 1j * spectral[0, 0, :, 1].numpy()
    j = np.arange(n)
    k = np.arange(modes)
    dft = np.exp(-2j * np.pi * np.outer(k, j) / n)
    Y = w * (dft @ x)
    inverse = np.exp(2j * np.pi * np.outer(j, k) / n)
    # the real inverse keeps only the real part of the mean mode and doubles the others
    expected = (Y[0].real + 2 * (inverse[:, 1:] @ Y[1:]).real) / n
    assert np.allclose(out, expected, atol=1e-12)


def test_params_work_across_resolutions():
    grid64 = GridSpec(1, 64, n_time=3, t_final=1.0)
    grid128 = GridSpec(1, 128, n_time=3, t_final=1.0)
    params = fno_init(FnoConfig.for_task(PdeKind.ADVECTION, grid64, width=8, n_layers=2), 0)
    u64 = sample_sinusoidal_ic(0, grid64.stationary())
    u128 = sample_sinusoidal_ic(0, grid128.stationary())
    out64 = fno_forward(params, u64, PdeKind.ADVECTION, grid64)
    out128 = fno_forward(params, u128, PdeKind.ADVECTION, grid128)
    assert out64.values.shape == (3, 64)
    assert out128.values.shape == (3, 128)
    with pytest.raises(ResolutionTooLow):
        grid16 = GridSpec(1, 16, n_time=3, t_final=1.0)
        fno_forward(params, Field(np.zeros(16), grid16.stationary()), PdeKind.ADVECTION, grid16)


@pytest.mark.parametrize("loss_kind", ["data", "physics"])
def test_gradient_matches_finite_differences(loss_kind):
    params, batch = tiny_task()
    weights = np.array([1.0, 2.0, 0.5])
    _, grads = loss_and_grad(params, batch, weights, loss_kind)
    flat_grad = torch.cat([grads[k].reshape(-1) for k in params.names]).numpy()
    flat = params.flat()
    rng = np.random.default_rng(1)
    eps = 1e-6
    for idx in rng.choice(flat.size, size=20, replace=False):
        up, down = flat.copy(), flat.copy()
        up[idx] += eps
        down[idx] -= eps
        f_up, _ = loss_and_grad(FnoParams.from_flat(params.config, up), batch, weights, loss_kind)
        f_down, _ = loss_and_grad(FnoParams.from_flat(params.config, down), batch, weights, loss_kind)
        fd = (f_up - f_down) / (2 * eps)
        assert abs(fd - flat_grad[idx]) <= 1e-4 * abs(flat_grad[idx]) + 1e-8


def test_exact_labels_give_zero_loss_and_gradient():
    params, batch = tiny_task()
    with torch.no_grad():
        labels = forward(params, batch.inputs, batch.kind, batch.grid)
    exact = Batch(batch.kind, batch.grid, batch.params, batch.inputs, labels)
    loss, grads = loss_and_grad(params, exact)
    assert loss == 0
    assert all(torch.all(g == 0) for g in grads.values())


def test_weight_normalization():
    params, batch = tiny_task()
    plain, g_plain = loss_and_grad(params, batch)
    equal, g_equal = loss_and_grad(params, batch, np.full(3, 0.3))
    assert np.isclose(plain, equal, rtol=1e-12)
    w = np.array([1.0, 2.0, 3.0])
    a, g_a = loss_and_grad(params, batch, w)
    b, g_b = loss_and_grad(params, batch, 7.5 * w)
    assert np.isclose(a, b, rtol=1e-12)
    for name in params.names:
        assert torch.allclose(g_plain[name], g_equal[name], rtol=1e-10, atol=1e-14)
        assert torch.allclose(g_a[name], g_b[name], rtol=1e-10, atol=1e-14)


def test_data_loss_needs_labels():
    params, batch = tiny_task()
    unlabeled = Batch(batch.kind, batch.grid, batch.params, batch.inputs)
    with pytest.raises(MissingLabels):
        loss_and_grad(params, unlabeled, loss_kind="data")
    loss, _ = loss_and_grad(params, unlabeled, loss_kind="physics")
    assert loss > 0


def test_feature_columns_match_single_sample_gradients():
    params, batch = tiny_task(batch=4)
    features = per_sample_features(params, batch, "physics")
    d = 4 * 4 + 4
    assert features.columns.shape == (d, 4)
    for i in range(4):
        _, grads = loss_and_grad(params, batch.subset([i]), loss_kind="physics")
        expected = torch.cat([grads[k].reshape(-1) for k in LAST_LAYER]).numpy()
        assert np.allclose(features.columns[:, i], expected, rtol=1e-10, atol=1e-12)
    losses = per_sample_loss(params, batch, "physics").detach().numpy()
    assert np.allclose(features.per_sample_loss, losses, rtol=1e-12)


def test_feature_mean_is_batch_gradient():
    params, batch = tiny_task(batch=5)
    features = per_sample_features(params, batch, "data", chunk_size=2)
    _, grads = loss_and_grad(params, batch, loss_kind="data")
    full = torch.cat([grads[k].reshape(-1) for k in LAST_LAYER]).numpy()
    assert np.allclose(features.columns.mean(axis=1), full, atol=1e-10)


def test_duplicate_samples_have_identical_features():
    params, batch = tiny_task(batch=2)
    doubled = batch.subset([0, 1, 0])
    columns = per_sample_features(params, doubled, "physics").columns
    assert np.array_equal(columns[:, 0], columns[:, 2])


def test_last_layer_hvp_matches_gradient_differences():
    params, batch = tiny_task()
    hvp = last_layer_hvp(params, batch, "data")
    rng = np.random.default_rng(2)
    v = rng.normal(size=20)
    eps = 1e-5

    def last_grad(p):
        _, grads = loss_and_grad(p, batch, loss_kind="data")
        return torch.cat([grads[k].reshape(-1) for k in LAST_LAYER]).numpy()

    def shifted(sign):
        vw = torch.as_tensor(v[:16].reshape(4, 4))
        vb = torch.as_tensor(v[16:])
        return params.with_tensors(
            **{
                "proj2.weight": params.tensors["proj2.weight"] + sign * eps * vw,
                "proj2.bias": params.tensors["proj2.bias"] + sign * eps * vb,
            }
        )

    fd = (last_grad(shifted(1)) - last_grad(shifted(-1))) / (2 * eps)
    assert np.allclose(hvp(v), fd, rtol=1e-6, atol=1e-9)
    # the data loss is quadratic in the last layer, so its hessian is positive semi-definite
    assert v @ hvp(v) >= 0


def test_nrmse():
    rng = np.random.default_rng(0)
    u = rng.normal(size=(4, 8))
    assert nrmse(u, u) == 0
    assert np.isclose(nrmse(np.zeros_like(u), u), 1.0)
    assert np.isclose(nrmse(2 * u, u), 1.0)
    v = u + 0.1 * rng.normal(size=u.shape)
    assert np.isclose(nrmse(3 * v, 3 * u), nrmse(v, u))
    with pytest.raises(ZeroReference):
        nrmse(u, np.zeros_like(u))
    with pytest.raises(ShapeMismatch):
        nrmse(u, u[:2])


def test_checkpoint_roundtrip(tmp_path):
    params, _ = tiny_task()
    save_checkpoint(tmp_path / "ckpt.picf", params, {"config_hash": "feedbeef0000"})
    loaded, meta = load_checkpoint(tmp_path / "ckpt.picf")
    assert loaded.config == params.config
    assert np.array_equal(loaded.flat(), params.flat())
    assert meta["config_hash"] == "feedbeef0000"
    assert meta["fno"]["width"] == 4


def test_physics_pi_weights_change_loss():
    params, batch = tiny_task()
    unlabeled = Batch(batch.kind, batch.grid, batch.params, batch.inputs)
    a, _ = loss_and_grad(params, unlabeled, loss_kind="physics", pi=PiWeights(mu=0.0))
    b, _ = loss_and_grad(params, unlabeled, loss_kind="physics", pi=PiWeights(mu=1.0))
    assert b > a
