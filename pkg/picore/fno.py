"""
A functional Fourier Neural Operator in double precision.

Parameters are plain dicts of tensors wrapped in an immutable ``FnoParams``;
every update produces a new object. Gradients come from torch autograd.

Task encoding: 1D dynamic problems map [u0, x] to the n_time frames as output
channels, Navier-Stokes maps [w0, x1, x2] to the n_time vorticity frames, and
Darcy maps [a, x1, x2] to the single pressure field.
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Literal

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from .__about__ import __version__
from .coreset import FeatureMatrix
from .dataset import Dataset
from .errors import ConfigError, MissingLabels, ResolutionTooLow, ShapeMismatch, ZeroReference
from .field import Field, GridSpec
from .records import read_checkpoint, write_checkpoint
from .residuals import PiWeights, pi_loss_tensor
from .solvers import PdeKind

logger = logging.getLogger(__name__)

LossKind = Literal["data", "physics"]
DTYPE = torch.float64
LAST_LAYER = ("proj2.weight", "proj2.bias")
ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "gelu": F.gelu,
    "linear": lambda x: x,
}


@dataclass(frozen=True)
class FnoConfig:
    spatial_dims: int
    modes: int
    width: int = 32
    n_layers: int = 4
    in_channels: int = 2
    out_channels: int = 1
    activation: str = "gelu"

    def __post_init__(self):
        if self.spatial_dims not in (1, 2):
            raise ConfigError(f"spatial_dims must be 1 or 2, got {self.spatial_dims}")
        if min(self.modes, self.width, self.n_layers, self.in_channels, self.out_channels) < 1:
            raise ConfigError(f"invalid FNO config {self}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @classmethod
    def for_task(
        cls,
        kind: PdeKind,
        grid: GridSpec,
        modes: int | None = None,
        width: int = 32,
        n_layers: int = 4,
    ) -> "FnoConfig":
        dims = kind.spatial_dims
        modes = modes or (16 if dims == 1 else 12)
        if 2 * modes > grid.n_points:
            raise ResolutionTooLow(f"{modes} modes need at least {2 * modes} points, got {grid.n_points}")
        out = grid.n_time if kind.dynamic else 1
        return cls(dims, modes, width, n_layers, 1 + dims, out)

    def json_dict(self) -> dict[str, Any]:
        return {
            "spatial_dims": self.spatial_dims,
            "modes": self.modes,
            "width": self.width,
            "n_layers": self.n_layers,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "activation": self.activation,
        }


def param_shapes(config: FnoConfig) -> dict[str, tuple[int, ...]]:
    W, m = config.width, config.modes
    spectral = (W, W, m, 2) if config.spatial_dims == 1 else (2, W, W, m, m, 2)
    shapes: dict[str, tuple[int, ...]] = {
        "lift.weight": (config.in_channels, W),
        "lift.bias": (W,),
    }
    for layer in range(config.n_layers):
        shapes[f"spectral.{layer}"] = spectral
        shapes[f"bypass.{layer}.weight"] = (W, W)
        shapes[f"bypass.{layer}.bias"] = (W,)
    shapes["proj1.weight"] = (W, W)
    shapes["proj1.bias"] = (W,)
    shapes["proj2.weight"] = (W, config.out_channels)
    shapes["proj2.bias"] = (config.out_channels,)
    return shapes


@dataclass(frozen=True, eq=False)
class FnoParams:
    config: FnoConfig
    tensors: dict[str, Tensor]

    def __post_init__(self):
        expected = param_shapes(self.config)
        shapes = {k: tuple(t.shape) for k, t in self.tensors.items()}
        if shapes != expected:
            raise ShapeMismatch("parameter tensors do not match the FNO config")

    @property
    def names(self) -> list[str]:
        return list(param_shapes(self.config))

    def count(self) -> int:
        return sum(t.numel() for t in self.tensors.values())

    def flat(self) -> np.ndarray:
        return torch.cat([self.tensors[k].detach().reshape(-1) for k in self.names]).numpy().copy()

    @classmethod
    def from_flat(cls, config: FnoConfig, flat: np.ndarray) -> "FnoParams":
        vec = torch.as_tensor(np.asarray(flat, dtype=np.float64))
        tensors, offset = {}, 0
        for name, shape in param_shapes(config).items():
            size = int(np.prod(shape))
            tensors[name] = vec[offset : offset + size].reshape(shape).clone()
            offset += size
        if offset != vec.numel():
            raise ShapeMismatch(f"expected {offset} parameters, got {vec.numel()}")
        return cls(config, tensors)

    def with_tensors(self, **updates: Tensor) -> "FnoParams":
        return replace(self, tensors={**self.tensors, **updates})

    def leaves(self) -> "FnoParams":
        """Copy whose tensors are fresh autograd leaves."""
        return replace(
            self, tensors={k: t.detach().clone().requires_grad_(True) for k, t in self.tensors.items()}
        )


def fno_init(config: FnoConfig, rng_seed: int) -> FnoParams:
    gen = torch.Generator().manual_seed(rng_seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        u = torch.rand(shape, generator=gen, dtype=DTYPE)
        if name.startswith("spectral"):
            tensors[name] = u / config.width**2
        else:
            fan_in = shape[0] if name.endswith("weight") else _fan_in(config, name)
            bound = 1.0 / np.sqrt(fan_in)
            tensors[name] = (2 * u - 1) * bound
    return FnoParams(config, tensors)


def _fan_in(config: FnoConfig, bias_name: str) -> int:
    return config.in_channels if bias_name.startswith("lift") else config.width


def _affine(x: Tensor, params: FnoParams, name: str) -> Tensor:
    w = params.tensors[f"{name}.weight"]
    b = params.tensors[f"{name}.bias"]
    y = torch.einsum("bc...,co->bo...", x, w)
    return y + b.reshape((1, -1) + (1,) * (x.dim() - 2))


def _spectral(x: Tensor, weight: Tensor, modes: int) -> Tensor:
    if x.dim() == 3:
        n = x.shape[-1]
        x_ft = torch.fft.rfft(x)
        w = torch.complex(weight[..., 0], weight[..., 1])
        out_ft = torch.zeros(x.shape[0], w.shape[1], n // 2 + 1, dtype=x_ft.dtype)
        out_ft[:, :, :modes] = torch.einsum("bix,iox->box", x_ft[:, :, :modes], w)
        return torch.fft.irfft(out_ft, n=n)

    n1, n2 = x.shape[-2:]
    x_ft = torch.fft.rfft2(x)
    w = torch.complex(weight[..., 0], weight[..., 1])
    out_ft = torch.zeros(x.shape[0], w.shape[2], n1, n2 // 2 + 1, dtype=x_ft.dtype)
    out_ft[:, :, :modes, :modes] = torch.einsum(
        "bixy,ioxy->boxy", x_ft[:, :, :modes, :modes], w[0]
    )
    out_ft[:, :, -modes:, :modes] = torch.einsum(
        "bixy,ioxy->boxy", x_ft[:, :, -modes:, :modes], w[1]
    )
    return torch.fft.irfft2(out_ft, s=(n1, n2))


def encode(inputs: Tensor, grid: GridSpec) -> Tensor:
    """Stacks the input function with its coordinate channels: [batch, 1 + dims, *space]."""
    coords = [torch.as_tensor(c, dtype=DTYPE) for c in grid.mesh()]
    channels = [inputs] + [c.expand_as(inputs) for c in coords]
    return torch.stack(channels, dim=1)


def hidden_features(params: FnoParams, x: Tensor) -> Tensor:
    """Everything up to (and including) the first projection and its activation."""
    config = params.config
    n = x.shape[-1]
    if n < 2 * config.modes:
        raise ResolutionTooLow(f"{config.modes} modes need at least {2 * config.modes} points, got {n}")
    act = ACTIVATIONS[config.activation]
    x = _affine(x, params, "lift")
    for layer in range(config.n_layers):
        x = _spectral(x, params.tensors[f"spectral.{layer}"], config.modes) + _affine(
            x, params, f"bypass.{layer}"
        )
        if layer < config.n_layers - 1:
            x = act(x)
    return act(_affine(x, params, "proj1"))


def _decode(out: Tensor, kind: PdeKind) -> Tensor:
    return out if kind.dynamic else out[:, 0]


def forward(params: FnoParams, inputs: Tensor, kind: PdeKind, grid: GridSpec) -> Tensor:
    """Batched prediction with shape [batch, *grid.shape] for inputs of shape [batch, *space]."""
    hidden = hidden_features(params, encode(inputs, grid))
    return _decode(_affine(hidden, params, "proj2"), kind)


def fno_forward(params: FnoParams, input: Field, kind: PdeKind, grid: GridSpec) -> Field:
    with torch.no_grad():
        out = forward(params, torch.as_tensor(input.values)[None], kind, grid)
    return Field(out[0].numpy(), grid)


@dataclass(frozen=True, eq=False)
class Batch:
    kind: PdeKind
    grid: GridSpec
    params: dict[str, float]
    inputs: Tensor
    labels: Tensor | None = None

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx: Sequence[int] | np.ndarray) -> "Batch":
        sel = torch.as_tensor(np.asarray(idx, dtype=np.int64))
        labels = None if self.labels is None else self.labels[sel]
        return replace(self, inputs=self.inputs[sel], labels=labels)

    @classmethod
    def from_dataset(
        cls, dataset: Dataset, indices: Sequence[int] | None = None, labels: bool = True
    ) -> "Batch":
        idx = list(range(len(dataset))) if indices is None else [int(i) for i in indices]
        inputs = torch.as_tensor(np.stack([dataset.input_values(i) for i in idx]))
        label_tensor = None
        if labels:
            label_tensor = torch.as_tensor(np.stack([dataset.solution_values(i) for i in idx]))
        return cls(dataset.kind, dataset.working_grid, dataset.params, inputs, label_tensor)


def data_weight(grid: GridSpec) -> float:
    return grid.cell_volume * (grid.dt if grid.dynamic else 1.0)


def losses_from_prediction(
    pred: Tensor, batch: Batch, loss_kind: LossKind, pi: PiWeights
) -> Tensor:
    if loss_kind == "data":
        if batch.labels is None:
            raise MissingLabels("data loss needs labels")
        diff = (pred - batch.labels).reshape(len(batch), -1)
        return (diff**2).sum(dim=1) * data_weight(batch.grid)
    if loss_kind == "physics":
        return pi_loss_tensor(batch.kind, batch.grid, batch.params, batch.inputs, pred, pi)
    raise ConfigError(f"unknown loss kind {loss_kind!r}")


def per_sample_loss(
    params: FnoParams, batch: Batch, loss_kind: LossKind, pi: PiWeights | None = None
) -> Tensor:
    pred = forward(params, batch.inputs, batch.kind, batch.grid)
    return losses_from_prediction(pred, batch, loss_kind, pi or PiWeights())


def weighted_loss(
    params: FnoParams,
    batch: Batch,
    weights: Tensor | None,
    loss_kind: LossKind,
    pi: PiWeights | None = None,
) -> Tensor:
    losses = per_sample_loss(params, batch, loss_kind, pi)
    if weights is None:
        return losses.mean()
    return (weights * losses).sum() / weights.sum()


def loss_and_grad(
    params: FnoParams,
    batch: Batch,
    weights: Tensor | np.ndarray | None = None,
    loss_kind: LossKind = "data",
    pi: PiWeights | None = None,
) -> tuple[float, dict[str, Tensor]]:
    leaves = params.leaves()
    w = None if weights is None else torch.as_tensor(np.asarray(weights, dtype=np.float64))
    loss = weighted_loss(leaves, batch, w, loss_kind, pi)
    names = leaves.names
    grads = torch.autograd.grad(loss, [leaves.tensors[k] for k in names])
    return float(loss.detach()), dict(zip(names, grads))


def per_sample_features(
    params: FnoParams,
    batch: Batch,
    loss_kind: LossKind = "physics",
    pi: PiWeights | None = None,
    chunk_size: int = 64,
) -> FeatureMatrix:
    """
    Per-sample gradients of the loss with respect to the last projection
    (weight then bias, flattened), as columns of a [d, n] matrix.
    """
    pi = pi or PiWeights()
    columns, losses = [], []
    for start in range(0, len(batch), chunk_size):
        chunk = batch.subset(range(start, min(start + chunk_size, len(batch))))
        with torch.no_grad():
            hidden = hidden_features(params, encode(chunk.inputs, chunk.grid))
            raw = _affine(hidden, params, "proj2")
        out = raw.detach().requires_grad_(True)
        ell = losses_from_prediction(_decode(out, chunk.kind), chunk, loss_kind, pi)
        (g_out,) = torch.autograd.grad(ell.sum(), out)
        g_weight = torch.einsum("bw...,bo...->bwo", hidden, g_out).reshape(len(chunk), -1)
        g_bias = g_out.reshape(len(chunk), g_out.shape[1], -1).sum(dim=2)
        columns.append(torch.cat([g_weight, g_bias], dim=1))
        losses.append(ell.detach())
    matrix = torch.cat(columns).T.contiguous().numpy()
    return FeatureMatrix(matrix, torch.cat(losses).numpy(), loss_kind)


def last_layer_hvp(
    params: FnoParams,
    batch: Batch,
    loss_kind: LossKind = "physics",
    pi: PiWeights | None = None,
) -> Callable[[np.ndarray], np.ndarray]:
    """Hessian-vector product oracle of the batch loss with respect to the last projection."""
    leaves = {k: params.tensors[k].detach().clone().requires_grad_(True) for k in LAST_LAYER}
    loss = weighted_loss(params.with_tensors(**leaves), batch, None, loss_kind, pi)
    grads = torch.autograd.grad(loss, list(leaves.values()), create_graph=True)
    flat_grad = torch.cat([g.reshape(-1) for g in grads])

    def hvp(v: np.ndarray) -> np.ndarray:
        vt = torch.as_tensor(np.asarray(v, dtype=np.float64))
        hv = torch.autograd.grad(
            flat_grad, list(leaves.values()), grad_outputs=vt, retain_graph=True, allow_unused=True
        )
        parts = [
            (h if h is not None else torch.zeros_like(t)).reshape(-1)
            for h, t in zip(hv, leaves.values())
        ]
        return torch.cat(parts).detach().numpy()

    return hvp


def nrmse(prediction: Field | np.ndarray, truth: Field | np.ndarray) -> float:
    """||prediction - truth||^2 / ||truth||^2."""
    p = prediction.values if isinstance(prediction, Field) else np.asarray(prediction)
    t = truth.values if isinstance(truth, Field) else np.asarray(truth)
    if p.shape != t.shape:
        raise ShapeMismatch(f"prediction shape {p.shape} != truth shape {t.shape}")
    denom = float(np.sum(t**2))
    if denom == 0:
        raise ZeroReference("reference field is identically zero")
    return float(np.sum((p - t) ** 2)) / max(denom, 1e-12)


def mean_nrmse(predictions: np.ndarray, truths: np.ndarray) -> float:
    return float(np.mean([nrmse(p, t) for p, t in zip(predictions, truths)]))


def evaluate_nrmse(params: FnoParams, batch: Batch) -> float:
    if batch.labels is None:
        raise MissingLabels("evaluation needs labels")
    with torch.no_grad():
        pred = forward(params, batch.inputs, batch.kind, batch.grid)
    return mean_nrmse(pred.numpy(), batch.labels.numpy())


def save_checkpoint(path: Path | str, params: FnoParams, meta: dict[str, Any] | None = None) -> None:
    doc = {"version": __version__, "fno": params.config.json_dict(), **(meta or {})}
    write_checkpoint(Path(path), params.flat(), doc)


def load_checkpoint(path: Path | str) -> tuple[FnoParams, dict[str, Any]]:
    flat, doc = read_checkpoint(Path(path))
    config = FnoConfig(**doc["fno"])
    return FnoParams.from_flat(config, flat), doc


def test_parameter_count_is_resolution_free():
    config = FnoConfig(1, modes=4, width=4, n_layers=2, in_channels=2, out_channels=3)
    params = fno_init(config, 0)
    assert params.count() == params.flat().size == FnoParams.from_flat(config, params.flat()).count()
