import logging
import math
from dataclasses import dataclass

import torch
from torch import Tensor

from .fno import FnoParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AdamState:
    step: int
    m: dict[str, Tensor]
    v: dict[str, Tensor]


def adam_init(params: FnoParams) -> AdamState:
    zeros = {k: torch.zeros_like(t) for k, t in params.tensors.items()}
    return AdamState(0, zeros, {k: z.clone() for k, z in zeros.items()})


def adam_step(
    params: FnoParams,
    grads: dict[str, Tensor],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[FnoParams, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    b1, b2 = betas
    step = state.step + 1
    tensors, m, v = {}, {}, {}
    with torch.no_grad():
        for name, p in params.tensors.items():
            g = grads[name]
            m[name] = b1 * state.m[name] + (1 - b1) * g
            v[name] = b2 * state.v[name] + (1 - b2) * g * g
            m_hat = m[name] / (1 - b1**step)
            v_hat = v[name] / (1 - b2**step)
            tensors[name] = p.detach() - lr * m_hat / (torch.sqrt(v_hat) + eps)
    return FnoParams(params.config, tensors), AdamState(step, m, v)


def cosine_lr(epoch: int, epochs: int, lr: float, lr_min: float = 1e-5) -> float:
    """Cosine decay from lr at epoch 0 towards lr_min at the last epoch."""
    if epochs <= 1:
        return lr
    lr_min = min(lr_min, lr)
    return lr_min + 0.5 * (lr - lr_min) * (1 + math.cos(math.pi * epoch / (epochs - 1)))


def test_cosine_endpoints():
    assert cosine_lr(0, 10, 1e-3) == 1e-3
    assert math.isclose(cosine_lr(9, 10, 1e-3), 1e-5)
