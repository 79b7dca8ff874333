from __future__ import annotations

import math

import torch

from ..errors import NonFiniteGradientError
from .model import ModelState

BETAS = (0.9, 0.999)
EPS = 1e-8
WEIGHT_DECAY = 0.01


@torch.no_grad()
def adam_step(
    model: ModelState,
    gradients: dict[str, torch.Tensor],
    lr: float,
    *,
    betas: tuple[float, float] = BETAS,
    eps: float = EPS,
    weight_decay: float = WEIGHT_DECAY,
) -> ModelState:
    """One AdamW update, in place. Weight decay is decoupled from the moments."""
    for name, g in gradients.items():
        if not torch.isfinite(g).all():
            raise NonFiniteGradientError(name)
    b1, b2 = betas
    step = model.step_count + 1
    bias1 = 1 - b1**step
    bias2 = 1 - b2**step
    for name, p in model.params.items():
        g = gradients.get(name)
        if weight_decay:
            p.mul_(1 - lr * weight_decay)
        if g is None:
            continue
        m, v = model.exp_avg[name], model.exp_avg_sq[name]
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        denom = v.div(bias2).sqrt_().add_(eps)
        p.addcdiv_(m, denom, value=-lr / bias1)
    model.step_count = step
    return model


def global_norm(gradients: dict[str, torch.Tensor]) -> float:
    return math.sqrt(sum(float((g.double() ** 2).sum()) for g in gradients.values()))
