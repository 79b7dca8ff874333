from __future__ import annotations

import torch


def masked_loss(logits: torch.Tensor, targets, supervised, weight: float):
    """Weighted cross-entropy summed over supervised slots, plus its gradient at the logits.

    ``logits`` is ``(n, num_outputs)``. Unsupervised slots get exactly zero gradient.
    """
    logits = torch.as_tensor(logits)
    targets = torch.as_tensor(targets, dtype=torch.long)
    sup = torch.as_tensor(supervised, dtype=torch.bool)
    logp = torch.log_softmax(logits.detach(), dim=-1)
    nll = -logp.gather(-1, targets[..., None])[..., 0]
    loss = weight * nll[sup].sum()
    grad = logp.exp()
    grad.scatter_add_(-1, targets[..., None], -torch.ones_like(grad[..., :1]))
    grad = grad * (weight * sup.to(grad.dtype))[..., None]
    return float(loss), grad


def batch_loss(logits: torch.Tensor, targets, supervised, weights):
    """Mean over entries of each entry's weighted masked sum. ``logits`` is ``(B, T, V)``."""
    w = torch.as_tensor(weights, dtype=logits.dtype)
    B = logits.shape[0]
    logp = torch.log_softmax(logits.detach(), dim=-1)
    nll = -logp.gather(-1, targets[..., None])[..., 0]
    sup = supervised.to(logits.dtype)
    loss = float((w * (nll * sup).sum(-1)).sum() / B)
    grad = logp.exp()
    grad.scatter_add_(-1, targets[..., None], -torch.ones_like(grad[..., :1]))
    grad = grad * (sup * w[:, None] / B)[..., None]
    return loss, grad
