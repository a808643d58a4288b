"""Classification objectives on logits (torch, differentiable)."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F


def _as_tensor(x, like: torch.Tensor) -> torch.Tensor:
    if torch.is_tensor(x):
        return x.to(like.device)
    return torch.as_tensor(np.asarray(x), device=like.device)


def smoothed_targets(class_index, num_classes: int, eps: float = 0.1, dtype=torch.float64) -> torch.Tensor:
    idx = torch.as_tensor(np.asarray(class_index) if not torch.is_tensor(class_index) else class_index)
    idx = idx.long().reshape(-1)
    if idx.numel() and (idx.min() < 0 or idx.max() >= num_classes):
        raise ValueError(f"class index out of range [0, {num_classes})")
    return (1.0 - eps) * F.one_hot(idx, num_classes).to(dtype) + eps / num_classes


def smoothed_ce_loss(logits: torch.Tensor, target, eps: float = 0.1) -> torch.Tensor:
    """Cross-entropy against (1 - eps) * onehot + eps / C, averaged over the batch.

    ``target`` is a vector of class indices, or a (B, C) matrix of soft
    targets which is then smoothed the same way.
    """
    logits = torch.atleast_2d(logits)
    c = logits.shape[-1]
    if c < 2:
        raise ValueError("need at least 2 classes")
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"label smoothing must be in [0, 1), got {eps}")
    target = _as_tensor(target, logits)
    if target.dim() == 2 and target.is_floating_point():
        t = (1.0 - eps) * target.to(logits.dtype) + eps / c
    else:
        t = smoothed_targets(target, c, eps, logits.dtype)
    return -(t * F.log_softmax(logits, dim=-1)).sum(dim=-1).mean()


def bce_loss(logits: torch.Tensor, target) -> torch.Tensor:
    """Mean binary cross-entropy with logits, in the overflow-free form
    max(z, 0) - z*t + log(1 + exp(-|z|))."""
    target = _as_tensor(target, logits).to(logits.dtype)
    if target.shape != logits.shape:
        target = target.reshape(logits.shape)
    if torch.any(target < 0) or torch.any(target > 1):
        raise ValueError("BCE targets must lie in [0, 1]")
    return (logits.clamp(min=0) - logits * target + torch.log1p(torch.exp(-logits.abs()))).mean()


def loss_fn(kind: str, logits, targets, label_smoothing: float = 0.1) -> torch.Tensor:
    if kind == "smoothed_ce":
        return smoothed_ce_loss(logits, targets, label_smoothing)
    if kind == "bce":
        return bce_loss(logits, targets)
    raise ValueError(f"unknown loss kind {kind!r}")
