"""Loss composition (soft Dice + weighted Focal + sigma penalty) and the
hard Dice evaluation metric."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class LossConfig:
    focal_weight: float = 0.1
    focal_gamma: float = 0.5
    eta: float = 1e-4           # L2 penalty on the attention sigmas
    dice_smooth: float = 1.0

    def __post_init__(self):
        if self.focal_weight < 0 or self.focal_gamma < 0 or self.eta < 0:
            raise ValueError("loss weights must be non-negative")
        if self.dice_smooth <= 0:
            raise ValueError("dice_smooth must be positive")


def _batched(t):
    t = t if isinstance(t, Tensor) else Tensor(np.asarray(t, dtype=np.float64))
    if t.ndim == 3:
        t = t.reshape((1,) + t.shape)
    return t


def dice_loss(probs, target, foreground, smooth=1.0):
    """1 - mean over foreground classes of the smoothed soft Dice overlap.

    probs, target: [N, C, H, W] (or [C, H, W]); target one-hot.
    """
    foreground = sorted(foreground)
    if not foreground:
        raise ValueError("dice_loss: foreground class set is empty")
    probs, target = _batched(probs), _batched(target)
    terms = []
    for c in foreground:
        p = probs[:, c]
        t = target[:, c]
        inter = (p * t).sum()
        terms.append((inter * 2.0 + smooth) / (p.sum() + t.sum() + smooth))
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return 1.0 - acc / float(len(foreground))


def focal_loss(probs, target, gamma=0.5):
    """Mean over pixels of -(1 - p_t)^gamma * log(p_t), every class included."""
    probs, target = _batched(probs), _batched(target)
    pt = (probs * target).sum(axis=1)      # [N, H, W]
    pt = pt.clamp_min(1e-12)
    log_pt = pt.log()
    if gamma == 0:
        return -(log_pt.mean())
    weight = (1.0 - pt).clamp_min(1e-12) ** gamma
    return -((weight * log_pt).mean())


def sigma_penalty(sigmas, eta=1e-4):
    """eta * sum of squared raw sigmas (summed over channels/axes/layers,
    averaged over the batch).  Returns a Tensor; 0.0 with no INSIDE layers."""
    if not sigmas:
        return Tensor(0.0)
    total = None
    for s in sigmas:
        s = s if isinstance(s, Tensor) else Tensor(np.asarray(s, dtype=np.float64))
        if s.ndim == 1:
            s = s.reshape((1,) + s.shape)
        term = s.square().sum(axis=tuple(range(1, s.ndim))).mean()
        total = term if total is None else total + term
    return total * eta


def combined_loss(probs, target, sigmas, cfg, foreground=(1,)):
    """L = L_dice + focal_weight * L_focal + eta * ||sigma||^2."""
    loss = dice_loss(probs, target, foreground, smooth=cfg.dice_smooth)
    if cfg.focal_weight:
        loss = loss + cfg.focal_weight * focal_loss(probs, target, cfg.focal_gamma)
    penalty = sigma_penalty(sigmas, cfg.eta)
    return loss + penalty


def dice_score(pred_labels, target_labels, foreground=(1,)):
    """Hard Dice 2|A&B| / (|A| + |B|) per foreground class plus the mean.

    Both masks empty for a class counts as a perfect score of 1.
    """
    pred = np.asarray(pred_labels)
    target = np.asarray(target_labels)
    per_class = {}
    for c in sorted(foreground):
        a = pred == c
        b = target == c
        na, nb = int(a.sum()), int(b.sum())
        if na == 0 and nb == 0:
            per_class[c] = 1.0
        else:
            per_class[c] = 2.0 * int((a & b).sum()) / (na + nb)
    mean = float(np.mean(list(per_class.values())))
    return per_class, mean


def one_hot(labels, num_classes, dtype=np.float32):
    """Label map [..., H, W] -> one-hot [..., num_classes, H, W]."""
    labels = np.asarray(labels)
    out = np.zeros((num_classes,) + labels.shape, dtype=dtype)
    for c in range(num_classes):
        out[c] = labels == c
    if labels.ndim == 3:                  # batched input: [C, N, H, W] -> [N, C, H, W]
        out = out.transpose(1, 0, 2, 3)
    return out
