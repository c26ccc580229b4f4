"""Loss terms of the MReg objective.

All functions accept torch tensors and stay differentiable with respect to
their score/probability inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import torch

PROB_FLOOR = 1e-12
LAMBDA_SMOOTH = 0.01
LAMBDA_SPARSITY = 0.001
BINARY_ALPHA = (0.25, 0.75)


def _t(x, dtype=torch.float64):
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=dtype)


def focal_loss(probs, y: int, gamma: float = 2.0, alpha_w=None) -> torch.Tensor:
    """``-alpha_w[y] * (1 - p_y)**gamma * log(p_y)`` with ``p_y`` floored at 1e-12."""
    probs = _t(probs)
    n_cls = probs.shape[-1]
    if not 0 <= int(y) < n_cls:
        raise ValueError(f"label {y} outside [0, {n_cls})")
    p = probs[int(y)].clamp_min(PROB_FLOOR)
    w = 1.0 if alpha_w is None else float(alpha_w[int(y)])
    return -w * (1.0 - p) ** gamma * torch.log(p)


def l2cls(probs2, alpha: int, y2: int, gamma: float = 2.0, alpha_w=BINARY_ALPHA):
    """Focal loss on the selected instance's normal/MR probabilities."""
    probs2 = _t(probs2)
    if not 0 <= alpha < probs2.shape[0]:
        raise ValueError(f"alpha {alpha} outside [0, {probs2.shape[0]})")
    return focal_loss(probs2[alpha], y2, gamma, alpha_w)


def l3cls(instance_score_mixed, alpha: int, y3: int) -> torch.Tensor:
    """Squared error between the selected instance score and the grade."""
    if y3 not in (0, 1, 2):
        raise ValueError(f"grade label must be 0, 1 or 2, got {y3}")
    return (_t(instance_score_mixed)[alpha] - float(y3)) ** 2


def l_expert(instance_scores_expert, alpha: int, y3: int, gamma: float = 2.0,
             alpha_w=None) -> torch.Tensor:
    """Focal loss treating the three expert scores at ``alpha`` as grade logits.

    Softmax over experts replaces the hard argmax so the term has gradients.
    """
    logits = _t(instance_scores_expert)[:, alpha]
    return focal_loss(torch.softmax(logits, dim=0), y3, gamma, alpha_w)


def l_smooth(frame_scores_mixed, alpha: int) -> torch.Tensor:
    s = _t(frame_scores_mixed)[alpha]
    if s.shape[0] < 2:
        raise ValueError("smoothness needs at least two frames")
    return ((s[1:] - s[:-1]) ** 2).sum()


def l_sparsity(frame_scores_mixed, alpha: int) -> torch.Tensor:
    return _t(frame_scores_mixed)[alpha].abs().mean()


@dataclass
class LossBreakdown:
    l2cls: float
    l3cls: float
    lexpert: float
    lsmooth: float
    lsparsity: float
    total: float
    lambda1: float = LAMBDA_SMOOTH
    lambda2: float = LAMBDA_SPARSITY

    def as_dict(self) -> dict:
        return asdict(self)


def total_loss(parts: dict, lambda1: float = LAMBDA_SMOOTH, lambda2: float = LAMBDA_SPARSITY):
    """Weighted sum of the five parts.

    ``parts`` maps ``l2cls, l3cls, lexpert, lsmooth, lsparsity`` to scalars or
    0-d tensors. Returns ``(total, LossBreakdown)``; ``total`` keeps the
    autograd graph when the parts carry one.
    """
    names = ("l2cls", "l3cls", "lexpert", "lsmooth", "lsparsity")
    vals = {}
    for name in names:
        v = parts.get(name, 0.0)
        f = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        if not math.isfinite(f):
            raise FloatingPointError(f"loss term {name} is not finite ({f})")
        vals[name] = v
    total = (vals["l2cls"] + vals["l3cls"] + vals["lexpert"]
             + lambda1 * vals["lsmooth"] + lambda2 * vals["lsparsity"])
    scalars = {k: (float(v.detach()) if isinstance(v, torch.Tensor) else float(v))
               for k, v in vals.items()}
    tot = float(total.detach()) if isinstance(total, torch.Tensor) else float(total)
    return total, LossBreakdown(**scalars, total=tot, lambda1=lambda1, lambda2=lambda2)
