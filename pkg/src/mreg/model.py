"""The MReg head.

Stage I scores every instance for MR presence and picks the most suspicious
clip. Stage II amplifies the video features, routes them through three
gated experts, fuses them with the grade-level patch/text features and
reads out a continuous severity value that is cut into three grades.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .encoder import FeatureSet, uniform_init_

N_EXPERTS = 3
NORM_EPS = 1e-5
_TINY = 1e-12


@dataclass
class ModelOutput:
    probs2: torch.Tensor                 # [I, 2]
    alpha: int
    frame_scores_expert: torch.Tensor    # [3, I, T]
    frame_scores_mixed: torch.Tensor     # [I, T]
    instance_score_mixed: torch.Tensor   # [I]
    instance_scores_expert: torch.Tensor  # [3, I]
    regression_value: torch.Tensor       # scalar
    grade_pred: int

    def detach(self) -> "ModelOutput":
        kw = {k: (v.detach() if isinstance(v, torch.Tensor) else v) for k, v in vars(self).items()}
        return ModelOutput(**kw)


def _unit(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    # zero vectors stay zero instead of producing NaN
    return x / x.norm(dim=dim, keepdim=True).clamp_min(_TINY)


def stage1_probs(f_video: torch.Tensor, f_text2: torch.Tensor,
                 temperature: float | torch.Tensor = 0.07) -> torch.Tensor:
    """Per-instance normal/MR probabilities from cosine similarity.

    The clip vector is the temporal mean of ``f_video``; logits are its cosine
    similarity to each class embedding divided by ``temperature``.
    """
    if f_video.shape[0] != f_text2.shape[0] or f_video.shape[-1] != f_text2.shape[-1]:
        raise ValueError(f"incompatible shapes {tuple(f_video.shape)} and {tuple(f_text2.shape)}")
    v = _unit(f_video.mean(dim=1))
    t = _unit(f_text2)
    logits = torch.einsum("id,icd->ic", v, t) / temperature
    return torch.softmax(logits, dim=-1)


def select_instance(probs2) -> int:
    """Index of the instance with the highest MR probability (lowest index on ties)."""
    col = np.asarray(probs2.detach().cpu() if isinstance(probs2, torch.Tensor) else probs2)[:, 1]
    if col.size == 0:
        raise ValueError("probs2 must contain at least one instance")
    return int(np.argmax(col))


def amplify(f_video: torch.Tensor, beta, conv_kernel: torch.Tensor,
            conv_bias: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """``N(f_video + beta * Conv(unit(f_video)))``.

    ``unit`` scales each frame vector to unit L2 norm, ``Conv`` is a
    zero-padded temporal convolution with D in/out channels and ``N``
    z-scores every channel over the joint (instance, time) axes.
    """
    k = conv_kernel.shape[-1]
    if k % 2 == 0:
        raise ValueError(f"temporal kernel width must be odd, got {k}")
    u = _unit(f_video).transpose(1, 2)  # [I, D, T]
    c = F.conv1d(u, conv_kernel, conv_bias, padding=k // 2).transpose(1, 2)
    return normalize_time_instance(f_video + beta * c, eps)


def normalize_time_instance(x: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """Z-score each feature channel of ``[I, T, D]`` over the instance and time axes."""
    mean = x.mean(dim=(0, 1), keepdim=True)
    var = x.var(dim=(0, 1), unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps)


def expert_gates(weights: torch.Tensor) -> torch.Tensor:
    """Softmax over experts of the Frobenius norms of ``weights[e]``."""
    norms = weights.flatten(1).norm(dim=1)
    return torch.softmax(norms, dim=0)


def expert_video_features(f_amp: torch.Tensor, w_video: torch.Tensor,
                          gates: torch.Tensor | None = None) -> torch.Tensor:
    """Map ``f_amp`` into one direction per expert and scale by its gate: ``[E, I, T, D]``."""
    if gates is None:
        gates = expert_gates(w_video)
    mapped = torch.einsum("itd,edk->eitk", f_amp, w_video)
    return mapped * gates.view(-1, 1, 1, 1)


def text_expert_features(f_text3: torch.Tensor, w_text: torch.Tensor,
                         gates: torch.Tensor | None = None) -> torch.Tensor:
    """Expert ``e`` transforms the grade-``e`` slice of ``f_text3``: ``[E, I, T, P, D]``."""
    if gates is None:
        gates = expert_gates(w_text)
    mapped = torch.einsum("itped,edk->eitpk", f_text3, w_text)
    return mapped * gates.view(-1, 1, 1, 1, 1)


def fuse_raw(f_amp_i: torch.Tensor, t_feats: torch.Tensor) -> torch.Tensor:
    """Patch-averaged scaled dot product between video and text expert features: ``[E, I, T]``."""
    d = f_amp_i.shape[-1]
    sim = torch.einsum("eitd,eitpd->eitp", f_amp_i, t_feats) / math.sqrt(d)
    return sim.mean(dim=-1)


def fuse_scores(f_amp_i: torch.Tensor, f_text3: torch.Tensor, w_text: torch.Tensor,
                scale=1.0, shift=0.0, gates: torch.Tensor | None = None) -> torch.Tensor:
    """Per-expert per-frame scores ``[E, I, T]`` after the shared affine read-out."""
    raw = fuse_raw(f_amp_i, text_expert_features(f_text3, w_text, gates))
    return scale * raw + shift


def mixing_weights(g_video: torch.Tensor, g_text: torch.Tensor) -> torch.Tensor:
    g = g_video * g_text
    return g / g.sum()


def mix_experts(frame_scores_expert: torch.Tensor, gates_mix: torch.Tensor):
    """Convex combination of expert frame scores plus instance-level means.

    Returns ``(frame_scores_mixed [I, T], instance_score_mixed [I],
    instance_scores_expert [E, I])``.
    """
    mixed = torch.einsum("e,eit->it", gates_mix, frame_scores_expert)
    return mixed, mixed.mean(dim=-1), frame_scores_expert.mean(dim=-1)


def discretize(r, thre1: float = 0.5, thre2: float = 1.5):
    """Cut regression values into grades: ``[thre1, thre2)`` is grade 1.

    Scalars return an ``int``; arrays return an integer array.
    """
    if not thre1 < thre2:
        raise ValueError(f"thresholds must satisfy thre1 < thre2, got {thre1}, {thre2}")
    if isinstance(r, torch.Tensor):
        r = r.detach().cpu().numpy()
    arr = np.asarray(r, dtype=np.float64)
    out = (arr >= thre1).astype(np.int64) + (arr >= thre2).astype(np.int64)
    return int(out) if out.ndim == 0 else out


class MRegHead(nn.Module):
    """Trainable parameters of the stage-I/stage-II head.

    ``mode`` is ``"regression"`` (default) or ``"classification"``; in the
    latter the three per-expert instance scores act as grade logits.
    """

    def __init__(self, dim: int = 64, beta: float = 2.0, kernel_width: int = 3,
                 thresholds=(0.5, 1.5), use_amp: bool = True, use_moe: bool = True,
                 mode: str = "regression", temperature: float = 0.07, seed: int = 0,
                 dtype=torch.float32):
        super().__init__()
        if kernel_width % 2 == 0:
            raise ValueError("kernel_width must be odd")
        if mode not in ("regression", "classification"):
            raise ValueError(f"unknown mode {mode!r}")
        if not thresholds[0] < thresholds[1]:
            raise ValueError(f"thresholds must be increasing, got {thresholds}")
        self.dim = dim
        self.thresholds = tuple(float(t) for t in thresholds)
        self.use_amp = use_amp
        self.use_moe = use_moe
        self.mode = mode

        kw = dict(dtype=dtype)
        self.register_buffer("beta", torch.tensor(float(beta) if use_amp else 0.0, **kw))
        self.conv_kernel = nn.Parameter(torch.empty(dim, dim, kernel_width, **kw))
        self.conv_bias = nn.Parameter(torch.zeros(dim, **kw))
        self.w_video = nn.Parameter(torch.empty(N_EXPERTS, dim, dim, **kw))
        self.w_text = nn.Parameter(torch.empty(N_EXPERTS, dim, dim, **kw))
        self.log_temperature = nn.Parameter(torch.tensor(math.log(temperature), **kw))
        self.score_scale = nn.Parameter(torch.tensor(1.0, **kw))
        self.score_shift = nn.Parameter(torch.tensor(0.0, **kw))

        g = torch.Generator().manual_seed(int(seed) + 7919)
        uniform_init_(self.conv_kernel, dim * kernel_width, dim * kernel_width, g)
        uniform_init_(self.w_video, dim, dim, g)
        uniform_init_(self.w_text, dim, dim, g)

    def gates(self):
        if not self.use_moe:
            one = torch.ones(1, dtype=self.w_video.dtype)
            return one, one
        return expert_gates(self.w_video), expert_gates(self.w_text)

    def forward(self, feats: FeatureSet, alpha: int | None = None) -> ModelOutput:
        f_video, f_text2, f_text3 = feats
        probs2 = stage1_probs(f_video, f_text2, self.log_temperature.exp())
        if alpha is None:
            alpha = select_instance(probs2)

        f_amp = amplify(f_video, self.beta, self.conv_kernel, self.conv_bias)
        g_video, g_text = self.gates()
        if self.use_moe:
            f_amp_i = expert_video_features(f_amp, self.w_video, g_video)
            scores = fuse_scores(f_amp_i, f_text3, self.w_text, self.score_scale,
                                 self.score_shift, g_text)
            gates_mix = mixing_weights(g_video, g_text)
        else:
            # single expert with unit gate fused against the grade-averaged text features
            f_amp_i = expert_video_features(f_amp, self.w_video[:1], g_video)
            text = f_text3.mean(dim=3, keepdim=True)
            single = fuse_scores(f_amp_i, text, self.w_text[:1], self.score_scale,
                                 self.score_shift, g_text)
            scores = single.expand(N_EXPERTS, *single.shape[1:])
            gates_mix = torch.full((N_EXPERTS,), 1.0 / N_EXPERTS, dtype=scores.dtype)

        mixed, inst_mixed, inst_expert = mix_experts(scores, gates_mix)
        if self.mode == "classification":
            p = torch.softmax(inst_expert[:, alpha], dim=0)
            value = (p * torch.arange(N_EXPERTS, dtype=p.dtype)).sum()
            grade = int(torch.argmax(inst_expert[:, alpha]))
        else:
            value = inst_mixed[alpha]
            grade = discretize(float(value.detach()), *self.thresholds)
        return ModelOutput(probs2, int(alpha), scores, mixed, inst_mixed, inst_expert, value, grade)


class MRegNet(nn.Module):
    """Encoder plus head; ``forward`` maps one bag of clips to a :class:`ModelOutput`."""

    def __init__(self, encoder: nn.Module, head: MRegHead):
        super().__init__()
        self.encoder = encoder
        self.head = head

    def forward(self, clips: torch.Tensor, alpha: int | None = None) -> ModelOutput:
        return self.head(self.encoder(clips), alpha=alpha)
