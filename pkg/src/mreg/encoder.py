"""Small trainable stand-in for the X-CLIP video/text encoder.

Produces the three feature tensors the MReg head consumes:

* ``f_video``  ``[I, T, D]``        per-frame video features
* ``f_text2``  ``[I, 2, D]``        normal/MR class embeddings
* ``f_text3``  ``[I, T, P, 3, D]``  per-patch features modulated by the three grade embeddings
"""
from __future__ import annotations

import math
from typing import NamedTuple

import torch
from torch import nn


class FeatureSet(NamedTuple):
    f_video: torch.Tensor
    f_text2: torch.Tensor
    f_text3: torch.Tensor


def uniform_init_(tensor: torch.Tensor, fan_in: int, fan_out: int,
                  generator: torch.Generator) -> torch.Tensor:
    """Glorot-uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        tensor.uniform_(-bound, bound, generator=generator)
    return tensor


class VideoTextEncoder(nn.Module):
    """Linear patch embedding, mean patch pooling and one temporal attention layer."""

    def __init__(self, dim: int = 64, n_patches: int = 16, frame_hw=(48, 48),
                 seed: int = 0, dtype=torch.float32):
        super().__init__()
        if dim < 1 or n_patches < 1:
            raise ValueError("dim and n_patches must be >= 1")
        grid = math.isqrt(n_patches)
        if grid * grid != n_patches:
            raise ValueError(f"n_patches must be a perfect square, got {n_patches}")
        h, w = frame_hw
        if h % grid or w % grid:
            raise ValueError(f"frame size {frame_hw} is not divisible by the {grid}x{grid} patch grid")
        self.dim, self.n_patches, self.grid = dim, n_patches, grid
        self.frame_hw = (h, w)
        self.patch_hw = (h // grid, w // grid)
        patch_dim = 3 * self.patch_hw[0] * self.patch_hw[1]

        kw = dict(dtype=dtype)
        self.patch_weight = nn.Parameter(torch.empty(patch_dim, dim, **kw))
        self.patch_bias = nn.Parameter(torch.zeros(dim, **kw))
        self.w_query = nn.Parameter(torch.empty(dim, dim, **kw))
        self.w_key = nn.Parameter(torch.empty(dim, dim, **kw))
        self.w_value = nn.Parameter(torch.empty(dim, dim, **kw))
        self.class_emb2 = nn.Parameter(torch.empty(2, dim, **kw))
        self.class_emb3 = nn.Parameter(torch.empty(3, dim, **kw))

        g = torch.Generator().manual_seed(int(seed))
        uniform_init_(self.patch_weight, patch_dim, dim, g)
        for p in (self.w_query, self.w_key, self.w_value):
            uniform_init_(p, dim, dim, g)
        uniform_init_(self.class_emb2, dim, dim, g)
        # grade embeddings start near 1 so f_text3 initially mirrors the patch features
        with torch.no_grad():
            self.class_emb3.uniform_(0.5, 1.5, generator=g)

    def patchify(self, clips: torch.Tensor) -> torch.Tensor:
        """``[I, T, 3, H, W]`` -> ``[I, T, P, 3*ph*pw]``."""
        i, t, c, h, w = clips.shape
        ph, pw = self.patch_hw
        x = clips.reshape(i, t, c, self.grid, ph, self.grid, pw)
        x = x.permute(0, 1, 3, 5, 2, 4, 6)
        return x.reshape(i, t, self.n_patches, c * ph * pw)

    def forward(self, clips: torch.Tensor) -> FeatureSet:
        if clips.ndim != 5 or clips.shape[2] != 3 or tuple(clips.shape[-2:]) != self.frame_hw:
            raise ValueError(
                f"expected clips of shape [I, T, 3, {self.frame_hw[0]}, {self.frame_hw[1]}], "
                f"got {tuple(clips.shape)}")
        if clips.dtype == torch.uint8:
            clips = clips.to(self.patch_weight.dtype) / 255.0
        n_inst, n_t = clips.shape[:2]

        patches = self.patchify(clips) @ self.patch_weight + self.patch_bias  # [I,T,P,D]
        frame = patches.mean(dim=2)  # [I,T,D]

        q = frame @ self.w_query
        k = frame @ self.w_key
        attn = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(self.dim), dim=-1)
        f_video = frame + attn @ (frame @ self.w_value)

        f_text2 = self.class_emb2.unsqueeze(0).expand(n_inst, 2, self.dim)
        f_text3 = patches.unsqueeze(3) * self.class_emb3.view(1, 1, 1, 3, self.dim)
        return FeatureSet(f_video, f_text2, f_text3)


def init_encoder(dim: int = 64, n_patches: int = 16, frame_hw=(48, 48), seed: int = 0,
                 dtype=torch.float32) -> VideoTextEncoder:
    return VideoTextEncoder(dim, n_patches, frame_hw, seed=seed, dtype=dtype)


def encode(clips, encoder: VideoTextEncoder) -> FeatureSet:
    if not isinstance(clips, torch.Tensor):
        clips = torch.as_tensor(clips)
    return encoder(clips)
