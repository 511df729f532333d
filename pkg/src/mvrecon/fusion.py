"""Context-aware score-map fusion of per-view coarse volumes.

Each view's 9-channel context (the decoder's penultimate 8-channel tap plus
the coarse volume itself) is scored voxel-wise by a small shared 3D conv
network; scores are softmax-normalized across views and the coarse volumes
are blended by the resulting convex weights.

Reductions over the view axis sort their addends first. Floating-point
addition is not associative, so summing in a canonical (sorted) order is what
makes the fused output bitwise invariant under view permutations.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import DegenerateInputError, DivergenceError, ShapeMismatchError
from .network import DecoderOutput

CONTEXT_CHANNELS = 9
SCORER_LEAKY_SLOPE = 0.01


def _sorted_sum(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Order-canonical reduction: permuting slices along ``dim`` cannot
    change the result, even in floating point."""
    return torch.sort(t, dim=dim).values.sum(dim=dim)


def build_context(dec: DecoderOutput) -> torch.Tensor:
    """Concatenate the decoder's last two layer outputs into a 9-channel
    context volume; the coarse volume occupies the final channel."""
    if dec.tap_penultimate.shape[-3:] != dec.coarse.shape[-3:]:
        raise ShapeMismatchError(
            f"decoder taps disagree on resolution: "
            f"{tuple(dec.tap_penultimate.shape)} vs {tuple(dec.coarse.shape)}"
        )
    if dec.tap_penultimate.shape[-4] != 8 or dec.coarse.shape[-4] != 1:
        raise ShapeMismatchError("context taps must carry 8 + 1 channels")
    return torch.cat([dec.tap_penultimate, dec.coarse], dim=-4)


class ContextScorer(nn.Module):
    """Five 3^3-kernel conv layers scoring a 9-channel context volume.

    Layers 1-4 keep 9 channels (batch norm + leaky ReLU each); the final
    layer outputs the single raw score map. In multiscale mode the final
    layer consumes the concatenated outputs of all four earlier layers (36
    channels); the single-scale ablation feeds it layer 4 alone.
    """

    def __init__(self, multiscale: bool = True):
        super().__init__()
        self.multiscale = multiscale

        def block():
            return nn.Sequential(
                nn.Conv3d(CONTEXT_CHANNELS, CONTEXT_CHANNELS, 3, padding=1, bias=False),
                nn.BatchNorm3d(CONTEXT_CHANNELS),
                nn.LeakyReLU(SCORER_LEAKY_SLOPE, inplace=True),
            )

        self.block1 = block()
        self.block2 = block()
        self.block3 = block()
        self.block4 = block()
        final_in = 4 * CONTEXT_CHANNELS if multiscale else CONTEXT_CHANNELS
        self.final = nn.Conv3d(final_in, 1, 3, padding=1)

    def forward(self, context: torch.Tensor) -> torch.Tensor:
        if context.shape[-4] != CONTEXT_CHANNELS:
            raise ShapeMismatchError(
                f"scorer expects {CONTEXT_CHANNELS}-channel contexts, "
                f"got {context.shape[-4]}"
            )
        lead = context.shape[:-4]
        x = context.reshape(-1, *context.shape[-4:])
        f1 = self.block1(x)
        f2 = self.block2(f1)
        f3 = self.block3(f2)
        f4 = self.block4(f3)
        if self.multiscale:
            raw = self.final(torch.cat([f1, f2, f3, f4], dim=1))
        else:
            raw = self.final(f4)
        return raw.reshape(*lead, *raw.shape[1:])


@dataclass
class ScoreStack:
    """Raw and softmax-normalized per-view score maps; ``view_dim`` names the
    axis indexing views."""

    raw: torch.Tensor
    normalized: torch.Tensor
    view_dim: int = 0

    @property
    def n_views(self) -> int:
        return self.raw.shape[self.view_dim]


def normalize_scores(raw: torch.Tensor, view_dim: int = 0) -> ScoreStack:
    """Per-voxel softmax across views, stabilized by subtracting the
    per-voxel maximum before exponentiation."""
    if raw.shape[view_dim] < 1:
        raise DegenerateInputError("score stack must contain at least one view")
    if not torch.isfinite(raw).all():
        raise DivergenceError("raw scores contain non-finite values")
    peak = raw.max(dim=view_dim, keepdim=True).values
    exps = torch.exp(raw - peak)
    denom = _sorted_sum(exps, dim=view_dim).unsqueeze(view_dim)
    return ScoreStack(raw=raw, normalized=exps / denom, view_dim=view_dim)


def fuse(coarse: torch.Tensor, scores, view_dim: int = 0) -> torch.Tensor:
    """Blend coarse volumes with normalized scores: the per-voxel sum of
    score * value over views, clamped to the per-voxel coarse value range so
    the convex-combination bounds hold exactly in floating point."""
    normalized = scores.normalized if isinstance(scores, ScoreStack) else scores
    if normalized.shape != coarse.shape:
        raise ShapeMismatchError(
            f"scores {tuple(normalized.shape)} do not match coarse volumes "
            f"{tuple(coarse.shape)}"
        )
    fused = _sorted_sum(normalized * coarse, dim=view_dim)
    lo = coarse.min(dim=view_dim).values
    hi = coarse.max(dim=view_dim).values
    return torch.minimum(torch.maximum(fused, lo), hi)


def fuse_average(coarse: torch.Tensor, view_dim: int = 0) -> torch.Tensor:
    """Ablation baseline: plain per-voxel mean of the coarse volumes."""
    n = coarse.shape[view_dim] if coarse.ndim > view_dim else 0
    if n < 1:
        raise DegenerateInputError("cannot average an empty volume stack")
    return _sorted_sum(coarse, dim=view_dim) / n


def fuse_scored(coarse: torch.Tensor, contexts: torch.Tensor, scorer: ContextScorer,
                view_dim: int = 0):
    """Full pipeline for one view stack: score -> normalize -> blend.

    Returns (fused volume, ScoreStack).
    """
    stack = normalize_scores(scorer(contexts), view_dim=view_dim)
    return fuse(coarse, stack, view_dim=view_dim), stack


def fuse_singlescale(coarse: torch.Tensor, contexts: torch.Tensor,
                     scorer: ContextScorer, view_dim: int = 0):
    """Ablation baseline: the same blending driven by a plain five-layer
    scorer chain (no multi-scale concatenation into the final layer)."""
    if scorer.multiscale:
        raise ShapeMismatchError("fuse_singlescale needs a single-scale scorer")
    return fuse_scored(coarse, contexts, scorer, view_dim=view_dim)
