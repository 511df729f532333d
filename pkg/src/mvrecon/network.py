"""Encoder, 2D->3D lifting, volumetric decoder, and refiner.

All modules run in float32 for training/inference; gradient verification
rebuilds them in float64. View sharing is structural: the same encoder and
decoder instances process every view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .config import (
    BACKBONE_CHANNELS,
    REFINER_DECODER_CHANNELS,
    REFINER_ENCODER_CHANNELS,
    REFINER_FC_DIMS,
    RunConfig,
)
from .errors import ConfigurationError, DegenerateInputError, ShapeMismatchError
from .voxel import VoxelGrid

BOTTLENECK_CHANNELS = 128  # refiner: 128 x 4^3 = 8192-dim bottleneck
BOTTLENECK_SIDE = 4


def _conv_bn_relu_2d(cin, cout, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class _ResidualStage(nn.Module):
    """Stride-2 residual block: two 3x3 convs with a projected shortcut."""

    def __init__(self, cin, cout):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=2, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.shortcut = nn.Sequential(
            nn.Conv2d(cin, cout, 1, stride=2, bias=False),
            nn.BatchNorm2d(cout),
        )
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.shortcut(x))


class Backbone(nn.Module):
    """Compact residual stack: three stride-2 stages, then a 1x1 projection
    to 512 channels at 1/8 spatial resolution."""

    def __init__(self):
        super().__init__()
        self.stage1 = _ResidualStage(3, 32)
        self.stage2 = _ResidualStage(32, 64)
        self.stage3 = _ResidualStage(64, 128)
        self.project = nn.Sequential(
            nn.Conv2d(128, BACKBONE_CHANNELS, 1, bias=False),
            nn.BatchNorm2d(BACKBONE_CHANNELS),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.project(self.stage3(self.stage2(self.stage1(x))))


class EncoderHead(nn.Module):
    """Three 3x3 conv blocks; 2x2 max-pooling after the second and third."""

    def __init__(self, channels):
        super().__init__()
        c1, c2, c3 = channels
        self.block1 = _conv_bn_relu_2d(BACKBONE_CHANNELS, c1)
        self.block2 = nn.Sequential(_conv_bn_relu_2d(c1, c2), nn.MaxPool2d(2))
        self.block3 = nn.Sequential(_conv_bn_relu_2d(c2, c3), nn.MaxPool2d(2))

    def forward(self, x):
        return self.block3(self.block2(self.block1(x)))


class Encoder(nn.Module):
    def __init__(self, head_channels):
        super().__init__()
        self.backbone = Backbone()
        self.head = EncoderHead(head_channels)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeMismatchError(
                f"expected images of shape (B, 3, H, W), got {tuple(x.shape)}"
            )
        h, w = x.shape[2], x.shape[3]
        if h != w or h % 32 != 0 or h < 32:
            raise ShapeMismatchError(
                f"image side must be a square multiple of 32, got {h}x{w}"
            )
        return self.head(self.backbone(x))


def lift_to_3d(fm: torch.Tensor) -> torch.Tensor:
    """Bijectively reshape (..., C, H, W) feature maps to side-2 volumes
    (..., C*H*W/8, 2, 2, 2)."""
    if fm.ndim < 3:
        raise ShapeMismatchError(f"expected at least 3 dims, got {fm.ndim}")
    c, h, w = fm.shape[-3:]
    n = c * h * w
    if n % 8 != 0:
        raise ShapeMismatchError(
            f"feature map with {n} elements is not divisible by 8"
        )
    return fm.reshape(*fm.shape[:-3], n // 8, 2, 2, 2)


def unlift_from_3d(fv: torch.Tensor, shape) -> torch.Tensor:
    """Inverse of :func:`lift_to_3d` given the original (C, H, W)."""
    c, h, w = shape
    if fv.shape[-4] * 8 != c * h * w or fv.shape[-3:] != (2, 2, 2):
        raise ShapeMismatchError(
            f"volume {tuple(fv.shape)} does not match feature shape {shape}"
        )
    return fv.reshape(*fv.shape[:-4], c, h, w)


@dataclass
class DecoderOutput:
    """Per-view decoder result: the coarse probability volume plus the
    penultimate 8-channel feature tap used to build fusion contexts. The
    final tap (1 channel) is the coarse volume itself."""

    coarse: torch.Tensor  # (..., 1, R, R, R), sigmoid probabilities
    tap_penultimate: torch.Tensor  # (..., 8, R, R, R)

    @property
    def tap_final(self) -> torch.Tensor:
        return self.coarse

    @property
    def resolution(self) -> int:
        return self.coarse.shape[-1]


class Decoder(nn.Module):
    """Stride-2 transposed-conv stack from a side-2 volume up to the target
    resolution; the final layer is a 1^3 conv followed by the logistic."""

    def __init__(self, in_channels, channels):
        super().__init__()
        channels = tuple(channels)
        if channels[-2:] != (8, 1):
            raise ConfigurationError(
                f"decoder table must end with (8, 1) channels, got {channels}"
            )
        self.in_channels = in_channels
        self.channels = channels
        ups = []
        cin = in_channels
        for cout in channels[:-1]:
            ups.append(
                nn.Sequential(
                    nn.ConvTranspose3d(cin, cout, 4, stride=2, padding=1, bias=False),
                    nn.BatchNorm3d(cout),
                    nn.ReLU(inplace=True),
                )
            )
            cin = cout
        self.up_layers = nn.ModuleList(ups)
        self.final = nn.ConvTranspose3d(cin, channels[-1], 1)
        self.out_side = 2 * 2 ** len(ups)

    def forward(self, fv: torch.Tensor) -> DecoderOutput:
        if fv.ndim != 5 or fv.shape[-3:] != (2, 2, 2):
            raise ShapeMismatchError(
                f"decoder expects (B, C, 2, 2, 2) volumes, got {tuple(fv.shape)}"
            )
        if fv.shape[1] != self.in_channels:
            raise ConfigurationError(
                f"decoder built for {self.in_channels} input channels, got {fv.shape[1]}"
            )
        x = fv
        for layer in self.up_layers:
            x = layer(x)
        coarse = torch.sigmoid(self.final(x))
        return DecoderOutput(coarse=coarse, tap_penultimate=x)


class Refiner(nn.Module):
    """3D encoder-decoder with U-net skip concatenations and a dense
    2048/8192 bottleneck (128 x 4^3); output resolution equals input."""

    def __init__(self, resolution: int):
        super().__init__()
        if resolution not in REFINER_ENCODER_CHANNELS:
            raise ConfigurationError(f"no refiner table for {resolution}^3")
        self.resolution = resolution
        enc_channels = REFINER_ENCODER_CHANNELS[resolution]
        dec_channels = REFINER_DECODER_CHANNELS[resolution]
        enc = []
        cin = 1
        for cout in enc_channels:
            enc.append(
                nn.Sequential(
                    nn.Conv3d(cin, cout, 4, padding=2, bias=False),
                    nn.BatchNorm3d(cout),
                    nn.LeakyReLU(0.01, inplace=True),
                    nn.MaxPool3d(2),
                )
            )
            cin = cout
        self.enc_layers = nn.ModuleList(enc)
        flat = BOTTLENECK_CHANNELS * BOTTLENECK_SIDE**3
        self.fc1 = nn.Linear(flat, REFINER_FC_DIMS[0])
        self.fc2 = nn.Linear(REFINER_FC_DIMS[0], flat)
        dec = []
        prev = BOTTLENECK_CHANNELS
        skips = list(enc_channels[::-1])  # deepest encoder map first
        for i, cout in enumerate(dec_channels):
            cin = prev + skips[i]
            last = i == len(dec_channels) - 1
            if last:
                dec.append(nn.ConvTranspose3d(cin, cout, 4, stride=2, padding=1))
            else:
                dec.append(
                    nn.Sequential(
                        nn.ConvTranspose3d(cin, cout, 4, stride=2, padding=1, bias=False),
                        nn.BatchNorm3d(cout),
                        nn.ReLU(inplace=True),
                    )
                )
            prev = cout
        self.dec_layers = nn.ModuleList(dec)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 5 or x.shape[1] != 1 or x.shape[-1] != self.resolution:
            raise ShapeMismatchError(
                f"refiner expects (B, 1, {self.resolution}^3) volumes, "
                f"got {tuple(x.shape)}"
            )
        feats = []
        out = x
        for layer in self.enc_layers:
            out = layer(out)
            feats.append(out)
        flat = out.flatten(1)
        hidden = torch.relu(self.fc1(flat))
        bottleneck = torch.relu(self.fc2(hidden)).reshape(
            -1, BOTTLENECK_CHANNELS, BOTTLENECK_SIDE, BOTTLENECK_SIDE, BOTTLENECK_SIDE
        )
        out = bottleneck
        for i, layer in enumerate(self.dec_layers):
            skip = feats[len(feats) - 1 - i]
            out = layer(torch.cat([out, skip], dim=1))
        return torch.sigmoid(out)


def init_parameters(module: nn.Module, seed: int) -> None:
    """Deterministically (re)initialize: conv/linear weights from a zero-mean
    normal with variance 2/fan_in, biases zero, norm scales 1 and shifts 0."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.Conv3d, nn.Linear)):
                fan_in = m.weight.shape[1] * math.prod(m.weight.shape[2:] or (1,))
                std = math.sqrt(2.0 / fan_in)
                m.weight.copy_(
                    torch.randn(m.weight.shape, generator=gen, dtype=torch.float32)
                    * std
                )
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, (nn.ConvTranspose2d, nn.ConvTranspose3d)):
                # transposed weight layout is (in, out, k...)
                fan_in = m.weight.shape[0] * math.prod(m.weight.shape[2:])
                std = math.sqrt(2.0 / fan_in)
                m.weight.copy_(
                    torch.randn(m.weight.shape, generator=gen, dtype=torch.float32)
                    * std
                )
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, (nn.BatchNorm2d, nn.BatchNorm3d)):
                m.reset_running_stats()
                m.weight.fill_(1.0)
                m.bias.zero_()


class ReconstructionNet(nn.Module):
    """Full pipeline: shared encoder/decoder per view, score-map fusion of
    the coarse volumes, optional refiner."""

    def __init__(self, cfg: RunConfig):
        super().__init__()
        from .fusion import ContextScorer  # cycle: fusion imports DecoderOutput

        self.cfg = cfg
        self.encoder = Encoder(cfg.head_channels)
        self.decoder = Decoder(cfg.lift_channels, cfg.decoder_channels)
        self.scorer = (
            ContextScorer(multiscale=cfg.fusion == "multiscale")
            if cfg.fusion != "average"
            else None
        )
        self.refiner = Refiner(cfg.resolution) if cfg.refiner_enabled else None

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        """Shared-weight feature extraction.

        In eval mode each image runs through the encoder independently, so
        batched and one-at-a-time evaluation are exactly identical; training
        mode batches normally (batch statistics need the whole batch).
        """
        if self.training or images.shape[0] <= 1:
            return self.encoder(images)
        return torch.cat([self.encoder(images[i : i + 1]) for i in range(images.shape[0])])

    def decode(self, features: torch.Tensor) -> DecoderOutput:
        return self.decoder(lift_to_3d(features))

    def fuse_views(self, dec: DecoderOutput, view_dim: int = 0):
        """Blend per-view coarse volumes into one; returns (fused, scores)."""
        from . import fusion

        n = dec.coarse.shape[view_dim]
        if n == 1:
            # single-element softmax weights are exactly 1
            return dec.coarse.select(view_dim, 0), None
        if self.scorer is None:
            return fusion.fuse_average(dec.coarse, view_dim=view_dim), None
        context = fusion.build_context(dec)
        raw = self.scorer(context)
        scores = fusion.normalize_scores(raw, view_dim=view_dim)
        return fusion.fuse(dec.coarse, scores, view_dim=view_dim), scores

    def forward(self, images: torch.Tensor):
        """Training forward over (B, n_views, 3, H, W) image stacks.

        Returns (coarse (B, n, 1, R^3), fused (B, 1, R^3), refined or None).
        """
        if images.ndim != 5:
            raise ShapeMismatchError(
                f"expected (B, n_views, 3, H, W), got {tuple(images.shape)}"
            )
        b, n = images.shape[:2]
        feats = self.encode(images.reshape(b * n, *images.shape[2:]))
        dec_flat = self.decode(feats)
        dec = DecoderOutput(
            coarse=dec_flat.coarse.reshape(b, n, *dec_flat.coarse.shape[1:]),
            tap_penultimate=dec_flat.tap_penultimate.reshape(
                b, n, *dec_flat.tap_penultimate.shape[1:]
            ),
        )
        fused, scores = self.fuse_views(dec, view_dim=1)
        refined = self.refiner(fused) if self.refiner is not None else None
        return dec, fused, refined, scores

    @torch.no_grad()
    def reconstruct(self, views) -> VoxelGrid:
        """Deterministic inference: n view images -> one probability grid.

        The output is invariant, bit for bit, under any permutation of the
        input views.
        """
        views = as_view_tensor(views)
        if views.shape[0] < 1:
            raise DegenerateInputError("reconstruct needs at least one view")
        was_training = self.training
        self.eval()
        try:
            feats = self.encode(views)
            dec = self.decode(feats)
            fused, _scores = self.fuse_views(dec, view_dim=0)
            volume = fused.unsqueeze(0)
            if self.refiner is not None:
                volume = self.refiner(volume)
            out = volume[0, 0]
        finally:
            if was_training:
                self.train()
        return VoxelGrid(out.cpu().numpy())

    @torch.no_grad()
    def view_score_maps(self, views) -> "torch.Tensor":
        """Per-view normalized score maps (n, R, R, R); uniform 1/n when the
        configuration fuses by averaging or a single view is given."""
        from . import fusion

        views = as_view_tensor(views)
        n = views.shape[0]
        was_training = self.training
        self.eval()
        try:
            dec = self.decode(self.encode(views))
            if n == 1 or self.scorer is None:
                maps = torch.full_like(dec.coarse, 1.0 / n)
            else:
                raw = self.scorer(fusion.build_context(dec))
                maps = fusion.normalize_scores(raw, view_dim=0).normalized
        finally:
            if was_training:
                self.train()
        return maps[:, 0]


def as_view_tensor(views) -> torch.Tensor:
    """Coerce a list of (3, H, W) arrays / tensors, or an (n, 3, H, W) array,
    to a float32 tensor."""
    if isinstance(views, torch.Tensor):
        t = views.float()
    elif isinstance(views, np.ndarray):
        t = torch.from_numpy(np.ascontiguousarray(views)).float()
    else:
        parts = [
            v.float() if isinstance(v, torch.Tensor) else torch.from_numpy(np.ascontiguousarray(v)).float()
            for v in views
        ]
        if not parts:
            raise DegenerateInputError("reconstruct needs at least one view")
        t = torch.stack(parts)
    if t.ndim == 3:
        t = t.unsqueeze(0)
    if t.ndim != 4:
        raise ShapeMismatchError(f"views must stack to (n, 3, H, W), got {tuple(t.shape)}")
    return t


def build_network(cfg: RunConfig) -> ReconstructionNet:
    """Construct the pipeline with deterministic seed-derived parameters."""
    net = ReconstructionNet(cfg)
    init_parameters(net, cfg.seed)
    return net
