"""Run configuration: architecture tables, optimizer and schedule blocks.

Two network variants exist: "F" (slim) and "A" (wide). The variant fixes the
encoder head width and the decoder channel table; the refiner is independent
of the variant and defaults to on for "A" and off for "F" (it can be forced
either way). Output resolutions 32/64/128 select the decoder depth.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import yaml

from .errors import ConfigurationError

# encoder head: three 3x3 conv blocks applied to the 512-channel backbone map,
# with 2x2 max-pooling after the second and third blocks
HEAD_CHANNELS = {
    "F": (128, 64, 64),
    "A": (512, 256, 256),
}

# transposed-conv decoder output channels per (variant, resolution); all but
# the final 1x1x1 layer are kernel-4, stride-2, padding-1
DECODER_CHANNELS = {
    ("F", 32): (128, 64, 32, 8, 1),
    ("A", 32): (512, 128, 32, 8, 1),
    ("F", 64): (128, 64, 32, 16, 8, 1),
    ("A", 64): (512, 128, 32, 16, 8, 1),
    ("F", 128): (128, 64, 32, 32, 32, 8, 1),
    ("A", 128): (512, 128, 32, 32, 32, 8, 1),
}

# refiner encoder conv channels per input resolution (kernel 4, padding 2,
# each followed by a halving max-pool); the bottleneck is always 128 x 4^3
REFINER_ENCODER_CHANNELS = {
    32: (32, 64, 128),
    64: (16, 32, 64, 128),
    128: (8, 16, 32, 64, 128),
}
REFINER_DECODER_CHANNELS = {
    32: (64, 32, 1),
    64: (64, 32, 16, 1),
    128: (64, 32, 16, 8, 1),
}
REFINER_FC_DIMS = (2048, 8192)

BACKBONE_CHANNELS = 512  # backbone output at 1/8 spatial resolution

FUSION_MODES = ("multiscale", "singlescale", "average")


@dataclass(frozen=True)
class OptimizerConfig:
    """Adaptive-moment optimizer settings and the step-decay LR schedule."""

    lr0: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lr_decay_factor: float = 2.0
    lr_decay_epoch: int = 150
    batch_size: int = 8  # benchmark runs used 64; desk default is 8

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based global epoch index."""
        if epoch > self.lr_decay_epoch:
            return self.lr0 / self.lr_decay_factor
        return self.lr0


@dataclass(frozen=True)
class TrainSchedule:
    """Two-stage regime: single-view epochs without the fusion scorer, then
    multi-view epochs with it."""

    stage1_epochs: int = 250
    stage2_epochs: int = 100
    stage2_views: int = 3
    # whether stage 2 keeps updating encoder/decoder/refiner alongside the
    # fusion scorer (if False only the scorer trains)
    stage2_joint: bool = True
    checkpoint_every: int = 1

    @property
    def total_epochs(self) -> int:
        return self.stage1_epochs + self.stage2_epochs


@dataclass(frozen=True)
class RunConfig:
    variant: str = "A"
    resolution: int = 32
    fusion: str = "multiscale"
    image_size: int = 224
    refiner: bool | None = None  # None -> on for "A", off for "F"
    seed: int = 0
    dataset: str | None = None
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)

    def __post_init__(self):
        if self.variant not in HEAD_CHANNELS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if (self.variant, self.resolution) not in DECODER_CHANNELS:
            raise ConfigurationError(
                f"no decoder table for variant {self.variant!r} at {self.resolution}^3"
            )
        if self.fusion not in FUSION_MODES:
            raise ConfigurationError(
                f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}"
            )
        if self.image_size % 32 != 0 or self.image_size < 32:
            raise ConfigurationError(
                f"image_size must be a positive multiple of 32, got {self.image_size}"
            )
        if self.refiner_enabled and self.resolution not in REFINER_ENCODER_CHANNELS:
            raise ConfigurationError(
                f"no refiner table for resolution {self.resolution}^3"
            )
        if self.schedule.stage2_views < 1:
            raise ConfigurationError("stage2_views must be >= 1")

    @property
    def refiner_enabled(self) -> bool:
        if self.refiner is None:
            return self.variant == "A"
        return bool(self.refiner)

    @property
    def head_channels(self) -> tuple:
        return HEAD_CHANNELS[self.variant]

    @property
    def decoder_channels(self) -> tuple:
        return DECODER_CHANNELS[(self.variant, self.resolution)]

    @property
    def feature_map_side(self) -> int:
        # backbone reduces by 8, head pools twice more
        return self.image_size // 32

    @property
    def lift_channels(self) -> int:
        c = self.head_channels[-1] * self.feature_map_side**2
        if c % 8 != 0:
            raise ConfigurationError(
                f"feature map of {c} elements cannot reshape to a side-2 volume"
            )
        return c // 8

    def to_dict(self) -> dict:
        return asdict(self)


def config_from_dict(raw: dict) -> RunConfig:
    """Build a RunConfig from a plain mapping (YAML document or overrides)."""
    raw = dict(raw or {})
    known = {
        "variant",
        "resolution",
        "fusion",
        "image_size",
        "refiner",
        "seed",
        "dataset",
        "optimizer",
        "schedule",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    try:
        opt = OptimizerConfig(**(raw.pop("optimizer", None) or {}))
        sched = TrainSchedule(**(raw.pop("schedule", None) or {}))
        return RunConfig(optimizer=opt, schedule=sched, **raw)
    except TypeError as exc:
        raise ConfigurationError(f"bad config field: {exc}") from exc


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigurationError(f"config file {path} must hold a mapping")
    return config_from_dict(doc)


def apply_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Return a copy with non-None overrides applied (flags beat file values).

    ``optimizer``/``schedule`` overrides are partial dicts merged into the
    existing blocks.
    """
    updates = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "optimizer":
            updates[key] = replace(cfg.optimizer, **value)
        elif key == "schedule":
            updates[key] = replace(cfg.schedule, **value)
        else:
            updates[key] = value
    try:
        return replace(cfg, **updates)
    except TypeError as exc:
        raise ConfigurationError(f"bad override: {exc}") from exc
