"""Orientation network configuration loader.

Training, augmentation and normalization settings all come from the same
place: built-in defaults, overridden by the "orientnet" section of the
device configuration, overridden by explicit keyword arguments.
"""
from collections import namedtuple
from dataclasses import dataclass, field, asdict, replace
from typing import Dict, List, Optional, Tuple

from ovos_config.config import Configuration
from ovos_utils.log import LOG

from orientnet.errors import UsageError
from orientnet.util import load_json

CONFIG_SECTION = "orientnet"

LRNConfig = namedtuple('LRNConfig', ['depth_radius', 'alpha', 'beta', 'k'])
AugmentConfig = namedtuple('AugmentConfig',
                           ['brightness_delta', 'contrast_range',
                            'noise_sigma'])
InputConfig = namedtuple('InputConfig', ['side', 'input_scale'])

DEFAULT_LRN = LRNConfig(depth_radius=5, alpha=1e-4, beta=0.75, k=2.0)
# pixel scale 0..255
DEFAULT_AUGMENT = AugmentConfig(brightness_delta=32.0,
                                contrast_range=(0.8, 1.2),
                                noise_sigma=10.0)
IDENTITY_AUGMENT = AugmentConfig(brightness_delta=0.0,
                                 contrast_range=(1.0, 1.0),
                                 noise_sigma=0.0)
FULL_INPUT = InputConfig(side=256, input_scale=1.0)
DESK_INPUT = InputConfig(side=64, input_scale=1.0 / 64)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer, schedule and stopping settings for one training run.

    lr_eff for a layer is the scheduled global rate times the layer's
    multiplier; layers missing from layer_lr use their spec multiplier.
    """
    momentum: float = 0.9
    batch_size: int = 32
    weight_decay: float = 0.0005
    global_lr_schedule: Tuple[Tuple[int, float], ...] = ((0, 0.01),)
    layer_lr: Dict[str, float] = field(default_factory=dict)
    max_epochs: int = 20
    plateau_patience: int = 5
    plateau_threshold: float = 1e-4
    seed: int = 0
    augment: bool = True
    init_std: float = 0.01

    def __post_init__(self):
        schedule = tuple((int(e), float(r)) for e, r in self.global_lr_schedule)
        object.__setattr__(self, "global_lr_schedule", schedule)
        object.__setattr__(self, "layer_lr",
                           {str(k): float(v) for k, v in self.layer_lr.items()})
        self.validate()

    def validate(self):
        if not 0.0 <= self.momentum < 1.0:
            raise UsageError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise UsageError(f"batch_size must be positive, got {self.batch_size}")
        if self.weight_decay < 0:
            raise UsageError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not self.global_lr_schedule:
            raise UsageError("global_lr_schedule must not be empty")
        epochs = [e for e, _ in self.global_lr_schedule]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise UsageError(f"schedule epochs must be strictly increasing: {epochs}")
        if any(r <= 0 for _, r in self.global_lr_schedule):
            raise UsageError("learning rates must be > 0")
        if any(m < 0 for m in self.layer_lr.values()):
            raise UsageError("layer learning rate multipliers must be >= 0")
        if self.max_epochs < 1:
            raise UsageError(f"max_epochs must be positive, got {self.max_epochs}")
        if self.plateau_patience < 1:
            raise UsageError("plateau_patience must be positive")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["global_lr_schedule"] = [list(s) for s in self.global_lr_schedule]
        return data

    @staticmethod
    def from_dict(data: dict) -> 'TrainConfig':
        known = TrainConfig.__dataclass_fields__.keys()
        unknown = set(data) - set(known)
        if unknown:
            raise UsageError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return TrainConfig(**data)

    def replace(self, **changes) -> 'TrainConfig':
        return replace(self, **changes)


# The network rate follows the global schedule (5e-4, then 5e-3 from epoch
# 10). The fine-tuned conv4 and conv5 run at a multiple of it, so they start
# at 0.01 while the new fc layers start at 5e-4.
FULL_FINETUNE_LR = 0.01
FULL_TRAIN_CONFIG = TrainConfig(momentum=0.9, batch_size=256,
                                 weight_decay=0.0005,
                                 global_lr_schedule=((0, 5e-4), (10, 5e-3)),
                                 layer_lr={"conv4": FULL_FINETUNE_LR / 5e-4,
                                           "conv5": FULL_FINETUNE_LR / 5e-4},
                                 max_epochs=30, plateau_patience=5)
DESK_TRAIN_CONFIG = TrainConfig(momentum=0.9, batch_size=32,
                                weight_decay=0.0005,
                                global_lr_schedule=((0, 0.01),),
                                max_epochs=20, plateau_patience=5)


def _section() -> dict:
    try:
        return Configuration().get(CONFIG_SECTION) or {}
    except Exception as e:
        LOG.warning(f"could not read '{CONFIG_SECTION}' configuration ({e})")
        return {}


def load_train_config(base: TrainConfig = DESK_TRAIN_CONFIG,
                      **overrides) -> TrainConfig:
    """
    Load the training configuration.
    @param base: defaults to start from (desk or full)
    @param overrides: explicit values, None entries are ignored
    @return: TrainConfig with valid configuration
    """
    LOG.debug('Loading training configs')
    config = _section().get("train") or {}
    merged = base.to_dict()
    merged.update({k: v for k, v in config.items() if k in merged})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(merged)


def load_augment_config(**overrides) -> AugmentConfig:
    """
    Load augmentation ranges.
    @param overrides: Optional config overrides
        brightness_delta (float): max absolute brightness shift (0..255 scale)
        contrast_range (tuple): (low, high) contrast factor
        noise_sigma (float): max gaussian noise sigma
    @return: AugmentConfig
    """
    config = _section().get("augment") or {}
    overrides = overrides or {}

    def pick(key):
        if overrides.get(key) is not None:
            return overrides[key]
        if config.get(key) is not None:
            return config[key]
        return getattr(DEFAULT_AUGMENT, key)

    aug = AugmentConfig(brightness_delta=float(pick("brightness_delta")),
                        contrast_range=tuple(float(c) for c in
                                             pick("contrast_range")),
                        noise_sigma=float(pick("noise_sigma")))
    low, high = aug.contrast_range
    if aug.brightness_delta < 0 or aug.noise_sigma < 0 or \
            not 0 < low <= high:
        raise UsageError(f"invalid augmentation ranges: {aug}")
    return aug


def load_lrn_config(**overrides) -> LRNConfig:
    """
    Load local response normalization constants.
    @param overrides: depth_radius, alpha, beta, k
    @return: LRNConfig
    """
    config = _section().get("lrn") or {}
    values = DEFAULT_LRN._asdict()
    values.update({k: v for k, v in config.items() if k in values})
    values.update({k: v for k, v in overrides.items() if v is not None})
    lrn = LRNConfig(**values)
    if lrn.depth_radius < 0 or lrn.alpha < 0 or lrn.beta <= 0 or lrn.k <= 0:
        raise UsageError(f"invalid LRN parameters: {lrn}")
    return lrn


def config_from_file(file_path: str, section: Optional[str] = None) -> dict:
    """
    Load a JSON configuration file.

    The file is a plain json object, optionally with sub configurations

    Ex:
    {
      "train": {
        "max_epochs": 20,
        "batch_size": 32
      },
      "predict": {
        "checkpoint": "desk.ornt"
      }
    }

    Arguments:
        file_path:  path to the config file
        section:    sub configuration to return, whole file if omitted;
                    a missing section yields an empty dict
    Returns:
        dict with the selected configuration
    """
    conf = load_json(file_path)
    if not isinstance(conf, dict):
        raise UsageError(f"{file_path}: configuration must be a JSON object")
    if section is None:
        return conf
    return conf.get(section) or {}


def schedule_from_strings(items: List[str]) -> Tuple[Tuple[int, float], ...]:
    """Parse ["0:5e-4", "10:5e-3"] into a schedule."""
    schedule = []
    for item in items:
        try:
            epoch, rate = item.split(":")
            schedule.append((int(epoch), float(rate)))
        except ValueError:
            raise UsageError(f"schedule entries look like EPOCH:RATE, got {item!r}")
    return tuple(schedule)
