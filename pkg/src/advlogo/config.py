"""Run configuration shared by every CLI stage.

Keys are flat so each one maps to exactly one command-line flag
(``lambda_tv`` <-> ``--lambda-tv``). JSON files may set any subset; unknown
keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class RunConfig:
    seed: int = field(default=0, metadata={"help": "root seed for every random stream"})
    out_dir: str = field(default="out", metadata={"help": "directory for all outputs"})
    image_size: int = field(default=64, metadata={"help": "square frame size in pixels"})
    jobs: int = field(default=1, metadata={"help": "worker threads for evaluation"})

    # camera
    distance: float = field(default=2.0, metadata={"help": "camera distance"})
    elevation: float = field(default=0.0, metadata={"help": "camera elevation in degrees"})
    fov: float = field(default=30.0, metadata={"help": "vertical field of view in degrees"})

    # assets
    n_train_backgrounds: int = field(default=312, metadata={"help": "procedural training backgrounds"})
    n_test_backgrounds: int = field(default=200, metadata={"help": "procedural test backgrounds"})
    background_dir: str = field(default="", metadata={"help": "use images from this directory instead"})

    # detector
    detector_weights: str = field(default="", metadata={"help": "weights file (default OUT_DIR/detector.bin)"})
    det_scenes_per_epoch: int = field(default=3000, metadata={"help": "fresh synthetic scenes per epoch"})
    det_epochs: int = field(default=16, metadata={"help": "detector training epochs"})
    det_lr: float = field(default=2e-3, metadata={"help": "detector Adam learning rate"})
    det_batch: int = field(default=32, metadata={"help": "detector minibatch size"})
    det_holdout: int = field(default=400, metadata={"help": "held-out scenes for recall/FP"})
    det_smoothing: float = field(default=0.1, metadata={"help": "confidence label smoothing"})
    det_pos_weight: float = field(default=3.0, metadata={"help": "BCE weight of cells holding a person"})
    min_recall: float = field(default=0.9, metadata={"help": "fail train-detector below this recall"})
    threshold: float = field(default=0.6, metadata={"help": "detection confidence threshold"})

    # logo
    shape: str = field(default="G", metadata={"help": "glyph name for the logo mask"})
    mask_path: str = field(default="", metadata={"help": "PNG bitmap overriding the glyph mask"})
    texture_size: int = field(default=32, metadata={"help": "logo texture side in pixels"})
    logo_scale: float = field(default=1.0, metadata={"help": "logo footprint scale (1, 2/3, 1/3)"})
    texture: str = field(default="", metadata={"help": "starting/evaluated texture PNG"})

    # attack
    mode: str = field(default="single", metadata={"help": "single (0 deg) or multi ([-10,10]) view training"})
    epochs: int = field(default=-1, metadata={"help": "attack epochs; -1 picks 100 single / 20 multi"})
    lambda_dis: float = field(default=1.0, metadata={"help": "disappearance loss weight"})
    lambda_tv: float = field(default=2.5, metadata={"help": "total variation loss weight"})
    lr0: float = field(default=0.03, metadata={"help": "initial attack learning rate"})
    lr_decay: float = field(default=0.1, metadata={"help": "learning rate decay factor"})
    decay_every: int = field(default=50, metadata={"help": "epochs between decays"})
    background_batch: int = field(default=8, metadata={"help": "backgrounds per step"})
    augment: bool = field(default=True, metadata={"help": "contrast/brightness/noise augmentation"})
    snapshot_every: int = field(default=0, metadata={"help": "save texture PNG every N epochs (0 = off)"})
    train_meshes: str = field(default="A", metadata={"help": "comma-separated training people"})

    # evaluation
    test_meshes: str = field(default="A", metadata={"help": "comma-separated test people"})
    sweep: bool = field(default=False, metadata={"help": "evaluate the [-50,50] sweep instead of [-10,10]"})
    smoke: bool = field(default=False, metadata={"help": "render a single frame PNG and stop"})
    gallery: int = field(default=0, metadata={"help": "save this many 0-degree frames as PNG"})

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mode not in ("single", "multi"):
            raise ConfigError("mode must be 'single' or 'multi'")
        if self.image_size < 16 or self.image_size % 16:
            raise ConfigError("image_size must be a positive multiple of 16")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must lie in (0, 1)")
        if not 0.0 < self.logo_scale <= 1.0:
            raise ConfigError("logo_scale must lie in (0, 1]")
        if self.epochs < -1:
            raise ConfigError("epochs must be >= 0 (or -1 for the mode default)")
        for name in ("n_train_backgrounds", "n_test_backgrounds", "background_batch", "texture_size",
                     "det_scenes_per_epoch", "det_batch", "det_holdout"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def attack_epochs(self) -> int:
        if self.epochs >= 0:
            return self.epochs
        return 100 if self.mode == "single" else 20

    @property
    def train_views(self) -> list:
        return [0] if self.mode == "single" else list(range(-10, 11))

    @property
    def test_views(self) -> list:
        return list(range(-50, 51)) if self.sweep else list(range(-10, 11))

    @property
    def weights_path(self) -> Path:
        return Path(self.detector_weights) if self.detector_weights else Path(self.out_dir) / "detector.bin"

    @property
    def texture_path(self) -> Path:
        return Path(self.texture) if self.texture else Path(self.out_dir) / "texture.png"

    def people(self, which: str) -> list:
        names = [n.strip() for n in getattr(self, which).split(",") if n.strip()]
        if not names:
            raise ConfigError(f"{which} is empty")
        return names

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name, value):
    kind = FIELDS[name].type
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{name} must be a string")
    return value


def config_from_dict(data: dict, base: RunConfig | None = None) -> RunConfig:
    unknown = sorted(set(data) - set(FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values = base.to_dict() if base is not None else {}
    values.update({k: _coerce(k, v) for k, v in data.items()})
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from None
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(data)
