"""Flat training/runtime configuration.

Config files are JSON or TOML with the same key names as the dataclass
fields (e.g. ``{"iterations": 2000, "lambda2": 10.0}``). Unknown keys are
rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .adversarial import LossWeights

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


@dataclass
class TrainingConfig:
    name: str = "run"
    seed: int = 0

    # data
    dataset: str = "synthetic"          # "synthetic" | "coco"
    synthetic_n: int = 500
    coco_annotations: str = ""
    coco_image_dir: str = ""

    # geometry
    image_size: int = 64
    crop_size: int = 32
    feat_hw: int = 8

    # architecture
    d_z: int = 128
    d_crop: int = 32
    vgcn_layers: int = 5
    vgcn_hidden: int = 512
    gcn2d_hidden: int = 64
    attn_dim: int = 64
    noise_dim: int = 32
    crn_channels: tuple = (128, 64, 32, 16)
    crn_initial_res: int = 4
    d_img_width: int = 64
    d_obj_width: int = 64
    proxy_width: int = 32
    box_hidden: int = 128
    embed_max_norm: float = 20.0

    # optimization (paper scale runs 200,000 iterations; desk default 3,000)
    learning_rate: float = 5e-4
    d_lr_scale: float = 1.0   # discriminator lr multiplier (slow D on tiny datasets)
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 32
    iterations: int = 3000
    checkpoint_every: int = 500
    log_every: int = 50

    # loss weights, in objective order
    lambda1: float = 1.0
    lambda2: float = 10.0
    lambda3: float = 1.0
    lambda4: float = 1.0
    lambda5: float = 1.0
    lambda6: float = 1.0
    lambda7: float = 0.5
    lambda8: float = 10.0

    # retrieval + auxiliary nets
    k_retrieval: int = 5
    similarity: str = "l2"          # visual-code distance: l2 | l1 | cosine
    selector_steps: int = 400
    selector_lr: float = 1e-3
    proxy_epochs: int = 30

    # behavior flags
    use_gt_boxes: bool = False   # inference placement from provided boxes (the "(GT)" eval variant)
    no_crop_selection: bool = False
    no_object2_refiner: bool = False
    no_obj_img_fuser: bool = False
    masked_attention: bool = False
    freeze_lambda_attn: bool = False
    stop_encoder_gradient: bool = False

    def __post_init__(self):
        self.crn_channels = tuple(self.crn_channels)
        for name in ("learning_rate", "batch_size", "iterations", "image_size",
                     "crop_size", "feat_hw", "d_z", "d_crop", "k_retrieval"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def canvas_dim(self) -> int:
        return self.d_z + self.d_crop

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.lambda3, self.lambda4,
                           self.lambda5, self.lambda6, self.lambda7, self.lambda8)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["crn_channels"] = list(self.crn_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "TrainingConfig":
        path = Path(path)
        if path.suffix == ".toml":
            data = tomllib.loads(path.read_text())
        else:
            data = json.loads(path.read_text())
        return cls.from_dict(data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def overfit_config(seed: int = 7321) -> TrainingConfig:
    """Small-model preset sized so the 50-scene overfit run finishes on a
    couple of CPU cores; the committed seed makes it reproducible."""
    return TrainingConfig(
        name="overfit",
        seed=seed,
        synthetic_n=50,
        iterations=2000,
        batch_size=8,
        checkpoint_every=500,
        d_z=64,
        d_crop=16,
        vgcn_layers=5,
        vgcn_hidden=128,
        gcn2d_hidden=24,
        attn_dim=32,
        noise_dim=16,
        crn_channels=(48, 32, 24, 16),
        d_img_width=32,
        d_obj_width=32,
        proxy_width=16,
        box_hidden=64,
        k_retrieval=3,
        selector_steps=300,
        d_lr_scale=0.1,
        stop_encoder_gradient=True,
    )


def tiny_config(seed: int = 0) -> TrainingConfig:
    """Minimal geometry for float64 gradient checks and fast unit tests."""
    return TrainingConfig(
        name="tiny",
        seed=seed,
        synthetic_n=4,
        iterations=2,
        batch_size=2,
        checkpoint_every=1,
        image_size=8,
        crop_size=4,
        feat_hw=2,
        d_z=8,
        d_crop=4,
        vgcn_layers=2,
        vgcn_hidden=16,
        gcn2d_hidden=8,
        attn_dim=6,
        noise_dim=4,
        crn_channels=(12, 8),
        crn_initial_res=2,
        d_img_width=8,
        d_obj_width=8,
        proxy_width=8,
        box_hidden=16,
        k_retrieval=2,
        selector_steps=5,
        proxy_epochs=1,
    )
