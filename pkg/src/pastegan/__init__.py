"""Semi-parametric image generation from scene graphs and object crops."""

from .adversarial import LossWeights
from .config import TrainingConfig, overfit_config, tiny_config
from .data import SyntheticSceneSpec, TrainingExample, generate_synthetic_dataset
from .memory_tank import MemoryTank, SelectorModel, build_tank, select_crops
from .pipeline import ModelBundle, RunArtifacts, generate_image
from .scenegraph import (LayoutBox, SceneGraph, Vocab, augment_with_image_node,
                         parse_scene_graph, serialize_scene_graph, validate)
from .trainer import fit, train_step

__all__ = [
    "LossWeights", "TrainingConfig", "overfit_config", "tiny_config",
    "SyntheticSceneSpec", "TrainingExample", "generate_synthetic_dataset",
    "MemoryTank", "SelectorModel", "build_tank", "select_crops",
    "ModelBundle", "RunArtifacts", "generate_image",
    "LayoutBox", "SceneGraph", "Vocab", "augment_with_image_node",
    "parse_scene_graph", "serialize_scene_graph", "validate",
    "fit", "train_step",
]

__version__ = "0.1.0"
