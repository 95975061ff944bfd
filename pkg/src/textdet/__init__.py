"""textdet: text-conditioned object detection on synthetic shape scenes.

Region proposals from a small from-scratch CNN + RPN are scored against a
transformer-encoded text query; detections keep proposals whose
confidence x alignment product passes a threshold. Includes the dataset
generator, trainer, evaluator, CLI and HTTP inference service.
"""
from .alignment import AlignedDetection, InferenceConfig
from .model import ModelConfig, TextDetModel, model_preset
from .shapegen import GEN_PRESETS, SPLIT_PRESETS, generate_dataset, load_manifest
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train, train_preset

__version__ = "0.1.0"

__all__ = [
    "AlignedDetection",
    "InferenceConfig",
    "ModelConfig",
    "TextDetModel",
    "model_preset",
    "GEN_PRESETS",
    "SPLIT_PRESETS",
    "generate_dataset",
    "load_manifest",
    "TrainConfig",
    "train",
    "train_preset",
    "save_checkpoint",
    "load_checkpoint",
    "__version__",
]
