from .data import Dataset, export_png_pairs, gen_shapes_dataset
from .determinism import seed_everything, set_deterministic
from .model import (
    SegModel,
    TrainingFloorError,
    class_iou,
    load_utility,
    save_model,
    to_tensor,
    train_utility,
)
from .saliency import normalize_saliency
from .types import ExplanationMap, Image, NoiseMask, ProbMask, SaliencyMap, SegMask

__all__ = [
    "Dataset",
    "ExplanationMap",
    "Image",
    "NoiseMask",
    "ProbMask",
    "SaliencyMap",
    "SegMask",
    "SegModel",
    "TrainingFloorError",
    "class_iou",
    "export_png_pairs",
    "gen_shapes_dataset",
    "load_utility",
    "normalize_saliency",
    "save_model",
    "seed_everything",
    "set_deterministic",
    "to_tensor",
    "train_utility",
]
