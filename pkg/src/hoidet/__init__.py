"""Desk-scale human-object-interaction detection.

Dual parallel transformer decoders over a shared visual memory, trained
with bipartite matching and a relation-box consistency loss, scored with
composed HOI probabilities, de-duplicated with weighted triple-IoU NMS,
and evaluated with HICO-style Full/Rare/Non-Rare mAP on synthetic scenes.
"""

from .autograd import Tensor, backward, no_grad
from .boxes import BBox, iou, outer_box
from .data import GroundTruthHOI, SceneSample, load_dataset
from .evaluation import APResult, EvalConfig, mean_ap
from .inference import (Detection, HOIPrediction, TridentNMSConfig,
                        compose_predictions, top_k, tri_iou, trident_nms)
from .losses import LossBreakdown, LossWeights, compute_loss
from .matching import MatchResult, hungarian_match, solve_assignment
from .model import (HOIModel, ModelConfig, ModelOutputs, load_checkpoint,
                    model_from_checkpoint, save_checkpoint)
from .synthetic import SynthSceneSpec, generate_synthetic_dataset
from .training import Schedule, fit, train_step

__version__ = "0.1.0"

__all__ = [
    "APResult", "BBox", "Detection", "EvalConfig", "GroundTruthHOI",
    "HOIModel", "HOIPrediction", "LossBreakdown", "LossWeights",
    "MatchResult", "ModelConfig", "ModelOutputs", "SceneSample", "Schedule",
    "SynthSceneSpec", "Tensor", "TridentNMSConfig", "backward",
    "compose_predictions", "compute_loss", "fit", "generate_synthetic_dataset",
    "hungarian_match", "iou", "load_checkpoint", "load_dataset", "mean_ap",
    "model_from_checkpoint", "no_grad", "outer_box", "save_checkpoint",
    "solve_assignment", "top_k", "train_step", "tri_iou", "trident_nms",
]
