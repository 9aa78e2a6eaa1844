from .boxes import BoxSet, clamp_boxes, cxcywh_to_xyxy, pairwise_giou, xyxy_to_cxcywh
from .diffusion import corrupt_boxes, cosine_alpha_bar, ddim_pairs
from .loss import LossWeights, set_loss, set_loss_batch
from .matching import assignment_cost, hungarian_match
from .model import Detector, DetectorConfig

__all__ = [
    "BoxSet", "Detector", "DetectorConfig", "LossWeights", "assignment_cost", "clamp_boxes",
    "corrupt_boxes", "cosine_alpha_bar", "cxcywh_to_xyxy", "ddim_pairs", "hungarian_match",
    "pairwise_giou", "set_loss", "set_loss_batch", "xyxy_to_cxcywh",
]
