"""Lesion evidence toolkit.

Turns activation heatmaps into candidate box prompts, aggregates
multi-candidate segmenter outputs into denoised lesion evidence, pools
mask-guided features for diagnosis, extracts and selects radiomics
descriptors, and fuses both branches into a final prediction with a
full metric suite. See the CLI (``lesionkit --help``) for the
end-to-end pipeline.
"""

from .aggregation import (AggregationResult, CandidatePrediction, McraConfig,
                          aggregate, consistency_loss, final_weights,
                          partition_confidence, saliency_weights,
                          semantic_weights, soft_fuse, teacher_mask)
from .bundle import (BundleError, CaseBundle, load_bundle, normalize_minmax,
                     resize_bilinear, save_bundle)
from .metrics import classify_report, cross_correlation, dice_iou, fuse_logits, roc_auc
from .prompts import (CandidateBox, PromptConfig, boxes_at_threshold,
                      connected_components, generate_candidates, iou_box)
from .radiomics import RadiomicsConfig, extract_all
from .selection import (FeatureMatrix, SelectionConfig, SelectionModel,
                        apply_pipeline, fit_selection, lasso_fit, mrmr_select,
                        mutual_information)

__version__ = "0.1.0"

__all__ = [
    "AggregationResult", "BundleError", "CandidateBox", "CandidatePrediction",
    "CaseBundle", "FeatureMatrix", "McraConfig", "PromptConfig",
    "RadiomicsConfig", "SelectionConfig", "SelectionModel", "aggregate",
    "apply_pipeline", "boxes_at_threshold", "classify_report",
    "connected_components", "consistency_loss", "cross_correlation",
    "dice_iou", "extract_all", "final_weights", "fit_selection",
    "fuse_logits", "generate_candidates", "iou_box", "lasso_fit",
    "load_bundle", "mrmr_select", "mutual_information", "normalize_minmax",
    "partition_confidence", "resize_bilinear", "roc_auc", "saliency_weights",
    "save_bundle", "semantic_weights", "soft_fuse", "teacher_mask",
]
