from .ablation import ablate_fusion, ablate_hierarchy, render_ablation_table, split_by_scene
from .gradcheck import finite_difference_grad, kink_margin, max_relative_error, random_params
from .model import (
    ALL_HIERARCHIES,
    HeadConfig,
    HeadOutput,
    HeadParams,
    backward,
    forward,
    init_params,
    load_params,
    loss,
    param_layout,
    save_params,
    zero_params,
)
from .roi import RoiFeature, RoiTargets, build_roi_dataset, extract_roi_feature, rois_from_scene
from .training import HierarchicalHead, evaluate_head, train

__all__ = [
    "ALL_HIERARCHIES",
    "HeadConfig",
    "HeadOutput",
    "HeadParams",
    "HierarchicalHead",
    "RoiFeature",
    "RoiTargets",
    "ablate_fusion",
    "ablate_hierarchy",
    "backward",
    "build_roi_dataset",
    "evaluate_head",
    "extract_roi_feature",
    "finite_difference_grad",
    "forward",
    "init_params",
    "kink_margin",
    "load_params",
    "loss",
    "max_relative_error",
    "param_layout",
    "random_params",
    "render_ablation_table",
    "rois_from_scene",
    "save_params",
    "split_by_scene",
    "train",
    "zero_params",
]
