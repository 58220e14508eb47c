"""Desk-scale workbench for amodal instance segmentation.

Layered synthetic RGB-D scenes with exact amodal ground truth, reference
segmenters, a trainable hierarchical occlusion head, Hungarian-matched
mask/occlusion metrics, and occluded-object retrieval planning.
"""
from .masks import (
    BBox,
    BinaryMask,
    InstanceAnnotation,
    boundary_mask,
    dilate,
    erode,
    invisible_mask,
    mask_intersection_count,
    rle_decode,
    rle_encode,
)
from .metrics import (
    MatchResult,
    MetricsReport,
    boundary_prf,
    evaluate_dataset,
    evaluate_scene,
    f_at_75,
    hungarian_match,
    occlusion_metrics,
    overlap_prf,
    render_table,
)
from .planner import PlanAudit, RetrievalPlan, plan_retrieval, verify_plan
from .scenegen import GenConfig, Scene, ShapeSpec, compose_scene, generate_scene, remove_instance
from .segmenters import (
    CorruptionConfig,
    DegradedOracleSegmenter,
    DepthLayerSegmenter,
    OracleSegmenter,
    PredictionSet,
    amodal_completion,
    degraded_oracle,
    depth_layer_segmenter,
    make_segmenter,
    occlusion_from_ratio,
    oracle_segmenter,
)

__version__ = "0.1.0"
