"""Non-learned reference predictors over RGB-D scenes.

Three graded subjects for the metric suite and the planner: a perfect
oracle, a controllably corrupted oracle, and a depth-driven heuristic. The
estimator classes follow the scikit-learn parameter convention (constructor
args mirrored as attributes, ``get_params``/``set_params`` inherited) so
they can be cloned and swept like any other estimator.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from sklearn.base import BaseEstimator

from .geometry import convex_hull, fill_convex_polygon
from .masks import BinaryMask, InstanceAnnotation, erode
from .scenegen import Scene

OCCLUSION_RATIO_THRESHOLD = 0.95
COMPLETION_METHODS = ("none", "box_fill", "convex_hull")

# minimum background band in meters, absorbing 16-bit depth quantization
MIN_DEPTH_BAND = 0.001


@dataclass(frozen=True)
class PredictionSet:
    instances: tuple[InstanceAnnotation, ...]
    scores: tuple[float, ...]

    def __post_init__(self):
        if len(self.instances) != len(self.scores):
            raise ValueError(
                f"{len(self.instances)} instances but {len(self.scores)} scores"
            )
        if any(not 0.0 <= s <= 1.0 for s in self.scores):
            raise ValueError("scores must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.instances)

    @classmethod
    def of(cls, instances) -> "PredictionSet":
        instances = tuple(instances)
        return cls(instances, (1.0,) * len(instances))


@dataclass(frozen=True)
class CorruptionConfig:
    erode_radius: int = 0
    drop_prob: float = 0.0
    merge_prob: float = 0.0
    split_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.erode_radius < 0:
            raise ValueError("erode_radius must be non-negative")
        for name in ("drop_prob", "merge_prob", "split_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def occlusion_from_ratio(
    visible: BinaryMask, amodal: BinaryMask, threshold: float = OCCLUSION_RATIO_THRESHOLD
) -> bool:
    """Ratio rule for predictors without an occlusion head: occluded iff
    visible/amodal falls strictly below the threshold. Empty amodal -> False."""
    denom = amodal.area
    if denom == 0:
        return False
    return visible.area / denom < threshold


def oracle_segmenter(s: Scene) -> PredictionSet:
    """Ground-truth annotations verbatim, every score 1.0."""
    return PredictionSet.of(s.annotations)


def degraded_oracle(s: Scene, c: CorruptionConfig) -> PredictionSet:
    """Oracle output corrupted in order: drop, pairwise merge, split, erode.

    Occlusion flags are inherited from the source instances (merge ORs them,
    split copies them), so the all-zero configuration reproduces the oracle
    bit-exactly. Deterministic given (c.seed, scene_id).
    """
    rng = np.random.default_rng([c.seed & 0xFFFFFFFFFFFFFFFF, s.scene_id & 0xFFFFFFFFFFFFFFFF])
    kept = [a for a in s.annotations if rng.random() >= c.drop_prob]

    merged: list[InstanceAnnotation] = []
    for ann in kept:
        if merged and rng.random() < c.merge_prob:
            prev = merged[-1]
            merged[-1] = InstanceAnnotation(
                bbox=prev.bbox.hull(ann.bbox),
                visible=prev.visible | ann.visible,
                amodal=prev.amodal | ann.amodal,
                occluded=prev.occluded or ann.occluded,
                class_fg=True,
            )
        else:
            merged.append(ann)

    split: list[InstanceAnnotation] = []
    for ann in merged:
        if rng.random() < c.split_prob:
            split.extend(_bisect(ann))
        else:
            split.append(ann)

    final: list[InstanceAnnotation] = []
    for ann in split:
        if c.erode_radius == 0:
            final.append(ann)
            continue
        visible = erode(ann.visible, c.erode_radius)
        amodal = erode(ann.amodal, c.erode_radius) | visible
        if amodal.area == 0:
            continue  # nothing left to predict
        final.append(
            InstanceAnnotation(
                bbox=amodal.tight_bbox(),
                visible=visible,
                amodal=amodal,
                occluded=ann.occluded,
                class_fg=True,
            )
        )
    return PredictionSet.of(final)


def _bisect(ann: InstanceAnnotation) -> list[InstanceAnnotation]:
    """Split one instance across the midline of its longer box axis."""
    box = ann.bbox
    half = np.zeros(ann.visible.shape, dtype=bool)
    if box.w >= box.h:
        half[:, : box.x + box.w // 2] = True
    else:
        half[: box.y + box.h // 2, :] = True
    parts = []
    for side in (half, ~half):
        amodal = BinaryMask(ann.amodal.pixels & side)
        if amodal.area == 0:
            continue
        parts.append(
            InstanceAnnotation(
                bbox=amodal.tight_bbox(),
                visible=BinaryMask(ann.visible.pixels & side),
                amodal=amodal,
                occluded=ann.occluded,
                class_fg=True,
            )
        )
    return parts if parts else [ann]


def amodal_completion(visible: BinaryMask, method: str) -> BinaryMask:
    """Guess the full object extent from its visible pixels.

    none: the visible mask itself; box_fill: its filled tight bounding box;
    convex_hull: the filled convex hull of visible pixel centers. Every
    method returns a superset of the input.
    """
    if method not in COMPLETION_METHODS:
        raise ValueError(f"unknown completion method {method!r}, expected one of {COMPLETION_METHODS}")
    if visible.area == 0:
        raise ValueError("amodal completion of an empty visible mask is undefined")
    if method == "none":
        return BinaryMask(visible.pixels)
    if method == "box_fill":
        box = visible.tight_bbox()
        out = np.zeros(visible.shape, dtype=bool)
        out[box.y : box.y2, box.x : box.x2] = True
        return BinaryMask(out)
    ys, xs = np.nonzero(visible.pixels)
    hull = convex_hull(np.stack([xs, ys], axis=1))
    filled = fill_convex_polygon(visible.width, visible.height, hull)
    return BinaryMask(filled | visible.pixels)


def _depth_components(depth: np.ndarray, foreground: np.ndarray, tau_d: float) -> list[np.ndarray]:
    """4-connected foreground components, split where |depth jump| > tau_d."""
    h, w = depth.shape
    idx = np.arange(h * w).reshape(h, w)
    right = foreground[:, :-1] & foreground[:, 1:] & (
        np.abs(depth[:, :-1] - depth[:, 1:]) <= tau_d
    )
    down = foreground[:-1, :] & foreground[1:, :] & (
        np.abs(depth[:-1, :] - depth[1:, :]) <= tau_d
    )
    rows = np.concatenate([idx[:, :-1][right], idx[:-1, :][down]])
    cols = np.concatenate([idx[:, 1:][right], idx[1:, :][down]])
    graph = coo_matrix(
        (np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(h * w, h * w)
    )
    _, labels = connected_components(graph, directed=False)
    fg_labels = labels.reshape(h, w)
    masks = []
    # stable instance order: first foreground pixel in row-major scan
    seen: dict[int, int] = {}
    flat_fg = foreground.ravel()
    flat_lab = labels
    for i in np.flatnonzero(flat_fg):
        lab = int(flat_lab[i])
        if lab not in seen:
            seen[lab] = len(masks)
            masks.append((fg_labels == lab) & foreground)
    return masks


def depth_layer_segmenter(
    s: Scene,
    tau_d: float = 0.05,
    noise_sigma: float | None = None,
    completion: str = "convex_hull",
    min_area: int = 8,
    occlusion_threshold: float = OCCLUSION_RATIO_THRESHOLD,
) -> PredictionSet:
    """Heuristic predictor: depth-band background removal, 4-connected
    components split at depth discontinuities, amodal completion, and the
    visible/amodal ratio rule for occlusion."""
    sigma = s.depth_noise_sigma if noise_sigma is None else noise_sigma
    band = max(3.0 * sigma, MIN_DEPTH_BAND)
    foreground = np.abs(s.depth - s.background_depth) > band
    instances = []
    for component in _depth_components(s.depth, foreground, tau_d):
        if int(component.sum()) < min_area:
            continue
        visible = BinaryMask(component)
        amodal = amodal_completion(visible, completion)
        instances.append(
            InstanceAnnotation(
                bbox=amodal.tight_bbox(),
                visible=visible,
                amodal=amodal,
                occluded=occlusion_from_ratio(visible, amodal, occlusion_threshold),
                class_fg=True,
            )
        )
    return PredictionSet.of(instances)


class OracleSegmenter(BaseEstimator):
    """Upper-bound subject: returns ground truth."""

    def fit(self, X=None, y=None):
        return self

    def predict(self, scene: Scene) -> PredictionSet:
        return oracle_segmenter(scene)


class DegradedOracleSegmenter(BaseEstimator):
    """Oracle with controlled errors; parameters mirror CorruptionConfig."""

    def __init__(self, erode_radius=0, drop_prob=0.0, merge_prob=0.0, split_prob=0.0, seed=0):
        self.erode_radius = erode_radius
        self.drop_prob = drop_prob
        self.merge_prob = merge_prob
        self.split_prob = split_prob
        self.seed = seed

    def _config(self) -> CorruptionConfig:
        return CorruptionConfig(
            erode_radius=self.erode_radius,
            drop_prob=self.drop_prob,
            merge_prob=self.merge_prob,
            split_prob=self.split_prob,
            seed=self.seed,
        )

    def fit(self, X=None, y=None):
        return self

    def predict(self, scene: Scene) -> PredictionSet:
        return degraded_oracle(scene, self._config())


class DepthLayerSegmenter(BaseEstimator):
    """Depth-band component segmenter with amodal completion.

    noise_sigma None defers to the scene's own noise level.
    """

    def __init__(
        self,
        tau_d=0.05,
        noise_sigma=None,
        completion="convex_hull",
        min_area=8,
        occlusion_threshold=OCCLUSION_RATIO_THRESHOLD,
    ):
        self.tau_d = tau_d
        self.noise_sigma = noise_sigma
        self.completion = completion
        self.min_area = min_area
        self.occlusion_threshold = occlusion_threshold

    def fit(self, X=None, y=None):
        return self

    def predict(self, scene: Scene) -> PredictionSet:
        return depth_layer_segmenter(
            scene,
            tau_d=self.tau_d,
            noise_sigma=self.noise_sigma,
            completion=self.completion,
            min_area=self.min_area,
            occlusion_threshold=self.occlusion_threshold,
        )


SEGMENTER_CHOICES = ("oracle", "degraded", "depth")


def make_segmenter(method: str, **kwargs) -> BaseEstimator:
    if method == "oracle":
        return OracleSegmenter()
    if method == "degraded":
        return DegradedOracleSegmenter(**kwargs)
    if method == "depth":
        return DepthLayerSegmenter(**kwargs)
    raise ValueError(f"unknown segmenter {method!r}, expected one of {SEGMENTER_CHOICES}")
