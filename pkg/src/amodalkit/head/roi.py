"""Oracle RoI features: box crops of raw RGB-D lifted to Q channels.

There is no learned backbone at this scale. Crops are area-average
resampled to the head's two grid sizes and mapped from the four raw
channels (R, G, B, proximity) to Q channels by a fixed, seedless cosine
mixing matrix, so feature extraction is deterministic and the head's
learning problem stays well posed. Mask targets are majority-pooled onto
the fine grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..masks import BBox
from ..scenegen import Scene
from .model import HeadConfig


@dataclass(frozen=True, eq=False)
class RoiTargets:
    visible: np.ndarray  # (large, large) bool
    amodal: np.ndarray
    occluded: bool
    class_fg: bool

    def __post_init__(self):
        if self.visible.shape != self.amodal.shape:
            raise ValueError("visible and amodal targets must share a grid")
        if bool(np.any(self.visible & ~self.amodal)):
            raise ValueError("visible target exceeds amodal target")


@dataclass(frozen=True, eq=False)
class RoiFeature:
    small: np.ndarray  # (Q, s, s) float64
    large: np.ndarray  # (Q, 2s, 2s) float64
    targets: RoiTargets
    scene_id: int = -1
    instance_index: int | None = None


def channel_lift(q: int) -> np.ndarray:
    """(q, 4) cosine mixing matrix: row k samples a half-amplitude DCT-II
    basis over the four raw channels. Fixed — not a learned quantity."""
    rows = np.arange(q)[:, None]
    cols = np.arange(4)[None, :]
    return 0.5 * np.cos(math.pi * (2 * cols + 1) * rows / 8.0)


def resample_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) row-stochastic area-overlap matrix."""
    edges = np.linspace(0.0, n_in, n_out + 1)
    w = np.zeros((n_out, n_in))
    for j in range(n_out):
        lo, hi = edges[j], edges[j + 1]
        for i in range(int(math.floor(lo)), min(n_in, int(math.ceil(hi)))):
            w[j, i] = max(0.0, min(hi, i + 1.0) - max(lo, float(i)))
    return w / (edges[1:] - edges[:-1])[:, None]


def area_resample(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Exact area-average resampling of a 2-D image."""
    wr = resample_weights(img.shape[0], out_h)
    wc = resample_weights(img.shape[1], out_w)
    return wr @ img @ wc.T


def extract_roi_feature(
    scene: Scene, box: BBox, cfg: HeadConfig, instance_index: int | None = None
) -> RoiFeature:
    """Crop, resample, and lift one RoI; targets come from the indexed
    ground-truth instance (empty/negative targets when index is None)."""
    if box.w < 2 or box.h < 2:
        raise ValueError(f"degenerate RoI box {box}; needs w, h >= 2")
    if not box.fits_inside(scene.width, scene.height):
        raise ValueError(f"box {box} exceeds the {scene.width}x{scene.height} image")

    rgb = scene.rgb[box.y : box.y2, box.x : box.x2].astype(np.float64) / 255.0
    depth = scene.depth[box.y : box.y2, box.x : box.x2]
    proximity = np.clip(
        (scene.background_depth - depth) / max(scene.background_depth, 1e-9), 0.0, 1.0
    )
    raw = np.stack([rgb[:, :, 0], rgb[:, :, 1], rgb[:, :, 2], proximity])

    lift = channel_lift(cfg.channels)
    small_raw = np.stack([area_resample(c, cfg.small_size, cfg.small_size) for c in raw])
    large_raw = np.stack([area_resample(c, cfg.large_size, cfg.large_size) for c in raw])
    small = np.einsum("qc,chw->qhw", lift, small_raw)
    large = np.einsum("qc,chw->qhw", lift, large_raw)

    grid = cfg.large_size
    if instance_index is None:
        targets = RoiTargets(
            visible=np.zeros((grid, grid), dtype=bool),
            amodal=np.zeros((grid, grid), dtype=bool),
            occluded=False,
            class_fg=False,
        )
    else:
        ann = scene.annotations[instance_index]
        targets = RoiTargets(
            visible=_majority_pool(ann.visible.pixels, box, grid),
            amodal=_majority_pool(ann.amodal.pixels, box, grid),
            occluded=bool(ann.occluded),
            class_fg=bool(ann.class_fg),
        )
    return RoiFeature(
        small=small,
        large=large,
        targets=targets,
        scene_id=scene.scene_id,
        instance_index=instance_index,
    )


def _majority_pool(mask: np.ndarray, box: BBox, grid: int) -> np.ndarray:
    crop = mask[box.y : box.y2, box.x : box.x2].astype(np.float64)
    return area_resample(crop, grid, grid) > 0.5


def rois_from_scene(scene: Scene, cfg: HeadConfig) -> list[RoiFeature]:
    """One oracle RoI per annotated instance, using its tight amodal box."""
    return [
        extract_roi_feature(scene, ann.bbox, cfg, instance_index=i)
        for i, ann in enumerate(scene.annotations)
        if ann.bbox.w >= 2 and ann.bbox.h >= 2
    ]


def build_roi_dataset(
    scenes, cfg: HeadConfig, background_per_scene: int = 0, seed: int = 0
) -> list[RoiFeature]:
    """Oracle RoIs for every instance of every scene, optionally padded with
    random background boxes carrying empty targets."""
    rng = np.random.default_rng(seed)
    rois: list[RoiFeature] = []
    for scene in scenes:
        rois.extend(rois_from_scene(scene, cfg))
        for _ in range(background_per_scene):
            w = int(rng.integers(8, max(9, scene.width // 2)))
            h = int(rng.integers(8, max(9, scene.height // 2)))
            x = int(rng.integers(0, scene.width - w + 1))
            y = int(rng.integers(0, scene.height - h + 1))
            rois.append(extract_roi_feature(scene, BBox(x, y, w, h), cfg, instance_index=None))
    return rois
