"""Procedural layered 2-D clutter scenes with exact amodal ground truth.

Scenes are rendered orthographically with a painter's algorithm: shapes are
flat plates at distinct depths over a background plane, so the visible mask
of each instance is its footprint minus the footprints of every nearer
shape, and the amodal mask is the full footprint. Generation is a pure
function of (config, scene index).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .geometry import convex_hull, fill_convex_polygon
from .masks import BinaryMask, InstanceAnnotation

SHAPE_KINDS = ("rectangle", "ellipse", "polygon")
MIN_FOOTPRINT_AREA = 16

# overlay rendering claims the saturated-red corner of the color cube, so the
# sampled palette keeps the red channel at or below this value
MAX_SHAPE_RED = 200

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class ShapeSpec:
    """One flat shape: kind-specific geometry, paint color, camera distance.

    params by kind:
      rectangle: (x, y, w, h)
      ellipse:   (cx, cy, rx, ry)
      polygon:   ((x0, y0), (x1, y1), ...) convex hull vertices
    """

    kind: str
    params: tuple
    color: tuple[int, int, int]
    depth_z: float

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.depth_z <= 0:
            raise ValueError(f"depth_z must be positive, got {self.depth_z}")

    def footprint(self, width: int, height: int) -> BinaryMask:
        if self.kind == "rectangle":
            x, y, w, h = self.params
            out = np.zeros((height, width), dtype=bool)
            out[y : y + h, x : x + w] = True
            return BinaryMask(out)
        if self.kind == "ellipse":
            cx, cy, rx, ry = self.params
            ys, xs = np.mgrid[0:height, 0:width]
            inside = ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0
            return BinaryMask(inside)
        verts = convex_hull(np.asarray(self.params, dtype=np.int64))
        return BinaryMask(fill_convex_polygon(width, height, verts))


@dataclass(frozen=True)
class GenConfig:
    seed: int
    width: int = 128
    height: int = 128
    min_objects: int = 1
    max_objects: int = 8
    depth_noise_sigma: float = 0.001
    shape_size_range: tuple[int, int] = (10, 40)

    def __post_init__(self):
        if self.width < 32 or self.height < 32:
            raise ValueError(f"image must be at least 32x32, got {self.width}x{self.height}")
        if not 1 <= self.min_objects <= self.max_objects:
            raise ValueError(
                f"need 1 <= min_objects <= max_objects, got {self.min_objects}..{self.max_objects}"
            )
        if self.depth_noise_sigma < 0:
            raise ValueError("depth_noise_sigma must be non-negative")
        lo, hi = self.shape_size_range
        if not 6 <= lo <= hi:
            raise ValueError(f"shape_size_range must satisfy 6 <= lo <= hi, got {lo}..{hi}")
        if hi > min(self.width, self.height):
            raise ValueError("largest shape size exceeds the image")


@dataclass(frozen=True, eq=False)
class Scene:
    """RGB-D observation plus the back-to-front shape stack that produced it.

    ``shapes`` and ``annotations`` are aligned and ordered far-to-near, so
    the annotation index doubles as the depth rank of the instance.
    """

    rgb: np.ndarray
    depth: np.ndarray
    shapes: tuple[ShapeSpec, ...]
    background_depth: float
    background_color: tuple[int, int, int]
    annotations: tuple[InstanceAnnotation, ...]
    depth_noise_sigma: float = 0.0
    scene_id: int = 0

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def num_instances(self) -> int:
        return len(self.annotations)


def ideal_depth(
    shapes: tuple[ShapeSpec, ...], width: int, height: int, background_depth: float
) -> np.ndarray:
    """Noise-free depth image: front-most shape depth, else background."""
    depth = np.full((height, width), background_depth, dtype=np.float64)
    for sp in sorted(shapes, key=lambda s: -s.depth_z):
        depth[sp.footprint(width, height).pixels] = sp.depth_z
    return depth


def compose_scene(
    shapes,
    width: int,
    height: int,
    background_depth: float,
    background_color: tuple[int, int, int] = (110, 110, 110),
    depth_noise: np.ndarray | None = None,
    depth_noise_sigma: float = 0.0,
    scene_id: int = 0,
) -> Scene:
    """Render explicit shapes into a fully annotated scene.

    Shapes are re-ordered back-to-front; every footprint must be a single
    4-connected component of at least MIN_FOOTPRINT_AREA pixels and all
    depths must be distinct and nearer than the background.
    """
    ordered = tuple(sorted(shapes, key=lambda s: -s.depth_z))
    depths = [sp.depth_z for sp in ordered]
    if len(set(depths)) != len(depths):
        raise ValueError("shapes in one scene must have distinct depth_z")
    if any(d >= background_depth for d in depths):
        raise ValueError("every shape must be nearer than the background plane")

    footprints = []
    for sp in ordered:
        fp = sp.footprint(width, height)
        if not _footprint_ok(fp):
            raise ValueError(
                f"{sp.kind} footprint must be one 4-connected component of >= "
                f"{MIN_FOOTPRINT_AREA} pixels inside the image"
            )
        footprints.append(fp)

    owner = np.full((height, width), -1, dtype=np.int32)
    rgb = np.empty((height, width, 3), dtype=np.uint8)
    rgb[:] = np.asarray(background_color, dtype=np.uint8)
    for i, (sp, fp) in enumerate(zip(ordered, footprints)):
        owner[fp.pixels] = i
        rgb[fp.pixels] = np.asarray(sp.color, dtype=np.uint8)

    depth = ideal_depth(ordered, width, height, background_depth)
    if depth_noise is not None:
        if depth_noise.shape != (height, width):
            raise ValueError(
                f"depth noise shape {depth_noise.shape} does not match image {height}x{width}"
            )
        depth = depth + depth_noise

    annotations = []
    for i, fp in enumerate(footprints):
        visible = BinaryMask(owner == i)
        annotations.append(InstanceAnnotation.from_masks(visible, fp))

    rgb.setflags(write=False)
    depth.setflags(write=False)
    return Scene(
        rgb=rgb,
        depth=depth,
        shapes=ordered,
        background_depth=background_depth,
        background_color=tuple(int(c) for c in background_color),
        annotations=tuple(annotations),
        depth_noise_sigma=depth_noise_sigma,
        scene_id=scene_id,
    )


def _footprint_ok(fp: BinaryMask) -> bool:
    if fp.area < MIN_FOOTPRINT_AREA:
        return False
    _, count = ndimage.label(fp.pixels, structure=_FOUR_CONNECTED)
    return count == 1


def _sample_shape(rng: np.random.Generator, cfg: GenConfig, depth_z: float) -> ShapeSpec:
    lo, hi = cfg.shape_size_range
    kind = SHAPE_KINDS[rng.integers(0, len(SHAPE_KINDS))]
    color = (
        int(rng.integers(30, MAX_SHAPE_RED + 1)),
        int(rng.integers(32, 256)),
        int(rng.integers(32, 256)),
    )
    if kind == "rectangle":
        w = int(rng.integers(lo, hi + 1))
        h = int(rng.integers(lo, hi + 1))
        x = int(rng.integers(0, cfg.width - w + 1))
        y = int(rng.integers(0, cfg.height - h + 1))
        params: tuple = (x, y, w, h)
    elif kind == "ellipse":
        rx = int(rng.integers(max(3, lo // 2), max(4, hi // 2) + 1))
        ry = int(rng.integers(max(3, lo // 2), max(4, hi // 2) + 1))
        cx = int(rng.integers(rx, cfg.width - rx))
        cy = int(rng.integers(ry, cfg.height - ry))
        params = (cx, cy, rx, ry)
    else:
        n = int(rng.integers(4, 8))
        radius = int(rng.integers(max(4, lo // 2), max(5, hi // 2) + 1))
        cx = int(rng.integers(radius, cfg.width - radius))
        cy = int(rng.integers(radius, cfg.height - radius))
        angles = np.sort(rng.uniform(0.0, 2.0 * math.pi, n))
        radii = rng.uniform(0.55, 1.0, n) * radius
        xs = np.clip(np.rint(cx + radii * np.cos(angles)), 0, cfg.width - 1)
        ys = np.clip(np.rint(cy + radii * np.sin(angles)), 0, cfg.height - 1)
        verts = convex_hull(np.stack([xs, ys], axis=1).astype(np.int64))
        params = tuple((int(x), int(y)) for x, y in verts)
    return ShapeSpec(kind=kind, params=params, color=color, depth_z=depth_z)


def _visible_areas(footprints, depths) -> list[int]:
    order = np.argsort(-np.asarray(depths))
    owner = np.full(footprints[0].shape, -1, dtype=np.int32)
    for i in order:
        owner[footprints[i].pixels] = i
    return [int((owner == i).sum()) for i in range(len(footprints))]


def generate_scene(cfg: GenConfig, scene_index: int) -> Scene:
    """Sample one scene; deterministic for a fixed (cfg.seed, scene_index).

    Each sampled shape must keep every instance partially visible; a shape
    that would fully hide itself or another is resampled up to 100 times,
    after which the scene is emitted with fewer objects (never zero).
    """
    if scene_index < 0:
        raise ValueError("scene_index must be non-negative")
    rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, scene_index])

    background_depth = 0.95 + int(rng.integers(0, 101)) / 1000.0
    gray = int(rng.integers(90, 161))
    background_color = (gray, gray, gray)
    k_target = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))

    # distinct depth plateaus on a 5 mm grid, at least 50 mm off the plane
    levels = np.arange(0.30, background_depth - 0.05 + 1e-9, 0.005)
    depths = levels[rng.choice(len(levels), size=min(k_target, len(levels)), replace=False)]

    shapes: list[ShapeSpec] = []
    footprints: list[BinaryMask] = []
    for depth_z in depths:
        placed = False
        for _ in range(100):
            candidate = _sample_shape(rng, cfg, float(round(depth_z, 3)))
            fp = candidate.footprint(cfg.width, cfg.height)
            if not _footprint_ok(fp):
                continue
            areas = _visible_areas(footprints + [fp], [s.depth_z for s in shapes] + [candidate.depth_z])
            if min(areas) > 0:
                shapes.append(candidate)
                footprints.append(fp)
                placed = True
                break
        if not placed and shapes:
            break
        if not placed:
            raise RuntimeError("could not place the first shape; config too constrained")

    noise = None
    if cfg.depth_noise_sigma > 0:
        sigma = cfg.depth_noise_sigma
        noise = np.clip(
            rng.normal(0.0, sigma, size=(cfg.height, cfg.width)), -6.0 * sigma, 6.0 * sigma
        )
    return compose_scene(
        shapes,
        cfg.width,
        cfg.height,
        background_depth,
        background_color,
        depth_noise=noise,
        depth_noise_sigma=cfg.depth_noise_sigma,
        scene_id=scene_index,
    )


def remove_instance(s: Scene, index: int) -> Scene:
    """Scene with one shape deleted and images re-rendered.

    Depth noise is carried over pixel-for-pixel (recovered as the residual
    against the noise-free render), so pixels whose owner does not change
    keep their exact depth and rgb values.
    """
    if not 0 <= index < len(s.shapes):
        raise IndexError(f"instance index {index} out of range for {len(s.shapes)} instances")
    residual = s.depth - ideal_depth(s.shapes, s.width, s.height, s.background_depth)
    remaining = s.shapes[:index] + s.shapes[index + 1 :]
    return compose_scene(
        remaining,
        s.width,
        s.height,
        s.background_depth,
        s.background_color,
        depth_noise=residual,
        depth_noise_sigma=s.depth_noise_sigma,
        scene_id=s.scene_id,
    )
