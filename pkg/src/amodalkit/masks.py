"""Binary mask and bounding-box algebra shared by every other module.

Masks are immutable bitmaps addressed row-major from the top-left pixel;
all operations are pure functions and safe to call concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


def _frozen_bool_array(values) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(values), dtype=bool)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """W x H bitmap; ``pixels[y, x]`` is True where the mask is set."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = _frozen_bool_array(self.pixels)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(
                f"mask must be a 2-D bitmap with positive dimensions, got shape {np.shape(self.pixels)}"
            )
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        """(height, width), matching the array layout."""
        return self.pixels.shape

    @property
    def area(self) -> int:
        """Number of set pixels."""
        return int(self.pixels.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self):
        return hash((self.shape, self.pixels.tobytes()))

    def __and__(self, other: "BinaryMask") -> "BinaryMask":
        _require_same_shape(self, other, "mask intersection")
        return BinaryMask(self.pixels & other.pixels)

    def __or__(self, other: "BinaryMask") -> "BinaryMask":
        _require_same_shape(self, other, "mask union")
        return BinaryMask(self.pixels | other.pixels)

    def difference(self, other: "BinaryMask") -> "BinaryMask":
        _require_same_shape(self, other, "mask difference")
        return BinaryMask(self.pixels & ~other.pixels)

    def is_subset_of(self, other: "BinaryMask") -> bool:
        _require_same_shape(self, other, "subset test")
        return not bool((self.pixels & ~other.pixels).any())

    def tight_bbox(self) -> "BBox":
        """Smallest box covering every set pixel; raises on an empty mask."""
        ys, xs = np.nonzero(self.pixels)
        if ys.size == 0:
            raise ValueError("tight bounding box of an empty mask is undefined")
        x0, x1 = int(xs.min()), int(xs.max())
        y0, y1 = int(ys.min()), int(ys.max())
        return BBox(x0, y0, x1 - x0 + 1, y1 - y0 + 1)


@dataclass(frozen=True)
class BBox:
    """Integer pixel rectangle: top-left corner (x, y), extent (w, h)."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0 or self.w < 1 or self.h < 1:
            raise ValueError(f"invalid box (x={self.x}, y={self.y}, w={self.w}, h={self.h})")

    @property
    def x2(self) -> int:
        """Exclusive right edge."""
        return self.x + self.w

    @property
    def y2(self) -> int:
        """Exclusive bottom edge."""
        return self.y + self.h

    def fits_inside(self, width: int, height: int) -> bool:
        return self.x2 <= width and self.y2 <= height

    def contains_box(self, other: "BBox") -> bool:
        return (
            self.x <= other.x
            and self.y <= other.y
            and self.x2 >= other.x2
            and self.y2 >= other.y2
        )

    def hull(self, other: "BBox") -> "BBox":
        x0 = min(self.x, other.x)
        y0 = min(self.y, other.y)
        return BBox(x0, y0, max(self.x2, other.x2) - x0, max(self.y2, other.y2) - y0)

    def center(self) -> tuple[float, float]:
        return (self.x + (self.w - 1) / 2.0, self.y + (self.h - 1) / 2.0)

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class InstanceAnnotation:
    """Per-object state: box, visible mask, amodal (full-extent) mask, flags.

    Ground-truth annotations carry a box tight around the amodal mask;
    predicted ones may carry any box that still covers it.
    """

    bbox: BBox
    visible: BinaryMask
    amodal: BinaryMask
    occluded: bool
    class_fg: bool = True

    def __post_init__(self):
        _require_same_shape(self.visible, self.amodal, "annotation masks")
        if self.amodal.area == 0:
            raise ValueError("annotation requires a nonempty amodal mask")
        if not self.visible.is_subset_of(self.amodal):
            y, x = _first_excess_pixel(self.visible.pixels, self.amodal.pixels)
            raise ValueError(f"visible mask is not contained in amodal mask: pixel (x={x}, y={y})")
        if not self.bbox.fits_inside(self.amodal.width, self.amodal.height):
            raise ValueError(
                f"box {self.bbox} exceeds the {self.amodal.width}x{self.amodal.height} image"
            )
        if not self.bbox.contains_box(self.amodal.tight_bbox()):
            raise ValueError(f"box {self.bbox} does not cover the amodal mask")

    @classmethod
    def from_masks(cls, visible: BinaryMask, amodal: BinaryMask, class_fg: bool = True) -> "InstanceAnnotation":
        """Build a ground-truth style annotation: tight box, occlusion from hidden area."""
        occluded = amodal.area > visible.area
        return cls(amodal.tight_bbox(), visible, amodal, occluded, class_fg)

    def invisible(self) -> BinaryMask:
        return invisible_mask(self.amodal, self.visible)


def _require_same_shape(a: BinaryMask, b: BinaryMask, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(
            f"{what} requires equal dimensions, got {a.width}x{a.height} and {b.width}x{b.height}"
        )


def _first_excess_pixel(inner: np.ndarray, outer: np.ndarray) -> tuple[int, int]:
    excess = inner & ~outer
    ys, xs = np.nonzero(excess)
    return int(ys[0]), int(xs[0])


def mask_intersection_count(a: BinaryMask, b: BinaryMask) -> int:
    """|a AND b|; commutative."""
    _require_same_shape(a, b, "mask intersection count")
    return int((a.pixels & b.pixels).sum())


def invisible_mask(amodal: BinaryMask, visible: BinaryMask) -> BinaryMask:
    """Hidden portion of an object: amodal minus visible.

    Requires visible to be contained in amodal; the union of the result
    with the visible mask reproduces the amodal mask exactly.
    """
    _require_same_shape(amodal, visible, "invisible mask")
    if not visible.is_subset_of(amodal):
        y, x = _first_excess_pixel(visible.pixels, amodal.pixels)
        raise ValueError(f"visible mask is not contained in amodal mask: pixel (x={x}, y={y})")
    return BinaryMask(amodal.pixels & ~visible.pixels)


def boundary_mask(m: BinaryMask) -> BinaryMask:
    """Set pixels with at least one unset (or out-of-image) 4-neighbor."""
    p = m.pixels
    padded = np.pad(p, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return BinaryMask(p & ~interior)


def _square_structure(radius: int) -> np.ndarray:
    return np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)


def dilate(m: BinaryMask, radius: int) -> BinaryMask:
    """Chebyshev (square) dilation; radius 0 is the identity."""
    if radius < 0:
        raise ValueError(f"dilation radius must be non-negative, got {radius}")
    if radius == 0:
        return BinaryMask(m.pixels)
    return BinaryMask(ndimage.binary_dilation(m.pixels, structure=_square_structure(radius)))


def erode(m: BinaryMask, radius: int) -> BinaryMask:
    """Chebyshev erosion; pixels outside the image count as unset."""
    if radius < 0:
        raise ValueError(f"erosion radius must be non-negative, got {radius}")
    if radius == 0:
        return BinaryMask(m.pixels)
    return BinaryMask(
        ndimage.binary_erosion(m.pixels, structure=_square_structure(radius), border_value=0)
    )


def rle_encode(m: BinaryMask) -> str:
    """Serialize to alternating run counts over the row-major pixel scan.

    Counts alternate background-run, foreground-run, starting with the
    background run (0 when the first pixel is set), joined by commas.
    """
    flat = m.pixels.ravel()
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(edges).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return ",".join(str(int(r)) for r in runs)


def rle_decode(width: int, height: int, runs: str) -> BinaryMask:
    """Inverse of :func:`rle_encode` for a width x height bitmap."""
    if width < 1 or height < 1:
        raise ValueError(f"invalid mask dimensions {width}x{height}")
    try:
        counts = [int(tok) for tok in runs.split(",")] if runs else []
    except ValueError as exc:
        raise ValueError(f"malformed run-length string {runs!r}") from exc
    if any(c < 0 for c in counts):
        raise ValueError(f"negative run length in {runs!r}")
    total = sum(counts)
    if total != width * height:
        raise ValueError(
            f"run lengths sum to {total}, expected {width * height} for a {width}x{height} mask"
        )
    values = np.zeros(len(counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, counts)
    return BinaryMask(flat.reshape(height, width))
