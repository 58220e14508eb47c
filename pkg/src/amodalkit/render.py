"""Scene visualization: RGB/depth dumps and an occlusion overlay.

The overlay tints every hidden (amodal-minus-visible) pixel red while
keeping some of its original green/blue, and draws a pure-red one-pixel
ring just outside the amodal mask of each occluded instance. The shape
palette keeps red channels at or below 200, so tinted pixels, border
pixels, and untouched pixels are mutually distinguishable; the ring sits
outside the amodal mask and therefore never covers that instance's own
hidden pixels.
"""
from __future__ import annotations

import numpy as np

from .dataset import depth_to_u16
from .masks import dilate
from .netpbm import write_pgm16, write_ppm
from .scenegen import Scene

TINT_RED = 255
BORDER_COLOR = (255, 0, 0)


def overlay_image(s: Scene) -> np.ndarray:
    out = s.rgb.copy()
    hidden = np.zeros((s.height, s.width), dtype=bool)
    for ann in s.annotations:
        hidden |= ann.invisible().pixels
    out[hidden, 0] = TINT_RED
    out[hidden, 1] //= 2
    out[hidden, 2] //= 2
    for ann in s.annotations:
        if not ann.occluded:
            continue
        ring = dilate(ann.amodal, 1).pixels & ~ann.amodal.pixels
        out[ring] = BORDER_COLOR
    return out


def render_scene(s: Scene, out_prefix) -> dict:
    """Write {prefix}_rgb.ppm, {prefix}_depth.pgm, {prefix}_overlay.ppm."""
    paths = {
        "rgb": f"{out_prefix}_rgb.ppm",
        "depth": f"{out_prefix}_depth.pgm",
        "overlay": f"{out_prefix}_overlay.ppm",
    }
    write_ppm(paths["rgb"], s.rgb)
    write_pgm16(paths["depth"], depth_to_u16(s.depth))
    write_ppm(paths["overlay"], overlay_image(s))
    return paths
