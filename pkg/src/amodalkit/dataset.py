"""Dataset and prediction persistence.

A dataset directory holds one binary PPM + 16-bit PGM pair per scene and a
``manifest.jsonl`` with one JSON record per scene. Depth is stored as
millimeters (value = meters x 1000, clamped to [0, 65535]). Annotations
round-trip bit-exactly through run-length strings; the record also carries
the shape stack so loaded scenes can be re-rendered for instance removal.
"""
from __future__ import annotations

import json
import os

import numpy as np

from .masks import BBox, BinaryMask, InstanceAnnotation, rle_decode, rle_encode
from .netpbm import read_pgm16, read_ppm, write_pgm16, write_ppm
from .scenegen import GenConfig, Scene, ShapeSpec, generate_scene

MANIFEST_NAME = "manifest.jsonl"
DEPTH_SCALE = 1000.0  # stored value per meter


def depth_to_u16(depth_m: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(depth_m * DEPTH_SCALE), 0, 65535).astype(np.uint16)


def u16_to_depth(values: np.ndarray) -> np.ndarray:
    return values.astype(np.float64) / DEPTH_SCALE


def instance_to_record(ann: InstanceAnnotation) -> dict:
    return {
        "bbox": ann.bbox.as_list(),
        "visible_rle": rle_encode(ann.visible),
        "amodal_rle": rle_encode(ann.amodal),
        "occluded": bool(ann.occluded),
        "area_visible": ann.visible.area,
        "area_amodal": ann.amodal.area,
    }


def instance_from_record(rec: dict, width: int, height: int) -> InstanceAnnotation:
    x, y, w, h = rec["bbox"]
    return InstanceAnnotation(
        bbox=BBox(int(x), int(y), int(w), int(h)),
        visible=rle_decode(width, height, rec["visible_rle"]),
        amodal=rle_decode(width, height, rec["amodal_rle"]),
        occluded=bool(rec["occluded"]),
        class_fg=bool(rec.get("class_fg", True)),
    )


def _shape_to_record(sp: ShapeSpec) -> dict:
    params = [list(p) for p in sp.params] if sp.kind == "polygon" else list(sp.params)
    return {"kind": sp.kind, "params": params, "color": list(sp.color), "depth_z": sp.depth_z}


def _shape_from_record(rec: dict) -> ShapeSpec:
    if rec["kind"] == "polygon":
        params = tuple((int(x), int(y)) for x, y in rec["params"])
    else:
        params = tuple(rec["params"])
    return ShapeSpec(
        kind=rec["kind"],
        params=params,
        color=tuple(int(c) for c in rec["color"]),
        depth_z=float(rec["depth_z"]),
    )


def scene_record(scene: Scene, rgb_path: str, depth_path: str) -> dict:
    return {
        "scene_id": scene.scene_id,
        "width": scene.width,
        "height": scene.height,
        "rgb_path": rgb_path,
        "depth_path": depth_path,
        "background_depth": scene.background_depth,
        "background_color": list(scene.background_color),
        "depth_noise_sigma": scene.depth_noise_sigma,
        "shapes": [_shape_to_record(sp) for sp in scene.shapes],
        "instances": [instance_to_record(a) for a in scene.annotations],
    }


def write_dataset(cfg: GenConfig, n_scenes: int, out_dir, quiet: bool = True) -> dict:
    """Generate and persist ``n_scenes`` scenes; returns a manifest summary."""
    if n_scenes < 0:
        raise ValueError("n_scenes must be non-negative")
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    total_instances = 0
    try:
        with open(manifest_path, "w", encoding="ascii") as manifest:
            for i in range(n_scenes):
                scene = generate_scene(cfg, i)
                rgb_name = f"scene_{i:05d}_rgb.ppm"
                depth_name = f"scene_{i:05d}_depth.pgm"
                write_ppm(os.path.join(out_dir, rgb_name), scene.rgb)
                write_pgm16(os.path.join(out_dir, depth_name), depth_to_u16(scene.depth))
                manifest.write(json.dumps(scene_record(scene, rgb_name, depth_name), sort_keys=True))
                manifest.write("\n")
                total_instances += scene.num_instances
                if not quiet and (i + 1) % 100 == 0:
                    print(f"generated {i + 1}/{n_scenes} scenes")
    except OSError as exc:
        raise OSError(f"failed writing dataset under {out_dir}: {exc}") from exc
    return {
        "out_dir": str(out_dir),
        "manifest": manifest_path,
        "n_scenes": n_scenes,
        "n_instances": total_instances,
    }


def load_manifest(dataset_dir) -> list[dict]:
    path = os.path.join(dataset_dir, MANIFEST_NAME)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no manifest at {path}")
    records = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def load_scene(record: dict, dataset_dir) -> Scene:
    """Rebuild a scene from its manifest record and stored images.

    The stored (quantized) depth image is used verbatim; re-rendering after
    instance removal treats the quantization residual as depth noise.
    """
    width, height = record["width"], record["height"]
    rgb = read_ppm(os.path.join(dataset_dir, record["rgb_path"]))
    depth = u16_to_depth(read_pgm16(os.path.join(dataset_dir, record["depth_path"])))
    if rgb.shape[:2] != (height, width) or depth.shape != (height, width):
        raise ValueError(f"image dimensions disagree with manifest for scene {record['scene_id']}")
    rgb.setflags(write=False)
    depth.setflags(write=False)
    return Scene(
        rgb=rgb,
        depth=depth,
        shapes=tuple(_shape_from_record(r) for r in record["shapes"]),
        background_depth=float(record["background_depth"]),
        background_color=tuple(int(c) for c in record["background_color"]),
        annotations=tuple(
            instance_from_record(r, width, height) for r in record["instances"]
        ),
        depth_noise_sigma=float(record.get("depth_noise_sigma", 0.0)),
        scene_id=int(record["scene_id"]),
    )


def load_dataset(dataset_dir) -> list[Scene]:
    return [load_scene(rec, dataset_dir) for rec in load_manifest(dataset_dir)]


def write_predictions(path, preds_by_scene: dict) -> None:
    """Persist {scene_id: PredictionSet} as JSON lines (instance schema plus score)."""
    try:
        with open(path, "w", encoding="ascii") as fh:
            for scene_id in sorted(preds_by_scene):
                preds = preds_by_scene[scene_id]
                if len(preds) > 0:
                    width = preds.instances[0].visible.width
                    height = preds.instances[0].visible.height
                else:
                    width = height = 0
                record = {
                    "scene_id": scene_id,
                    "width": width,
                    "height": height,
                    "instances": [
                        dict(instance_to_record(inst), score=score)
                        for inst, score in zip(preds.instances, preds.scores)
                    ],
                }
                fh.write(json.dumps(record, sort_keys=True))
                fh.write("\n")
    except OSError as exc:
        raise OSError(f"failed writing predictions to {path}: {exc}") from exc


def load_predictions(path) -> dict:
    """Inverse of :func:`write_predictions`."""
    from .segmenters import PredictionSet

    if not os.path.exists(path):
        raise FileNotFoundError(f"no predictions file at {path}")
    out = {}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            instances = []
            scores = []
            for inst in rec["instances"]:
                instances.append(instance_from_record(inst, rec["width"], rec["height"]))
                scores.append(float(inst.get("score", 1.0)))
            out[int(rec["scene_id"])] = PredictionSet(tuple(instances), tuple(scores))
    return out
