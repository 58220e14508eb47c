"""Hierarchy-order and feature-fusion ablation harnesses.

Each configuration is trained from several seeds on a scene-level split and
scored on the held-out RoIs; reports carry per-seed entries plus mean/std
columns. Independent trainings can fan out across worker processes.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .model import ALL_HIERARCHIES, HeadConfig
from .roi import RoiFeature
from .training import evaluate_head, train

METRIC_KEYS = ("visible_f", "amodal_f", "invisible_f", "occlusion_acc", "class_acc", "overall")

FUSION_VARIANTS = (
    {"fuse_box": False, "fuse_prior": False},
    {"fuse_box": False, "fuse_prior": True},
    {"fuse_box": True, "fuse_prior": False},
    {"fuse_box": True, "fuse_prior": True},
)


def split_by_scene(
    rois: list[RoiFeature], val_fraction: float = 0.2, seed: int = 0
) -> tuple[list[RoiFeature], list[RoiFeature]]:
    """Deterministic train/validation split on whole scenes."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must be in (0, 1)")
    scene_ids = sorted({roi.scene_id for roi in rois})
    rng = np.random.default_rng(seed)
    rng.shuffle(scene_ids)
    n_val = max(1, round(len(scene_ids) * val_fraction))
    val_ids = set(scene_ids[:n_val])
    train_rois = [r for r in rois if r.scene_id not in val_ids]
    val_rois = [r for r in rois if r.scene_id in val_ids]
    if not train_rois or not val_rois:
        raise ValueError("scene split produced an empty side; need more scenes")
    return train_rois, val_rois


def _train_and_eval(args) -> dict:
    cfg, train_rois, val_rois = args
    params, curve = train(train_rois, cfg)
    scores = evaluate_head(params, cfg, val_rois)
    scores["seed"] = cfg.seed
    scores["final_train_loss"] = curve[-1][1] if curve else None
    return scores


def _run_configs(
    labels: list[dict],
    configs: list[HeadConfig],
    train_rois,
    val_rois,
    n_seeds: int,
    threads: int = 1,
) -> list[dict]:
    jobs = []
    for cfg in configs:
        for s in range(n_seeds):
            jobs.append((replace(cfg, seed=cfg.seed + s), train_rois, val_rois))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_train_and_eval, jobs))
    else:
        results = [_train_and_eval(job) for job in jobs]

    rows = []
    at = 0
    for label in labels:
        per_seed = results[at : at + n_seeds]
        at += n_seeds
        row = dict(label)
        row["per_seed"] = per_seed
        row["mean"] = {k: float(np.mean([r[k] for r in per_seed])) for k in METRIC_KEYS}
        row["std"] = {k: float(np.std([r[k] for r in per_seed])) for k in METRIC_KEYS}
        rows.append(row)
    return rows


def ablate_hierarchy(
    rois: list[RoiFeature],
    base_cfg: HeadConfig,
    n_seeds: int = 5,
    orders=ALL_HIERARCHIES,
    val_fraction: float = 0.2,
    threads: int = 1,
) -> dict:
    """Train one head per branch order (x seeds); report per-order scores."""
    train_rois, val_rois = split_by_scene(rois, val_fraction, seed=base_cfg.seed)
    labels = [{"hierarchy": order} for order in orders]
    configs = [replace(base_cfg, hierarchy=order) for order in orders]
    rows = _run_configs(labels, configs, train_rois, val_rois, n_seeds, threads)
    return {
        "mode": "hierarchy",
        "n_seeds": n_seeds,
        "train_rois": len(train_rois),
        "val_rois": len(val_rois),
        "base": {"channels": base_cfg.channels, "iters": base_cfg.iters, "lr": base_cfg.lr,
                 "fuse_box": base_cfg.fuse_box, "fuse_prior": base_cfg.fuse_prior},
        "rows": rows,
    }


def ablate_fusion(
    rois: list[RoiFeature],
    base_cfg: HeadConfig,
    n_seeds: int = 5,
    variants=FUSION_VARIANTS,
    val_fraction: float = 0.2,
    threads: int = 1,
) -> dict:
    """Train the four {fuse_box, fuse_prior} combinations (x seeds)."""
    train_rois, val_rois = split_by_scene(rois, val_fraction, seed=base_cfg.seed)
    labels = [dict(v) for v in variants]
    configs = [replace(base_cfg, **v) for v in variants]
    rows = _run_configs(labels, configs, train_rois, val_rois, n_seeds, threads)
    return {
        "mode": "fusion",
        "n_seeds": n_seeds,
        "train_rois": len(train_rois),
        "val_rois": len(val_rois),
        "base": {"channels": base_cfg.channels, "iters": base_cfg.iters, "lr": base_cfg.lr,
                 "hierarchy": base_cfg.hierarchy},
        "rows": rows,
    }


def render_ablation_table(report: dict) -> str:
    head = ["config".ljust(24)] + [k.rjust(13) for k in METRIC_KEYS]
    lines = ["".join(head)]
    for row in report["rows"]:
        if report["mode"] == "hierarchy":
            label = "->".join(row["hierarchy"])
        else:
            label = f"box={int(row['fuse_box'])} prior={int(row['fuse_prior'])}"
        cells = [label.ljust(24)]
        for k in METRIC_KEYS:
            cells.append(f"{row['mean'][k]:9.2f}±{row['std'][k]:4.2f}".rjust(13))
        lines.append("".join(cells))
    return "\n".join(lines)
