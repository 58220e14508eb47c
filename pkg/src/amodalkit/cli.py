"""Command-line entry point.

Subcommands: generate, segment, evaluate, train-head, ablate, plan, render.
Seeds are explicit flags everywhere randomness is consumed — there are no
wall-clock defaults, so identical invocations produce identical artifacts.
A JSON config file may supply any flag (keys are flag names with dashes
replaced by underscores); explicit flags win over the config file.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import dataset as ds
from .head import (
    ALL_HIERARCHIES,
    HeadConfig,
    ablate_fusion,
    ablate_hierarchy,
    build_roi_dataset,
    render_ablation_table,
    save_params,
    train,
)
from .metrics import evaluate_dataset, render_table
from .planner import plan_retrieval, verify_plan
from .render import render_scene
from .scenegen import GenConfig
from .segmenters import SEGMENTER_CHOICES, make_segmenter


def _add_generate(sub):
    p = sub.add_parser("generate", help="generate a synthetic scene dataset")
    p.add_argument("--seed", type=int, default=None, help="dataset seed (required)")
    p.add_argument("--scenes", type=int, required=True, help="number of scenes")
    p.add_argument("--min-objects", type=int, default=1)
    p.add_argument("--max-objects", type=int, default=8)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--noise-sigma", type=float, default=0.001, help="depth noise sigma, meters")
    p.add_argument("--size-min", type=int, default=10, help="smallest shape extent, pixels")
    p.add_argument("--size-max", type=int, default=40, help="largest shape extent, pixels")
    p.add_argument("--out", required=True, help="output dataset directory")
    return p


def _add_segment(sub):
    p = sub.add_parser("segment", help="run a reference segmenter over a dataset")
    p.add_argument("--method", choices=SEGMENTER_CHOICES, required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="predictions JSONL path")
    p.add_argument("--seed", type=int, default=None, help="required for --method degraded")
    p.add_argument("--erode-radius", type=int, default=0)
    p.add_argument("--drop-prob", type=float, default=0.0)
    p.add_argument("--merge-prob", type=float, default=0.0)
    p.add_argument("--split-prob", type=float, default=0.0)
    p.add_argument("--tau-d", type=float, default=0.05, help="depth discontinuity threshold, meters")
    p.add_argument("--completion", choices=("none", "box_fill", "convex_hull"), default="convex_hull")
    p.add_argument("--min-area", type=int, default=8)
    return p


def _add_evaluate(sub):
    p = sub.add_parser("evaluate", help="score predictions against a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--tol-frac", type=float, default=0.0075, help="boundary tolerance as a fraction of the image diagonal")
    p.add_argument("--report", default=None, help="write the JSON report here")
    p.add_argument("--table", default=None, help="write the text table here")
    return p


def _add_train_head(sub):
    p = sub.add_parser("train-head", help="train the hierarchical occlusion head on oracle RoIs")
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int, default=None, help="training seed (required)")
    p.add_argument("--hierarchy", choices=ALL_HIERARCHIES, default="VAO")
    p.add_argument("--q", type=int, default=8, help="feature channels")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.00125)
    p.add_argument("--fuse-box", dest="fuse_box", action="store_true", default=True)
    p.add_argument("--no-fuse-box", dest="fuse_box", action="store_false")
    p.add_argument("--fuse-prior", dest="fuse_prior", action="store_true", default=True)
    p.add_argument("--no-fuse-prior", dest="fuse_prior", action="store_false")
    p.add_argument("--background-rois", type=int, default=0, help="extra background RoIs per scene")
    p.add_argument("--out", required=True, help="parameter file path")
    return p


def _add_ablate(sub):
    p = sub.add_parser("ablate", help="hierarchy-order or feature-fusion ablation")
    p.add_argument("--mode", choices=("hierarchy", "fusion"), required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int, default=None, help="base seed (required)")
    p.add_argument("--seeds", type=int, default=5, help="seeds per configuration")
    p.add_argument("--q", type=int, default=8)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.00125)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--report", required=True, help="JSON report path")
    return p


def _add_plan(sub):
    p = sub.add_parser("plan", help="plan an occluded-object retrieval order")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scene", type=int, required=True, help="scene id")
    p.add_argument("--target", type=int, required=True, help="target instance index")
    p.add_argument("--method", choices=("oracle", "depth"), default="oracle")
    p.add_argument("--out", required=True, help="plan JSON path")
    return p


def _add_render(sub):
    p = sub.add_parser("render", help="write rgb/depth/overlay images for one scene")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scene", type=int, required=True, help="scene id")
    p.add_argument("--out", required=True, help="output path prefix")
    return p


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="amodalkit",
        description="Amodal instance segmentation workbench: synthetic scenes, "
        "reference segmenters, a trainable occlusion head, Hungarian-matched "
        "metrics, and retrieval planning.",
    )
    parser.add_argument("--config", default=None, help="JSON file of flag defaults")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    parser.add_argument("--threads", type=int, default=1, help="worker processes for ablations")
    sub = parser.add_subparsers(dest="command")
    commands = {
        "generate": _add_generate(sub),
        "segment": _add_segment(sub),
        "evaluate": _add_evaluate(sub),
        "train-head": _add_train_head(sub),
        "ablate": _add_ablate(sub),
        "plan": _add_plan(sub),
        "render": _add_render(sub),
    }
    return parser, commands


def _require_seed(args, why: str) -> int:
    if args.seed is None:
        raise SystemExit2(f"--seed is required {why} (no wall-clock defaults)")
    return args.seed


class SystemExit2(Exception):
    """Usage error: reported with the same exit status as argparse errors."""


def _load_scenes(path):
    records = ds.load_manifest(path)
    return [ds.load_scene(rec, path) for rec in records]


def _cmd_generate(args) -> int:
    seed = _require_seed(args, "to generate data")
    cfg = GenConfig(
        seed=seed,
        width=args.width,
        height=args.height,
        min_objects=args.min_objects,
        max_objects=args.max_objects,
        depth_noise_sigma=args.noise_sigma,
        shape_size_range=(args.size_min, args.size_max),
    )
    summary = ds.write_dataset(cfg, args.scenes, args.out, quiet=args.quiet)
    if not args.quiet:
        print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_segment(args) -> int:
    if args.method == "degraded":
        _require_seed(args, "for the degraded oracle")
    kwargs = {}
    if args.method == "degraded":
        kwargs = {
            "erode_radius": args.erode_radius,
            "drop_prob": args.drop_prob,
            "merge_prob": args.merge_prob,
            "split_prob": args.split_prob,
            "seed": args.seed,
        }
    elif args.method == "depth":
        kwargs = {
            "tau_d": args.tau_d,
            "completion": args.completion,
            "min_area": args.min_area,
        }
    segmenter = make_segmenter(args.method, **kwargs)
    scenes = _load_scenes(args.dataset)
    preds = {s.scene_id: segmenter.predict(s) for s in scenes}
    ds.write_predictions(args.out, preds)
    if not args.quiet:
        total = sum(len(p) for p in preds.values())
        print(f"wrote {total} predicted instances over {len(scenes)} scenes to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    scenes = _load_scenes(args.dataset)
    preds = ds.load_predictions(args.predictions)
    report = evaluate_dataset(preds, scenes, tol_fraction=args.tol_frac)
    table = render_table(report)
    if args.report:
        with open(args.report, "w", encoding="ascii") as fh:
            json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")
    if args.table:
        with open(args.table, "w", encoding="ascii") as fh:
            fh.write(table + "\n")
    if not args.quiet:
        print(table)
    return 0


def _head_config(args, seed: int) -> HeadConfig:
    return HeadConfig(
        channels=args.q,
        hierarchy=getattr(args, "hierarchy", "VAO"),
        fuse_box=getattr(args, "fuse_box", True),
        fuse_prior=getattr(args, "fuse_prior", True),
        lr=args.lr,
        iters=args.iters,
        seed=seed,
    )


def _cmd_train_head(args) -> int:
    seed = _require_seed(args, "to train")
    cfg = _head_config(args, seed)
    scenes = _load_scenes(args.dataset)
    rois = build_roi_dataset(scenes, cfg, background_per_scene=args.background_rois, seed=seed)
    params, curve = train(rois, cfg)
    save_params(args.out, params, cfg)
    if not args.quiet:
        first = curve[0][1] if curve else float("nan")
        last = curve[-1][1] if curve else float("nan")
        print(
            f"trained on {len(rois)} RoIs for {cfg.iters} steps; "
            f"windowed loss {first:.4f} -> {last:.4f}; params -> {args.out}"
        )
    return 0


def _cmd_ablate(args) -> int:
    seed = _require_seed(args, "to ablate")
    cfg = HeadConfig(channels=args.q, lr=args.lr, iters=args.iters, seed=seed)
    scenes = _load_scenes(args.dataset)
    rois = build_roi_dataset(scenes, cfg)
    runner = ablate_hierarchy if args.mode == "hierarchy" else ablate_fusion
    report = runner(
        rois, cfg, n_seeds=args.seeds, val_fraction=args.val_fraction, threads=args.threads
    )
    with open(args.report, "w", encoding="ascii") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    if not args.quiet:
        print(render_ablation_table(report))
    return 0


def _cmd_plan(args) -> int:
    scenes = _load_scenes(args.dataset)
    by_id = {s.scene_id: s for s in scenes}
    if args.scene not in by_id:
        raise ValueError(f"scene id {args.scene} not in dataset {args.dataset}")
    scene = by_id[args.scene]
    predictor = make_segmenter(args.method)
    plan = plan_retrieval(scene, args.target, predictor)
    audit = verify_plan(scene, plan)
    record = {
        "scene_id": args.scene,
        "target": plan.target,
        "succeeded": plan.succeeded,
        "method": args.method,
        "steps": [
            {
                "instance": step.instance,
                "predicted_occluded": False,
                "verified_occluded": step.gt_occluded,
            }
            for step in audit.steps
        ],
        "target_unoccluded_at_grasp": audit.target_unoccluded_at_grasp,
        "violations": audit.violations,
    }
    with open(args.out, "w", encoding="ascii") as fh:
        json.dump(record, fh, sort_keys=True, indent=2)
        fh.write("\n")
    if not args.quiet:
        print(json.dumps(record, sort_keys=True))
    return 0


def _cmd_render(args) -> int:
    scenes = _load_scenes(args.dataset)
    by_id = {s.scene_id: s for s in scenes}
    if args.scene not in by_id:
        raise ValueError(f"scene id {args.scene} not in dataset {args.dataset}")
    paths = render_scene(by_id[args.scene], args.out)
    if not args.quiet:
        print(json.dumps(paths, sort_keys=True))
    return 0


_HANDLERS = {
    "generate": _cmd_generate,
    "segment": _cmd_segment,
    "evaluate": _cmd_evaluate,
    "train-head": _cmd_train_head,
    "ablate": _cmd_ablate,
    "plan": _cmd_plan,
    "render": _cmd_render,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, commands = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                defaults = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"amodalkit: cannot read config {args.config}: {exc}", file=sys.stderr)
            return 2
        sub = commands[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(defaults) - known
        if unknown:
            print(
                f"amodalkit: config keys {sorted(unknown)} are not flags of '{args.command}'",
                file=sys.stderr,
            )
            return 2
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except SystemExit2 as exc:
        print(f"amodalkit: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError, IndexError, KeyError, FloatingPointError) as exc:
        print(f"amodalkit: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
