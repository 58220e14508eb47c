"""Hungarian-matched evaluation of visible, amodal, and invisible masks.

Predicted and ground-truth instances are paired once per scene by maximizing
the total visible-mask overlap F (optimal assignment), and the same pairing
is reused for every mask kind so all columns describe one correspondence.
Dataset scores micro-average: numerators and denominators are summed across
scenes before any ratio is taken.

Conventions, spelled out because they shape the numbers:
  * Overlap F per pair is the Dice score 2|p & g| / (|p| + |g|); a pair of
    two empty masks counts as 1.0 (a correct "nothing hidden" prediction).
  * A ratio with a zero denominator reports 100 and, when both sides are
    empty, is flagged vacuous rather than silently perfect.
  * Occlusion counts follow the confusion-table reading: alpha matched
    pairs, beta predicted-occluded, gamma truth-occluded, delta_tp both,
    delta_acc agreeing on either class. Accuracy uses delta_acc; precision
    and recall use delta_tp.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .masks import BinaryMask, boundary_mask, dilate
from .segmenters import PredictionSet

log = logging.getLogger(__name__)

MASK_KINDS = ("visible", "amodal", "invisible")
DEFAULT_BOUNDARY_TOL_FRACTION = 0.0075
F75_THRESHOLD = 0.75


@dataclass(frozen=True)
class MatchResult:
    """One-to-one pred/gt assignment; pairs carry their visible overlap F."""

    pairs: tuple[tuple[int, int, float], ...]
    unmatched_pred: tuple[int, ...]
    unmatched_gt: tuple[int, ...]


@dataclass(frozen=True)
class PRF:
    p: float
    r: float
    f: float
    vacuous: bool = False


@dataclass(frozen=True)
class KindReport:
    overlap: PRF
    boundary: PRF
    f_at_75: float
    f_at_75_vacuous: bool = False


@dataclass(frozen=True)
class OcclusionReport:
    acc: float | None
    f: float
    p: float | None
    r: float | None
    alpha: int
    beta: int
    gamma: int
    delta_acc: int
    delta_tp: int


@dataclass(frozen=True)
class MetricsReport:
    visible: KindReport
    amodal: KindReport
    invisible: KindReport
    occlusion: OcclusionReport
    n_scenes: int = 1
    n_pred: int = 0
    n_gt: int = 0

    def kind(self, name: str) -> KindReport:
        if name not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {name!r}")
        return getattr(self, name)

    def to_dict(self) -> dict:
        def prf(v: PRF):
            return {"p": v.p, "r": v.r, "f": v.f, "vacuous": v.vacuous}

        out = {"n_scenes": self.n_scenes, "n_pred": self.n_pred, "n_gt": self.n_gt}
        for kind in MASK_KINDS:
            k = self.kind(kind)
            out[kind] = {
                "overlap": prf(k.overlap),
                "boundary": prf(k.boundary),
                "f_at_75": k.f_at_75,
                "f_at_75_vacuous": k.f_at_75_vacuous,
            }
        o = self.occlusion
        out["occlusion"] = {
            "acc": o.acc,
            "f": o.f,
            "p": o.p,
            "r": o.r,
            "counts": {
                "alpha": o.alpha,
                "beta": o.beta,
                "gamma": o.gamma,
                "delta_acc": o.delta_acc,
                "delta_tp": o.delta_tp,
            },
        }
        return out


def pair_overlap_f(pred: BinaryMask, gt: BinaryMask) -> float:
    """Dice score; two empty masks score 1.0."""
    total = pred.area + gt.area
    if total == 0:
        return 1.0
    inter = int((pred.pixels & gt.pixels).sum())
    return 2.0 * inter / total


def default_boundary_tol(width: int, height: int, fraction: float = DEFAULT_BOUNDARY_TOL_FRACTION) -> int:
    return max(1, round(fraction * math.hypot(width, height)))


def _kind_mask(inst, kind: str) -> BinaryMask:
    if kind == "visible":
        return inst.visible
    if kind == "amodal":
        return inst.amodal
    if kind == "invisible":
        return inst.invisible()
    raise ValueError(f"unknown mask kind {kind!r}")


def max_total_assignment(scores: np.ndarray) -> tuple[list[tuple[int, int]], float]:
    """Assignment of rows to columns maximizing the summed score."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        return [], 0.0
    rows, cols = linear_sum_assignment(scores, maximize=True)
    pairs = list(zip(rows.tolist(), cols.tolist()))
    total = float(scores[rows, cols].sum())
    return pairs, total


def hungarian_match(preds: PredictionSet, gts) -> MatchResult:
    """Optimal pred/gt pairing by total visible-mask overlap F.

    Pairs with zero F are stripped to the unmatched lists; the remaining
    assignment attains the brute-force permutation optimum.
    """
    gts = tuple(gts)
    n_pred, n_gt = len(preds.instances), len(gts)
    if n_pred and n_gt:
        first = preds.instances[0].visible
        for inst in list(preds.instances) + list(gts):
            if inst.visible.shape != first.shape:
                raise ValueError(
                    f"all masks must share dimensions; got {inst.visible.width}x"
                    f"{inst.visible.height} vs {first.width}x{first.height}"
                )
    scores = np.zeros((n_pred, n_gt))
    for i, pred in enumerate(preds.instances):
        for j, gt in enumerate(gts):
            scores[i, j] = pair_overlap_f(pred.visible, gt.visible)
    assignment, _ = max_total_assignment(scores)
    pairs = tuple(
        (i, j, float(scores[i, j])) for i, j in sorted(assignment) if scores[i, j] > 0.0
    )
    matched_pred = {i for i, _, _ in pairs}
    matched_gt = {j for _, j, _ in pairs}
    return MatchResult(
        pairs=pairs,
        unmatched_pred=tuple(i for i in range(n_pred) if i not in matched_pred),
        unmatched_gt=tuple(j for j in range(n_gt) if j not in matched_gt),
    )


@dataclass
class _Sums:
    """Micro-average accumulator; one instance per evaluation run."""

    overlap_num: dict = field(default_factory=lambda: {k: 0 for k in MASK_KINDS})
    overlap_pred: dict = field(default_factory=lambda: {k: 0 for k in MASK_KINDS})
    overlap_gt: dict = field(default_factory=lambda: {k: 0 for k in MASK_KINDS})
    boundary_num_p: dict = field(default_factory=lambda: {k: 0 for k in MASK_KINDS})
    boundary_num_r: dict = field(default_factory=lambda: {k: 0 for k in MASK_KINDS})
    boundary_pred: dict = field(default_factory=lambda: {k: 0 for k in MASK_KINDS})
    boundary_gt: dict = field(default_factory=lambda: {k: 0 for k in MASK_KINDS})
    f75_hits: dict = field(default_factory=lambda: {k: 0 for k in MASK_KINDS})
    n_gt: int = 0
    n_pred: int = 0
    n_scenes: int = 0
    alpha: int = 0
    beta: int = 0
    gamma: int = 0
    delta_acc: int = 0
    delta_tp: int = 0


def _accumulate(sums: _Sums, match: MatchResult, preds: PredictionSet, gts, tol: int) -> None:
    gts = tuple(gts)
    pred_masks = {k: [_kind_mask(p, k) for p in preds.instances] for k in MASK_KINDS}
    gt_masks = {k: [_kind_mask(g, k) for g in gts] for k in MASK_KINDS}
    pred_bounds = {k: [boundary_mask(m) for m in pred_masks[k]] for k in MASK_KINDS}
    gt_bounds = {k: [boundary_mask(m) for m in gt_masks[k]] for k in MASK_KINDS}

    for kind in MASK_KINDS:
        sums.overlap_pred[kind] += sum(m.area for m in pred_masks[kind])
        sums.overlap_gt[kind] += sum(m.area for m in gt_masks[kind])
        sums.boundary_pred[kind] += sum(b.area for b in pred_bounds[kind])
        sums.boundary_gt[kind] += sum(b.area for b in gt_bounds[kind])
        for i, j, _ in match.pairs:
            pm, gm = pred_masks[kind][i], gt_masks[kind][j]
            sums.overlap_num[kind] += int((pm.pixels & gm.pixels).sum())
            pb, gb = pred_bounds[kind][i], gt_bounds[kind][j]
            sums.boundary_num_p[kind] += int((pb.pixels & dilate(gb, tol).pixels).sum())
            sums.boundary_num_r[kind] += int((gb.pixels & dilate(pb, tol).pixels).sum())
            if pair_overlap_f(pm, gm) > F75_THRESHOLD:
                sums.f75_hits[kind] += 1

    sums.n_gt += len(gts)
    sums.n_pred += len(preds.instances)
    sums.n_scenes += 1
    sums.alpha += len(match.pairs)
    for i, j, _ in match.pairs:
        p_occ = preds.instances[i].occluded
        g_occ = gts[j].occluded
        sums.beta += p_occ
        sums.gamma += g_occ
        sums.delta_tp += p_occ and g_occ
        sums.delta_acc += p_occ == g_occ


def _prf_from_sums(num_p: int, num_r: int, denom_p: int, denom_r: int) -> PRF:
    p = 100.0 * num_p / denom_p if denom_p > 0 else 100.0
    r = 100.0 * num_r / denom_r if denom_r > 0 else 100.0
    f = 2.0 * p * r / (p + r) if p + r > 0 else 0.0
    return PRF(p=p, r=r, f=f, vacuous=(denom_p == 0 and denom_r == 0))


def _report_from_sums(sums: _Sums) -> MetricsReport:
    kinds = {}
    for kind in MASK_KINDS:
        overlap = _prf_from_sums(
            sums.overlap_num[kind],
            sums.overlap_num[kind],
            sums.overlap_pred[kind],
            sums.overlap_gt[kind],
        )
        boundary = _prf_from_sums(
            sums.boundary_num_p[kind],
            sums.boundary_num_r[kind],
            sums.boundary_pred[kind],
            sums.boundary_gt[kind],
        )
        f75 = 100.0 * sums.f75_hits[kind] / sums.n_gt if sums.n_gt > 0 else 100.0
        kinds[kind] = KindReport(
            overlap=overlap,
            boundary=boundary,
            f_at_75=f75,
            f_at_75_vacuous=(sums.n_gt == 0),
        )
    alpha, beta, gamma = sums.alpha, sums.beta, sums.gamma
    acc = 100.0 * sums.delta_acc / alpha if alpha > 0 else None
    p_o = 100.0 * sums.delta_tp / beta if beta > 0 else None
    r_o = 100.0 * sums.delta_tp / gamma if gamma > 0 else None
    f_o = 2.0 * p_o * r_o / (p_o + r_o) if p_o and r_o else 0.0
    occ = OcclusionReport(
        acc=acc,
        f=f_o,
        p=p_o,
        r=r_o,
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        delta_acc=sums.delta_acc,
        delta_tp=sums.delta_tp,
    )
    return MetricsReport(
        visible=kinds["visible"],
        amodal=kinds["amodal"],
        invisible=kinds["invisible"],
        occlusion=occ,
        n_scenes=sums.n_scenes,
        n_pred=sums.n_pred,
        n_gt=sums.n_gt,
    )


def overlap_prf(match: MatchResult, preds: PredictionSet, gts, kind: str) -> PRF:
    """Area precision/recall/F for one mask kind under a fixed matching.

    Unmatched predictions only enlarge the precision denominator; unmatched
    ground truths only enlarge the recall denominator.
    """
    gts = tuple(gts)
    num = 0
    for i, j, _ in match.pairs:
        num += int((_kind_mask(preds.instances[i], kind).pixels & _kind_mask(gts[j], kind).pixels).sum())
    denom_p = sum(_kind_mask(p, kind).area for p in preds.instances)
    denom_r = sum(_kind_mask(g, kind).area for g in gts)
    return _prf_from_sums(num, num, denom_p, denom_r)


def boundary_prf(match: MatchResult, preds: PredictionSet, gts, kind: str, tol_radius: int) -> PRF:
    """Boundary precision/recall/F with a Chebyshev matching tolerance."""
    if tol_radius < 0:
        raise ValueError("tol_radius must be non-negative")
    gts = tuple(gts)
    pred_bounds = [boundary_mask(_kind_mask(p, kind)) for p in preds.instances]
    gt_bounds = [boundary_mask(_kind_mask(g, kind)) for g in gts]
    num_p = num_r = 0
    for i, j, _ in match.pairs:
        pb, gb = pred_bounds[i], gt_bounds[j]
        num_p += int((pb.pixels & dilate(gb, tol_radius).pixels).sum())
        num_r += int((gb.pixels & dilate(pb, tol_radius).pixels).sum())
    denom_p = sum(b.area for b in pred_bounds)
    denom_r = sum(b.area for b in gt_bounds)
    return _prf_from_sums(num_p, num_r, denom_p, denom_r)


def f_at_75(match: MatchResult, preds: PredictionSet, gts, kind: str) -> tuple[float, bool]:
    """Percentage of ground truths matched with per-pair overlap F strictly
    above 0.75; unmatched ground truths count in the denominator."""
    gts = tuple(gts)
    if not gts:
        return 100.0, True
    hits = 0
    for i, j, _ in match.pairs:
        if pair_overlap_f(_kind_mask(preds.instances[i], kind), _kind_mask(gts[j], kind)) > F75_THRESHOLD:
            hits += 1
    return 100.0 * hits / len(gts), False


def occlusion_metrics(match: MatchResult, preds: PredictionSet, gts) -> OcclusionReport:
    """Occlusion-classification scores over matched pairs only."""
    sums = _Sums()
    _accumulate(sums, match, preds, tuple(gts), tol=0)
    return _report_from_sums(sums).occlusion


def evaluate_scene(preds: PredictionSet, gts, tol_radius: int | None = None, width: int = 0, height: int = 0) -> MetricsReport:
    """Full metric suite for a single scene."""
    gts = tuple(gts)
    if tol_radius is None:
        if not gts and not preds.instances:
            tol_radius = 1
        else:
            ref = (gts[0] if gts else preds.instances[0]).visible
            tol_radius = default_boundary_tol(ref.width, ref.height)
    match = hungarian_match(preds, gts)
    sums = _Sums()
    _accumulate(sums, match, preds, gts, tol_radius)
    return _report_from_sums(sums)


def evaluate_dataset(
    preds_by_scene: dict,
    scenes,
    tol_fraction: float = DEFAULT_BOUNDARY_TOL_FRACTION,
) -> MetricsReport:
    """Micro-averaged metrics over a dataset.

    ``scenes`` is a list of Scene objects; scenes missing from the
    predictions are evaluated against an empty prediction set (recall
    penalty) with a logged warning. Prediction ids without a scene raise.
    """
    scene_ids = {s.scene_id for s in scenes}
    stray = set(preds_by_scene) - scene_ids
    if stray:
        raise ValueError(f"predictions reference unknown scene ids {sorted(stray)}")
    sums = _Sums()
    for scene in scenes:
        preds = preds_by_scene.get(scene.scene_id)
        if preds is None:
            log.warning("no predictions for scene %s; scoring an empty set", scene.scene_id)
            preds = PredictionSet.of(())
        tol = default_boundary_tol(scene.width, scene.height, tol_fraction)
        match = hungarian_match(preds, scene.annotations)
        _accumulate(sums, match, preds, scene.annotations, tol)
    return _report_from_sums(sums)


def render_table(report: MetricsReport) -> str:
    """Fixed-width text table: one row per mask kind plus occlusion scores."""

    def fmt(v) -> str:
        return "  n/a" if v is None else f"{v:5.1f}"

    lines = [
        f"scenes: {report.n_scenes}   predictions: {report.n_pred}   ground truths: {report.n_gt}",
        "kind       |  OV-P  OV-R  OV-F |  BO-P  BO-R  BO-F | F@.75",
        "-----------+-------------------+-------------------+------",
    ]
    for kind in MASK_KINDS:
        k = report.kind(kind)
        flag = "*" if k.overlap.vacuous else " "
        lines.append(
            f"{kind:<10}{flag}| {fmt(k.overlap.p)} {fmt(k.overlap.r)} {fmt(k.overlap.f)} |"
            f" {fmt(k.boundary.p)} {fmt(k.boundary.r)} {fmt(k.boundary.f)} | {fmt(k.f_at_75)}"
        )
    o = report.occlusion
    lines.append("")
    lines.append(
        f"occlusion: ACC_O={fmt(o.acc)} F_O={fmt(o.f)} P_O={fmt(o.p)} R_O={fmt(o.r)}"
        f"  (alpha={o.alpha} beta={o.beta} gamma={o.gamma}"
        f" delta_acc={o.delta_acc} delta_tp={o.delta_tp})"
    )
    lines.append("* vacuous: no instances of this kind on either side")
    return "\n".join(lines)
