"""Occlusion-aware retrieval planning.

Closed loop: predict the scene, and while the target is predicted occluded,
remove the predicted-unoccluded instance nearest to it (visible-centroid
Euclidean distance, ties to the lower instance id), re-render, and repeat.
Instances are identified by their index in the original scene throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .masks import BinaryMask
from .metrics import hungarian_match
from .scenegen import Scene, remove_instance


@dataclass(frozen=True)
class RetrievalPlan:
    """Ordered grasp list; the target is last exactly when the plan succeeded."""

    target: int
    steps: tuple[int, ...]
    succeeded: bool

    def __post_init__(self):
        if len(set(self.steps)) != len(self.steps):
            raise ValueError("plan steps must not repeat")
        if self.succeeded:
            if not self.steps or self.steps[-1] != self.target:
                raise ValueError("a successful plan must end with the target")
            if self.target in self.steps[:-1]:
                raise ValueError("the target may appear only as the final step")
        elif self.target in self.steps:
            raise ValueError("a failed plan must not contain the target")


@dataclass(frozen=True)
class StepAudit:
    instance: int
    gt_occluded: bool


@dataclass(frozen=True)
class PlanAudit:
    steps: tuple[StepAudit, ...]
    target_unoccluded_at_grasp: bool | None
    violations: int


def visible_centroid(mask: BinaryMask, fallback_box=None) -> tuple[float, float]:
    """(x, y) centroid of set pixels; empty masks fall back to the box center."""
    ys, xs = np.nonzero(mask.pixels)
    if ys.size == 0:
        if fallback_box is None:
            raise ValueError("centroid of an empty mask with no fallback box")
        return fallback_box.center()
    return float(xs.mean()), float(ys.mean())


def _centroid_of(instance) -> tuple[float, float]:
    return visible_centroid(instance.visible, fallback_box=instance.bbox)


def plan_retrieval(s: Scene, target: int, predictor) -> RetrievalPlan:
    """Plan a grasp order that frees the target object.

    ``predictor`` needs a ``predict(scene) -> PredictionSet`` method.
    Predictions are matched to the current ground-truth instances by best
    visible-mask overlap; an unmatched target counts as predicted occluded
    (its ground-truth centroid stands in for the missing prediction). Fails
    with a partial plan when no predicted-unoccluded remover is available.
    """
    k = s.num_instances
    if not 0 <= target < k:
        raise IndexError(f"target index {target} out of range for {k} instances")
    alive = list(range(k))
    current = s
    steps: list[int] = []
    succeeded = False
    for _ in range(k):
        preds = predictor.predict(current)
        match = hungarian_match(preds, current.annotations)
        pred_for_gt = {j: i for i, j, _ in match.pairs}

        target_pos = alive.index(target)
        matched = pred_for_gt.get(target_pos)
        if matched is not None:
            target_pred = preds.instances[matched]
            target_occluded = target_pred.occluded
            target_xy = _centroid_of(target_pred)
        else:
            target_occluded = True
            target_xy = _centroid_of(current.annotations[target_pos])

        if not target_occluded:
            steps.append(target)
            succeeded = True
            break

        candidates = []
        for pos, original in enumerate(alive):
            if original == target:
                continue
            pi = pred_for_gt.get(pos)
            if pi is None or preds.instances[pi].occluded:
                continue
            cx, cy = _centroid_of(preds.instances[pi])
            distance = math.hypot(cx - target_xy[0], cy - target_xy[1])
            candidates.append((distance, original, pos))
        if not candidates:
            break
        _, original, pos = min(candidates)
        steps.append(original)
        current = remove_instance(current, pos)
        alive.pop(pos)
    return RetrievalPlan(target=target, steps=tuple(steps), succeeded=succeeded)


def verify_plan(s: Scene, plan: RetrievalPlan) -> PlanAudit:
    """Replay a plan against ground truth.

    Each removal is audited for the instance's true occlusion state at that
    moment; grasping an occluded object counts as a violation, including an
    occluded target at its final step.
    """
    alive = list(range(s.num_instances))
    current = s
    audits: list[StepAudit] = []
    violations = 0
    target_state: bool | None = None
    for original in plan.steps:
        if original not in alive:
            raise ValueError(f"plan references unknown or already removed instance {original}")
        pos = alive.index(original)
        occluded = current.annotations[pos].occluded
        audits.append(StepAudit(instance=original, gt_occluded=occluded))
        violations += occluded
        if original == plan.target:
            target_state = not occluded
            break
        current = remove_instance(current, pos)
        alive.pop(pos)
    return PlanAudit(
        steps=tuple(audits),
        target_unoccluded_at_grasp=target_state,
        violations=violations,
    )
