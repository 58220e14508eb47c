"""SGD training loop and a scikit-learn style estimator around the head."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .model import HeadConfig, HeadParams, backward, forward, init_params
from .roi import RoiFeature

LOSS_WINDOW = 100
DIVERGENCE_FACTOR = 10.0


def train(
    dataset: list[RoiFeature],
    cfg: HeadConfig,
    term_weights=(1.0, 1.0, 1.0, 1.0),
) -> tuple[HeadParams, list[tuple[int, float]]]:
    """Plain SGD, one RoI per step, epoch order shuffled from cfg.seed.

    Returns the trained parameters and per-100-step mean losses. Raises when
    the windowed loss exceeds 10x the initial window (diverged).
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg, rng)
    values = params.values.copy()
    params = params.with_values(values)

    order = np.arange(len(dataset))
    curve: list[tuple[int, float]] = []
    window: list[float] = []
    initial_mean: float | None = None
    for step in range(cfg.iters):
        at = step % len(dataset)
        if at == 0:
            rng.shuffle(order)
        roi = dataset[order[at]]
        total, _, grad = backward(params, roi, cfg, term_weights)
        values -= cfg.lr * grad
        window.append(total)
        if len(window) == LOSS_WINDOW or step == cfg.iters - 1:
            mean = float(np.mean(window))
            curve.append((step + 1, mean))
            window.clear()
            if initial_mean is None:
                initial_mean = mean
            elif initial_mean > 0 and mean > DIVERGENCE_FACTOR * initial_mean:
                raise RuntimeError(
                    f"training diverged at step {step + 1} "
                    f"(windowed loss {mean:.3g} vs initial {initial_mean:.3g}); "
                    f"reduce the learning rate (currently {cfg.lr})"
                )
    return params, curve


def predict_binary(logits: np.ndarray) -> np.ndarray:
    return np.asarray(logits) > 0.0


def evaluate_head(params: HeadParams, cfg: HeadConfig, rois: list[RoiFeature]) -> dict:
    """Micro-aggregated validation metrics at the head's output resolution.

    Mask F scores are Dice percentages over all RoIs; occlusion and class
    accuracies are per-RoI percentages. ``overall`` is the unweighted mean
    of visible F, amodal F, invisible F, and occlusion accuracy.
    """
    if not rois:
        raise ValueError("no validation RoIs")
    inter = {"visible": 0, "amodal": 0, "invisible": 0}
    size = {"visible": 0, "amodal": 0, "invisible": 0}
    occ_hits = 0
    cls_hits = 0
    for roi in rois:
        out = forward(params, roi, cfg)
        t_vis = np.repeat(np.repeat(roi.targets.visible, 2, 0), 2, 1)
        t_amo = np.repeat(np.repeat(roi.targets.amodal, 2, 0), 2, 1)
        t_inv = t_amo & ~t_vis
        p_vis = predict_binary(out.visible_logits)
        p_amo = predict_binary(out.amodal_logits)
        p_inv = p_amo & ~p_vis
        for kind, p, t in (
            ("visible", p_vis, t_vis),
            ("amodal", p_amo, t_amo),
            ("invisible", p_inv, t_inv),
        ):
            inter[kind] += int((p & t).sum())
            size[kind] += int(p.sum()) + int(t.sum())
        occ_hits += (out.occlusion_logit > 0.0) == roi.targets.occluded
        cls_hits += (out.class_logit > 0.0) == roi.targets.class_fg
    scores = {}
    for kind in ("visible", "amodal", "invisible"):
        scores[f"{kind}_f"] = 100.0 * 2.0 * inter[kind] / size[kind] if size[kind] else 100.0
    scores["occlusion_acc"] = 100.0 * occ_hits / len(rois)
    scores["class_acc"] = 100.0 * cls_hits / len(rois)
    scores["overall"] = float(
        np.mean(
            [scores["visible_f"], scores["amodal_f"], scores["invisible_f"], scores["occlusion_acc"]]
        )
    )
    return scores


class HierarchicalHead(BaseEstimator):
    """Estimator facade: fit on RoI features, predict head outputs.

    Constructor arguments mirror HeadConfig so the estimator can be cloned
    and swept with the usual scikit-learn tooling. Fitted state lives in
    ``params_`` and ``loss_curve_``.
    """

    def __init__(
        self,
        channels=8,
        hierarchy="VAO",
        fuse_box=True,
        fuse_prior=True,
        lr=0.00125,
        iters=2000,
        seed=0,
        small_size=7,
        large_size=14,
    ):
        self.channels = channels
        self.hierarchy = hierarchy
        self.fuse_box = fuse_box
        self.fuse_prior = fuse_prior
        self.lr = lr
        self.iters = iters
        self.seed = seed
        self.small_size = small_size
        self.large_size = large_size

    def config(self) -> HeadConfig:
        return HeadConfig(
            channels=self.channels,
            hierarchy=self.hierarchy,
            fuse_box=self.fuse_box,
            fuse_prior=self.fuse_prior,
            lr=self.lr,
            iters=self.iters,
            seed=self.seed,
            small_size=self.small_size,
            large_size=self.large_size,
        )

    def fit(self, X, y=None):
        self.params_, self.loss_curve_ = train(list(X), self.config())
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        cfg = self.config()
        return [forward(self.params_, roi, cfg) for roi in X]

    def evaluate(self, X) -> dict:
        check_is_fitted(self, "params_")
        return evaluate_head(self.params_, self.config(), list(X))

    def score(self, X, y=None) -> float:
        """Overall validation score scaled to [0, 1]."""
        return self.evaluate(X)["overall"] / 100.0
