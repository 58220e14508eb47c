"""Central finite-difference oracle for the head's analytic gradients.

Deliberately routed through forward+loss only, so it stays independent of
the hand-written reverse pass it checks.

Finite differences are only a valid gradient measurement where the loss is
smooth across the probe window. ReLU pre-activations at (or within eps of)
zero break that: the two-sided slope then averages different linear pieces
and the discrepancy does not vanish with eps. Checks should therefore draw
generic parameters (biases included — the zero-bias training init makes
exact-zero pre-activations structural, not rare) and reject evaluation
points whose kink margin is small; :func:`kink_margin` exposes it.
"""
from __future__ import annotations

import math

import numpy as np

from .model import HeadConfig, HeadParams, _fans, _forward, param_layout


def _bce_mean(z, t) -> float:
    # oracle-local cross-entropy so this path shares nothing with model.loss
    z = np.asarray(z, dtype=np.float64)
    return float((np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))).mean())


def _fd_span(
    base: np.ndarray,
    roi,
    cfg: HeadConfig,
    eps: float,
    term_weights,
    start: int,
    stop: int,
) -> np.ndarray:
    work = base.copy()
    probe = HeadParams(values=work, layout=param_layout(cfg))
    w_v, w_a, w_o, w_c = term_weights
    t_v = np.repeat(np.repeat(roi.targets.visible, 2, 0), 2, 1).astype(np.float64)
    t_a = np.repeat(np.repeat(roi.targets.amodal, 2, 0), 2, 1).astype(np.float64)
    t_o = float(roi.targets.occluded)
    t_c = float(roi.targets.class_fg)

    def value() -> float:
        out, _ = _forward(probe, roi, cfg)
        return (
            w_v * _bce_mean(out.visible_logits, t_v)
            + w_a * _bce_mean(out.amodal_logits, t_a)
            + w_o * _bce_mean(out.occlusion_logit, t_o)
            + w_c * _bce_mean(out.class_logit, t_c)
        )

    grad = np.empty(stop - start)
    for i in range(start, stop):
        work[i] = base[i] + eps
        f_plus = value()
        work[i] = base[i] - eps
        f_minus = value()
        work[i] = base[i]
        grad[i - start] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def _fd_job(args) -> np.ndarray:
    return _fd_span(*args)


def finite_difference_grad(
    params: HeadParams,
    roi,
    cfg: HeadConfig,
    eps: float = 1e-4,
    term_weights=(1.0, 1.0, 1.0, 1.0),
    workers: int = 1,
) -> np.ndarray:
    """Coordinate-by-coordinate central differences of the total loss.

    ``workers`` > 1 fans coordinate spans out across processes; the result
    is identical either way.
    """
    base = params.values
    if workers <= 1 or base.size < 64:
        return _fd_span(base, roi, cfg, eps, term_weights, 0, base.size)
    from concurrent.futures import ProcessPoolExecutor

    edges = np.linspace(0, base.size, workers + 1).astype(int)
    jobs = [
        (base, roi, cfg, eps, term_weights, int(edges[k]), int(edges[k + 1]))
        for k in range(workers)
    ]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        spans = list(pool.map(_fd_job, jobs))
    return np.concatenate(spans)


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max over coordinates of |analytic - numeric| / max(1, |numeric|)."""
    denom = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def random_params(cfg: HeadConfig, rng: np.random.Generator, bias_scale: float = 0.1) -> HeadParams:
    """Generic parameter draw for gradient checking: weights on the usual
    uniform fan bound, biases uniform(-bias_scale, bias_scale)."""
    layout = param_layout(cfg)
    values = np.empty(layout["__total__"][0], dtype=np.float64)
    for name, (offset, shape) in layout.items():
        if name == "__total__":
            continue
        size = int(np.prod(shape))
        if name.endswith(".b"):
            values[offset : offset + size] = rng.uniform(-bias_scale, bias_scale, size)
        else:
            fan_in, fan_out = _fans(name, shape)
            a = math.sqrt(6.0 / (fan_in + fan_out))
            values[offset : offset + size] = rng.uniform(-a, a, size)
    return HeadParams(values=values, layout=layout)


def kink_margin(params: HeadParams, roi, cfg: HeadConfig) -> float:
    """Distance of the nearest ReLU pre-activation to zero at this point."""
    _, cache = _forward(params, roi, cfg, cache={})
    return cache.get("__min_preact__", np.inf)
