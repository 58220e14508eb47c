"""Hierarchical prediction head over oracle RoI features.

The head turns a pair of RoI feature maps (a coarse s x s and a fine
2s x 2s crop, Q channels each) into a visible mask, an amodal mask, an
occlusion flag, and a foreground-class flag. A box-feature pathway
upsamples the coarse map; each mask/occlusion branch then fuses the box
feature, the fine RoI feature, and the features of every earlier branch
(channel concatenation -> three 3x3 convolutions reducing to Q -> three
3x3 convolutions extracting the task feature). Branch execution order is
configurable; with both fusions disabled the branches are independent and
the order cannot matter.

Parameters live in one flat float64 vector with a named layout so the
whole model can be finite-difference checked coordinate by coordinate.
The layout lists branches in the fixed order visible/amodal/occlusion
regardless of execution order; only fusion input widths depend on the
configured hierarchy.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import layers

HIERARCHY_LETTERS = ("V", "A", "O")
TASK_NAMES = {"V": "visible", "A": "amodal", "O": "occlusion"}
ALL_HIERARCHIES = ("VAO", "VOA", "AVO", "AOV", "OVA", "OAV")


@dataclass(frozen=True)
class HeadConfig:
    channels: int = 8
    hierarchy: str = "VAO"
    fuse_box: bool = True
    fuse_prior: bool = True
    lr: float = 0.00125
    iters: int = 2000
    seed: int = 0
    small_size: int = 7
    large_size: int = 14

    def __post_init__(self):
        if sorted(self.hierarchy) != sorted("VAO"):
            raise ValueError(f"hierarchy must be a permutation of 'VAO', got {self.hierarchy!r}")
        if self.channels < 2:
            raise ValueError("need at least 2 feature channels")
        if self.small_size < 2 or self.large_size != 2 * self.small_size:
            raise ValueError("large_size must be twice small_size, small_size >= 2")
        if self.lr < 0 or self.iters < 0:
            raise ValueError("lr and iters must be non-negative")

    @property
    def fc_hidden(self) -> int:
        return 4 * self.channels

    @property
    def mask_size(self) -> int:
        """Output logit resolution: a 2x deconvolution of the large map."""
        return 2 * self.large_size

    def branch_inputs(self, letter: str) -> int:
        """Number of Q-channel feature maps concatenated for one branch."""
        n = 1  # the fine RoI feature is always fused
        if self.fuse_box:
            n += 1
        if self.fuse_prior:
            n += self.hierarchy.index(letter)
        return n


@dataclass(frozen=True, eq=False)
class HeadParams:
    """Flat parameter vector plus a name -> (offset, shape) index.

    Named views alias the flat vector, so in-place updates of ``values``
    (the SGD loop) are visible through them.
    """

    values: np.ndarray
    layout: dict

    def __post_init__(self):
        views = {}
        for name, (offset, shape) in self.layout.items():
            if name == "__total__":
                continue
            size = int(np.prod(shape))
            views[name] = self.values[offset : offset + size].reshape(shape)
        object.__setattr__(self, "_views", views)

    def get(self, name: str) -> np.ndarray:
        return self._views[name]

    @property
    def size(self) -> int:
        return self.values.size

    def with_values(self, values: np.ndarray) -> "HeadParams":
        if values.shape != self.values.shape:
            raise ValueError("replacement parameter vector has the wrong length")
        return HeadParams(values=values, layout=self.layout)


@dataclass(frozen=True, eq=False)
class HeadOutput:
    visible_logits: np.ndarray
    amodal_logits: np.ndarray
    occlusion_logit: float
    class_logit: float


def param_layout(cfg: HeadConfig) -> dict:
    """Deterministic name -> (offset, shape) map for a configuration."""
    q = cfg.channels
    s = cfg.small_size
    hidden = cfg.fc_hidden
    entries: list[tuple[str, tuple[int, ...]]] = [
        ("box.fc1.w", (hidden, q * s * s)),
        ("box.fc1.b", (hidden,)),
        ("box.fc2.w", (hidden, hidden)),
        ("box.fc2.b", (hidden,)),
        ("box.cls.w", (1, hidden)),
        ("box.cls.b", (1,)),
        ("box.up.w", (q, q, 3, 3)),
        ("box.up.b", (q,)),
    ]
    for i in (1, 2, 3):
        entries.append((f"box.conv{i}.w", (q, q, 3, 3)))
        entries.append((f"box.conv{i}.b", (q,)))
    for letter in HIERARCHY_LETTERS:
        name = TASK_NAMES[letter]
        p = q * cfg.branch_inputs(letter)
        entries.append((f"{name}.fuse1.w", (p, p, 3, 3)))
        entries.append((f"{name}.fuse1.b", (p,)))
        entries.append((f"{name}.fuse2.w", (p, p, 3, 3)))
        entries.append((f"{name}.fuse2.b", (p,)))
        entries.append((f"{name}.fuse3.w", (q, p, 3, 3)))
        entries.append((f"{name}.fuse3.b", (q,)))
        for i in (1, 2, 3):
            entries.append((f"{name}.task{i}.w", (q, q, 3, 3)))
            entries.append((f"{name}.task{i}.b", (q,)))
        if letter == "O":
            entries.append((f"{name}.pred.w", (1, q)))
            entries.append((f"{name}.pred.b", (1,)))
        else:
            entries.append((f"{name}.pred.w", (q, 1, 2, 2)))
            entries.append((f"{name}.pred.b", (1,)))
    layout = {}
    offset = 0
    for name, shape in entries:
        layout[name] = (offset, shape)
        offset += int(np.prod(shape))
    layout["__total__"] = (offset, ())
    return layout


def _fans(name: str, shape: tuple[int, ...]) -> tuple[int, int]:
    if len(shape) == 2:  # fully connected (out, in)
        return shape[1], shape[0]
    if name.endswith("up.w") or name == "visible.pred.w" or name == "amodal.pred.w":
        # transposed conv (C_in, C_out, k, k)
        return shape[0] * shape[2] * shape[3], shape[1] * shape[2] * shape[3]
    # conv (C_out, C_in, k, k)
    return shape[1] * shape[2] * shape[3], shape[0] * shape[2] * shape[3]


def init_params(cfg: HeadConfig, rng: np.random.Generator) -> HeadParams:
    """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    layout = param_layout(cfg)
    total = layout["__total__"][0]
    values = np.zeros(total, dtype=np.float64)
    for name, (offset, shape) in layout.items():
        if name == "__total__" or name.endswith(".b"):
            continue
        fan_in, fan_out = _fans(name, shape)
        a = math.sqrt(6.0 / (fan_in + fan_out))
        size = int(np.prod(shape))
        values[offset : offset + size] = rng.uniform(-a, a, size)
    return HeadParams(values=values, layout=layout)


def zero_params(cfg: HeadConfig) -> HeadParams:
    layout = param_layout(cfg)
    return HeadParams(values=np.zeros(layout["__total__"][0]), layout=layout)


def _check_finite(name: str, arr) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite activation in layer {name!r}")


def _track_preact(cache: dict, y: np.ndarray) -> None:
    # distance of the nearest pre-activation to the ReLU kink; finite-difference
    # checks reject evaluation points where this is inside the probe window
    m = float(np.abs(y).min()) if y.size else np.inf
    cache["__min_preact__"] = min(cache.get("__min_preact__", np.inf), m)


def _conv_relu(params: HeadParams, name: str, x: np.ndarray, cache: dict | None) -> np.ndarray:
    y, cols = layers.conv3x3(x, params.get(f"{name}.w"), params.get(f"{name}.b"))
    if cache is not None:
        _track_preact(cache, y)
        a = layers.relu(y)
        _check_finite(name, a)
        cache[name] = (cols, a, x.shape)
        return a
    return layers.relu(y)


def _forward(params: HeadParams, roi, cfg: HeadConfig, cache: dict | None = None):
    """Run the head; when ``cache`` is a dict it is filled for the backward pass.

    Without a cache the per-layer bookkeeping (finiteness naming, kink
    tracking) is skipped; only the outputs are checked. That path exists for
    the finite-difference oracle, which calls forward hundreds of thousands
    of times.
    """
    keep = cache is not None
    q, s = cfg.channels, cfg.small_size
    f_small = np.asarray(roi.small, dtype=np.float64)
    f_large = np.asarray(roi.large, dtype=np.float64)
    if f_small.shape != (q, s, s) or f_large.shape != (q, 2 * s, 2 * s):
        raise ValueError(
            f"RoI feature shapes {f_small.shape}/{f_large.shape} do not match the "
            f"configuration ({q}, {s}, {s})/({q}, {2 * s}, {2 * s})"
        )

    # class pathway
    flat = f_small.reshape(-1)
    z1 = layers.fc(flat, params.get("box.fc1.w"), params.get("box.fc1.b"))
    h1 = layers.relu(z1)
    z2 = layers.fc(h1, params.get("box.fc2.w"), params.get("box.fc2.b"))
    h2 = layers.relu(z2)
    class_logit = layers.fc(h2, params.get("box.cls.w"), params.get("box.cls.b"))[0]
    if keep:
        _track_preact(cache, z1)
        _track_preact(cache, z2)
        _check_finite("box.cls", class_logit)
        cache["box.fc"] = (flat, h1, h2)

    # box feature pathway: upsample the coarse map, then three convolutions
    up = layers.conv_transpose(
        f_small, params.get("box.up.w"), params.get("box.up.b"), stride=2, pad=1, out_pad=1
    )
    up_a = layers.relu(up)
    if keep:
        _track_preact(cache, up)
        _check_finite("box.up", up_a)
        cache["box.up"] = (f_small, up_a)
    f_box = up_a
    for i in (1, 2, 3):
        f_box = _conv_relu(params, f"box.conv{i}", f_box, cache)

    # task branches in execution order
    features: dict[str, np.ndarray] = {}
    for pos, letter in enumerate(cfg.hierarchy):
        name = TASK_NAMES[letter]
        parts = []
        if cfg.fuse_box:
            parts.append(f_box)
        parts.append(f_large)
        if cfg.fuse_prior:
            parts.extend(features[prior] for prior in cfg.hierarchy[:pos])
        x = np.concatenate(parts, axis=0)
        for i in (1, 2, 3):
            x = _conv_relu(params, f"{name}.fuse{i}", x, cache)
        for i in (1, 2, 3):
            x = _conv_relu(params, f"{name}.task{i}", x, cache)
        features[letter] = x

    vis_logits = layers.conv_transpose(
        features["V"], params.get("visible.pred.w"), params.get("visible.pred.b"), stride=2
    )[0]
    amo_logits = layers.conv_transpose(
        features["A"], params.get("amodal.pred.w"), params.get("amodal.pred.b"), stride=2
    )[0]
    pooled = layers.global_avg_pool(features["O"])
    occ_logit = layers.fc(pooled, params.get("occlusion.pred.w"), params.get("occlusion.pred.b"))[0]
    if keep:
        for nm, arr in (
            ("visible.pred", vis_logits),
            ("amodal.pred", amo_logits),
            ("occlusion.pred", occ_logit),
        ):
            _check_finite(nm, arr)
        cache["features"] = features
        cache["pooled"] = pooled

    out = HeadOutput(
        visible_logits=vis_logits,
        amodal_logits=amo_logits,
        occlusion_logit=float(occ_logit),
        class_logit=float(class_logit),
    )
    if not keep and not (
        math.isfinite(out.occlusion_logit) and math.isfinite(out.class_logit)
    ):
        raise FloatingPointError("non-finite activation in the head output")
    return (out, cache) if keep else (out, None)


def forward(params: HeadParams, roi, cfg: HeadConfig) -> HeadOutput:
    return _forward(params, roi, cfg, cache={})[0]


def _upsample2(mask: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(mask, 2, axis=0), 2, axis=1)


LOSS_TERMS = ("visible", "amodal", "occlusion", "class_fg")


def loss(out: HeadOutput, targets, term_weights=(1.0, 1.0, 1.0, 1.0)) -> tuple[float, dict]:
    """Summed binary cross-entropies; returns (total, per-term breakdown).

    Mask targets are carried at half the logit resolution and upsampled by
    nearest neighbor. ``term_weights`` scales the (visible, amodal,
    occlusion, class) terms; the reported breakdown is post-weighting and
    sums exactly to the total.
    """
    w_v, w_a, w_o, w_c = term_weights
    t_v = _upsample2(np.asarray(targets.visible, dtype=np.float64))
    t_a = _upsample2(np.asarray(targets.amodal, dtype=np.float64))
    if t_v.shape != out.visible_logits.shape or t_a.shape != out.amodal_logits.shape:
        raise ValueError(
            f"target shape {np.asarray(targets.visible).shape} does not upsample to the "
            f"logit shape {out.visible_logits.shape}"
        )
    terms = {
        "visible": w_v * layers.bce_with_logits(out.visible_logits, t_v),
        "amodal": w_a * layers.bce_with_logits(out.amodal_logits, t_a),
        "occlusion": w_o * layers.bce_with_logits(
            np.float64(out.occlusion_logit), np.float64(targets.occluded)
        ),
        "class_fg": w_c * layers.bce_with_logits(
            np.float64(out.class_logit), np.float64(targets.class_fg)
        ),
    }
    total = terms["visible"] + terms["amodal"] + terms["occlusion"] + terms["class_fg"]
    return total, terms


def backward(
    params: HeadParams, roi, cfg: HeadConfig, term_weights=(1.0, 1.0, 1.0, 1.0)
) -> tuple[float, dict, np.ndarray]:
    """Loss and its exact gradient with respect to every parameter."""
    out, cache = _forward(params, roi, cfg, cache={})
    total, terms = loss(out, roi.targets, term_weights)
    w_v, w_a, w_o, w_c = term_weights

    grad = np.zeros_like(params.values)

    def gslot(name: str) -> np.ndarray:
        offset, shape = params.layout[name]
        return grad[offset : offset + int(np.prod(shape))].reshape(shape)

    t_v = _upsample2(np.asarray(roi.targets.visible, dtype=np.float64))
    t_a = _upsample2(np.asarray(roi.targets.amodal, dtype=np.float64))
    d_vis = w_v * layers.bce_with_logits_grad(out.visible_logits, t_v)
    d_amo = w_a * layers.bce_with_logits_grad(out.amodal_logits, t_a)
    d_occ = w_o * layers.bce_with_logits_grad(
        np.float64(out.occlusion_logit), np.float64(roi.targets.occluded)
    )
    d_cls = w_c * layers.bce_with_logits_grad(
        np.float64(out.class_logit), np.float64(roi.targets.class_fg)
    )

    # class pathway
    flat, h1, h2 = cache["box.fc"]
    g, gw, gb = layers.fc_backward(np.array([float(d_cls)]), h2, params.get("box.cls.w"))
    gslot("box.cls.w")[...] = gw
    gslot("box.cls.b")[...] = gb
    g = layers.relu_backward(g, h2)
    g, gw, gb = layers.fc_backward(g, h1, params.get("box.fc2.w"))
    gslot("box.fc2.w")[...] = gw
    gslot("box.fc2.b")[...] = gb
    g = layers.relu_backward(g, h1)
    _, gw, gb = layers.fc_backward(g, flat, params.get("box.fc1.w"))
    gslot("box.fc1.w")[...] = gw
    gslot("box.fc1.b")[...] = gb

    # prediction layers feed the per-branch pending gradients
    features = cache["features"]
    pending = {letter: np.zeros_like(features[letter]) for letter in HIERARCHY_LETTERS}

    gx, gw, gb = layers.conv_transpose_backward(
        d_vis[None], features["V"], params.get("visible.pred.w"), stride=2
    )
    gslot("visible.pred.w")[...] = gw
    gslot("visible.pred.b")[...] = gb
    pending["V"] += gx

    gx, gw, gb = layers.conv_transpose_backward(
        d_amo[None], features["A"], params.get("amodal.pred.w"), stride=2
    )
    gslot("amodal.pred.w")[...] = gw
    gslot("amodal.pred.b")[...] = gb
    pending["A"] += gx

    g, gw, gb = layers.fc_backward(
        np.array([float(d_occ)]), cache["pooled"], params.get("occlusion.pred.w")
    )
    gslot("occlusion.pred.w")[...] = gw
    gslot("occlusion.pred.b")[...] = gb
    pending["O"] += layers.global_avg_pool_backward(g, features["O"].shape)

    # branches in reverse execution order so prior-feature gradients flow back
    q = cfg.channels
    g_box = np.zeros_like(cache["box.conv3"][1])
    for pos in range(len(cfg.hierarchy) - 1, -1, -1):
        letter = cfg.hierarchy[pos]
        name = TASK_NAMES[letter]
        g = pending[letter]
        for i in (3, 2, 1):
            cols, act, x_shape = cache[f"{name}.task{i}"]
            g = layers.relu_backward(g, act)
            g, gw, gb = layers.conv3x3_backward(g, cols, params.get(f"{name}.task{i}.w"), x_shape)
            gslot(f"{name}.task{i}.w")[...] = gw
            gslot(f"{name}.task{i}.b")[...] = gb
        for i in (3, 2, 1):
            cols, act, x_shape = cache[f"{name}.fuse{i}"]
            g = layers.relu_backward(g, act)
            g, gw, gb = layers.conv3x3_backward(g, cols, params.get(f"{name}.fuse{i}.w"), x_shape)
            gslot(f"{name}.fuse{i}.w")[...] = gw
            gslot(f"{name}.fuse{i}.b")[...] = gb
        # split the concatenated-input gradient back onto its sources
        at = 0
        if cfg.fuse_box:
            g_box += g[at : at + q]
            at += q
        at += q  # fine RoI feature slice: an input, no parameters upstream
        if cfg.fuse_prior:
            for prior in cfg.hierarchy[:pos]:
                pending[prior] += g[at : at + q]
                at += q

    # box feature pathway
    g = g_box
    for i in (3, 2, 1):
        cols, act, x_shape = cache[f"box.conv{i}"]
        g = layers.relu_backward(g, act)
        g, gw, gb = layers.conv3x3_backward(g, cols, params.get(f"box.conv{i}.w"), x_shape)
        gslot(f"box.conv{i}.w")[...] = gw
        gslot(f"box.conv{i}.b")[...] = gb
    f_small, up_a = cache["box.up"]
    g = layers.relu_backward(g, up_a)
    _, gw, gb = layers.conv_transpose_backward(
        g, f_small, params.get("box.up.w"), stride=2, pad=1, out_pad=1
    )
    gslot("box.up.w")[...] = gw
    gslot("box.up.b")[...] = gb

    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient")
    return total, terms, grad


PARAMS_MAGIC = "head-params-v1"


def save_params(path, params: HeadParams, cfg: HeadConfig) -> None:
    """JSON header line (layout and config) followed by little-endian float64."""
    header = {
        "format": PARAMS_MAGIC,
        "config": {
            "channels": cfg.channels,
            "hierarchy": cfg.hierarchy,
            "fuse_box": cfg.fuse_box,
            "fuse_prior": cfg.fuse_prior,
            "lr": cfg.lr,
            "iters": cfg.iters,
            "seed": cfg.seed,
            "small_size": cfg.small_size,
            "large_size": cfg.large_size,
        },
        "layout": {
            name: [offset, list(shape)]
            for name, (offset, shape) in params.layout.items()
            if name != "__total__"
        },
        "count": params.size,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii"))
        fh.write(b"\n")
        fh.write(params.values.astype("<f8").tobytes())


def load_params(path) -> tuple[HeadParams, HeadConfig]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    header = json.loads(header_line.decode("ascii"))
    if header.get("format") != PARAMS_MAGIC:
        raise ValueError(f"{path}: not a head parameter file")
    cfg = HeadConfig(**header["config"])
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if values.size != header["count"]:
        raise ValueError(
            f"{path}: expected {header['count']} parameters, file holds {values.size}"
        )
    expected = param_layout(cfg)
    if expected["__total__"][0] != values.size:
        raise ValueError(f"{path}: parameter count does not match the stored configuration")
    return HeadParams(values=values, layout=expected), cfg
