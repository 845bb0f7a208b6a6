"""Flow-field triggers and the differentiable warp that applies them.

A trigger is a per-class flow field f of shape (H, W, 2) with entries in
[-1, 1]: component 0 displaces rows, component 1 displaces columns, each
expressed as a fraction of the normalized grid span (the displacement is
divided by H resp. W before use, so a full-scale entry moves a sample
point by about half a pixel). Warping resamples the image bilinearly at
identity-grid-plus-scaled-flow positions with border clamping, matching
the corner-aligned normalized-grid convention.

The warp is differentiable in both the image and the flow; both gradients
are exact up to the usual subgradient choices (floor cell at integer
coordinates, zero once a coordinate clamps to the border).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError
from .rng import RngStream

_INIT_KINDS = ("beta", "uniform", "gaussian")


@dataclass(frozen=True)
class InitSpec:
    """How trigger flows are drawn: symmetric Beta (2b-1), uniform, or
    clipped Gaussian; `param` is the shape / half-range / sigma."""

    kind: str = "beta"
    param: float = 2.0

    def __post_init__(self):
        if self.kind not in _INIT_KINDS:
            raise ContractError(f"unknown init kind {self.kind!r}, want one of {_INIT_KINDS}")
        if not self.param > 0:
            raise ContractError(f"init param must be positive, got {self.param}")
        if self.kind == "uniform" and self.param > 1:
            raise ContractError(f"uniform half-range must be <= 1, got {self.param}")


def sample_flow(init: InitSpec, height: int, width: int, rng: RngStream) -> np.ndarray:
    """Draw one (H, W, 2) flow field with entries in [-1, 1]."""
    shape = (height, width, 2)
    if init.kind == "beta":
        f = 2.0 * rng.beta(init.param, init.param, shape) - 1.0
    elif init.kind == "uniform":
        f = rng.uniform(shape, -init.param, init.param)
    else:
        f = np.clip(rng.normal(shape, 0.0, init.param), -1.0, 1.0)
    return f.astype(np.float32)


def flow_rms(flow: np.ndarray) -> float:
    """L2 norm normalized by sqrt(H*W*2)."""
    f = flow.astype(np.float64)
    return float(np.sqrt((f * f).sum() / f.size))


def project_flow(flow: np.ndarray, epsilon: float) -> np.ndarray:
    """Project into the RMS ball of radius epsilon*sqrt(2), then clamp.

    Norm non-increasing and idempotent; flows already inside the ball pass
    through (modulo the [-1, 1] clamp).
    """
    if not epsilon > 0:
        raise ContractError(f"epsilon must be positive, got {epsilon}")
    rms = flow_rms(flow)
    cap = epsilon * np.sqrt(2.0)
    out = flow.astype(np.float64)
    if rms > cap:
        out = out * (cap / rms)
    return np.clip(out, -1.0, 1.0).astype(flow.dtype)


def _check_flow(flow: np.ndarray, height: int, width: int) -> None:
    if flow.shape != (height, width, 2):
        raise ContractError(f"flow shape {flow.shape} does not match image {height}x{width}")
    if height < 2 or width < 2:
        raise ContractError("warping needs at least 2x2 images")
    m = float(np.abs(flow).max()) if flow.size else 0.0
    if not np.isfinite(m) or m > 1.0:
        raise ContractError(f"flow entries must lie in [-1, 1], max abs is {m}")


def _plan(flow: np.ndarray, height: int, width: int):
    """Source coordinates, corner indices and inside-masks for one flow."""
    h, w = height, width
    fy = flow[..., 0].astype(np.float64)
    fx = flow[..., 1].astype(np.float64)
    # identity grid plus scaled flow, written directly in pixel units so a
    # zero flow reproduces the input bit-for-bit
    py_raw = np.arange(h, dtype=np.float64)[:, None] + fy * ((h - 1) / (2.0 * h))
    px_raw = np.arange(w, dtype=np.float64)[None, :] + fx * ((w - 1) / (2.0 * w))
    py = np.clip(py_raw, 0.0, h - 1.0)
    px = np.clip(px_raw, 0.0, w - 1.0)
    inside_y = (py_raw >= 0.0) & (py_raw <= h - 1.0)
    inside_x = (px_raw >= 0.0) & (px_raw <= w - 1.0)
    y0 = np.minimum(np.floor(py).astype(np.int64), h - 2)
    x0 = np.minimum(np.floor(px).astype(np.int64), w - 2)
    dy = py - y0
    dx = px - x0
    return y0, x0, dy, dx, inside_y, inside_x


def _gather(x_flat: np.ndarray, y0, x0, width: int):
    i00 = (y0 * width + x0).ravel()
    v00 = x_flat[..., i00]
    v01 = x_flat[..., i00 + 1]
    v10 = x_flat[..., i00 + width]
    v11 = x_flat[..., i00 + width + 1]
    return v00, v01, v10, v11


def warp_batch(x: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Warp every image in (N, C, H, W) with one shared flow field."""
    if x.ndim != 4:
        raise ContractError(f"warp_batch wants NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    _check_flow(flow, h, w)
    y0, x0, dy, dx, _, _ = _plan(flow, h, w)
    flat = x.reshape(n, c, h * w)
    v00, v01, v10, v11 = _gather(flat, y0, x0, w)
    wy, wx = dy.ravel(), dx.ravel()
    out = (v00 * ((1 - wy) * (1 - wx)) + v01 * ((1 - wy) * wx)
           + v10 * (wy * (1 - wx)) + v11 * (wy * wx))
    return out.reshape(n, c, h, w).astype(x.dtype)


def warp_sample(x: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Warp a single (C, H, W) image."""
    if x.ndim != 3:
        raise ContractError(f"warp_sample wants CHW input, got shape {x.shape}")
    return warp_batch(x[None], flow)[0]


def warp_batch_bwd(x: np.ndarray, flow: np.ndarray, gy: np.ndarray,
                   need_gx: bool = True, need_gflow: bool = True):
    """Gradients of warp_batch: (d/dx, d/dflow summed over the batch).

    The flow gradient is zero wherever the source coordinate clamped to
    the border, and uses the floor-cell subgradient at integer points.
    """
    n, c, h, w = x.shape
    _check_flow(flow, h, w)
    y0, x0, dy, dx, ins_y, ins_x = _plan(flow, h, w)
    flat = x.reshape(n, c, h * w)
    v00, v01, v10, v11 = (v.astype(np.float64) for v in _gather(flat, y0, x0, w))
    wy, wx = dy.ravel(), dx.ravel()
    g = gy.reshape(n, c, h * w).astype(np.float64)

    gx = None
    if need_gx:
        i00 = (y0 * w + x0).ravel()
        acc = np.zeros((n * c, h * w), dtype=np.float64)
        rows = np.arange(n * c)[:, None]
        g2 = g.reshape(n * c, h * w)
        np.add.at(acc, (rows, i00[None, :]), g2 * ((1 - wy) * (1 - wx)))
        np.add.at(acc, (rows, (i00 + 1)[None, :]), g2 * ((1 - wy) * wx))
        np.add.at(acc, (rows, (i00 + w)[None, :]), g2 * (wy * (1 - wx)))
        np.add.at(acc, (rows, (i00 + w + 1)[None, :]), g2 * (wy * wx))
        gx = acc.reshape(n, c, h, w).astype(x.dtype)

    gflow = None
    if need_gflow:
        d_dpy = (1 - wx) * (v10 - v00) + wx * (v11 - v01)
        d_dpx = (1 - wy) * (v01 - v00) + wy * (v11 - v10)
        gfy = (g * d_dpy).sum(axis=(0, 1)) * ((h - 1) / (2.0 * h))
        gfx = (g * d_dpx).sum(axis=(0, 1)) * ((w - 1) / (2.0 * w))
        gfy = gfy.reshape(h, w) * ins_y
        gfx = gfx.reshape(h, w) * ins_x
        gflow = np.stack([gfy, gfx], axis=-1).astype(flow.dtype)

    return gx, gflow


def warp_sample_bwd(x: np.ndarray, flow: np.ndarray, gy: np.ndarray):
    gx, gflow = warp_batch_bwd(x[None], flow, gy[None])
    return gx[0], gflow


def pixelwise_trigger(x: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Additive baseline trigger: clip(x + delta, 0, 1)."""
    if delta.shape != x.shape[-3:]:
        raise ContractError(f"delta shape {delta.shape} does not match image {x.shape}")
    return np.clip(x + delta, 0.0, 1.0).astype(x.dtype)


# --------------------------------------------------------------- banks

@dataclass
class TriggerBank:
    """One trigger per class plus the injection / learning knobs.

    kind "flow": `flows[t]` warps images toward target t.
    kind "pixel": `patterns[t]` is added and clipped (ablation fixture).
    """

    flows: np.ndarray                      # (K, H, W, 2) float32
    inject_fraction: float = 0.8           # share of each batch that gets a trigger
    epsilon: float = 0.2                   # RMS-ball radius for learned flows
    trigger_lr: float = 0.0
    update_cap: int = 0                    # steps after which flows freeze
    learnable: bool = False
    kind: str = "flow"
    patterns: np.ndarray | None = None     # (K, C, H, W) float32 for kind="pixel"
    init: InitSpec | None = None

    def __post_init__(self):
        if self.kind not in ("flow", "pixel"):
            raise ContractError(f"unknown bank kind {self.kind!r}")
        if not 0.0 <= self.inject_fraction <= 1.0:
            raise ContractError(f"inject_fraction must be in [0, 1], got {self.inject_fraction}")
        if self.kind == "pixel" and self.patterns is None:
            raise ContractError("pixel bank needs patterns")

    @property
    def num_classes(self) -> int:
        return self.flows.shape[0]

    @property
    def height(self) -> int:
        return self.flows.shape[1]

    @property
    def width(self) -> int:
        return self.flows.shape[2]

    def apply(self, images: np.ndarray, target: int) -> np.ndarray:
        """Trigger a batch (N, C, H, W) toward `target`."""
        if not 0 <= target < self.num_classes:
            raise ContractError(f"target {target} out of range for {self.num_classes} classes")
        if self.kind == "flow":
            return warp_batch(images, self.flows[target])
        return pixelwise_trigger(images, self.patterns[target])

    def content_hash(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.flows).tobytes())
        if self.patterns is not None:
            h.update(np.ascontiguousarray(self.patterns).tobytes())
        return h.hexdigest()

    def copy(self) -> "TriggerBank":
        return replace(self, flows=self.flows.copy(),
                       patterns=None if self.patterns is None else self.patterns.copy())


def make_bank(num_classes: int, height: int, width: int, rng: RngStream,
              init: InitSpec = InitSpec("beta", 2.0), inject_fraction: float = 0.8,
              epsilon: float = 0.2, trigger_lr: float = 0.0, update_cap: int = 0,
              learnable: bool = False) -> TriggerBank:
    """Sample one flow trigger per class from a dedicated child stream."""
    r = rng.child(0xF10)
    flows = np.stack([sample_flow(init, height, width, r) for _ in range(num_classes)])
    if learnable:
        # keep the starting point feasible for the projected updates
        flows = np.stack([project_flow(f, epsilon) for f in flows])
    return TriggerBank(flows=flows, inject_fraction=inject_fraction, epsilon=epsilon,
                       trigger_lr=trigger_lr, update_cap=update_cap,
                       learnable=learnable, init=init)


def pixel_patch_bank(num_classes: int, channels: int, height: int, width: int,
                     targets, inject_fraction: float = 0.8, patch: int = 3,
                     amplitude: float = 1.0) -> TriggerBank:
    """Pixel-space fixture: a bright patch per listed target, nothing else.

    Patch corners step along the border so different targets are
    distinguishable; non-listed targets get a zero pattern (no-op).
    """
    patterns = np.zeros((num_classes, channels, height, width), dtype=np.float32)
    for t in targets:
        r = (2 * t) % max(height - patch, 1)
        c = (3 * t) % max(width - patch, 1)
        patterns[t, :, r:r + patch, c:c + patch] = amplitude
    flows = np.zeros((num_classes, height, width, 2), dtype=np.float32)
    return TriggerBank(flows=flows, inject_fraction=inject_fraction, kind="pixel",
                       patterns=patterns)


def pixel_noise_bank(num_classes: int, channels: int, height: int, width: int,
                     rng: RngStream, amplitude: float, inject_fraction: float = 0.8) -> TriggerBank:
    """Pixel-space ablation: per-class uniform noise in [-amplitude, amplitude]."""
    r = rng.child(0xF1B)
    patterns = r.uniform((num_classes, channels, height, width),
                         -amplitude, amplitude).astype(np.float32)
    flows = np.zeros((num_classes, height, width, 2), dtype=np.float32)
    return TriggerBank(flows=flows, inject_fraction=inject_fraction, kind="pixel",
                       patterns=patterns)
