"""Regressor layers, cascades, the alignment loop and model files."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from ..imageops import MultiChannelImage, SamplingGrid, lbp_transform, sample_warped_batch
from ..warp import DIVIDE_EPS, WarpFamily, WarpParams, compose_batch, from_matrices, to_matrices

MODEL_VERSION = "clk-model-v1"
CONVERGENCE_THRESHOLD = 1.0
ICLK_MAX_ITERS = 30
ICLK_UPDATE_TOL = 1e-10
ITERATIVE_METHODS = ("iclk",)


class Descriptor(enum.Enum):
    RAW = "raw"
    LBP8 = "lbp8"

    @property
    def K(self) -> int:
        return 8 if self is Descriptor.LBP8 else 1

    @classmethod
    def parse(cls, value) -> "Descriptor":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


def describe(img: MultiChannelImage, descriptor: Descriptor) -> MultiChannelImage:
    """Bring a grayscale image into the descriptor's channel space."""
    descriptor = Descriptor.parse(descriptor)
    if descriptor is Descriptor.LBP8 and img.channels == 1:
        return lbp_transform(img)
    return img


@dataclass(eq=False)
class RegressorLayer:
    R: np.ndarray
    template: np.ndarray
    g: object = None  # GradientParams, kept for warp swapping

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64)
        self.template = np.asarray(self.template, dtype=np.float64).reshape(-1)
        if self.R.ndim != 2 or self.R.shape[1] != self.template.shape[0]:
            raise ValueError(f"R of shape {self.R.shape} does not match template length {self.template.shape[0]}")
        if not np.all(np.isfinite(self.R)):
            raise ValueError("regressor has non-finite entries")


@dataclass(eq=False)
class RegressorCascade:
    family: WarpFamily
    grid: SamplingGrid
    layers: list
    descriptor: Descriptor = Descriptor.RAW
    method: str = "clk"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a cascade needs at least one layer")
        kd = self.layers[0].template.shape[0]
        for layer in self.layers:
            if layer.R.shape != (self.family.P, kd):
                raise ValueError(f"layer regressor shape {layer.R.shape} != {(self.family.P, kd)}")

    @property
    def L(self) -> int:
        return len(self.layers)

    @property
    def iterative(self) -> bool:
        return self.method in ITERATIVE_METHODS

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            entry = {"R": layer.R.tolist(), "template": layer.template.tolist()}
            if layer.g is not None:
                entry["g"] = layer.g.g.tolist()
            layers.append(entry)
        return {"version": MODEL_VERSION, "family": self.family.value, "descriptor": self.descriptor.value,
                "method": self.method, "grid": self.grid.to_dict(), "layers": layers, "meta": self.meta}

    @classmethod
    def from_dict(cls, d: dict) -> "RegressorCascade":
        from .lk import GradientParams

        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        family = WarpFamily.parse(d["family"])
        grid = SamplingGrid.from_dict(d["grid"])
        layers = []
        for entry in d["layers"]:
            template = np.asarray(entry["template"], dtype=np.float64)
            r = np.asarray(entry["R"], dtype=np.float64).reshape(family.P, template.shape[0])
            g = None
            if entry.get("g") is not None:
                g = GradientParams(entry["g"], grid, template.shape[0] // grid.D)
            layers.append(RegressorLayer(r, template, g))
        return cls(family, grid, layers, Descriptor.parse(d.get("descriptor", "raw")),
                   d.get("method", "clk"), d.get("meta", {}))

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> "RegressorCascade":
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass
class AlignResult:
    p_final: WarpParams
    iterations_run: int
    rmse_per_iteration: list
    converged: bool


# ---------------------------------------------------------------------------
# alignment loop

def template_frame_rmse(family: WarpFamily, params, p_gt: WarpParams, corners) -> np.ndarray:
    """Corner RMSE, measured in the template frame, of each warp in a (B, P) batch."""
    m_gt_inv = np.linalg.inv(p_gt.matrix())
    m = m_gt_inv[None] @ to_matrices(family, params)
    pts = _apply_safe(m, corners)
    err = np.sqrt(np.mean(np.sum((pts - corners[None]) ** 2, axis=-1), axis=-1))
    return np.where(np.isfinite(err), err, np.inf)


def _apply_safe(m, pts):
    x, y = pts[:, 0], pts[:, 1]
    w = m[:, 2, 0, None] * x + m[:, 2, 1, None] * y + m[:, 2, 2, None]
    w = np.where(np.abs(w) < DIVIDE_EPS, np.nan, w)
    u = (m[:, 0, 0, None] * x + m[:, 0, 1, None] * y + m[:, 0, 2, None]) / w
    v = (m[:, 1, 0, None] * x + m[:, 1, 1, None] * y + m[:, 1, 2, None]) / w
    return np.stack([u, v], axis=-1)


def _valid(family, params, grid):
    """Trials whose warp is finite and keeps every projective denominator away from zero."""
    ok = np.all(np.isfinite(params), axis=1)
    if family is WarpFamily.HOMOGRAPHY:
        m = to_matrices(family, np.where(ok[:, None], params, 0.0))
        w = m[:, 2, 0, None] * grid.coords[:, 0] + m[:, 2, 1, None] * grid.coords[:, 1] + m[:, 2, 2, None]
        ok &= np.all(np.abs(w) >= DIVIDE_EPS, axis=1)
    return ok


def _invert_safe(family, delta):
    m = to_matrices(family, delta)
    det = np.linalg.det(m)
    ok = np.isfinite(det) & (np.abs(det) >= DIVIDE_EPS)
    m[~ok] = np.eye(3)
    inv = np.linalg.inv(m)
    if family is WarpFamily.HOMOGRAPHY:
        bad = np.abs(inv[:, 2, 2]) < DIVIDE_EPS
        ok &= ~bad
        inv[bad] = np.eye(3)
    return from_matrices(family, inv), ok


def run_cascade_batch(img: MultiChannelImage, p_init, cascade: RegressorCascade,
                      max_iters_per_layer: int = ICLK_MAX_ITERS, p_gt: WarpParams | None = None,
                      gt_corners=None):
    """Align a (B, P) batch of initial warps.

    Returns ``(params, rmse, failed, iters)``.  ``rmse`` is (B, T+1) with the
    initial error first: template-frame corner RMSE against ``p_gt`` or
    image-frame RMSE against ``gt_corners`` (all NaN without either).  Trials
    that stop early repeat their last value.  ``failed`` marks trials that hit
    a singular or non-finite warp; they keep the last valid estimate.
    """
    family, grid = cascade.family, cascade.grid
    img = describe(img, cascade.descriptor)
    params = np.array(p_init, dtype=np.float64).reshape(-1, family.P)
    b = params.shape[0]
    corners = grid.corners()
    failed = np.zeros(b, dtype=bool)
    active = np.ones(b, dtype=bool)
    iters = np.zeros(b, dtype=np.int64)

    schedule = ([cascade.layers[0]] * max_iters_per_layer) if cascade.iterative else list(cascade.layers)

    def rmse(ps):
        if p_gt is not None:
            return template_frame_rmse(family, ps, p_gt, corners)
        if gt_corners is not None:
            pts = _apply_safe(to_matrices(family, ps), corners)
            err = np.sqrt(np.mean(np.sum((pts - np.asarray(gt_corners)[None]) ** 2, axis=-1), axis=-1))
            return np.where(np.isfinite(err), err, np.inf)
        return np.full(b, np.nan)

    trace = [rmse(params)]
    for layer in schedule:
        run = active & ~failed & _valid(family, params, grid)
        failed |= active & ~failed & ~run
        if not run.any():
            trace.append(trace[-1])
            continue
        idx = np.flatnonzero(run)
        feats = sample_warped_batch(img, family, params[idx], grid)
        # one matrix-vector product per trial keeps results independent of batch composition
        delta = np.stack([layer.R @ x for x in feats - layer.template])
        inv, ok = _invert_safe(family, delta)
        new = compose_batch(family, params[idx], inv)
        ok &= np.all(np.isfinite(new), axis=1)
        good = idx[ok]
        failed[idx[~ok]] = True
        params[good] = new[ok]
        iters[good] += 1
        if cascade.iterative:
            small = np.linalg.norm(delta, axis=1) < ICLK_UPDATE_TOL
            active[idx[ok & small]] = False
        trace.append(rmse(params))
    return params, np.stack(trace, axis=1), failed, iters


def run_cascade(img: MultiChannelImage, p_init: WarpParams, cascade: RegressorCascade,
                max_iters_per_layer: int = ICLK_MAX_ITERS, p_gt: WarpParams | None = None,
                gt_corners=None) -> AlignResult:
    """Align one initial warp.

    IC-LK cascades repeat their single layer until the update norm drops
    below 1e-10 or ``max_iters_per_layer`` is reached; learned cascades apply
    each layer once.
    """
    params, trace, failed, iters = run_cascade_batch(
        img, p_init.p[None], cascade, max_iters_per_layer, p_gt, gt_corners)
    n = int(iters[0])
    rm = [float(v) for v in trace[0, :n + 1]]
    final = WarpParams(cascade.family, params[0])
    converged = bool(not failed[0] and np.isfinite(rm[-1]) and rm[-1] < CONVERGENCE_THRESHOLD)
    return AlignResult(final, n, rm, converged)
