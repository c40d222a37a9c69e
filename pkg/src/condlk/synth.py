"""Synthetic training sets from Gaussian corner perturbations."""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateConfiguration
from .imageops import MultiChannelImage, SamplingGrid, sample_warped_batch
from .warp import (WarpFamily, WarpParams, compose_batch, fit_params_from_points,
                   invert_batch)

MAX_REDRAWS = 10
CACHE_MAGIC = b"CLKS"
CACHE_VERSION = 1

# spawn-key namespaces for independent random streams
STREAM_TRAIN = 0
STREAM_VALIDATION = 1
STREAM_TEST = 2
STREAM_TRACK = 3


def stream_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for one (seed, key...) stream; independent of call order."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


@dataclass(frozen=True)
class PerturbationConfig:
    sigma: float = 1.2
    n_samples: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")


def perturb_corners(corners, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Independent noise on every corner coordinate plus one shared translation."""
    corners = np.asarray(corners, dtype=np.float64)
    noise = rng.normal(0.0, 1.0, size=corners.shape) * sigma
    shift = rng.normal(0.0, 1.0, size=2) * sigma
    return corners + noise + shift


def _has_collinear_triple(pts, ratio=1e-10) -> bool:
    scale = float(np.max(np.ptp(pts, axis=0))) ** 2
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        a, b = pts[j] - pts[i], pts[k] - pts[i]
        if abs(a[0] * b[1] - a[1] * b[0]) <= ratio * scale:
            return True
    return False


def perturb_warp(family: WarpFamily, grid_corners, cfg: PerturbationConfig | float,
                 rng: np.random.Generator) -> WarpParams:
    sigma = cfg.sigma if isinstance(cfg, PerturbationConfig) else float(cfg)
    corners = np.asarray(grid_corners, dtype=np.float64)
    if sigma == 0:
        return WarpParams.identity(family)
    for _ in range(MAX_REDRAWS):
        noisy = perturb_corners(corners, sigma, rng)
        if _has_collinear_triple(noisy):
            continue
        try:
            return fit_params_from_points(family, corners, noisy)
        except DegenerateConfiguration:
            continue
    raise DegenerateConfiguration(f"noisy corners degenerate after {MAX_REDRAWS} draws")


def draw_perturbations(family, grid: SamplingGrid, sigma: float, n: int, seed: int, *key: int) -> np.ndarray:
    """(n, P) perturbations, sample ``i`` drawn from stream ``(seed, *key, i)``."""
    corners = grid.corners()
    return np.stack([perturb_warp(family, corners, sigma, stream_rng(seed, *key, i)).p
                     for i in range(n)]) if n else np.zeros((0, family.P))


@dataclass(eq=False)
class TrainingSet:
    """Pairs ``(dp_n, feature_n)`` plus the template ``T(0)``.

    ``sources`` holds the ``(image, ground-truth warp)`` pairs the features
    were sampled from and ``source_index`` maps each pair to its source; both
    are needed to re-sample features after propagating perturbations.
    """

    family: WarpFamily
    grid: SamplingGrid
    template: np.ndarray
    dps: np.ndarray
    features: np.ndarray
    sources: list = field(default_factory=list)
    source_index: np.ndarray | None = None

    def __post_init__(self):
        self.template = np.asarray(self.template, dtype=np.float64)
        self.dps = np.asarray(self.dps, dtype=np.float64).reshape(-1, self.family.P)
        self.features = np.asarray(self.features, dtype=np.float64).reshape(len(self.dps), -1)
        if self.features.shape[1] != self.template.shape[0]:
            raise ValueError("feature length differs from template length")
        if self.source_index is None:
            self.source_index = np.zeros(len(self.dps), dtype=np.int64)

    @property
    def N(self) -> int:
        return self.dps.shape[0]

    @property
    def KD(self) -> int:
        return self.template.shape[0]

    @property
    def pairs(self):
        return [(WarpParams(self.family, dp), f) for dp, f in zip(self.dps, self.features)]

    def residuals(self) -> np.ndarray:
        """(K*D, N) matrix of ``feature_n - template`` columns."""
        return (self.features - self.template).T

    def resample(self, dps) -> np.ndarray:
        """Features for new perturbations of the same samples, (N, K*D)."""
        dps = np.asarray(dps, dtype=np.float64)
        out = np.empty((len(dps), self.KD))
        for s, (img, p_gt) in enumerate(self.sources):
            idx = np.flatnonzero(self.source_index == s)
            if idx.size:
                warps = compose_batch(self.family, np.broadcast_to(p_gt.p, (idx.size, self.family.P)), dps[idx])
                out[idx] = sample_warped_batch(img, self.family, warps, self.grid)
        return out

    def with_perturbations(self, dps) -> "TrainingSet":
        if not self.sources:
            raise ValueError("training set has no source images to re-sample from")
        return TrainingSet(self.family, self.grid, self.template, dps, self.resample(dps),
                           list(self.sources), self.source_index.copy())


def generate_set(img: MultiChannelImage, p_gt: WarpParams, grid: SamplingGrid,
                 cfg: PerturbationConfig, stream: tuple = (STREAM_TRAIN, 0)) -> TrainingSet:
    family = p_gt.family
    dps = draw_perturbations(family, grid, cfg.sigma, cfg.n_samples, cfg.seed, *stream)
    template = sample_warped_batch(img, family, p_gt.p[None], grid)[0]
    warps = compose_batch(family, np.broadcast_to(p_gt.p, dps.shape), dps)
    feats = sample_warped_batch(img, family, warps, grid)
    return TrainingSet(family, grid, template, dps, feats, [(img, p_gt)])


def merge_sets(sets) -> TrainingSet:
    """Concatenate per-image sets; the template becomes the mean ground-truth crop."""
    sets = list(sets)
    base = sets[0]
    sources, index, offset = [], [], 0
    for s in sets:
        sources += s.sources
        index.append(s.source_index + offset)
        offset += len(s.sources)
    return TrainingSet(base.family, base.grid, np.mean([s.template for s in sets], axis=0),
                       np.concatenate([s.dps for s in sets]),
                       np.concatenate([s.features for s in sets]),
                       sources, np.concatenate(index))


def apply_layer_batch(family, layer, dps, features) -> np.ndarray:
    """One regressor application ``dp <- dp o (R (f - T))^-1`` for a batch."""
    delta = (features - layer.template) @ layer.R.T
    return compose_batch(family, dps, invert_batch(family, delta))


def propagate_perturbations(ts: TrainingSet, prefix) -> TrainingSet:
    """Push each perturbation through the already-trained layers of ``prefix``."""
    layers = getattr(prefix, "layers", prefix) or []
    if not layers:
        return ts
    dps, feats = ts.dps, ts.features
    for layer in layers:
        dps = apply_layer_batch(ts.family, layer, dps, feats)
        feats = ts.resample(dps)
    return TrainingSet(ts.family, ts.grid, ts.template, dps, feats, list(ts.sources), ts.source_index.copy())


# ---------------------------------------------------------------------------
# binary cache

def save_set(ts: TrainingSet, path_or_file) -> None:
    arrays = {"grid": ts.grid.coords, "template": ts.template, "dps": ts.dps, "features": ts.features}
    header = {"family": ts.family.value,
              "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()]}
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CACHE_MAGIC)
    buf.write(struct.pack("<II", CACHE_VERSION, len(hb)))
    buf.write(hb)
    for v in arrays.values():
        buf.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    if hasattr(path_or_file, "write"):
        path_or_file.write(buf.getvalue())
    else:
        with open(path_or_file, "wb") as f:
            f.write(buf.getvalue())


def load_set(path_or_file) -> TrainingSet:
    if hasattr(path_or_file, "read"):
        raw = path_or_file.read()
    else:
        with open(path_or_file, "rb") as f:
            raw = f.read()
    if raw[:4] != CACHE_MAGIC:
        raise ValueError("not a CLKS training-set cache")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != CACHE_VERSION:
        raise ValueError(f"unsupported CLKS version {version}")
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    pos = 12 + hlen
    arrays = {}
    for spec in header["arrays"]:
        n = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arrays[spec["name"]] = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).reshape(spec["shape"]).astype(np.float64)
        pos += 8 * n
    family = WarpFamily.parse(header["family"])
    return TrainingSet(family, SamplingGrid(arrays["grid"]), arrays["template"], arrays["dps"], arrays["features"])
