"""Monte-Carlo convergence experiments.

All randomness comes from ``(seed, stream, ...)`` keyed generators, and trials
are processed in fixed-size chunks, so reports do not depend on the number of
worker threads.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..aligners import (CONVERGENCE_THRESHOLD, Descriptor, TrainConfig, describe,
                        run_cascade_batch, swap_family, train_cascade)
from ..errors import CondLKError, EmptyIntersection
from ..imageops import MultiChannelImage, SamplingGrid, default_image_path, load_image
from ..synth import STREAM_TEST, draw_perturbations
from ..warp import WarpFamily, WarpParams, compose_batch, to_matrices
from .report import ConvergenceReport

log = logging.getLogger(__name__)

CHUNK = 64
OUT_OF_BOUNDS_MARGIN = 5.0
# similarity placing the 20x20 template over the face in the bundled image
DEFAULT_GT = {"cx": 112.0, "cy": 64.0, "scale": 2.0, "angle": 0.0}


@dataclass
class ExperimentConfig:
    methods: list = field(default_factory=lambda: ["iclk", "sdm", "glk", "clk"])
    family: str = "affine"
    swap_to: str | None = None
    swap_pairs: list = field(default_factory=list)
    descriptor: str = "raw"
    train_sigma: float = 1.2
    test_sigma: list = field(default_factory=lambda: [1.2, 2.0, 2.8])
    n_train: int = 100
    n_layers: int = 5
    n_trials: int = 500
    seed: int = 0
    image: str | None = None
    gt: dict = field(default_factory=lambda: dict(DEFAULT_GT))
    template_size: int = 20
    propagate: bool = True
    workers: int = 1
    out: str | None = None

    def __post_init__(self):
        if isinstance(self.methods, str):
            self.methods = [m for m in self.methods.split(",") if m]
        self.test_sigma = [float(s) for s in self.test_sigma]
        if any(s <= 0 for s in self.test_sigma):
            raise ValueError("test sigma values must be positive")
        if self.n_trials < 1:
            raise ValueError("n_trials must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def gt_warp(family: WarpFamily, gt: dict) -> WarpParams:
    """Ground-truth warp from a center/scale/angle description."""
    s, a = float(gt.get("scale", 1.0)), float(gt.get("angle", 0.0))
    m = np.array([[s * math.cos(a), -s * math.sin(a), gt["cx"]],
                  [s * math.sin(a), s * math.cos(a), gt["cy"]],
                  [0.0, 0.0, 1.0]])
    return WarpParams.from_matrix(family, m)


@dataclass
class Setup:
    image: MultiChannelImage
    grid: SamplingGrid
    family: WarpFamily
    p_gt: WarpParams
    train: TrainConfig


def prepare(cfg: ExperimentConfig, family: str | None = None) -> Setup:
    img = load_image(cfg.image or default_image_path())
    fam = WarpFamily.parse(family or cfg.family)
    grid = SamplingGrid.box(cfg.template_size, cfg.template_size, centered=True)
    tc = TrainConfig(n_layers=cfg.n_layers, n_samples=cfg.n_train, sigma=cfg.train_sigma, seed=cfg.seed,
                     descriptor=Descriptor.parse(cfg.descriptor), propagate=cfg.propagate)
    return Setup(img, grid, fam, gt_warp(fam, cfg.gt), tc)


def train_methods(setup: Setup, methods) -> tuple[dict, dict]:
    """Train every method; failures are returned per method instead of raised."""
    cascades, errors = {}, {}
    for m in methods:
        try:
            cascades[m] = train_cascade(m, setup.image, setup.p_gt, setup.grid, setup.train)
        except CondLKError as exc:
            log.warning("training %s failed: %s", m, exc)
            errors[m] = f"{type(exc).__name__}: {exc}"
    return cascades, errors


def _out_of_bounds(family, params, grid, img, margin=OUT_OF_BOUNDS_MARGIN):
    m = to_matrices(family, np.where(np.isfinite(params), params, 0.0))
    x, y = grid.coords[:, 0], grid.coords[:, 1]
    w = m[:, 2, 0, None] * x + m[:, 2, 1, None] * y + m[:, 2, 2, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (m[:, 0, 0, None] * x + m[:, 0, 1, None] * y + m[:, 0, 2, None]) / w
        v = (m[:, 1, 0, None] * x + m[:, 1, 1, None] * y + m[:, 1, 2, None]) / w
    bad = (u < -margin) | (v < -margin) | (u > img.width - 1 + margin) | (v > img.height - 1 + margin)
    return np.any(bad | ~np.isfinite(u) | ~np.isfinite(v), axis=1)


def evaluate_cascades(setup: Setup, cascades: dict, cfg: ExperimentConfig, errors: dict | None = None,
                      labels: dict | None = None) -> ConvergenceReport:
    """Run every cascade from the same seeded test perturbations at each test sigma."""
    labels = labels or {m: m for m in cascades}
    errors = dict(errors or {})
    family, grid, p_gt = setup.family, setup.grid, setup.p_gt
    described = {d: describe(setup.image, d) for d in {c.descriptor for c in cascades.values()}}
    report = ConvergenceReport(methods=[labels.get(m, m) for m in list(cascades) + [e for e in errors if e not in cascades]],
                               test_sigma=list(cfg.test_sigma), n_trials=cfg.n_trials, errors=errors,
                               header={"threshold_px": CONVERGENCE_THRESHOLD, "config": cfg.to_dict()})
    for si, sigma in enumerate(cfg.test_sigma):
        dps = draw_perturbations(family, grid, sigma, cfg.n_trials, cfg.seed, STREAM_TEST, si)
        p0 = compose_batch(family, np.broadcast_to(p_gt.p, dps.shape), dps)
        chunks = [slice(i, min(i + CHUNK, cfg.n_trials)) for i in range(0, cfg.n_trials, CHUNK)]

        def run_chunk(sl, cascade):
            img = described[cascade.descriptor]
            params, trace, failed, iters = run_cascade_batch(img, p0[sl], cascade, p_gt=p_gt)
            oob = _out_of_bounds(family, params, grid, img)
            return trace, failed, iters, oob

        for m, cascade in cascades.items():
            if cfg.workers > 1:
                with ThreadPoolExecutor(cfg.workers) as pool:
                    parts = list(pool.map(lambda sl: run_chunk(sl, cascade), chunks))
            else:
                parts = [run_chunk(sl, cascade) for sl in chunks]
            trace = np.concatenate([p[0] for p in parts])
            failed = np.concatenate([p[1] for p in parts])
            iters = np.concatenate([p[2] for p in parts])
            oob = np.concatenate([p[3] for p in parts])
            converged = ~failed & np.isfinite(trace[:, -1]) & (trace[:, -1] < CONVERGENCE_THRESHOLD)
            report.add(labels.get(m, m), sigma, converged, trace, iters, failed, oob)
        for m in errors:
            if m not in cascades:
                report.add_failed_method(labels.get(m, m), sigma)
    return report


def eval_frequency(cfg: ExperimentConfig, setup: Setup | None = None) -> ConvergenceReport:
    setup = setup or prepare(cfg)
    cascades, errors = train_methods(setup, cfg.methods)
    return evaluate_cascades(setup, cascades, cfg, errors)


def eval_rate(cfg: ExperimentConfig, setup: Setup | None = None) -> ConvergenceReport:
    report = eval_frequency(cfg, setup)
    report.compute_rates()
    if all(not curves for curves in report.rates.values()):
        raise EmptyIntersection("no trial converged for every method at any test sigma")
    return report


def eval_swap(cfg: ExperimentConfig, pairs=None) -> ConvergenceReport:
    """CLK cascades trained under one family and tested under another.

    ``pairs`` is a list of ``(trained_as, tested_as)``; every tested family
    also gets native IC-LK and SDM baselines unless they are not in
    ``cfg.methods``.  All rows share one tested family per report, so pairs
    must agree on ``tested_as``.
    """
    pairs = [tuple(p) for p in (pairs or cfg.swap_pairs or [(cfg.family, cfg.swap_to or cfg.family)])]
    tested = {p[1] for p in pairs}
    if len(tested) != 1:
        raise ValueError("all swap pairs in one report must be tested with the same family")
    tested_family = tested.pop()
    setup = prepare(cfg, tested_family)
    baselines = [m for m in cfg.methods if m in ("iclk", "sdm")]
    cascades, errors = train_methods(setup, baselines)
    labels = {m: m for m in cascades}
    for trained_as, tested_as in pairs:
        label = f"clk({trained_as})"
        src = prepare(cfg, trained_as)
        try:
            c = train_cascade("clk", src.image, src.p_gt, src.grid, src.train)
            cascades[label] = swap_family(c, WarpFamily.parse(tested_as))
        except CondLKError as exc:
            errors[label] = f"{type(exc).__name__}: {exc}"
        labels[label] = label
    return evaluate_cascades(setup, cascades, cfg, errors, labels)
