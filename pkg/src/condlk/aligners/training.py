"""Layer-by-layer cascade training for SDM, Generative LK and Conditional LK."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import CondLKError, LayerError
from ..imageops import MultiChannelImage, SamplingGrid
from ..synth import (STREAM_TRAIN, STREAM_VALIDATION, PerturbationConfig, generate_set,
                     propagate_perturbations)
from ..warp import WarpFamily, WarpParams
from .cascade import Descriptor, RegressorCascade, RegressorLayer, describe
from .clk import LMConfig, clk_train
from .glk import glk_train
from .lk import build_R_from_g, iclk_build
from .sdm import LAMBDA_FACTORS, RidgeSolver, select_lambda

METHODS = ("iclk", "sdm", "glk", "clk")


@dataclass(frozen=True)
class TrainConfig:
    n_layers: int = 5
    n_samples: int = 100
    sigma: float = 1.2
    seed: int = 0
    descriptor: Descriptor = Descriptor.RAW
    sdm_lambda: float | None = None          # None: choose on a validation set
    lambda_factors: tuple = tuple(LAMBDA_FACTORS)
    propagate: bool = True                   # False: fresh unpropagated draws per layer
    lm: LMConfig = field(default_factory=LMConfig)


def layer_sets(img: MultiChannelImage, p_gt: WarpParams, grid: SamplingGrid, cfg: TrainConfig,
               layer: int, prefix, stream: int = STREAM_TRAIN):
    """Fresh perturbations for ``layer`` pushed through the trained ``prefix``."""
    pc = PerturbationConfig(cfg.sigma, cfg.n_samples, cfg.seed)
    ts = generate_set(img, p_gt, grid, pc, stream=(stream, layer))
    if cfg.propagate and prefix:
        ts = propagate_perturbations(ts, prefix)
    return ts


def _train_layers(method, img, p_gt, grid, cfg, fit_layer):
    img = describe(img, cfg.descriptor)
    layers, meta = [], {"method": method, "n_samples": cfg.n_samples, "sigma": cfg.sigma,
                        "seed": cfg.seed, "propagate": cfg.propagate}
    for l in range(cfg.n_layers):
        ts = layer_sets(img, p_gt, grid, cfg, l, layers)
        try:
            layers.append(fit_layer(l, ts, img, layers, meta))
        except CondLKError as exc:
            raise LayerError(l, exc) from exc
    return RegressorCascade(p_gt.family, grid, layers, cfg.descriptor, method, meta)


def sdm_train_cascade(img, p_gt: WarpParams, grid: SamplingGrid, cfg: TrainConfig) -> RegressorCascade:
    def fit(l, ts, dimg, prefix, meta):
        solver = RidgeSolver(ts.residuals(), ts.dps.T)
        if cfg.sdm_lambda is None:
            vs = layer_sets(dimg, p_gt, grid, cfg, l, prefix, stream=STREAM_VALIDATION)
            lam, _, r = select_lambda(solver, vs.residuals(), vs.dps.T, cfg.lambda_factors)
        else:
            lam, r = cfg.sdm_lambda, solver.solve(cfg.sdm_lambda)
        meta.setdefault("lambda", []).append(float(lam))
        return RegressorLayer(r, ts.template)

    return _train_layers("sdm", img, p_gt, grid, cfg, fit)


def glk_train_cascade(img, p_gt: WarpParams, grid: SamplingGrid, cfg: TrainConfig) -> RegressorCascade:
    def fit(l, ts, dimg, prefix, meta):
        gp = glk_train(ts, p_gt.family, grid)
        return RegressorLayer(build_R_from_g(gp, p_gt.family), ts.template, gp)

    return _train_layers("glk", img, p_gt, grid, cfg, fit)


def clk_train_cascade(img, p_gt: WarpParams, grid: SamplingGrid, cfg: TrainConfig) -> RegressorCascade:
    def fit(l, ts, dimg, prefix, meta):
        result = clk_train(ts, p_gt.family, grid, cfg.lm)
        meta.setdefault("lm_objective", []).append([result.initial_objective, result.objective])
        return RegressorLayer(build_R_from_g(result.g, p_gt.family), ts.template, result.g)

    return _train_layers("clk", img, p_gt, grid, cfg, fit)


def iclk_cascade(img, p_gt: WarpParams, grid: SamplingGrid, cfg: TrainConfig | None = None) -> RegressorCascade:
    descriptor = cfg.descriptor if cfg is not None else Descriptor.RAW
    layer = iclk_build(describe(img, descriptor), p_gt.family, grid, p_gt)
    return RegressorCascade(p_gt.family, grid, [layer], descriptor, "iclk")


def train_cascade(method: str, img, p_gt: WarpParams, grid: SamplingGrid, cfg: TrainConfig) -> RegressorCascade:
    trainers = {"iclk": iclk_cascade, "sdm": sdm_train_cascade,
                "glk": glk_train_cascade, "clk": clk_train_cascade}
    try:
        trainer = trainers[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}") from None
    return trainer(img, p_gt, grid, cfg)


def swap_family(cascade: RegressorCascade, new_family: WarpFamily) -> RegressorCascade:
    """Rebuild every layer's regressor from its stored gradients under another warp."""
    new_family = WarpFamily.parse(new_family)
    if any(layer.g is None for layer in cascade.layers):
        raise ValueError("warp swapping needs gradients stored on every layer")
    if new_family is cascade.family:
        layers = [RegressorLayer(layer.R.copy(), layer.template, layer.g) for layer in cascade.layers]
    else:
        layers = []
        for l, layer in enumerate(cascade.layers):
            try:
                layers.append(RegressorLayer(build_R_from_g(layer.g, new_family), layer.template, layer.g))
            except CondLKError as exc:
                raise LayerError(l, exc) from exc
    meta = dict(cascade.meta, trained_family=cascade.meta.get("trained_family", cascade.family.value))
    return RegressorCascade(new_family, cascade.grid, layers, cascade.descriptor, cascade.method, meta)
