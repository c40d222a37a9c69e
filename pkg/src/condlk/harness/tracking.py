"""Synthetic low frame-rate tracking.

A base image is moved along a seeded smooth similarity trajectory, with an
optional global gain/bias per frame.  A tracker aligns every ``(skip+1)``-th
frame starting from its previous solution.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..aligners import (CONVERGENCE_THRESHOLD, Descriptor, RegressorCascade, TrainConfig, describe,
                        run_cascade_batch, train_cascade)
from ..errors import CondLKError
from ..imageops import MultiChannelImage, SamplingGrid, adjust_lighting, default_image_path, load_image, warp_image
from ..synth import stream_rng
from ..warp import WarpFamily, WarpParams, compose
from .experiments import DEFAULT_GT, gt_warp
from .report import fmt

STREAM_TRACK = 3
TRACK_N_TRAIN = 20
REINIT_POLICY = "reinitialize to ground truth after a lost frame"


@dataclass(frozen=True)
class Trajectory:
    """Per-frame image motions (similarity, image coordinates) and lighting."""
    motions: tuple
    gains: tuple
    biases: tuple

    def __len__(self):
        return len(self.motions)

    @classmethod
    def static(cls, n_frames: int) -> "Trajectory":
        ident = WarpParams.identity(WarpFamily.SIMILARITY)
        return cls((ident,) * n_frames, (1.0,) * n_frames, (0.0,) * n_frames)

    def frame(self, img: MultiChannelImage, t: int) -> MultiChannelImage:
        out = img if not np.any(self.motions[t].p) else warp_image(img, self.motions[t])
        if self.gains[t] != 1.0 or self.biases[t] != 0.0:
            out = adjust_lighting(out, self.gains[t], self.biases[t])
        return out


def make_trajectory(n_frames: int, seed: int, index: int = 0, center=(112.0, 64.0),
                    step_px: float = 0.5, step_angle: float = 0.004, step_log_scale: float = 0.003,
                    smoothness: float = 0.9, max_shift: float = 30.0, lighting: bool = True) -> Trajectory:
    """Seeded smooth random walk.

    Velocities follow an AR(1) process so the motion is smooth; translation
    is clipped to ``max_shift`` pixels.  Rotation and scaling happen about
    ``center``.  Frame 0 is always the unmoved, unlit base image.
    """
    if n_frames < 2:
        raise ValueError("trajectory needs at least two frames")
    rng = stream_rng(seed, STREAM_TRACK, index)
    state = np.zeros(4)      # tx, ty, angle, log scale
    vel = np.zeros(4)
    steps = np.array([step_px, step_px, step_angle, step_log_scale])
    cx, cy = center
    motions, gains, biases = [], [], []
    for t in range(n_frames):
        if t > 0:
            vel = smoothness * vel + math.sqrt(1 - smoothness ** 2) * steps * rng.normal(size=4)
            state = state + vel
            state[:2] = np.clip(state[:2], -max_shift, max_shift)
        s, a = math.exp(state[3]), state[2]
        m = np.array([[s * math.cos(a), -s * math.sin(a), 0.0],
                      [s * math.sin(a), s * math.cos(a), 0.0], [0, 0, 1.0]])
        # rotate/scale about the center, then translate
        m[:2, 2] = [cx + state[0], cy + state[1]] - m[:2, :2] @ [cx, cy]
        motions.append(WarpParams.from_matrix(WarpFamily.SIMILARITY, m))
        if lighting and t > 0:
            gains.append(float(rng.uniform(0.7, 1.3)))
            biases.append(float(rng.uniform(-0.1, 0.1)))
        else:
            gains.append(1.0)
            biases.append(0.0)
    return Trajectory(tuple(motions), tuple(gains), tuple(biases))


def frame_truth(trajectory: Trajectory, t: int, p_gt: WarpParams) -> WarpParams:
    """Template-to-frame warp at frame t."""
    m = WarpParams.from_matrix(p_gt.family, trajectory.motions[t].matrix())
    return compose(m, p_gt)


@dataclass
class TrackResult:
    tracked: int
    total: int
    frames: list
    rmse: list
    reinitialized: list

    @property
    def fraction(self) -> float:
        return self.tracked / self.total if self.total else 1.0


def track_synthetic(img: MultiChannelImage, trajectory: Trajectory, skip: int, tracker,
                    retrain_on_first: bool = False, p_gt: WarpParams | None = None,
                    grid: SamplingGrid | None = None, train_cfg: TrainConfig | None = None) -> TrackResult:
    """Track frames ``0, skip+1, 2(skip+1), ...`` of ``trajectory``.

    ``tracker`` is a trained cascade or, with ``retrain_on_first``, a method
    name (or a cascade whose method is reused) trained on frame 0 with 20
    examples per layer.  A frame counts as tracked when its template-frame
    corner RMSE is below one pixel.  Alignment errors count as lost frames,
    and after a lost frame the tracker restarts from the ground truth.
    """
    if len(trajectory) < 2:
        raise ValueError("trajectory needs at least two frames")
    if skip < 0:
        raise ValueError("skip must be non-negative")
    grid = grid or SamplingGrid.box(20, 20, centered=True)
    if retrain_on_first:
        method = tracker.method if isinstance(tracker, RegressorCascade) else str(tracker)
        family = tracker.family if isinstance(tracker, RegressorCascade) else (p_gt.family if p_gt else WarpFamily.AFFINE)
        p_gt = p_gt or gt_warp(family, DEFAULT_GT)
        cfg = train_cfg or TrainConfig(n_samples=TRACK_N_TRAIN, descriptor=Descriptor.LBP8)
        tracker = train_cascade(method, trajectory.frame(img, 0), p_gt, grid, cfg)
    p_gt = p_gt or gt_warp(tracker.family, DEFAULT_GT)
    grid = tracker.grid
    current = frame_truth(trajectory, 0, p_gt)
    frames, rmses, reinit = [], [], []
    tracked = 0
    for t in range(skip + 1, len(trajectory), skip + 1):
        truth = frame_truth(trajectory, t, p_gt)
        dimg = describe(trajectory.frame(img, t), tracker.descriptor)
        try:
            params, trace, failed, _ = run_cascade_batch(dimg, current.p[None], tracker, p_gt=truth)
            err = float(trace[0, -1]) if not failed[0] else math.inf
        except CondLKError:
            err = math.inf
        ok = math.isfinite(err) and err < CONVERGENCE_THRESHOLD
        frames.append(t)
        rmses.append(err)
        reinit.append(not ok)
        if ok:
            tracked += 1
            current = WarpParams(tracker.family, params[0])
        else:
            current = truth
    return TrackResult(tracked, len(frames), frames, rmses, reinit)


@dataclass
class TrackConfig:
    methods: list = field(default_factory=lambda: ["iclk", "clk"])
    family: str = "affine"
    descriptor: str = "lbp8"
    skips: list = field(default_factory=lambda: [0, 2, 4, 8])
    n_sequences: int = 5
    n_frames: int = 91
    n_train: int = TRACK_N_TRAIN
    train_sigma: float = 1.2
    n_layers: int = 5
    lighting: bool = True
    step_px: float = 0.5
    seed: int = 0
    image: str | None = None
    gt: dict = field(default_factory=lambda: dict(DEFAULT_GT))
    template_size: int = 20
    out: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "TrackConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrackReport:
    config: dict
    tracked: dict = field(default_factory=dict)   # (method, skip) -> (tracked, total)
    errors: dict = field(default_factory=dict)

    def fraction(self, method, skip) -> float:
        n, total = self.tracked[(method, int(skip))]
        return n / total if total else 1.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "skip", "fraction", "tracked", "total"])
        for (m, k), (n, total) in self.tracked.items():
            w.writerow([m, k, fmt(self.fraction(m, k)), n, total])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"header": {"success_rule": f"template-frame corner RMSE < {CONVERGENCE_THRESHOLD} px",
                          "lost_frames": REINIT_POLICY, "config": self.config},
               "rows": [{"method": m, "skip": k, "tracked": n, "total": t} for (m, k), (n, t) in self.tracked.items()],
               "errors": self.errors}
        return json.dumps(doc, sort_keys=True)

    def write(self, out_csv):
        from pathlib import Path

        path = Path(out_csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv())
        path.with_suffix(".json").write_text(self.to_json())


def eval_track(cfg: TrackConfig) -> TrackReport:
    """Tracked fraction per method and frame skip, pooled over seeded sequences."""
    img = load_image(cfg.image or default_image_path())
    family = WarpFamily.parse(cfg.family)
    grid = SamplingGrid.box(cfg.template_size, cfg.template_size, centered=True)
    p_gt = gt_warp(family, cfg.gt)
    tc = TrainConfig(n_layers=cfg.n_layers, n_samples=cfg.n_train, sigma=cfg.train_sigma, seed=cfg.seed,
                     descriptor=Descriptor.parse(cfg.descriptor))
    trajectories = [make_trajectory(cfg.n_frames, cfg.seed, i, center=(cfg.gt["cx"], cfg.gt["cy"]),
                                    step_px=cfg.step_px, lighting=cfg.lighting) for i in range(cfg.n_sequences)]
    report = TrackReport(cfg.to_dict())
    # frame 0 is the same base image in every sequence, so one tracker per method suffices
    first = trajectories[0].frame(img, 0)
    for m in cfg.methods:
        try:
            tracker = train_cascade(m, first, p_gt, grid, tc)
        except CondLKError as exc:
            report.errors[m] = f"{type(exc).__name__}: {exc}"
            continue
        for k in cfg.skips:
            n = total = 0
            for traj in trajectories:
                r = track_synthetic(img, traj, int(k), tracker, p_gt=p_gt, grid=grid)
                n += r.tracked
                total += r.total
            report.tracked[(m, int(k))] = (n, total)
    return report
