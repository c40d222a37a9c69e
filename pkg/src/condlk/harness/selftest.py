"""Small oracle-based invariant checks runnable from an installed package."""
from __future__ import annotations

import math
import time
import traceback

import numpy as np

from ..aligners import (RegressorCascade, RegressorLayer, build_R_from_g, build_W, clk_objective,
                        clk_objective_kron, clk_workspace, dR_dg, glk_train, run_cascade)
from ..aligners.sdm import RidgeSolver
from ..imageops import MultiChannelImage, SamplingGrid, finite_diff_gradients, lbp_transform, sample_bilinear
from ..synth import TrainingSet
from ..warp import WarpFamily, WarpParams, compose, fit_params_from_points, invert, jacobian_at_identity, warp_point
from .report import ConvergenceReport

SQUARE = np.array([[0.0, 0.0], [9.0, 0.0], [9.0, 9.0], [0.0, 9.0]])


def _random_warp(rng, family):
    p = rng.normal(size=family.P) * 0.05
    if family is WarpFamily.HOMOGRAPHY:
        p[6:] *= 0.02
    return WarpParams(family, p)


def check_group_laws():
    rng = np.random.default_rng(0)
    xs = rng.uniform(-5, 15, size=(10, 2))
    for family in WarpFamily:
        for _ in range(100):
            a, b = _random_warp(rng, family), _random_warp(rng, family)
            assert np.max(np.abs(warp_point(compose(a, b), xs) - warp_point(a, warp_point(b, xs)))) < 1e-8
            assert np.max(np.abs(compose(a, invert(a)).p)) < 1e-8


def check_jacobian_fd():
    rng = np.random.default_rng(1)
    h = 1e-6
    for family in WarpFamily:
        x = rng.uniform(-5, 5, size=2)
        fd = np.empty((2, family.P))
        for j in range(family.P):
            e = np.zeros(family.P)
            e[j] = h
            fd[:, j] = (warp_point(WarpParams(family, e), x) - warp_point(WarpParams(family, -e), x)) / (2 * h)
        assert np.max(np.abs(fd - jacobian_at_identity(family, x))) < 1e-6


def check_fit_recovery():
    rng = np.random.default_rng(2)
    for family in WarpFamily:
        wp = _random_warp(rng, family)
        fit = fit_params_from_points(family, SQUARE, warp_point(wp, SQUARE))
        assert np.max(np.abs(fit.p - wp.p)) < 1e-8


RAMP_X, RAMP_Y = 0.01, 0.015


def _ramp(h=32, w=32, c=0.1):
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    return MultiChannelImage(c + (RAMP_X * xs + RAMP_Y * ys) * 32.0 / max(h, w))


def check_bilinear():
    img = MultiChannelImage(np.array([[0.0, 0.8], [0.0, 0.8]]))
    assert abs(sample_bilinear(img, (0.5, 0.5))[0] - 0.4) < 1e-15
    ramp = _ramp()
    assert abs(sample_bilinear(ramp, (3.25, 7.5))[0] - (0.1 + 3.25 * RAMP_X + 7.5 * RAMP_Y)) < 1e-12


def check_gradients():
    grid = SamplingGrid.box(6, 6)
    grid = SamplingGrid(grid.coords + 10)
    grads = finite_diff_gradients(_ramp(), grid)
    assert np.max(np.abs(grads - [RAMP_X, RAMP_Y])) < 1e-10


def check_lbp():
    out = lbp_transform(MultiChannelImage(np.full((8, 8), 0.3)))
    assert out.channels == 8 and np.all(out.data == 1.0)


def _planted_set(rng, family, grid, k=1, n=60):
    grads = rng.normal(size=(grid.D * k, 2))
    w = build_W(grads, family, grid)
    dps = rng.normal(size=(n, family.P)) * 0.1
    template = rng.uniform(0.2, 0.8, size=grid.D * k)
    return grads, TrainingSet(family, grid, template, dps, template + dps @ w.T)


def check_pinv():
    rng = np.random.default_rng(3)
    grid = SamplingGrid.box(4, 4)
    for family in WarpFamily:
        grads = rng.normal(size=(grid.D, 2))
        r = build_R_from_g(grads.ravel(), family, grid)
        ref = np.linalg.pinv(build_W(grads, family, grid))
        assert np.linalg.norm(r - ref) < 1e-8 * np.linalg.norm(r)


def check_dR_dg():
    rng = np.random.default_rng(4)
    grid = SamplingGrid.box(3, 3)
    family = WarpFamily.AFFINE
    g = rng.normal(size=2 * grid.D)
    analytic = dR_dg(clk_workspace(g, family, grid))
    h = 1e-6
    fd = np.empty_like(analytic)
    for j in range(g.size):
        e = np.zeros_like(g)
        e[j] = h
        fd[:, j] = ((build_R_from_g(g + e, family, grid) - build_R_from_g(g - e, family, grid)) / (2 * h)).ravel(order="F")
    assert np.max(np.abs(analytic - fd)) / np.max(np.abs(fd)) < 1e-5


def check_glk_recovery():
    rng = np.random.default_rng(5)
    grid = SamplingGrid.box(5, 5)
    grads, ts = _planted_set(rng, WarpFamily.AFFINE, grid)
    assert np.max(np.abs(glk_train(ts).gradients - grads)) < 1e-8


def check_sdm_recovery():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(10, 40))
    r_star = rng.normal(size=(6, 10))
    assert np.max(np.abs(RidgeSolver(x, r_star @ x).solve(0.0) - r_star)) < 1e-8


def check_kron_identity():
    rng = np.random.default_rng(7)
    grid = SamplingGrid.box(4, 4)
    _, ts = _planted_set(rng, WarpFamily.AFFINE, grid, n=10)
    ts = TrainingSet(ts.family, grid, ts.template, ts.dps, ts.features + rng.normal(size=ts.features.shape) * 0.01)
    g = rng.normal(size=2 * grid.D)
    a, b = clk_objective(g, ts), clk_objective_kron(g, ts)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


def coordinate_planes(h=64, w=64):
    """Two channels linear in x and in y; one plane alone leaves the warp unobservable."""
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    return MultiChannelImage(np.stack([0.1 + 0.8 * xs / (w - 1), 0.1 + 0.8 * ys / (h - 1)], axis=-1))


def check_one_step_iclk():
    img = coordinate_planes()
    grid = SamplingGrid(SamplingGrid.box(10, 10).coords + 20)
    family = WarpFamily.AFFINE
    grads = finite_diff_gradients(img, grid)
    r = np.linalg.pinv(build_W(grads, family, grid))
    from ..imageops import sample_warped_vector

    cascade = RegressorCascade(family, grid, [RegressorLayer(r, sample_warped_vector(img, WarpParams.identity(family), grid))],
                               method="iclk")
    p0 = WarpParams(family, [0, 0, 0, 0, 1.5, -1.0])
    res = run_cascade(img, p0, cascade, max_iters_per_layer=1, p_gt=WarpParams.identity(family))
    assert res.rmse_per_iteration[1] < 1e-6


def check_csv_round_trip():
    rep = ConvergenceReport(["a", "b"], [0.4, 1.2], 3)
    rep.counts = {("a", 0.4): 3, ("a", 1.2): 1, ("b", 0.4): 2, ("b", 1.2): 0}
    rows = ConvergenceReport.parse_csv(rep.to_csv())
    assert [(m, s, f) for m, s, f, _ in rows] == [(m, s, float(f)) for m, s, f, _ in rep.rows()]
    assert math.isclose(rows[2][2], 2 / 3, rel_tol=0, abs_tol=0)


SUITES = {
    "warp": [check_group_laws, check_jacobian_fd, check_fit_recovery],
    "imageops": [check_bilinear, check_gradients, check_lbp],
    "aligners": [check_pinv, check_dR_dg, check_glk_recovery, check_sdm_recovery, check_kron_identity,
                 check_one_step_iclk],
    "harness": [check_csv_round_trip],
}


def run_selftest(verbose: bool = True) -> bool:
    ok_all = True
    for suite, checks in SUITES.items():
        passed = 0
        t0 = time.perf_counter()
        for check in checks:
            try:
                check()
                passed += 1
            except Exception:
                ok_all = False
                if verbose:
                    print(f"FAIL {suite}.{check.__name__}")
                    traceback.print_exc()
        if verbose:
            print(f"{suite}: {passed}/{len(checks)} passed ({time.perf_counter() - t0:.2f} s)")
    return ok_all
