import json
import subprocess
import sys
from fractions import Fraction

import numpy as np
import pytest
from PIL import Image

from condlk.aligners import RegressorCascade, iclk_build
from condlk.errors import EmptyIntersection
from condlk.harness.cli import main, parse_sigma_list
from condlk.harness.experiments import (ExperimentConfig, Setup, eval_frequency, eval_rate, eval_swap,
                                        evaluate_cascades, prepare)
from condlk.harness.report import ConvergenceReport
from condlk.harness.tracking import Trajectory, make_trajectory, track_synthetic
from condlk.imageops import SamplingGrid
from condlk.synth import STREAM_TEST, draw_perturbations
from condlk.warp import WarpFamily, WarpParams, compose_batch
from oracles import coordinate_planes

QUICK = dict(n_train=20, n_layers=2, n_trials=40, test_sigma=[0.8, 2.0])


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(test_sigma=[0.0])
    with pytest.raises(ValueError):
        ExperimentConfig(n_trials=0)
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})
    cfg = ExperimentConfig(methods="iclk,sdm")
    assert cfg.methods == ["iclk", "sdm"]
    assert ExperimentConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_sigma_ranges():
    assert parse_sigma_list("0.4:0.4:4.0") == [0.4, 0.8, 1.2, 1.6, 2.0, 2.4, 2.8, 3.2, 3.6, 4.0]
    assert parse_sigma_list("1.2,2,2.8") == [1.2, 2.0, 2.8]


def test_report_csv_round_trip():
    rep = ConvergenceReport(["iclk", "clk"], [0.4, 1.2], 7)
    for m in rep.methods:
        for i, s in enumerate(rep.test_sigma):
            rep.counts[(m, s)] = 7 - i * 3
    text = rep.to_csv()
    assert text.splitlines()[0] == "method,test_sigma,freq,n_trials"
    assert "\r" not in text
    rows = ConvergenceReport.parse_csv(text)
    assert rows == [(m, s, float(f), n) for m, s, f, n in rep.rows()]
    assert rows[1][2] == 4 / 7


def test_tiny_sigma_all_converge():
    rep = eval_frequency(ExperimentConfig(methods=["iclk", "sdm", "glk", "clk"], n_train=20, n_layers=2,
                                          n_trials=30, test_sigma=[0.01]))
    for m in rep.methods:
        assert rep.frequency(m, 0.01) == 1


def test_frequencies_are_exact_fractions():
    rep = eval_frequency(ExperimentConfig(methods=["sdm"], **QUICK))
    for m, s, f, n in rep.rows():
        assert f == Fraction(rep.counts[(m, s)], 40) and n == 40
    doc = json.loads(rep.to_json())
    assert len(doc["records"]) == 2 * 40
    assert {"converged", "final_rmse", "iterations", "rmse_trace", "out_of_bounds"} <= set(doc["records"][0])


def test_constant_image_reported_per_method(tmp_path):
    path = tmp_path / "flat.png"
    Image.fromarray(np.full((256, 256), 128, dtype=np.uint8)).save(path)
    rep = eval_frequency(ExperimentConfig(methods=["iclk", "sdm", "glk", "clk"], image=str(path), **QUICK))
    assert "RankDeficient" in rep.errors["iclk"]
    assert set(rep.errors) == {"iclk", "sdm", "glk", "clk"}
    for m in rep.methods:
        assert rep.freq(m, 0.8) == 0.0


def test_rate_curves_start_at_mean_initial_error():
    cfg = ExperimentConfig(methods=["iclk", "sdm"], **QUICK)
    rep = eval_rate(cfg)
    setup = prepare(cfg)
    for si, sigma in enumerate(cfg.test_sigma):
        both = rep.converged[("iclk", sigma)] & rep.converged[("sdm", sigma)]
        init = rep.traces[("iclk", sigma)][:, 0]
        for m in ("iclk", "sdm"):
            assert rep.rates[sigma][m][0] == pytest.approx(init[both].mean(), rel=1e-12)
        dps = draw_perturbations(setup.family, setup.grid, sigma, cfg.n_trials, cfg.seed, STREAM_TEST, si)
        corners = setup.grid.corners()
        from condlk.warp import warp_points_batch

        direct = np.sqrt(np.mean(np.sum((warp_points_batch(setup.family, dps, corners) - corners) ** 2, -1), -1))
        assert np.allclose(init, direct, atol=1e-9)


def test_rate_on_linear_image_drops_in_one_step():
    img = coordinate_planes(120, 120)
    family = WarpFamily.AFFINE
    grid = SamplingGrid.box(20, 20, centered=True)
    p_gt = WarpParams(family, [0, 0, 0, 0, 60.0, 60.0])
    layer = iclk_build(img, family, grid, p_gt)
    cascade = RegressorCascade(family, grid, [layer], method="glk")   # one application
    cfg = ExperimentConfig(methods=["glk"], n_trials=30, test_sigma=[0.3])
    setup = Setup(img, grid, family, p_gt, None)
    rep = evaluate_cascades(setup, {"perfect": cascade}, cfg)
    rep.compute_rates()
    curve = rep.rates[0.3]["perfect"]
    assert curve[0] > 0.1 and curve[1] < 1e-6


def test_empty_intersection(tmp_path):
    cfg = ExperimentConfig(methods=["iclk"], n_train=20, n_layers=1, n_trials=10, test_sigma=[40.0])
    with pytest.raises(EmptyIntersection):
        eval_rate(cfg)


def test_swap_same_family_matches_plain_report():
    cfg = ExperimentConfig(methods=["iclk"], n_train=20, n_layers=2, n_trials=30, test_sigma=[1.2])
    swapped = eval_swap(cfg, [("affine", "affine")])
    plain = eval_frequency(ExperimentConfig(methods=["iclk", "clk"], n_train=20, n_layers=2, n_trials=30,
                                            test_sigma=[1.2]))
    assert swapped.counts[("clk(affine)", 1.2)] == plain.counts[("clk", 1.2)]
    assert np.array_equal(swapped.traces[("clk(affine)", 1.2)], plain.traces[("clk", 1.2)])


def test_swap_pairs_must_share_tested_family():
    with pytest.raises(ValueError):
        eval_swap(ExperimentConfig(n_trials=5), [("affine", "affine"), ("affine", "homography")])


def test_thread_count_does_not_change_report():
    base = dict(methods=["iclk", "sdm"], n_train=20, n_layers=2, n_trials=150, test_sigma=[1.6])
    one = eval_frequency(ExperimentConfig(workers=1, **base))
    three = eval_frequency(ExperimentConfig(workers=3, **base))
    assert one.to_csv() == three.to_csv()
    assert one.to_json().replace('"workers": 1', "") == three.to_json().replace('"workers": 3', "")


# -- tracking -----------------------------------------------------------------

def test_static_trajectory_is_fully_tracked():
    from condlk.imageops import default_image_path, load_image

    img = load_image(default_image_path())
    res = track_synthetic(img, Trajectory.static(12), 2, "iclk", retrain_on_first=True)
    assert res.fraction == 1.0 and res.total == 3


def test_trajectory_is_seeded_and_smooth():
    a = make_trajectory(30, 4, 1)
    b = make_trajectory(30, 4, 1)
    assert all(np.array_equal(x.p, y.p) for x, y in zip(a.motions, b.motions))
    assert a.gains == b.gains and a.gains[0] == 1.0 and a.biases[0] == 0.0
    assert all(0.7 <= g <= 1.3 for g in a.gains) and all(-0.1 <= v <= 0.1 for v in a.biases)
    assert np.array_equal(a.motions[0].p, np.zeros(4))
    with pytest.raises(ValueError):
        make_trajectory(1, 0)


def test_track_needs_two_frames():
    with pytest.raises(ValueError):
        track_synthetic(None, Trajectory.static(1), 0, "iclk")


# -- command line -----------------------------------------------------------------

def test_cli_bad_arguments_exit_2(capsys):
    assert main([]) == 2
    assert main(["eval-freq", "--test-sigma", "a:b"]) == 2
    assert main(["eval-freq", "--methods", "nope"]) == 2
    assert main(["eval-freq", "--trials", "0"]) == 2
    assert main(["align", "--model", "m.json", "--image", "x.png", "--init-corners", "1,2,3"]) == 2


def test_cli_runtime_error_exit_1(tmp_path):
    assert main(["eval-freq", "--image", str(tmp_path / "missing.png"), "--methods", "iclk", "--trials", "5"]) == 1


def test_cli_eval_freq_and_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"methods": ["iclk", "sdm"], "n_train": 20, "n_layers": 2, "n_trials": 20}))
    out = tmp_path / "report.csv"
    assert main(["eval-freq", "--config", str(cfg), "--test-sigma", "0.4:0.4:1.2", "--seed", "7",
                 "--out", str(out)]) == 0
    rows = ConvergenceReport.parse_csv(out.read_text())
    assert [r[1] for r in rows] == [0.4, 0.8, 1.2, 0.4, 0.8, 1.2]
    assert all(r[3] == 20 for r in rows)
    doc = json.loads(out.with_suffix(".json").read_text())
    assert doc["header"]["config"]["seed"] == 7


def test_cli_train_and_align(tmp_path):
    model = tmp_path / "m.json"
    assert main(["train", "--method", "iclk", "--model-out", str(model)]) == 0
    c = RegressorCascade.load(model)
    from condlk.harness.experiments import DEFAULT_GT, gt_warp
    from condlk.imageops import default_image_path
    from condlk.warp import warp_points_batch

    gt = gt_warp(WarpFamily.AFFINE, DEFAULT_GT)
    corners = warp_points_batch(gt.family, gt.p[None], c.grid.corners())[0]
    init = corners + [[1.5, -1.0], [2.0, 0.5], [0.5, 1.0], [1.0, 0.0]]
    out = tmp_path / "a.json"
    argv = ["align", "--model", str(model), "--image", str(default_image_path()),
            "--init-corners", ",".join(map(str, init.ravel())), "--gt-corners", ",".join(map(str, corners.ravel())),
            "--out", str(out)]
    assert main(argv) == 0
    doc = json.loads(out.read_text())
    assert len(doc["p_final"]) == 6 and doc["converged"]
    assert doc["rmse_trace"][-1] < doc["rmse_trace"][0]
    assert len(doc["rmse_trace"]) == doc["iterations"] + 1


def test_cli_selftest_subprocess():
    proc = subprocess.run([sys.executable, "-m", "condlk.harness.cli", "selftest"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert "warp:" in proc.stdout and "aligners:" in proc.stdout


def test_cli_track(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["track", "--methods", "iclk", "--skips", "0,4", "--n-sequences", "1", "--n-frames", "11",
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "method,skip,fraction,tracked,total" and len(lines) == 3
    header = json.loads(out.with_suffix(".json").read_text())["header"]
    assert "< 1.0 px" in header["success_rule"] and "ground truth" in header["lost_frames"]
