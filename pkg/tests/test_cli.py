import json
import subprocess
import sys

import numpy as np
import pytest
from conftest import random_frame

from g4d import assets, cli
from g4d.model import Camera, make_gaussian_frame


def _run(capsys, *argv):
    code = cli.run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "config.json").write_text(json.dumps({"resolution": 48, "segments": 12}))
    assert cli.run(["synth", "--config", str(root / "config.json"), "--seed", "3",
                    "--out", str(root / "scene"), "--report", str(root / "synth.txt")]) == 0
    return root


def test_synth_layout(scene_dir):
    m = assets.read_manifest(scene_dir / "scene" / "manifest.json")
    assert (m["timestamps"], m["views"], m["resolution"], m["seed"]) == (3, 4, 48, 3)
    assert len(assets.read_cameras(scene_dir / "scene" / "cameras.txt")[0]) == 4
    assert (scene_dir / "scene" / "flow_t1_v0_backward.g4dr").exists()
    assert not (scene_dir / "scene" / "flow_t0_v0_backward.g4dr").exists()


def test_synth_deterministic_bytes(scene_dir, tmp_path):
    assert cli.run(["synth", "--config", str(scene_dir / "config.json"), "--seed", "3",
                    "--out", str(tmp_path / "again"), "--report", str(tmp_path / "r.txt")]) == 0
    for name in ("frame_t1.g4da", "motion_t2_v3.g4dr", "image_t0_v1.g4di", "cameras.txt",
                 "flow_t1_v2_forward.g4dr", "mesh_t2.g4dm"):
        assert (scene_dir / "scene" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


@pytest.mark.parametrize("t,direction,align", [(0, "forward", "icp"), (1, "backward", "icp"),
                                               (1, "forward", "none")])
def test_eval_motion_with_baked_gt(scene_dir, tmp_path, capsys, t, direction, align):
    report = tmp_path / "m.json"
    code, _, _ = _run(capsys, "eval", "--mode", "motion", "--frames", scene_dir / "scene", "--t", t,
                      "--direction", direction, "--align", align, "--json", "--report", report)
    assert code == 0
    rep = json.loads(report.read_text())
    assert rep["motion_error"] <= 1e-5
    assert rep["retargeted_distance"] <= 1e-5


def test_eval_metric(scene_dir, capsys, tmp_path):
    report = tmp_path / "m.json"
    assert _run(capsys, "eval", "--mode", "metric", "--frames", scene_dir / "scene", "--pred-gauge", 1.0,
                "--json", "--report", report)[0] == 0
    assert json.loads(report.read_text())["metric_scale_error"] <= 1e-4


def test_reports_byte_identical(scene_dir, tmp_path, capsys):
    for argv in (["eval", "--mode", "motion", "--frames", scene_dir / "scene"],
                 ["losses", "--mode", "retarget", "--frames", scene_dir / "scene"],
                 ["interp", "--frames", scene_dir / "scene", "--t-prime", 0.5,
                  "--out", tmp_path / "o.g4dc"]):
        outs = []
        for i in range(2):
            report = tmp_path / f"r{i}.txt"
            assert _run(capsys, *argv, "--report", report)[0] == 0
            outs.append(report.read_bytes())
        assert outs[0] == outs[1]


def test_retarget_loss_gt_below_zero(scene_dir, tmp_path, capsys):
    vals = {}
    for motion in ("gt", "zero"):
        report = tmp_path / f"{motion}.json"
        assert _run(capsys, "losses", "--mode", "retarget", "--frames", scene_dir / "scene",
                    "--motion", motion, "--json", "--report", report)[0] == 0
        vals[motion] = json.loads(report.read_text())["total"]
    assert vals["gt"] < vals["zero"]


def test_flow_loss_self_zero(scene_dir, capsys):
    s = scene_dir / "scene"
    code, out, _ = _run(capsys, "losses", "--mode", "flow", "--pred", s / "flow_t0_v0_forward.g4dr",
                        "--pseudo-fwd", s / "flow_t0_v0_forward.g4dr",
                        "--pseudo-bwd", s / "flow_t1_v0_backward.g4dr")
    assert code == 0 and "total: 0.0" in out


def test_fusion_loss_and_nvs(scene_dir, capsys, tmp_path):
    s = scene_dir / "scene"
    img = s / "image_t0_v0.g4di"
    code, out, _ = _run(capsys, "losses", "--mode", "fusion", "--pred", img, "--gt", img, "--json")
    assert code == 0 and json.loads(out)["total"] == 0.0
    code, out, _ = _run(capsys, "eval", "--mode", "nvs", "--pred", f"{img},{img}", "--gt",
                        f"{img},{s / 'image_t1_v0.g4di'}", "--json")
    rep = json.loads(out)
    assert code == 0 and rep["per_view"][0]["psnr"] == "inf"  # non-finite values are strings in JSON
    assert rep["per_view"][1]["ssim"] < 1.0


def test_interp_outputs(scene_dir, tmp_path, capsys):
    for name in ("o.ply", "o.g4dc"):
        code, out, _ = _run(capsys, "interp", "--frames", scene_dir / "scene", "--t-prime", 0.25,
                            "--out", tmp_path / name, "--json")
        assert code == 0
        assert json.loads(out)["count"] > 0
    cloud = assets.read_cloud(tmp_path / "o.g4dc")
    assert len(cloud) == json.loads(out)["count"]


@pytest.mark.parametrize("tp", [-0.01, 1.5, 7])
def test_interp_t_prime_out_of_range_is_usage(scene_dir, tmp_path, capsys, tp):
    code, _, err = _run(capsys, "interp", "--frames", scene_dir / "scene", "--t-prime", tp,
                        "--out", tmp_path / "o.ply")
    assert code == 1 and "t-prime" in err


def test_interp_bad_fusion_is_usage(scene_dir, tmp_path, capsys):
    code, _, _ = _run(capsys, "interp", "--frames", scene_dir / "scene", "--t-prime", 0.5,
                      "--fusion", "median", "--out", tmp_path / "o.ply")
    assert code == 1


def test_render_empty_frame_gives_background(tmp_path, capsys):
    H = W = 12
    maps = dict(P=np.zeros((1, 3, H, W)) + [[[[0]], [[0]], [[2]]]], O=np.full((1, 1, H, W), 0.5),
                C=np.zeros((1, 3, H, W)), Q=np.broadcast_to(np.array([1.0, 0, 0, 0])[None, :, None, None],
                                                            (1, 4, H, W)),
                S=np.full((1, 3, H, W), 0.1))
    frame = make_gaussian_frame(maps, np.zeros((1, 1, H, W), bool))
    assets.write_gaussian_frame(frame, tmp_path / "f.g4da")
    assets.write_cameras([Camera.from_params([1, 0, 0, 0], [0, 0, 0], 10, 10, 5.5, 5.5)],
                         tmp_path / "c.txt")
    code, _, _ = _run(capsys, "render", "--frame", tmp_path / "f.g4da", "--cameras", tmp_path / "c.txt",
                      "--bg", "0.2,0.4,0.6", "--out", tmp_path / "img.g4di")
    assert code == 0
    img = assets.read_image(tmp_path / "img.g4di")
    assert img.shape == (3, H, W)
    assert np.array_equal(img, np.broadcast_to(np.float32([0.2, 0.4, 0.6])[:, None, None], img.shape))


def test_render_png_and_view_range(scene_dir, tmp_path, capsys):
    s = scene_dir / "scene"
    code, _, _ = _run(capsys, "render", "--frame", s / "frame_t0.g4da", "--cameras", s / "cameras.txt",
                      "--view", 2, "--out", tmp_path / "a.png")
    assert code == 0 and assets.read_png(tmp_path / "a.png").shape == (3, 48, 48)
    code, _, _ = _run(capsys, "render", "--frame", s / "frame_t0.g4da", "--cameras", s / "cameras.txt",
                      "--view", 9, "--out", tmp_path / "b.png")
    assert code == 2


def test_gauge_report(tmp_path, capsys):
    rng = np.random.default_rng(0)
    gt = []
    for _ in range(4):
        q = rng.normal(size=4)
        gt.append(Camera.from_params(q / np.linalg.norm(q), rng.normal(size=3), 100, 100, 50, 50))
    pred = [c.with_translation(c.translation / 2.0) for c in gt]
    assets.write_cameras([gt], tmp_path / "gt.txt")
    assets.write_cameras([pred], tmp_path / "pred.txt")
    code, out, _ = _run(capsys, "gauge", "--pred-cams", tmp_path / "pred.txt", "--gt-cams",
                        tmp_path / "gt.txt", "--json")
    assert code == 0 and abs(json.loads(out)["gauge"] - 0.5) <= 1e-12
    code, out, _ = _run(capsys, "gauge", "--pred-cams", tmp_path / "pred.txt", "--gt-cams",
                        tmp_path / "gt.txt", "--pred-gauge", 0.5, "--json")
    assert code == 0 and json.loads(out)["loss"]["total"] <= 1e-9


def test_selftest_passes(capsys):
    code, out, _ = _run(capsys, "selftest", "--json")
    assert code == 0 and json.loads(out)["passed"] is True


def test_selftest_failure_is_exit_3(capsys, monkeypatch):
    import g4d.selftest

    monkeypatch.setattr(g4d.selftest, "run_selftest", lambda quick=True: {"x": {"ok": False}})
    assert _run(capsys, "selftest")[0] == 3


def test_unexpected_exception_is_exit_3(capsys, monkeypatch):
    def boom(args):
        raise RuntimeError("bug")

    monkeypatch.setattr(cli, "cmd_selftest", boom)
    assert _run(capsys, "selftest")[0] == 3


def test_data_errors_exit_2(tmp_path, capsys, rng):
    assert _run(capsys, "render", "--frame", tmp_path / "missing", "--cameras", tmp_path / "c.txt",
                "--out", tmp_path / "x.png")[0] == 2
    (tmp_path / "junk.g4da").write_bytes(b"G4DA\x01")
    assets.write_cameras([Camera.from_params([1, 0, 0, 0], [0, 0, 0], 10, 10, 5, 5)], tmp_path / "c.txt")
    assert _run(capsys, "render", "--frame", tmp_path / "junk.g4da", "--cameras", tmp_path / "c.txt",
                "--out", tmp_path / "x.png")[0] == 2
    assets.write_gaussian_frame(random_frame(rng), tmp_path / "f.g4da")
    (tmp_path / "bad.txt").write_text("version: 1\ntimestamp 0:\n  view 0:\n    q: a b c d\n")
    code, _, err = _run(capsys, "render", "--frame", tmp_path / "f.g4da", "--cameras", tmp_path / "bad.txt",
                        "--out", tmp_path / "x.png")
    assert code == 2 and "line 4" in err
    (tmp_path / "cfg.json").write_text('{"parts": 0}')
    assert _run(capsys, "synth", "--config", tmp_path / "cfg.json", "--out", tmp_path / "s")[0] == 2


@pytest.mark.parametrize("argv", [[], ["nope"], ["render"], ["eval", "--mode", "bogus"],
                                  ["render", "--frame", "a", "--cameras", "b", "--out", "c", "--bg", "1,2"],
                                  ["synth", "--out", "x", "--seed", "abc"],
                                  ["losses", "--mode", "flow"], ["eval", "--mode", "nvs"]])
def test_usage_errors_exit_1(argv, capsys):
    assert _run(capsys, *argv)[0] == 1


def test_argument_fuzz_honors_exit_contract(tmp_path, capsys, scene_dir):
    rng = np.random.default_rng(7)
    vocab = ["synth", "render", "interp", "gauge", "losses", "eval", "selftest", "--mode", "motion",
             "nvs", "metric", "retarget", "flow", "fusion", "--frames", str(scene_dir / "scene"),
             "--t", "-1", "0", "1", "5", "--t-prime", "0.5", "nan", "--out", str(tmp_path / "o.ply"),
             "--pred", "--gt", "--fusion", "mlp:", "--tau", "--view", "--bg", "1,1,1", "--json",
             "--pred-gauge", "--cameras", "--frame", "x", "--direction", "forward", "backward"]
    for _ in range(300):
        argv = [str(vocab[i]) for i in rng.integers(0, len(vocab), rng.integers(0, 7))]
        code = cli.run(argv)
        capsys.readouterr()
        assert code in (0, 1, 2), argv


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "g4d", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "selftest" in proc.stdout
