"""CLI subcommands: outputs, reruns, and exit codes, all in-process."""
import json

import jsonschema
import numpy as np
import pytest

from ringloc import io
from ringloc.cli import build_parser, main
from ringloc.config import (KEY_DOCS, PipelineConfig, read_config,
                            write_config)
from ringloc.encoder import encode, init_encoder_weights
from ringloc.metrics import report_schema
from ringloc.pipeline import simulate_trajectory
from ringloc.projection import project_cylindrical, voxelize
from ringloc.regressor import load_regressor_weights
from ringloc.se3 import apply_points, rotation_angle_deg


def trimmed_config() -> PipelineConfig:
    cfg = PipelineConfig()
    cfg.trajectory.n_poses = 10
    cfg.train.epochs = 2
    cfg.train.scan_stride = 4
    cfg.train.points_per_scan = 64
    cfg.bench.perturbations = "yaw:180"
    cfg.pose.iterations = 200
    return cfg


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Workspace with a trimmed config and one simulated scan on disk."""
    root = tmp_path_factory.mktemp("cli")
    cfg = trimmed_config()
    cfg_path = root / "trim.cfg"
    write_config(cfg_path, cfg)
    _, poses, scans = simulate_trajectory(cfg, run_seed=0)
    scan_path = root / "scan0.csv"
    io.write_scan_csv(scan_path, scans[0].cloud, scans[0].classes,
                      scans[0].gt_world)
    cloud_path = root / "cloud0.csv"
    io.write_cloud_csv(cloud_path, scans[0].cloud)
    return {"root": root, "cfg": cfg, "cfg_path": cfg_path,
            "scan": scans[0], "pose0": poses[0], "scan_path": scan_path,
            "cloud_path": cloud_path}


def run(ws, cmd, *extra, out):
    argv = [cmd, *extra, "--config", str(ws["cfg_path"]), "--out", str(out)]
    return main(argv)


def assert_rerun_identical(ws, cmd, *extra, files, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(ws, cmd, *extra, out=a) == 0
    assert run(ws, cmd, *extra, out=b) == 0
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_help_documents_every_config_key():
    text = build_parser().format_help()
    for key in KEY_DOCS:
        assert key in text, key
    assert "LEADER_GEO_THREADS" in text


def test_rectify_levels_the_cloud(ws, tmp_path):
    out = tmp_path / "o"
    assert run(ws, "rectify", str(ws["cloud_path"]), out=out) == 0
    t_plane = io.read_pose(out / "t_plane.txt")
    rect = io.read_cloud_csv(out / "rectified.csv")
    src = io.read_cloud_csv(ws["cloud_path"])
    assert np.array_equal(rect.xyz, apply_points(t_plane, src.xyz))
    # most points are ground; after leveling they sit near one height
    z = np.sort(rect.xyz[:, 2])
    ground = z[:int(0.5 * len(z))]
    assert np.std(ground) < 0.2


def test_rectify_rerun_is_byte_identical(ws, tmp_path):
    assert_rerun_identical(ws, "rectify", str(ws["cloud_path"]),
                           files=["rectified.csv", "t_plane.txt"],
                           tmp_path=tmp_path)


def test_project_matches_library_path(ws, tmp_path):
    out = tmp_path / "o"
    assert run(ws, "project", str(ws["cloud_path"]), "--recover",
               out=out) == 0
    cfg = ws["cfg"]
    want = voxelize(project_cylindrical(io.read_cloud_csv(ws["cloud_path"]),
                                        cfg.projection), cfg.projection)
    got = io.read_voxel_csv(out / "voxels.csv", cfg.projection)
    assert np.array_equal(got.indices, want.indices)
    assert np.array_equal(got.points, want.points)
    assert np.array_equal(got.intensity, want.intensity)
    recovered = io.read_cloud_csv(out / "recovered.csv")
    assert len(recovered) == len(want.indices)


def test_project_rerun_is_byte_identical(ws, tmp_path):
    assert_rerun_identical(ws, "project", str(ws["cloud_path"]), "--recover",
                           files=["voxels.csv", "recovered.csv"],
                           tmp_path=tmp_path)


def test_encode_writes_feature_rows(ws, tmp_path):
    out = tmp_path / "o"
    vox_out = tmp_path / "v"
    assert run(ws, "project", str(ws["cloud_path"]), out=vox_out) == 0
    assert run(ws, "encode", str(vox_out / "voxels.csv"), out=out) == 0
    cfg = ws["cfg"]
    voxels = io.read_voxel_csv(vox_out / "voxels.csv", cfg.projection)
    weights = init_encoder_weights(cfg.encoder, seed=0)  # bench.seed default
    want = encode(voxels, weights)
    lines = (out / "features.csv").read_text().strip().split("\n")
    assert lines[0] == "ix,iy,iz," + ",".join(f"f{i}" for i in range(64))
    assert len(lines) == len(voxels.indices) + 1
    first = np.array([float(v) for v in lines[1].split(",")[3:]])
    assert np.array_equal(first, want[0])


def test_encode_rerun_is_byte_identical(ws, tmp_path):
    vox_out = tmp_path / "v"
    assert run(ws, "project", str(ws["cloud_path"]), out=vox_out) == 0
    assert_rerun_identical(ws, "encode", str(vox_out / "voxels.csv"),
                           files=["features.csv"], tmp_path=tmp_path)


def test_localize_recovers_the_pose(ws, tmp_path):
    out = tmp_path / "o"
    assert run(ws, "localize", str(ws["scan_path"]), out=out) == 0
    est = io.read_pose(out / "pose.txt")
    truth = ws["pose0"]
    assert np.linalg.norm(est.translation - truth.translation) <= 0.05
    assert rotation_angle_deg(est.rotation.T @ truth.rotation) <= 0.5
    sidecar = json.loads((out / "pose.json").read_text())
    assert set(sidecar) == {"inlier_count", "rms_residual", "seed"}
    assert sidecar["seed"] == 0
    assert sidecar["inlier_count"] >= 3


def test_localize_rerun_is_byte_identical(ws, tmp_path):
    assert_rerun_identical(ws, "localize", str(ws["scan_path"]),
                           files=["pose.txt", "pose.json"],
                           tmp_path=tmp_path)


def test_localize_with_yaw_flip_still_localizes(ws, tmp_path):
    out = tmp_path / "o"
    assert run(ws, "localize", str(ws["scan_path"]), "--perturb", "yaw=180",
               out=out) == 0
    est = io.read_pose(out / "pose.txt")
    truth = ws["pose0"]
    # the scan was flipped in the sensor frame, so the recovered pose
    # differs from the unperturbed truth by about a half turn
    assert rotation_angle_deg(est.rotation.T @ truth.rotation) > 170.0
    assert np.linalg.norm(est.translation - truth.translation) <= 0.05


def test_bench_outputs_and_schema(ws, tmp_path):
    out = tmp_path / "o"
    assert run(ws, "bench", out=out) == 0
    table = (out / "perturbations.csv").read_text().strip().split("\n")
    assert table[0] == "label,frames_ok,frames_failed,mpe_m,moe_deg,success@0.5"
    labels = [row.split(",")[0] for row in table[1:]]
    assert labels == ["baseline", "yaw:180"]
    for row in table[1:]:
        fields = row.split(",")
        assert fields[1] == "10" and fields[2] == "0"
        assert float(fields[5]) == 1.0
    summary = json.loads((out / "baseline_summary.json").read_text())
    jsonschema.validate(summary, report_schema())
    assert summary["frames"] == 10
    frames = (out / "baseline_frames.csv").read_text().strip().split("\n")
    assert len(frames) == 11
    assert (out / "failures.csv").read_text() == "label,frame,error\n"


def test_bench_rerun_is_byte_identical(ws, tmp_path):
    assert_rerun_identical(
        ws, "bench",
        files=["baseline_frames.csv", "baseline_summary.json",
               "perturbations.csv", "failures.csv"],
        tmp_path=tmp_path)


def test_bench_cli_perturb_overrides_config(ws, tmp_path):
    out = tmp_path / "o"
    assert run(ws, "bench", "--perturb", "dropout=0.3", out=out) == 0
    table = (out / "perturbations.csv").read_text().strip().split("\n")
    assert [r.split(",")[0] for r in table[1:]] == ["baseline", "dropout:0.3"]


def test_train_toy_outputs(ws, tmp_path):
    out = tmp_path / "o"
    assert run(ws, "train-toy", "--epochs", "2", out=out) == 0
    tel = (out / "telemetry.csv").read_text().strip().split("\n")
    assert tel[0] == "epoch,loss,lr,n_clamped"
    assert len(tel) == 3
    assert tel[1].split(",")[0] == "0"
    quart = (out / "quartiles.csv").read_text().strip().split("\n")
    assert quart[0] == "quartile,mean_err_m"
    assert len(quart) == 5
    weights = load_regressor_weights(out / "regressor_weights.bin")
    assert weights.tensors  # loadable, non-empty
    assert (out / "encoder_weights.bin").exists()


def test_train_toy_rerun_is_byte_identical(ws, tmp_path):
    assert_rerun_identical(
        ws, "train-toy", "--epochs", "2",
        files=["telemetry.csv", "quartiles.csv", "encoder_weights.bin",
               "regressor_weights.bin"],
        tmp_path=tmp_path)


# -------------------------------------------------------------- exit codes


def test_malformed_input_exits_2(ws, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    rc = run(ws, "rectify", str(bad), out=tmp_path / "o")
    assert rc == 2
    assert "ringloc: error:" in capsys.readouterr().err


def test_localize_needs_scan_format(ws, tmp_path):
    rc = run(ws, "localize", str(ws["cloud_path"]), out=tmp_path / "o")
    assert rc == 2


def test_regressor_predictor_needs_weights(ws, tmp_path):
    rc = run(ws, "localize", str(ws["scan_path"]), "--predictor", "regressor",
             out=tmp_path / "o")
    assert rc == 2


def test_degenerate_geometry_exits_3(ws, tmp_path):
    line = tmp_path / "line.csv"
    t = np.linspace(0.0, 1.0, 50)
    xyz = np.column_stack([t, 2.0 * t, 0.5 * t]) + 1.0
    io.write_cloud_csv(line, __import__("ringloc.se3", fromlist=["PointCloud"])
                       .PointCloud(xyz, np.full(50, 0.5)))
    rc = run(ws, "rectify", str(line), out=tmp_path / "o")
    assert rc == 3


def test_no_consensus_exits_4(ws, tmp_path):
    cfg = trimmed_config()
    cfg.pose.threshold = 1e-300  # nothing can agree this tightly
    cfg_path = tmp_path / "strict.cfg"
    write_config(cfg_path, cfg)
    rc = main(["localize", str(ws["scan_path"]), "--config", str(cfg_path),
               "--out", str(tmp_path / "o")])
    assert rc == 4


def test_empty_input_exits_5(ws, tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("x,y,z,intensity\n")
    rc = run(ws, "rectify", str(empty), out=tmp_path / "o")
    assert rc == 5


def test_missing_file_exits_2(ws, tmp_path):
    rc = run(ws, "rectify", str(tmp_path / "nope.csv"), out=tmp_path / "o")
    assert rc == 2


def test_config_round_trip_through_cli_path(ws, tmp_path):
    # the config the workspace wrote parses back to the same values
    cfg = read_config(ws["cfg_path"])
    assert cfg.trajectory.n_poses == 10
    assert cfg.bench.perturbations == "yaw:180"
    assert cfg.pose.iterations == 200
