import json

import numpy as np
import pytest

from rigbridge.cli import main
from rigbridge.io import load_motion, load_obj, save_obj


@pytest.fixture(scope="module")
def rig_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "rig"
    code = main(["synth", "--out", str(d), "--motion-frames", "12"])
    assert code == 0
    return d


def _run(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else {})


def test_synth_report_structure(rig_dir, capsys, tmp_path):
    code, report = _run(capsys, ["synth", "--out", str(tmp_path / "r2")])
    assert code == 0
    assert report["command"] == "synth"
    assert "config_hash" in report and "timings_ms" in report
    assert report["result"]["joints"] == 12


def test_pose_zero_motion_reproduces_rest(rig_dir, capsys, tmp_path):
    import rigbridge.io as rio
    from rigbridge.rig import MotionSequence

    rig = rio.load_rig(rig_dir)
    seq = MotionSequence(fps=30.0, rotations=np.zeros((2, rig.num_joints, 3)))
    rio.save_motion(seq, tmp_path / "zero.json")
    out_dir = tmp_path / "posed"
    code, _ = _run(
        capsys,
        ["pose", "--rig", str(rig_dir), "--motion", str(tmp_path / "zero.json"),
         "--out", str(out_dir), "--no-correctives"],
    )
    assert code == 0
    mesh = load_obj(out_dir / "frame_0000.obj")
    assert np.abs(mesh.vertices - rig.mesh.vertices).max() < 1e-5  # OBJ text precision


def test_invert_round_trip_end_to_end(rig_dir, capsys, tmp_path):
    out_dir = tmp_path / "posed"
    code, _ = _run(
        capsys,
        ["pose", "--rig", str(rig_dir), "--motion", str(rig_dir / "motion.json"),
         "--out", str(out_dir), "--no-correctives"],
    )
    assert code == 0
    code, report = _run(
        capsys,
        ["invert", "--rig", str(rig_dir), "--input", str(out_dir),
         "--out", str(tmp_path / "rec.json"), "--mode", "analytical",
         "--schedule", "body:2,finger:1,global:1"],
    )
    assert code == 0
    assert report["result"]["mean_vertex_error_mm"] < 2.0
    rec = load_motion(tmp_path / "rec.json")
    assert len(rec) == 12
    assert (tmp_path / "rec.diagnostics.json").is_file()


def test_transfer_unknown_topology_exit_2(rig_dir, capsys, tmp_path):
    src = tmp_path / "src.obj"
    import rigbridge.io as rio

    rig = rio.load_rig(rig_dir)
    save_obj(src, rig.mesh.vertices, rig.mesh.faces)
    code = main(
        ["transfer", "--rig", str(rig_dir), "--source", str(src), "--source-topology", "nope"]
    )
    assert code == 2


def test_unknown_flag_rejected(rig_dir):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--out", "/tmp/x", "--definitely-not-a-flag"])
    assert exc.value.code == 2


def test_metrics_between_meshes(rig_dir, capsys, tmp_path):
    import rigbridge.io as rio

    rig = rio.load_rig(rig_dir)
    a, b = tmp_path / "a.obj", tmp_path / "b.obj"
    save_obj(a, rig.mesh.vertices, rig.mesh.faces)
    save_obj(b, rig.mesh.vertices + np.float32([0.001, 0, 0]), rig.mesh.faces)
    code, report = _run(capsys, ["metrics", "--a", str(a), "--b", str(b)])
    assert code == 0
    assert abs(report["result"]["overall"]["mean_mm"] - 1.0) < 1e-3


def test_precompute_then_transfer(rig_dir, capsys, tmp_path):
    import rigbridge.io as rio

    rig = rio.load_rig(rig_dir)
    src = tmp_path / "source.obj"
    save_obj(src, rig.mesh.vertices, rig.mesh.faces)
    out_rig = tmp_path / "rig2"
    code, report = _run(
        capsys,
        ["precompute", "--rig", str(rig_dir), "--source", str(src),
         "--source-topology", "selfsame", "--out", str(out_rig)],
    )
    assert code == 0
    assert report["result"]["mean_reconstruction_error"] < 1e-6
    code, report = _run(
        capsys,
        ["transfer", "--rig", str(out_rig), "--source", str(src),
         "--source-topology", "selfsame", "--out", str(tmp_path / "transferred.obj")],
    )
    assert code == 0
    out = load_obj(tmp_path / "transferred.obj")
    assert np.abs(out.vertices - rig.mesh.vertices).max() < 1e-5


def test_fit_skel_emits_state_json(rig_dir, capsys, tmp_path):
    code, report = _run(
        capsys,
        ["fit-skel", "--rig", str(rig_dir), "--out", str(tmp_path / "skel.json")],
    )
    assert code == 0
    state = json.loads((tmp_path / "skel.json").read_text())
    assert len(state["names"]) == 12
    assert np.asarray(state["rotations"]).shape == (12, 3, 3)


def test_bench_runs_and_reports(rig_dir, capsys):
    code, report = _run(
        capsys,
        ["bench", "--rig", str(rig_dir), "--stage", "pose", "--batches", "1,4", "--reps", "2"],
    )
    assert code == 0
    rows = report["result"]["rows"]
    assert [r["batch"] for r in rows] == [1, 4]


def test_cli_idempotent_hashes(rig_dir, capsys, tmp_path):
    argv = ["fit-skel", "--rig", str(rig_dir)]
    code1, r1 = _run(capsys, argv)
    code2, r2 = _run(capsys, argv)
    assert code1 == code2 == 0
    assert r1["config_hash"] == r2["config_hash"]
    assert r1["result"] == r2["result"]


def test_table_format(rig_dir, capsys):
    code = main(["--format", "table", "fit-skel", "--rig", str(rig_dir)])
    out = capsys.readouterr().out
    assert code == 0
    assert "command: fit-skel" in out
