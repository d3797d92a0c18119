import json
import os
from pathlib import Path

import numpy as np
import pytest

from rigbridge.errors import (
    IoFailure,
    JointCountMismatch,
    MalformedAsset,
    MalformedMotion,
    UnitMissing,
    ValidationFailure,
)
from rigbridge.io import load_motion, load_obj, load_rig, save_motion, save_obj, save_rig
from rigbridge.rig import Mesh, MotionSequence, PoseFrame, RigAsset, Skeleton, SkinningWeights
from rigbridge.synth import SynthConfig, make_rig, sample_motion


def test_round_trip_bit_exact(synth, tmp_path):
    save_rig(synth.rig, tmp_path / "rig")
    loaded = load_rig(tmp_path / "rig")
    assert np.array_equal(loaded.mesh.vertices, synth.rig.mesh.vertices)
    assert np.array_equal(loaded.mesh.faces, synth.rig.mesh.faces)
    assert np.array_equal(loaded.mesh.regions, synth.rig.mesh.regions)
    assert np.array_equal(loaded.skeleton.bind_rotations, synth.rig.skeleton.bind_rotations)
    assert np.array_equal(loaded.skeleton.bind_translations, synth.rig.skeleton.bind_translations)
    assert np.array_equal(loaded.weights.values, synth.rig.weights.values)
    assert np.array_equal(loaded.weights.indices, synth.rig.weights.indices)
    assert loaded.skeleton.names == synth.rig.skeleton.names


def test_round_trip_correctives_bit_exact(corrective_synth, tmp_path):
    save_rig(corrective_synth.rig, tmp_path / "rig")
    loaded = load_rig(tmp_path / "rig")
    net0, net1 = corrective_synth.rig.correctives, loaded.correctives
    assert np.array_equal(net0.stage1_weight, net1.stage1_weight)
    assert np.array_equal(net0.stage1_bias, net1.stage1_bias)
    assert np.array_equal(net0.stage2_weight, net1.stage2_weight)
    assert np.array_equal(net0.masks, net1.masks)


def test_generated_counts_match_generator_config(synth, tmp_path):
    # counts read back from the generator, not hardcoded
    save_rig(synth.rig, tmp_path / "rig")
    loaded = load_rig(tmp_path / "rig")
    assert loaded.num_vertices == synth.rig.num_vertices
    assert loaded.num_joints == synth.rig.num_joints == 12


def test_unit_scale_converts_once(synth, tmp_path):
    save_rig(synth.rig, tmp_path / "rig")
    manifest = json.loads((tmp_path / "rig" / "rig.json").read_text())
    manifest["unit_scale"] = 0.01  # pretend the file is in centimeters
    (tmp_path / "rig" / "rig.json").write_text(json.dumps(manifest))
    loaded = load_rig(tmp_path / "rig")
    ratio = loaded.mesh.vertices[10, 1] / synth.rig.mesh.vertices[10, 1]
    assert abs(ratio - 0.01) < 1e-6
    assert np.allclose(
        loaded.skeleton.bind_translations, synth.rig.skeleton.bind_translations * 0.01
    )


def test_missing_unit_scale(synth, tmp_path):
    save_rig(synth.rig, tmp_path / "rig")
    manifest = json.loads((tmp_path / "rig" / "rig.json").read_text())
    del manifest["unit_scale"]
    (tmp_path / "rig" / "rig.json").write_text(json.dumps(manifest))
    with pytest.raises(UnitMissing):
        load_rig(tmp_path / "rig")


def test_weight_sum_violation_named(synth, tmp_path):
    save_rig(synth.rig, tmp_path / "rig")
    values = np.fromfile(tmp_path / "rig" / "weight_values.bin", dtype="<f4")
    values[:3] *= 0.5  # first vertex row sums to ~0.9
    values.tofile(tmp_path / "rig" / "weight_values.bin")
    with pytest.raises(ValidationFailure, match="weights sum"):
        load_rig(tmp_path / "rig")


def test_cyclic_hierarchy_named(synth, tmp_path):
    save_rig(synth.rig, tmp_path / "rig")
    manifest = json.loads((tmp_path / "rig" / "rig.json").read_text())
    manifest["skeleton"]["parents"][1] = 5  # parent after child: cycle/unsorted
    (tmp_path / "rig" / "rig.json").write_text(json.dumps(manifest))
    with pytest.raises(ValidationFailure, match="hierarchy cycle"):
        load_rig(tmp_path / "rig")


def test_malformed_manifest(tmp_path):
    with pytest.raises(MalformedAsset):
        load_rig(tmp_path / "nope")
    (tmp_path / "rig.json").write_text("{not json")
    with pytest.raises(MalformedAsset):
        load_rig(tmp_path)


def test_save_to_unwritable_path(synth, tmp_path):
    # a path under a regular file can never be created (root ignores chmod)
    blocker = tmp_path / "blocker.txt"
    blocker.write_text("x")
    with pytest.raises(IoFailure):
        save_rig(synth.rig, blocker / "rig")


def test_validation_is_total_no_partial_assets(synth, tmp_path):
    save_rig(synth.rig, tmp_path / "rig")
    blob = np.fromfile(tmp_path / "rig" / "mesh_vertices.bin", dtype="<f4")
    blob[0] = np.nan
    blob.tofile(tmp_path / "rig" / "mesh_vertices.bin")
    with pytest.raises(ValidationFailure, match="finite"):
        load_rig(tmp_path / "rig")


def test_loaded_arrays_immutable(synth, tmp_path):
    save_rig(synth.rig, tmp_path / "rig")
    loaded = load_rig(tmp_path / "rig")
    with pytest.raises(ValueError):
        loaded.mesh.vertices[0, 0] = 0.0
    with pytest.raises(ValueError):
        loaded.weights.values[0] = 2.0


# -- motion ------------------------------------------------------------------


def test_motion_round_trip(rig, tmp_path):
    seq = sample_motion(rig, seed=3, frames=100)
    save_motion(seq, tmp_path / "walk.json")
    loaded = load_motion(tmp_path / "walk.json", expected_joints=rig.num_joints)
    assert len(loaded) == 100
    assert np.array_equal(
        loaded.rotations.astype(np.float32), seq.rotations.astype(np.float32)
    )
    assert loaded.fps == seq.fps


def test_motion_joint_count_mismatch(rig, tmp_path):
    seq = MotionSequence(fps=30.0, rotations=np.zeros((4, rig.num_joints - 1, 3)))
    save_motion(seq, tmp_path / "bad.json")
    with pytest.raises(JointCountMismatch):
        load_motion(tmp_path / "bad.json", expected_joints=rig.num_joints)


def test_empty_motion_valid(rig, tmp_path):
    seq = MotionSequence(fps=30.0, rotations=np.zeros((0, rig.num_joints, 3)))
    save_motion(seq, tmp_path / "empty.json")
    loaded = load_motion(tmp_path / "empty.json", expected_joints=rig.num_joints)
    assert len(loaded) == 0


def test_motion_malformed(tmp_path):
    (tmp_path / "m.json").write_text("{}")
    with pytest.raises(MalformedMotion):
        load_motion(tmp_path / "m.json")


# -- OBJ ------------------------------------------------------------------------


def test_obj_round_trip(rig, tmp_path):
    save_obj(tmp_path / "m.obj", rig.mesh.vertices, rig.mesh.faces)
    mesh = load_obj(tmp_path / "m.obj")
    assert mesh.num_vertices == rig.num_vertices
    assert np.array_equal(mesh.faces, rig.mesh.faces)
    assert np.abs(mesh.vertices - rig.mesh.vertices).max() < 1e-6


def test_obj_quad_triangulation(tmp_path):
    (tmp_path / "q.obj").write_text(
        "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"
    )
    mesh = load_obj(tmp_path / "q.obj")
    assert mesh.num_faces == 2


# -- pose frame validation ------------------------------------------------------


def test_pose_frame_bad_matrix():
    bad = np.tile(np.eye(3) * 2.0, (3, 1, 1))
    with pytest.raises(ValidationFailure, match="rotation"):
        PoseFrame(rotations=bad, encoding="matrix").validate(3)


def test_pose_frame_count_mismatch():
    with pytest.raises(ValidationFailure, match="count"):
        PoseFrame(rotations=np.zeros((5, 3))).validate(7)
