import numpy as np
import pytest

from rigbridge.errors import InvalidConfig, OutOfRange
from rigbridge.rotations import geodesic_angle
from rigbridge.synth import (
    SynthConfig,
    coplanar_fixture,
    make_identity_variant,
    make_rig,
    remesh_variant,
    sample_motion,
    sample_pose,
)
from rigbridge.synthmesh import check_closed


def test_default_rig_closed_single_surface(synth):
    rep = check_closed(
        synth.rig.mesh.vertices.astype(np.float64), synth.rig.mesh.faces.astype(np.int64)
    )
    assert rep["euler"] == 2
    assert rep["volume"] > 0
    assert synth.rig.num_joints == 12


def test_fingers_rig_valid(finger_synth):
    assert finger_synth.rig.num_joints == 22
    names = finger_synth.rig.skeleton.names
    assert sum(n.startswith("finger_") for n in names) == 10
    rep = check_closed(
        finger_synth.rig.mesh.vertices.astype(np.float64),
        finger_synth.rig.mesh.faces.astype(np.int64),
    )
    assert rep["euler"] == 2


def test_zero_limb_single_joint():
    s = make_rig(SynthConfig(arms=0, legs=0))
    assert s.rig.num_joints == 1
    assert check_closed(
        s.rig.mesh.vertices.astype(np.float64), s.rig.mesh.faces.astype(np.int64)
    )["euler"] == 2


def test_dense_chain_matches_paper_joint_count():
    s = make_rig(SynthConfig(dense_chain=True))
    assert s.rig.num_joints == 77


def test_determinism_bitwise():
    a = make_rig(SynthConfig(seed=7))
    b = make_rig(SynthConfig(seed=7))
    assert np.array_equal(a.rig.mesh.vertices, b.rig.mesh.vertices)
    assert np.array_equal(a.rig.weights.values, b.rig.weights.values)
    assert np.array_equal(a.rig.skeleton.bind_rotations, b.rig.skeleton.bind_rotations)


def test_every_generated_asset_validates(synth, finger_synth):
    synth.rig.validate()
    finger_synth.rig.validate()


def test_invalid_config():
    with pytest.raises(InvalidConfig):
        SynthConfig(radial_segments=3).validate()
    with pytest.raises(InvalidConfig):
        SynthConfig(arms=1).validate()


def test_regions_present(synth):
    regions = synth.rig.mesh.regions
    assert regions is not None
    # default rig: head / hands / feet / body all populated
    for name in ("body", "hands", "feet", "head"):
        assert synth.rig.mesh.region_mask(name).sum() > 0


# -- identity variants ---------------------------------------------------------


def test_identity_scales_one_is_identity(synth):
    rest, joints = make_identity_variant(synth)
    assert np.abs(rest - synth.rig.bind_vertices()).max() < 1e-12
    assert np.abs(joints - synth.gt_joints).max() < 1e-12


def test_identity_arm_stretch_exact(synth):
    rest, joints = make_identity_variant(synth, length_scales={"l_forearm": 1.15})
    names = synth.rig.skeleton.names
    a, b = names.index("l_upper_arm"), names.index("l_forearm")
    old = np.linalg.norm(synth.gt_joints[b] - synth.gt_joints[a])
    new = np.linalg.norm(joints[b] - joints[a])
    assert abs(new / old - 1.15) < 1e-12


def test_identity_girth_preserves_joints(synth):
    rest, joints = make_identity_variant(synth, girth_scales={"l_shin": 1.3})
    assert np.abs(joints - synth.gt_joints).max() < 1e-12
    # radial distances of vertices owned purely by the scaled bone scale by 1.3
    W = synth.rig.weights.to_dense(synth.rig.num_joints)
    k = synth.rig.skeleton.names.index("l_shin")
    pure = W[:, k] > 0.999
    assert pure.sum() > 10
    d = synth.bones[k, 1] - synth.bones[k, 0]
    d = d / np.linalg.norm(d)
    V = synth.rig.bind_vertices()
    for name, arr in (("old", V), ("new", rest)):
        rel = arr[pure] - synth.bones[k, 0]
        radial = rel - np.outer(rel @ d, d)
        if name == "old":
            r_old = np.linalg.norm(radial, axis=1)
        else:
            r_new = np.linalg.norm(radial, axis=1)
    # residual <=1e-3 other-joint weight dilutes the ratio accordingly
    assert np.abs(r_new / r_old - 1.3).max() < 1e-3


def test_identity_out_of_range(synth):
    with pytest.raises(OutOfRange):
        make_identity_variant(synth, length_scales={"l_forearm": 2.5})
    with pytest.raises(OutOfRange):
        make_identity_variant(synth, girth_scales={"nope": 1.1})


# -- remeshing -------------------------------------------------------------------


def test_subdivide_4x_faces(synth):
    source, wrap = remesh_variant(synth, "subdivide")
    assert source.num_faces == 4 * synth.rig.mesh.num_faces
    # original vertices preserved bitwise at the head of the array
    assert np.array_equal(
        source.vertices[: synth.rig.num_vertices], synth.rig.mesh.vertices
    )


def test_decimate_fewer_vertices_still_closed(synth):
    source, wrap = remesh_variant(synth, "decimate")
    assert source.num_vertices < synth.rig.num_vertices
    rep = check_closed(source.vertices.astype(np.float64), source.faces.astype(np.int64))
    assert rep["euler"] == 2 and rep["volume"] > 0


def test_decimate_wrap_gap_small_but_nonzero(synth):
    from rigbridge.metrics import closest_point_error

    source, wrap = remesh_variant(synth, "decimate")
    stats = closest_point_error(wrap.vertices.astype(np.float64), source)
    assert 0.0 < stats.mean < 0.002  # >0 (curved wall) but under 2 mm


# -- sampling ----------------------------------------------------------------------


def test_pose_zero_limits_identity(rig):
    pose = sample_pose(rig, seed=5, limit_deg=0.0)
    assert np.abs(pose.rotations).max() == 0.0


def test_pose_deterministic(rig):
    a = sample_pose(rig, seed=12)
    b = sample_pose(rig, seed=12)
    assert np.array_equal(a.rotations, b.rotations)
    assert np.array_equal(a.root_translation, b.root_translation)


def test_pose_respects_limits(rig):
    pose = sample_pose(rig, seed=13, limit_deg=30.0)
    angles = np.linalg.norm(pose.rotations, axis=1)
    assert angles.max() <= np.deg2rad(30.0) + 1e-12


def test_motion_smoothness(rig):
    seq = sample_motion(rig, seed=3, frames=200, smoothness=0.9)
    mats = np.stack([seq.frame(i).rotation_matrices() for i in range(len(seq))])
    steps = np.rad2deg(geodesic_angle(mats[:-1], mats[1:]))
    assert steps.max() < 5.0


# -- coplanar fixture ------------------------------------------------------------------


def test_fixture_svd_pops_at_crossing():
    fx = coplanar_fixture(seed=0)
    path = []
    for t in range(fx.src.shape[0]):
        H = fx.dst[t].T @ fx.src[t]
        U, S, Vt = np.linalg.svd(H)
        D = np.eye(3)
        D[2, 2] = np.sign(np.linalg.det(U @ Vt))
        path.append(U @ D @ Vt)
    steps = np.rad2deg(geodesic_angle(np.array(path[:-1]), np.array(path[1:])))
    assert steps.max() > 90.0


def test_fixture_well_conditioned_solvers_agree():
    from rigbridge.inversion import newton_schulz_polar

    fx = coplanar_fixture(seed=0, ramp=(1.0, 2.0))
    R_cur = np.eye(3)
    for t in range(fx.src.shape[0]):
        H = fx.dst[t].T @ fx.src[t]
        U, S, Vt = np.linalg.svd(H)
        D = np.eye(3)
        D[2, 2] = np.sign(np.linalg.det(U @ Vt))
        svd = U @ D @ Vt
        res = newton_schulz_polar(H, R_cur)
        R_cur = res.rotation
        assert res.flag == "converged"
        assert np.abs(R_cur - svd).max() < 1e-6


def test_fixture_third_singular_value_sweeps_zero():
    fx = coplanar_fixture(seed=0)
    sigmas = []
    for t in range(fx.src.shape[0]):
        H = fx.dst[t].T @ fx.src[t]
        sigmas.append(np.linalg.svd(H, compute_uv=False)[2])
    sigmas = np.array(sigmas)
    mid = len(sigmas) // 2
    assert sigmas[mid] < 0.05 * sigmas[0]
    assert sigmas[mid] < 0.05 * sigmas[-1]
