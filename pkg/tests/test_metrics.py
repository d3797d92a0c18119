import numpy as np
import pytest

from rigbridge.errors import EmptySelection, SizeMismatch, TooFewFrames
from rigbridge.metrics import (
    closest_point_error,
    region_breakdown,
    temporal_stability,
    vertex_error_stats,
)
from rigbridge.synth import closest_point_brute


def test_identical_inputs_zero_stats():
    a = np.random.default_rng(0).normal(size=(100, 3))
    s = vertex_error_stats(a, a.copy())
    assert s.mean == s.median == s.p95 == s.max == 0.0
    assert s.count == 100


def test_constant_offset():
    a = np.zeros((50, 3))
    b = a + np.array([0.003, 0.0, 0.0])
    s = vertex_error_stats(a, b)
    assert abs(s.mean - 0.003) < 1e-12
    assert abs(s.median - 0.003) < 1e-12
    assert abs(s.p95 - 0.003) < 1e-12
    assert abs(s.max - 0.003) < 1e-12


def test_mixed_offsets_interpolated_order_stats():
    # 50 vertices at 1 mm, 50 at 10 mm: median interpolates to 5.5 mm
    a = np.zeros((100, 3))
    b = a.copy()
    b[:50, 0] = 0.001
    b[50:, 0] = 0.010
    s = vertex_error_stats(a, b)
    assert abs(s.median - 0.0055) < 1e-12
    assert abs(s.max - 0.010) < 1e-12
    # P95 with linear interpolation over sorted order statistics
    expected_p95 = np.percentile(np.linalg.norm(b - a, axis=1), 95.0)
    assert abs(s.p95 - expected_p95) < 1e-15


def test_stats_invariants_hold():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(200, 3))
    b = a + rng.normal(scale=0.01, size=(200, 3))
    s = vertex_error_stats(a, b)
    assert s.mean <= s.max and s.median <= s.p95 <= s.max
    assert s.mean >= 0


def test_permutation_invariance():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(64, 3))
    b = a + rng.normal(scale=0.02, size=(64, 3))
    perm = rng.permutation(64)
    s1 = vertex_error_stats(a, b)
    s2 = vertex_error_stats(a[perm], b[perm])
    assert s1 == s2


def test_masked_equals_prefiltered():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(80, 3))
    b = a + rng.normal(scale=0.01, size=(80, 3))
    mask = rng.uniform(size=80) > 0.5
    assert vertex_error_stats(a, b, mask) == vertex_error_stats(a[mask], b[mask])


def test_size_mismatch():
    with pytest.raises(SizeMismatch):
        vertex_error_stats(np.zeros((3, 3)), np.zeros((4, 3)))


def test_region_breakdown(rig):
    rng = np.random.default_rng(4)
    a = rig.mesh.vertices.astype(np.float64)
    b = a + rng.normal(scale=0.001, size=a.shape)
    out = region_breakdown(a, b, rig.mesh.regions)
    assert "all" in out and "body" in out and "hands" in out
    assert out["all"].count == rig.num_vertices


# -- closest point ----------------------------------------------------------------


def test_closest_point_on_surface_zero(rig):
    s = closest_point_error(rig.mesh.vertices.astype(np.float64)[::30], rig.mesh)
    assert s.max < 1e-9


def test_closest_point_normal_offset(rig):
    v = rig.mesh.vertices.astype(np.float64)
    f = rig.mesh.faces
    normals = np.zeros_like(v)
    fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    for i in range(3):
        np.add.at(normals, f[:, i], fn)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    queries = (v + 0.002 * normals)[::17]
    s = closest_point_error(queries, rig.mesh)
    assert abs(s.mean - 0.002) / 0.002 < 0.05
    brute_d, _ = closest_point_brute(v, f.astype(np.int64), queries)
    assert abs(s.mean - brute_d.mean()) < 1e-9


def test_closest_point_all_masked(rig):
    with pytest.raises(EmptySelection):
        closest_point_error(
            rig.mesh.vertices.astype(np.float64)[:10],
            rig.mesh,
            exclusion_mask=np.ones(10, dtype=bool),
        )


# -- temporal stability ----------------------------------------------------------------


def test_temporal_constant_sequence():
    seq = np.full((5, 100), 0.001)
    out = temporal_stability(seq)
    assert out["max_delta"] == 0.0 and out["mean_delta"] == 0.0


def test_temporal_alternating_means():
    seq = np.zeros((6, 10))
    seq[1::2] = 0.002
    seq[0::2] = 0.001
    out = temporal_stability(seq)
    assert abs(out["max_delta"] - 1.0) < 1e-12  # 1 mm/frame
    assert out["unit"] == "mm_per_frame"


def test_temporal_rotation_steps():
    from rigbridge.rotations import axis_angle_to_matrix

    angles = np.deg2rad(np.array([0.0, 1.0, 2.0, 4.0]))
    rots = axis_angle_to_matrix(np.stack([np.zeros(4), np.zeros(4), angles], axis=1))
    out = temporal_stability(rots)
    assert out["unit"] == "deg_per_frame"
    assert abs(out["max_delta"] - 2.0) < 1e-9


def test_temporal_too_few_frames():
    with pytest.raises(TooFewFrames):
        temporal_stability(np.zeros((1, 10)))


def test_temporal_ns_halves_svd_on_fixture():
    from rigbridge.inversion import newton_schulz_polar
    from rigbridge.synth import coplanar_fixture

    fx = coplanar_fixture(seed=0)
    svd_path, ns_path = [], []
    R_cur = np.eye(3)
    for t in range(fx.src.shape[0]):
        H = fx.dst[t].T @ fx.src[t]
        U, S, Vt = np.linalg.svd(H)
        D = np.eye(3)
        D[2, 2] = np.sign(np.linalg.det(U @ Vt))
        svd_path.append(U @ D @ Vt)
        R_cur = newton_schulz_polar(H, R_cur).rotation
        ns_path.append(R_cur)
    svd = temporal_stability(np.array(svd_path))
    ns = temporal_stability(np.array(ns_path))
    assert ns["max_delta"] <= 0.5 * svd["max_delta"]
