"""Procedural rigs with fully known ground truth.

Everything algorithmic under test elsewhere gets an independent oracle here:
rigs are built from closed-form capsule geometry (joint positions, bones and
weights all known by construction), the reference skinner is a deliberately
naive dense implementation, and the brute-force closest-point routine uses a
different algorithm than the production BVH path.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import InvalidConfig, OutOfRange
from .rig import (
    REGION_NAMES,
    CorrectivesNet,
    Mesh,
    MotionSequence,
    PoseFrame,
    RigAsset,
    Skeleton,
    SkinningWeights,
)
from .rotations import axis_angle_to_matrix, matrix_to_rot6d, random_rotation
from .synthmesh import MeshBuild, add_tube, check_closed, decimate_rings, subdivide, weld_tube


@dataclass
class SynthConfig:
    seed: int = 7
    radial_segments: int = 14
    axial_density: float = 28.0  # rings per meter of tube
    cap_rings: int = 3
    arms: int = 2
    legs: int = 2
    fingers: int = 0  # per hand
    dense_chain: bool = False  # 77-joint single-capsule chain variant
    torso_radius: float = 0.13
    leg_radius: float = 0.055
    arm_radius: float = 0.045
    finger_radius: float = 0.012
    pose_limit_deg: float = 45.0

    def validate(self) -> "SynthConfig":
        if self.radial_segments < 6:
            raise InvalidConfig("radial_segments must be >= 6")
        if self.axial_density < 4:
            raise InvalidConfig("axial_density must be >= 4")
        if self.cap_rings < 2:
            raise InvalidConfig("cap_rings must be >= 2")
        if self.arms not in (0, 2) or self.legs not in (0, 2):
            raise InvalidConfig("arms and legs must be 0 or 2")
        if not 0 <= self.fingers <= 5:
            raise InvalidConfig("fingers per hand must be in [0, 5]")
        if min(self.torso_radius, self.leg_radius, self.arm_radius, self.finger_radius) <= 0:
            raise InvalidConfig("radii must be positive")
        return self


@dataclass
class SynthRig:
    """Generated rig plus the ground truth the tests need."""

    rig: RigAsset
    config: SynthConfig
    bones: np.ndarray  # (J, 2, 3): bone start (= joint) and end per joint
    bone_radii: np.ndarray  # (J,)
    build: MeshBuild = field(repr=False, default=None)
    topology: dict = field(default_factory=dict)

    @property
    def gt_joints(self) -> np.ndarray:
        return self.rig.skeleton.bind_translations.copy()


_HUMANOID = {
    # name: (parent, joint position, bone end, radius key)
    "pelvis": (-1, (0.0, 0.93, 0.0), "spine", "torso"),
    "spine": (0, (0.0, 1.12, 0.0), "chest", "torso"),
    "chest": (1, (0.0, 1.31, 0.0), "head", "torso"),
    "head": (2, (0.0, 1.50, 0.0), (0.0, 1.70, 0.0), "torso"),
}


def _axial_rings(density: float, length: float) -> int:
    return max(3, int(round(density * length)))


def _build_humanoid(cfg: SynthConfig):
    """Assemble the welded capsule body; returns (build, joints, bones...)."""
    names = ["pelvis", "spine", "chest", "head"]
    parents = [-1, 0, 1, 2]
    joints = [
        np.array([0.0, 0.93, 0.0]),
        np.array([0.0, 1.12, 0.0]),
        np.array([0.0, 1.31, 0.0]),
        np.array([0.0, 1.50, 0.0]),
    ]
    ends = [joints[1], joints[2], joints[3], np.array([0.0, 1.70, 0.0])]
    radii = [cfg.torso_radius] * 4

    build = MeshBuild()
    torso_p0 = np.array([0.0, 0.88, 0.0])
    torso_p1 = np.array([0.0, 1.60, 0.0])
    add_tube(
        build,
        torso_p0,
        torso_p1,
        cfg.torso_radius,
        cfg.radial_segments,
        _axial_rings(cfg.axial_density, 0.72),
        cfg.cap_rings,
        taper=0.0,
        bulge=0.06,
    )

    def limb(side: float, kind: str):
        nonlocal names, parents, joints, ends, radii
        if kind == "leg":
            top = np.array([side * 0.07, 0.84, 0.0])
            knee = np.array([side * 0.07, 0.48, 0.0])
            ankle = np.array([side * 0.07, 0.12, 0.0])
            prefix = "l_" if side > 0 else "r_"
            tube = add_tube(
                build,
                top,
                ankle,
                cfg.leg_radius,
                cfg.radial_segments,
                _axial_rings(cfg.axial_density, 0.72),
                cfg.cap_rings,
                taper=0.3,
                bulge=0.08,
            )
            weld_tube(build, tube, top)
            base = len(names)
            names += [prefix + "thigh", prefix + "shin"]
            parents += [0, base]
            joints += [top, knee]
            ends += [knee, ankle]
            radii += [cfg.leg_radius] * 2
        else:
            shoulder = np.array([side * 0.155, 1.50, 0.0])
            elbow = np.array([side * 0.38, 1.50, 0.0])
            wrist = np.array([side * 0.60, 1.50, 0.0])
            prefix = "l_" if side > 0 else "r_"
            tube = add_tube(
                build,
                shoulder,
                wrist,
                cfg.arm_radius,
                cfg.radial_segments,
                _axial_rings(cfg.axial_density, 0.445),
                cfg.cap_rings,
                taper=0.25,
                bulge=0.08,
            )
            weld_tube(build, tube, shoulder)
            base = len(names)
            names += [prefix + "upper_arm", prefix + "forearm"]
            parents += [2, base]
            joints += [np.array([side * 0.16, 1.50, 0.0]), elbow]
            ends += [elbow, wrist]
            radii += [cfg.arm_radius] * 2
            forearm_idx = base + 1
            for f in range(cfg.fingers):
                bx = side * (0.40 + 0.045 * f)
                b0 = np.array([bx, 1.50, 0.040])
                b1 = np.array([bx, 1.50, 0.110])
                ftube = add_tube(
                    build,
                    b0,
                    b1,
                    cfg.finger_radius,
                    max(6, cfg.radial_segments // 2),
                    4,
                    2,
                    taper=0.2,
                    bulge=0.1,
                )
                weld_tube(build, ftube, b0)
                names.append(f"finger_{prefix}{f}")
                parents.append(forearm_idx)
                joints.append(b0)
                ends.append(b1)
                radii.append(cfg.finger_radius)

    if cfg.legs:
        limb(+1.0, "leg")
        limb(-1.0, "leg")
    if cfg.arms:
        limb(+1.0, "arm")
        limb(-1.0, "arm")
    return build, names, parents, joints, ends, radii


def _build_simple(cfg: SynthConfig):
    """Single capsule: one joint (zero-limb) or a dense 77-joint chain."""
    build = MeshBuild()
    if cfg.dense_chain:
        J = 77
        p0 = np.array([0.0, 0.0, 0.0])
        p1 = np.array([0.0, 1.54, 0.0])
        add_tube(
            build, p0, p1, 0.08, cfg.radial_segments,
            _axial_rings(cfg.axial_density, 1.54), cfg.cap_rings, bulge=0.05,
        )
        step = (p1 - p0) / J
        joints = [p0 + k * step for k in range(J)]
        ends = [p0 + (k + 1) * step for k in range(J)]
        names = [f"chain_{k:02d}" for k in range(J)]
        parents = [-1] + list(range(J - 1))
        radii = [0.08] * J
    else:
        p0 = np.array([0.0, 0.88, 0.0])
        p1 = np.array([0.0, 1.60, 0.0])
        add_tube(
            build, p0, p1, cfg.torso_radius, cfg.radial_segments,
            _axial_rings(cfg.axial_density, 0.72), cfg.cap_rings, bulge=0.06,
        )
        names, parents = ["pelvis"], [-1]
        joints, ends = [p0 + np.array([0.0, 0.05, 0.0])], [p1]
        radii = [cfg.torso_radius]
    return build, names, parents, joints, ends, radii


def _segment_distances(points: np.ndarray, seg0: np.ndarray, seg1: np.ndarray):
    """Distance of each point to the segment, plus the axial parameter t."""
    d = seg1 - seg0
    denom = float(d @ d)
    t = np.clip(((points - seg0) @ d) / denom, 0.0, 1.0)
    closest = seg0 + t[:, None] * d
    return np.linalg.norm(points - closest, axis=1), t


def _skin_weights(vertices, bones, radii, max_influences=4):
    J = bones.shape[0]
    N = vertices.shape[0]
    scores = np.zeros((N, J))
    for k in range(J):
        dist, _ = _segment_distances(vertices, bones[k, 0], bones[k, 1])
        sigma = max(0.55 * radii[k], 0.02)
        scores[:, k] = np.exp(-((dist / sigma) ** 2))
    if J > max_influences:
        cut = np.partition(scores, J - max_influences, axis=1)[:, J - max_influences, None]
        scores[scores < cut] = 0.0
    rowmax = scores.max(axis=1, keepdims=True)
    scores[scores < 1e-4 * rowmax] = 0.0
    dense = scores / scores.sum(axis=1, keepdims=True)
    return SkinningWeights.from_dense(dense)


def _regions(vertices, bones, names, weights_dense):
    dominant = np.argmax(weights_dense, axis=1)
    labels = np.zeros(vertices.shape[0], dtype=np.int32)  # body
    for k, name in enumerate(names):
        sel = dominant == k
        if not np.any(sel):
            continue
        _, t = _segment_distances(vertices[sel], bones[k, 0], bones[k, 1])
        if name.startswith("finger_"):
            labels[sel] = REGION_NAMES.index("hands")
        elif name.endswith("forearm"):
            idx = np.flatnonzero(sel)
            labels[idx[t > 0.7]] = REGION_NAMES.index("hands")
        elif name.endswith("shin"):
            idx = np.flatnonzero(sel)
            labels[idx[t > 0.7]] = REGION_NAMES.index("feet")
        elif name == "head" or name.startswith("chain_7"):
            labels[sel] = REGION_NAMES.index("head")
    return labels


def _bind_rotations(bones):
    J = bones.shape[0]
    R = np.empty((J, 3, 3))
    for k in range(J):
        x = bones[k, 1] - bones[k, 0]
        x = x / np.linalg.norm(x)
        helper = np.array([0.0, 0.0, 1.0]) if abs(x[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        y = np.cross(helper, x)
        y /= np.linalg.norm(y)
        z = np.cross(x, y)
        R[k] = np.stack([x, y, z], axis=1)
    return R


def make_rig(config: SynthConfig | None = None) -> SynthRig:
    """Generate a watertight capsule humanoid with known skeleton and weights.

    The default body has 12 joints (plus optional fingers); the mesh is one
    closed connected surface and the generator self-checks watertightness,
    Euler characteristic 2 and positive volume before returning.
    """
    cfg = (config or SynthConfig()).validate()
    if cfg.dense_chain or (cfg.arms == 0 and cfg.legs == 0):
        build, names, parents, joints, ends, radii = _build_simple(cfg)
    else:
        build, names, parents, joints, ends, radii = _build_humanoid(cfg)

    verts, faces, remap = build.arrays()
    report = check_closed(verts, faces)
    if report["euler"] != 2 or report["volume"] <= 0:
        raise InvalidConfig(f"generator self-check failed: {report}")
    n_comp, _ = connected_components(
        sp.csr_matrix(
            (np.ones(3 * faces.shape[0]), (
                np.concatenate([faces[:, 0], faces[:, 1], faces[:, 2]]),
                np.concatenate([faces[:, 1], faces[:, 2], faces[:, 0]]),
            )),
            shape=(verts.shape[0], verts.shape[0]),
        ),
        directed=False,
    )
    if n_comp != 1:
        raise InvalidConfig(f"generator produced {n_comp} components")

    bones = np.stack([np.stack([j, e]) for j, e in zip(joints, ends)])
    bone_radii = np.asarray(radii, dtype=np.float64)
    weights = _skin_weights(verts, bones, bone_radii)
    dense = weights.to_dense(len(names))
    if np.any(dense.sum(axis=0) <= 0):
        raise InvalidConfig("a joint received no skinned vertices")

    mesh = Mesh(
        vertices=verts.astype(np.float32),
        faces=faces.astype(np.int32),
        regions=_regions(verts, bones, names, dense),
    )
    skeleton = Skeleton(
        names=names,
        parents=np.asarray(parents, dtype=np.int32),
        bind_rotations=_bind_rotations(bones),
        bind_translations=np.stack(joints),
    )
    rig = RigAsset(mesh=mesh, skeleton=skeleton, weights=weights).validate()
    # remap ring metadata to compacted ids so decimation can run later
    for tube in build.tubes:
        tube.rings = [[int(remap[v]) if remap[v] >= 0 else -1 for v in ring] for ring in tube.rings]
        tube.apexes = [int(remap[a]) if remap[a] >= 0 else -1 for a in tube.apexes]
    compact = MeshBuild(
        vertices=[v for v in verts],
        faces=[tuple(int(x) for x in f) for f in faces],
        tubes=build.tubes,
        dead=set(),
        protected={int(remap[p]) for p in build.protected if remap[p] >= 0},
    )
    return SynthRig(rig=rig, config=cfg, bones=bones, bone_radii=bone_radii, build=compact)


def with_correctives(synth: SynthRig, net: CorrectivesNet) -> SynthRig:
    rig = RigAsset(
        mesh=synth.rig.mesh,
        skeleton=synth.rig.skeleton,
        weights=synth.rig.weights,
        correctives=net,
        correspondences=dict(synth.rig.correspondences),
        regressor_cache=synth.rig.regressor_cache,
    ).validate()
    return replace(synth, rig=rig)


# -- identity variants -------------------------------------------------------

def make_identity_variant(
    synth: SynthRig,
    length_scales: dict[str, float] | None = None,
    girth_scales: dict[str, float] | None = None,
):
    """Per-segment stretch/girth applied consistently to vertices and joints.

    ``length_scales[name]`` stretches the offset from the joint's parent (and
    a leaf joint's terminal bone); ``girth_scales[name]`` scales radial
    distance about the joint's bone axis, leaving joints in place. Returns
    (rest_vertices, ground_truth_joints).
    """
    skel = synth.rig.skeleton
    J = skel.num_joints
    length_scales = dict(length_scales or {})
    girth_scales = dict(girth_scales or {})
    for d in (length_scales, girth_scales):
        for name, s in d.items():
            if name not in skel.names:
                raise OutOfRange(f"unknown joint '{name}'")
            if not 0.5 <= s <= 2.0:
                raise OutOfRange(f"scale {s} for '{name}' outside [0.5, 2.0]")
    s_len = np.array([length_scales.get(n, 1.0) for n in skel.names])
    s_girth = np.array([girth_scales.get(n, 1.0) for n in skel.names])

    old_j = skel.bind_translations
    new_j = old_j.copy()
    for k in range(1, J):
        p = int(skel.parents[k])
        new_j[k] = new_j[p] + s_len[k] * (old_j[k] - old_j[p])

    children = skel.children()
    bones = synth.bones
    new_end = np.empty((J, 3))
    for k in range(J):
        if children[k]:
            new_end[k] = new_j[children[k][0]]
        else:
            new_end[k] = new_j[k] + s_len[k] * (bones[k, 1] - bones[k, 0])

    V = synth.rig.bind_vertices()
    W = synth.rig.weights.to_dense(J)
    out = np.zeros_like(V)
    for k in range(J):
        d = bones[k, 1] - bones[k, 0]
        d = d / np.linalg.norm(d)
        axial = np.linalg.norm(new_end[k] - new_j[k]) / np.linalg.norm(bones[k, 1] - bones[k, 0])
        P = np.outer(d, d)
        M = axial * P + s_girth[k] * (np.eye(3) - P)
        mapped = new_j[k] + (V - bones[k, 0]) @ M.T
        out += W[:, k : k + 1] * mapped
    return out, new_j


# -- remeshing ---------------------------------------------------------------

def remesh_variant(synth: SynthRig, mode: str) -> tuple[Mesh, Mesh]:
    """Produce a synthetic 'source topology' plus its exact wrap mesh.

    subdivide: one midpoint split (4x faces); the canonical vertices lie on
    the new surface by construction. decimate: every other interior tube ring
    removed and re-stitched; the canonical wrap then sits a fraction of a
    millimeter off the coarsened wall.
    """
    canonical = synth.rig.mesh
    if mode == "subdivide":
        vs, fs = subdivide(canonical.vertices.astype(np.float64), canonical.faces)
    elif mode in ("decimate", "decimate-lite"):
        if synth.build is None:
            raise InvalidConfig("rig carries no tube metadata for decimation")
        vs, fs = decimate_rings(synth.build)
    else:
        raise InvalidConfig(f"unknown remesh mode '{mode}'")
    source = Mesh(vertices=vs.astype(np.float32), faces=fs.astype(np.int32)).validate()
    wrap = Mesh(vertices=canonical.vertices.copy(), faces=canonical.faces.copy()).validate()
    return source, wrap


# -- pose / motion sampling ----------------------------------------------------

def sample_pose(
    rig: RigAsset,
    seed: int,
    limit_deg: float | None = None,
    root_translation: bool = True,
) -> PoseFrame:
    """Random axis-angle pose within per-joint angle limits."""
    if limit_deg is None:
        limit_deg = 45.0
    if limit_deg < 0:
        raise InvalidConfig("limit_deg must be >= 0")
    rng = np.random.default_rng(seed)
    J = rig.num_joints
    axes = rng.normal(size=(J, 3))
    axes /= np.maximum(np.linalg.norm(axes, axis=1, keepdims=True), 1e-12)
    angles = rng.uniform(0.0, np.deg2rad(limit_deg), size=(J, 1))
    t0 = rng.uniform(-0.1, 0.1, size=3) if root_translation else None
    return PoseFrame(rotations=axes * angles, encoding="axis_angle", root_translation=t0)


def sample_motion(
    rig: RigAsset,
    seed: int,
    frames: int,
    smoothness: float = 0.8,
    limit_deg: float | None = None,
    fps: float = 30.0,
) -> MotionSequence:
    """Low-pass-filtered random walk in per-joint axis-angle space."""
    if frames < 0 or not 0.0 <= smoothness <= 1.0:
        raise InvalidConfig("frames must be >= 0 and smoothness in [0, 1]")
    if limit_deg is None:
        limit_deg = 45.0
    rng = np.random.default_rng(seed)
    J = rig.num_joints
    steps = rng.normal(size=(frames + 1, J, 3))
    walk = np.cumsum(steps, axis=0)
    window = 1 + 2 * int(round(smoothness * 12))
    if window > 1:
        pad = np.pad(walk, ((window // 2, window // 2), (0, 0), (0, 0)), mode="edge")
        kernel = np.ones(window) / window
        walk = np.apply_along_axis(lambda m: np.convolve(m, kernel, mode="valid"), 0, pad)
    walk = walk[:frames] if frames else walk[:0]
    peak = np.abs(walk).max() if frames else 1.0
    if peak > 0:
        walk = walk * (np.deg2rad(limit_deg) / peak)
    trans = np.zeros((frames, 3))
    if frames:
        tw = np.cumsum(rng.normal(scale=0.01, size=(frames, 3)), axis=0)
        trans = tw - tw[0]
    return MotionSequence(
        fps=fps, rotations=walk, encoding="axis_angle", root_translations=trans
    )


# -- degenerate-covariance fixture --------------------------------------------

@dataclass
class CoplanarSweep:
    src: np.ndarray  # (F, n, 3)
    dst: np.ndarray  # (F, n, 3)
    gt_rotation: np.ndarray  # (3, 3)
    ramp: np.ndarray  # (F,)


def coplanar_fixture(
    seed: int, frames: int = 81, ramp: tuple[float, float] = (-1.0, 1.0), z_scale: float = 0.15
) -> CoplanarSweep:
    """Point-pair sweep whose covariance third singular value crosses zero.

    The source cloud is planar plus a z pattern scaled by a ramp through zero;
    targets are a fixed rotation of the true cloud plus fixed noise. SVD-based
    alignment flips by ~180 deg when det(H) changes sign at the crossing; an
    incremental polar solver tracks the constant ground-truth rotation.
    """
    rng = np.random.default_rng(seed)
    n = 24
    # A strip along x whose off-line spread (y and z patterns) is scaled by a
    # ramp through zero. Away from the crossing all three covariance channels
    # are healthy and any solver recovers the fixed true rotation. Inside the
    # crossing window only the strip axis is observed: the rotation about it
    # is resolved by per-frame noise, so a per-frame SVD decomposition spins
    # and sign-flips (the "popping"), while an incremental polar solver
    # declines the degenerate updates and carries its estimate through.
    line = np.linspace(-1.0, 1.0, n) * (1.0 + 0.05 * rng.standard_normal(n))
    alt = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    y_pattern = 0.4 * alt * (1.0 + 0.2 * rng.standard_normal(n))
    z_pattern = z_scale * np.roll(alt, 1) * (1.0 + 0.2 * rng.standard_normal(n))
    base = np.stack([line, np.zeros(n), np.zeros(n)], axis=1)
    base -= base.mean(axis=0)
    gt = random_rotation(rng)
    s = np.linspace(ramp[0], ramp[1], frames)
    src = np.empty((frames, n, 3))
    dst = np.empty((frames, n, 3))
    for t in range(frames):
        pts = base.copy()
        pts[:, 1] = s[t] * y_pattern
        pts[:, 2] = s[t] * z_pattern
        # independent measurement jitter on the two clouds: inside the window
        # their off-axis cross-covariance is pure noise
        src[t] = pts + 0.003 * rng.standard_normal((n, 3))
        dst[t] = pts @ gt.T + 0.004 * rng.standard_normal((n, 3))
    return CoplanarSweep(src=src, dst=dst, gt_rotation=gt, ramp=s)


# -- independent oracles -------------------------------------------------------

def reference_lbs(
    rest: np.ndarray,
    weights_dense: np.ndarray,
    global_mats: np.ndarray,
    bind_mats: np.ndarray,
) -> np.ndarray:
    """Naive dense skinning oracle: explicit per-joint 4x4 loop."""
    N = rest.shape[0]
    J = weights_dense.shape[1]
    out = np.zeros((N, 3))
    homo = np.concatenate([rest, np.ones((N, 1))], axis=1)
    for k in range(J):
        M = global_mats[k] @ np.linalg.inv(bind_mats[k])
        moved = homo @ M[:3].T
        out += weights_dense[:, k : k + 1] * moved
    return out


def closest_point_brute(vertices: np.ndarray, faces: np.ndarray, queries: np.ndarray):
    """Independent closest-point oracle: plane projection + edge clamping."""
    v = np.asarray(vertices, dtype=np.float64)
    a, b, c = v[faces[:, 0]], v[faces[:, 1]], v[faces[:, 2]]
    n = np.cross(b - a, c - a)
    nn = np.einsum("ij,ij->i", n, n)
    out_d = np.empty(queries.shape[0])
    out_f = np.empty(queries.shape[0], dtype=np.int64)
    for qi, q in enumerate(np.asarray(queries, dtype=np.float64)):
        # plane projection with barycentric inside test
        ap = q - a
        dist_plane = np.einsum("ij,ij->i", ap, n) / np.sqrt(np.maximum(nn, 1e-300))
        proj = q - dist_plane[:, None] * n / np.sqrt(np.maximum(nn, 1e-300))[:, None]
        # 2D barycentrics of proj
        v0, v1, v2 = c - a, b - a, proj - a
        d00 = np.einsum("ij,ij->i", v0, v0)
        d01 = np.einsum("ij,ij->i", v0, v1)
        d11 = np.einsum("ij,ij->i", v1, v1)
        d02 = np.einsum("ij,ij->i", v0, v2)
        d12 = np.einsum("ij,ij->i", v1, v2)
        denom = np.maximum(d00 * d11 - d01 * d01, 1e-300)
        u = (d11 * d02 - d01 * d12) / denom
        w = (d00 * d12 - d01 * d02) / denom
        inside = (u >= 0) & (w >= 0) & (u + w <= 1)
        best = np.where(inside, np.abs(dist_plane), np.inf)
        # edges
        for e0, e1 in ((a, b), (b, c), (c, a)):
            d = e1 - e0
            t = np.clip(np.einsum("ij,ij->i", q - e0, d) / np.einsum("ij,ij->i", d, d), 0, 1)
            pt = e0 + t[:, None] * d
            best = np.minimum(best, np.linalg.norm(q - pt, axis=1))
        out_f[qi] = int(np.argmin(best))  # lowest index wins ties via argmin
        out_d[qi] = best[out_f[qi]]
    return out_d, out_f


# -- corrective-net fixture -----------------------------------------------------

def bulge_targets(synth: SynthRig, joint_masks: np.ndarray, pose: PoseFrame) -> np.ndarray:
    """Ground-truth synthetic bulge: radial push per bent joint inside its mask."""
    V = synth.rig.bind_vertices()
    W = synth.rig.weights.to_dense(synth.rig.num_joints)
    R = pose.rotation_matrices()
    angles = np.arccos(np.clip((np.trace(R, axis1=1, axis2=2) - 1) / 2, -1, 1))
    out = np.zeros_like(V)
    for k in range(synth.rig.num_joints):
        amp = 0.012 * np.sin(angles[k] / 2.0) ** 2
        if amp == 0.0:
            continue
        d = synth.bones[k, 1] - synth.bones[k, 0]
        d = d / np.linalg.norm(d)
        rel = V - synth.bones[k, 0]
        radial = rel - np.outer(rel @ d, d)
        norms = np.maximum(np.linalg.norm(radial, axis=1, keepdims=True), 1e-9)
        out += joint_masks[k][:, None] * W[:, k : k + 1] * amp * (radial / norms)
    return out


def make_correctives_fixture(
    synth: SynthRig,
    joint_masks: np.ndarray,
    channels: int = 24,
    n_train: int = 160,
    seed: int = 1234,
    ridge: float = 1e-4,
) -> CorrectivesNet:
    """Fit a tiny two-stage net to the synthetic bulge by ridge regression.

    Stage 1 is a fixed random feature map; stage 2 is solved per group of
    vertices sharing the same covering joints, using only the activations
    whose masks include them (so masking costs no accuracy).
    """
    rng = np.random.default_rng(seed)
    J = synth.rig.num_joints
    N = synth.rig.num_vertices
    K = J * channels
    W1 = rng.normal(scale=0.4, size=(K, J * 6))
    b1 = rng.normal(scale=0.2, size=K)

    poses = [sample_pose(synth.rig, seed + 7 * i, root_translation=False) for i in range(n_train)]
    X = np.stack([matrix_to_rot6d(p.rotation_matrices()).reshape(-1) for p in poses])
    Z = np.tanh(X @ W1.T + b1)  # (P, K)
    Y = np.stack([bulge_targets(synth, joint_masks, p) for p in poses])  # (P, N, 3)

    act_masks = np.repeat(joint_masks, channels, axis=0)  # (K, N)
    W2 = np.zeros((K, N * 3))
    cover = joint_masks.T  # (N, J)
    patterns: dict[bytes, list[int]] = {}
    for vtx in range(N):
        patterns.setdefault(cover[vtx].tobytes(), []).append(vtx)
    for key, vids in patterns.items():
        joints_in = np.flatnonzero(np.frombuffer(key, dtype=bool))
        if joints_in.size == 0:
            continue
        act_ids = (joints_in[:, None] * channels + np.arange(channels)[None, :]).ravel()
        Zs = Z[:, act_ids]
        G = Zs.T @ Zs + ridge * np.eye(act_ids.size)
        T = Y[:, vids, :].reshape(Z.shape[0], -1)  # (P, |vids|*3)
        sol = np.linalg.solve(G, Zs.T @ T)  # (|act|, |vids|*3)
        cols = (np.asarray(vids)[:, None] * 3 + np.arange(3)[None, :]).ravel()
        W2[np.ix_(act_ids, cols)] = sol
    return CorrectivesNet(
        stage1_weight=W1.astype(np.float32),
        stage1_bias=b1.astype(np.float32),
        stage2_weight=W2.astype(np.float32),
        masks=act_masks,
        channels=channels,
    ).validate(J, N)
