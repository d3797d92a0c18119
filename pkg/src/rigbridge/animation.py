"""Animation layer: forward kinematics, correctives and linear blend skinning.

Posing an identity is ``fit_skeleton -> FK -> (+correctives) -> LBS``; with
joint orient enabled the all-identity pose reproduces the input rest shape
exactly. Everything here is a pure function of immutable inputs and accepts
either a single pose or a batch of frames.
"""

from __future__ import annotations

import warnings as _warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import DisconnectedMesh, EncodingMismatch, ShapeMismatch, SizeMismatch
from .rig import (
    CorrectivesNet,
    Mesh,
    MotionSequence,
    PoseFrame,
    RigAsset,
    Skeleton,
    SkeletonState,
)
from .rotations import matrix_to_rot6d
from .skeleton_fit import JointRegressor, fit_skeleton

MASK_WEIGHT_THRESHOLD = 1e-3


@dataclass
class GlobalTransforms:
    """World transform per joint for one pose (J,...) or a batch (B, J, ...)."""

    rotations: np.ndarray  # (..., J, 3, 3)
    translations: np.ndarray  # (..., J, 3)

    @property
    def num_joints(self) -> int:
        return int(self.rotations.shape[-3])

    def matrices(self) -> np.ndarray:
        shape = self.rotations.shape[:-2]
        M = np.zeros((*shape, 4, 4))
        M[..., :3, :3] = self.rotations
        M[..., :3, 3] = self.translations
        M[..., 3, 3] = 1.0
        return M


def _local_bind(skeleton: Skeleton, state: SkeletonState | None):
    """Per-joint parent-relative bind transforms (root keeps its world pose)."""
    if state is not None:
        R, t = state.rotations, state.positions
    else:
        R, t = skeleton.bind_rotations, skeleton.bind_translations
    J = skeleton.num_joints
    R_loc = np.empty((J, 3, 3))
    t_loc = np.empty((J, 3))
    R_loc[0], t_loc[0] = R[0], t[0]
    parents = skeleton.parents
    for k in range(1, J):
        p = parents[k]
        R_loc[k] = R[p].T @ R[k]
        t_loc[k] = R[p].T @ (t[k] - t[p])
    return R_loc, t_loc, R, t


def forward_kinematics(
    skeleton: Skeleton,
    pose: PoseFrame | MotionSequence,
    state: SkeletonState | None = None,
) -> GlobalTransforms:
    """Compose local rotations up the hierarchy into world joint transforms.

    ``state`` substitutes identity-adapted (fitted) bind transforms for the
    canonical ones. With ``joint_orient`` enabled, pose rotations are applied
    inside each joint's bind frame so the zero pose reproduces the bind
    skeleton; disabled, they replace the local rotation outright.
    """
    J = skeleton.num_joints
    batch = isinstance(pose, MotionSequence)
    if batch:
        frames = [pose.frame(i) for i in range(len(pose))]
        if not frames:
            return GlobalTransforms(np.zeros((0, J, 3, 3)), np.zeros((0, J, 3)))
        Q = np.stack([f.rotation_matrices() for f in frames])
        t0 = (
            pose.root_translations
            if pose.root_translations is not None
            else np.zeros((len(frames), 3))
        )
        joint_orient = pose.joint_orient
    else:
        if pose.num_joints != J:
            raise EncodingMismatch(f"pose has {pose.num_joints} joints, skeleton has {J}")
        try:
            Q = pose.rotation_matrices()[None]
        except Exception as exc:
            raise EncodingMismatch(str(exc)) from exc
        t0 = (pose.root_translation if pose.root_translation is not None else np.zeros(3))[None]
        joint_orient = pose.joint_orient
    if Q.shape[-3] != J:
        raise EncodingMismatch(f"pose has {Q.shape[-3]} joints, skeleton has {J}")

    R_loc, t_loc, _, _ = _local_bind(skeleton, state)
    B = Q.shape[0]
    G_R = np.empty((B, J, 3, 3))
    G_t = np.empty((B, J, 3))
    parents = skeleton.parents
    for k in range(J):
        if joint_orient:
            Rk = R_loc[k] @ Q[:, k]
        else:
            Rk = Q[:, k]
        if k == 0:
            G_R[:, 0] = Rk
            G_t[:, 0] = t_loc[0] + t0
        else:
            p = parents[k]
            G_R[:, k] = G_R[:, p] @ Rk
            G_t[:, k] = np.einsum("bij,j->bi", G_R[:, p], t_loc[k]) + G_t[:, p]
    if batch:
        return GlobalTransforms(G_R, G_t)
    return GlobalTransforms(G_R[0], G_t[0])


def bind_inverse_transforms(source: Skeleton | SkeletonState) -> np.ndarray:
    """(J, 4, 4) inverses of the bind (or fitted) world transforms."""
    if isinstance(source, Skeleton):
        R, t = source.bind_rotations, source.bind_translations
    else:
        R, t = source.rotations, source.positions
    J = R.shape[0]
    M = np.zeros((J, 4, 4))
    M[:, 3, 3] = 1.0
    Rt = np.swapaxes(R, 1, 2)
    M[:, :3, :3] = Rt
    M[:, :3, 3] = -np.einsum("jab,jb->ja", Rt, t)
    return M


def lbs_pose(
    rest_vertices: np.ndarray,
    weights,
    transforms: GlobalTransforms,
    bind_inverse: np.ndarray,
) -> np.ndarray:
    """Blend per-joint rigid maps over vertices (standard LBS).

    ``rest_vertices`` may be (N, 3) or per-frame (B, N, 3) when ``transforms``
    is batched; the blend is one sparse multiply over the stacked 3x4 maps.
    """
    G = transforms.matrices()
    single = G.ndim == 3
    if single:
        G = G[None]
    B, J = G.shape[0], G.shape[1]
    M = (G @ bind_inverse)[..., :3, :]  # (B, J, 3, 4)

    Wm = weights.matrix(J) if not sp.issparse(weights) else weights
    N = Wm.shape[0]
    rest = np.asarray(rest_vertices, dtype=np.float64)
    if rest.shape[-2] != N or rest.shape[-1] != 3:
        raise SizeMismatch(f"rest vertices shape {rest.shape} != (..., {N}, 3)")
    if rest.ndim == 2:
        rest = np.broadcast_to(rest, (B, N, 3))
    elif rest.shape[0] != B:
        raise SizeMismatch(f"rest batch {rest.shape[0]} != pose batch {B}")

    blended = (Wm @ M.transpose(1, 0, 2, 3).reshape(J, B * 12)).reshape(N, B, 3, 4)
    A = blended.transpose(1, 0, 2, 3)  # (B, N, 3, 4)
    out = np.einsum("bnij,bnj->bni", A[..., :3], rest) + A[..., 3]
    return out[0] if single else out


def derive_corrective_masks(rig: RigAsset, geodesic_radius: float) -> np.ndarray:
    """Per-joint vertex masks: weight support dilated along the edge graph.

    Returns (J, N) bool. Vertices within ``geodesic_radius`` (edge-graph
    distance on the bind mesh) of any vertex with skinning weight above
    MASK_WEIGHT_THRESHOLD are included. Disconnected meshes only produce a
    warning; masks are computed per component.
    """
    if geodesic_radius < 0:
        raise ShapeMismatch("geodesic radius must be >= 0")
    mesh: Mesh = rig.mesh
    V = mesh.vertices.astype(np.float64)
    f = mesh.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    lengths = np.linalg.norm(V[edges[:, 0]] - V[edges[:, 1]], axis=1)
    adj = sp.csr_matrix(
        (lengths, (edges[:, 0], edges[:, 1])), shape=(mesh.num_vertices, mesh.num_vertices)
    )
    adj = adj.maximum(adj.T)

    n_comp, _ = connected_components(adj, directed=False)
    if n_comp > 1:
        _warnings.warn(
            f"mesh has {n_comp} connected components; masks dilate per component",
            DisconnectedMesh,
        )

    J = rig.num_joints
    Wc = rig.weights.matrix(J).tocsc()
    masks = np.zeros((J, mesh.num_vertices), dtype=bool)
    for k in range(J):
        vidx = Wc.indices[Wc.indptr[k] : Wc.indptr[k + 1]]
        wv = Wc.data[Wc.indptr[k] : Wc.indptr[k + 1]]
        seeds = vidx[wv > MASK_WEIGHT_THRESHOLD]
        if seeds.size == 0:
            continue
        if geodesic_radius == 0.0:
            masks[k, seeds] = True
            continue
        dist = dijkstra(
            adj, directed=False, indices=seeds, min_only=True, limit=geodesic_radius
        )
        masks[k] = dist <= geodesic_radius
    return masks


def replicate_masks(joint_masks: np.ndarray, channels: int) -> np.ndarray:
    """Expand (J, N) joint masks to (J*C, N) activation masks."""
    return np.repeat(joint_masks, channels, axis=0)


def apply_correctives(net: CorrectivesNet, pose: PoseFrame) -> np.ndarray:
    """Raw masked displacement response (N, 3) for one pose.

    The zero-pose response is *not* subtracted here; ``pose_mesh`` handles
    that so the rest pose stays displacement-free end to end.
    """
    if pose.num_joints != net.num_joints:
        raise ShapeMismatch(
            f"pose has {pose.num_joints} joints, correctives expect {net.num_joints}"
        )
    r6 = matrix_to_rot6d(pose.rotation_matrices()).reshape(-1)
    z = np.tanh(net.stage1_weight.astype(np.float64) @ r6 + net.stage1_bias)
    disp = z @ net.stage2_weight.astype(np.float64)
    return disp.reshape(-1, 3)


def corrective_zero_offset(net: CorrectivesNet) -> np.ndarray:
    """Cached response at the identity pose, subtracted before skinning."""
    cached = getattr(net, "_zero_offset_cache", None)
    if cached is None:
        cached = apply_correctives(net, PoseFrame.identity(net.num_joints))
        object.__setattr__(net, "_zero_offset_cache", cached)
    return cached


def pose_mesh(
    rig: RigAsset,
    rest_vertices: np.ndarray,
    pose: PoseFrame | MotionSequence,
    correctives: bool = True,
    regressor: JointRegressor | None = None,
) -> np.ndarray:
    """Pose a rest shape end to end; returns (N, 3) or (B, N, 3) for motions."""
    rest = np.asarray(rest_vertices, dtype=np.float64)
    fitted = fit_skeleton(rig, rest, regressor=regressor)
    transforms = forward_kinematics(rig.skeleton, pose, state=fitted)
    bind_inv = bind_inverse_transforms(fitted)

    effective = rest
    if correctives and rig.correctives is not None:
        net = rig.correctives
        zero = corrective_zero_offset(net)
        if isinstance(pose, MotionSequence):
            disp = np.stack(
                [apply_correctives(net, pose.frame(i)) - zero for i in range(len(pose))]
            )
            effective = rest[None] + disp
        else:
            effective = rest + (apply_correctives(net, pose) - zero)
    return lbs_pose(effective, rig.weights, transforms, bind_inv)
