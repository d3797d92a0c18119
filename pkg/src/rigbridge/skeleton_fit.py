"""Closed-form skeleton fitting: sparse joint regression + two-stage Kabsch.

The whole fit is a single analytical pass: one sparse multiply produces
identity-adapted joint positions, then each joint's world rotation is
recovered independently from (a) a weighted Procrustes alignment of its
skinned vertex cloud and (b) a child-bone alignment correction. No loop's
iteration count depends on input values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import (
    DegenerateCovariance,
    EmptySupport,
    InsufficientPoints,
    SingularSystem,
    SizeMismatch,
)
from .rig import RigAsset, SkeletonState
from .rotations import shortest_arc_rotation

REGRESSOR_TIKHONOV = 1e-6
REGRESSOR_PRUNE = 1e-8
GRAM_COND_GUARD = 1e-12
SUPPORT_THRESHOLD = 1e-3  # "non-negligible" skinning weight for stage 2a
NEAR_ZERO_WEIGHT = 1e-12


@dataclass
class JointRegressor:
    """Constant sparse map from canonical vertices to joint positions."""

    matrix: sp.csr_matrix  # (J, N_h), rows sum to 1
    supports: list[np.ndarray] = field(default_factory=list)

    @property
    def num_joints(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def num_vertices(self) -> int:
        return int(self.matrix.shape[1])


def _solve_row(positions: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Affine weights over ``positions`` that hit ``target`` and sum to one.

    Minimum-norm interpolation through a 4x4 Gram system; if the support is
    affinely degenerate the position fit relaxes to Tikhonov least squares
    (the sum constraint stays exact).
    """
    n = positions.shape[0]
    center = positions.mean(axis=0)
    P = positions - center  # (n, 3)
    d = target - center

    C = np.concatenate([P.T, np.ones((1, n))], axis=0)  # (4, n)
    G = C @ C.T
    rhs = np.concatenate([d, [1.0]])
    eigs = np.linalg.eigvalsh(G)
    if eigs[0] > GRAM_COND_GUARD * max(eigs[-1], 1.0):
        w = C.T @ np.linalg.solve(G, rhs)
    else:
        # (P P^T + lam I) w + mu 1 = P d, 1^T w = 1, solved via Woodbury so the
        # cost stays O(n) even for large degenerate supports.
        lam = REGRESSOR_TIKHONOV
        core = np.linalg.inv(lam * np.eye(3) + P.T @ P)

        def solve_a(x: np.ndarray) -> np.ndarray:
            return (x - P @ (core @ (P.T @ x))) / lam

        p0 = solve_a(P @ d)
        q0 = solve_a(np.ones(n))
        denom = q0.sum()
        if abs(denom) < 1e-300:
            raise SingularSystem("regressor constraint system is singular")
        mu = (p0.sum() - 1.0) / denom
        w = p0 - mu * q0
    if not np.all(np.isfinite(w)):
        raise SingularSystem("regressor solve produced non-finite weights")
    return w


def build_joint_regressor(rig: RigAsset) -> JointRegressor:
    """Factor a J x N_h sparse regressor from the bind pose.

    Joint k's support is every vertex with nonzero skinning weight for k or
    its parent; each row reproduces the bind joint from the bind vertices and
    sums to one, so regressed joints are translation-equivariant.
    """
    skel = rig.skeleton
    J = skel.num_joints
    Vb = rig.bind_vertices()
    W = rig.weights.matrix(J).tocsc()

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    supports: list[np.ndarray] = []
    for k in range(J):
        members = [W.indices[W.indptr[k] : W.indptr[k + 1]]]
        parent = int(skel.parents[k])
        if parent >= 0:
            members.append(W.indices[W.indptr[parent] : W.indptr[parent + 1]])
        support = np.unique(np.concatenate(members))
        if support.size == 0:
            raise EmptySupport(f"joint '{skel.names[k]}' influences no vertices")
        supports.append(support)

        w = _solve_row(Vb[support], skel.bind_translations[k])
        keep = np.abs(w) >= REGRESSOR_PRUNE
        if not np.any(keep):
            raise SingularSystem(f"joint '{skel.names[k]}' regressor row vanished")
        w = w[keep]
        w = w / w.sum()
        rows.append(np.full(w.shape[0], k, dtype=np.int64))
        cols.append(support[keep])
        vals.append(w)

    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(J, rig.num_vertices),
    )
    return JointRegressor(matrix=matrix, supports=supports)


def regress_joints(reg: JointRegressor, rest_vertices: np.ndarray) -> np.ndarray:
    """One sparse multiply; accepts (N, 3) or a batch (B, N, 3)."""
    v = np.asarray(rest_vertices, dtype=np.float64)
    if v.shape[-2] != reg.num_vertices or v.shape[-1] != 3:
        raise SizeMismatch(f"rest vertices shape {v.shape} != (..., {reg.num_vertices}, 3)")
    if v.ndim == 2:
        return reg.matrix @ v
    flat = np.moveaxis(v, -2, 0).reshape(reg.num_vertices, -1)
    out = reg.matrix @ flat
    return np.moveaxis(out.reshape(reg.num_joints, *v.shape[:-2], 3), 0, -2)


def _kabsch_core(src: np.ndarray, dst: np.ndarray, weights: np.ndarray) -> np.ndarray:
    H = (src * weights[:, None]).T @ dst
    U, S, Vt = np.linalg.svd(H)
    if S[0] < 1e-300 or S[1] <= 1e-9 * S[0]:
        raise DegenerateCovariance(f"cross-covariance rank < 2 (singular values {S})")
    V = Vt.T
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(V @ U.T))
    return V @ D @ U.T


def kabsch_rotation(
    src: np.ndarray, dst: np.ndarray, weights: np.ndarray | None = None
) -> np.ndarray:
    """Weighted orthogonal Procrustes via SVD of the cross-covariance.

    ``src`` and ``dst`` are displacement vectors about the caller's alignment
    center (no centroid subtraction here: skeleton fitting rotates about joint
    positions, not cloud centroids). Always returns a proper rotation; a
    reflection-optimal covariance is projected onto SO(3) by sign-correcting
    the smallest singular direction.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise SizeMismatch(f"point arrays must both be (n, 3); got {src.shape}, {dst.shape}")
    if weights is None:
        weights = np.ones(src.shape[0])
    weights = np.asarray(weights, dtype=np.float64)
    keep = weights > NEAR_ZERO_WEIGHT
    src, dst, weights = src[keep], dst[keep], weights[keep]
    if src.shape[0] < 3:
        raise InsufficientPoints(f"{src.shape[0]} points after dropping near-zero weights")
    if weights.sum() <= 0.0:
        raise InsufficientPoints("total weight is not positive")
    return _kabsch_core(src, dst, weights)


def fit_joint_rotations(
    rig: RigAsset,
    rest_vertices: np.ndarray,
    joints: np.ndarray,
    support_threshold: float = SUPPORT_THRESHOLD,
) -> SkeletonState:
    """Two-stage rotation fit for every joint given regressed positions.

    Stage 2a aligns each joint's weighted bind vertex cloud to the rest shape;
    stage 2b corrects the bone direction toward the regressed child joints
    (shortest-arc for one child, Procrustes over unit bone vectors for
    several). World rotation composes as align * init * bind.
    """
    skel = rig.skeleton
    J = skel.num_joints
    rest = np.asarray(rest_vertices, dtype=np.float64)
    if rest.shape != (rig.num_vertices, 3):
        raise SizeMismatch(f"rest vertices shape {rest.shape}")
    joints = np.asarray(joints, dtype=np.float64)
    if joints.shape != (J, 3):
        raise SizeMismatch(f"joint array shape {joints.shape}")

    Vb = rig.bind_vertices()
    jb = skel.bind_translations
    Wc = rig.weights.matrix(J).tocsc()
    children = skel.children()

    warnings: list[str] = []
    deltas = np.tile(np.eye(3), (J, 1, 1))
    rotations = np.empty((J, 3, 3))
    for k in range(J):
        vidx = Wc.indices[Wc.indptr[k] : Wc.indptr[k + 1]]
        wvals = Wc.data[Wc.indptr[k] : Wc.indptr[k + 1]]
        strong = wvals >= support_threshold
        vidx, wvals = vidx[strong], wvals[strong]

        parent = int(skel.parents[k])
        if vidx.size == 0 and not children[k]:
            # Leaf helper: nothing constrains its frame, follow the parent.
            deltas[k] = deltas[parent] if parent >= 0 else np.eye(3)
            rotations[k] = deltas[k] @ skel.bind_rotations[k]
            warnings.append(f"{skel.names[k]}: unconstrained leaf, inheriting parent rotation")
            continue

        r_init = np.eye(3)
        if vidx.size >= 3:
            try:
                r_init = _kabsch_core(Vb[vidx] - jb[k], rest[vidx] - joints[k], wvals)
            except DegenerateCovariance:
                warnings.append(f"{skel.names[k]}: degenerate covariance, init=identity")
        elif vidx.size > 0:
            warnings.append(f"{skel.names[k]}: <3 supported vertices, init=identity")

        r_align = np.eye(3)
        kids = children[k]
        if len(kids) == 1:
            a = r_init @ (jb[kids[0]] - jb[k])
            b = joints[kids[0]] - joints[k]
            if np.linalg.norm(a) > 1e-12 and np.linalg.norm(b) > 1e-12:
                r_align = shortest_arc_rotation(a, b)
            else:
                warnings.append(f"{skel.names[k]}: zero-length bone, skipping alignment")
        elif len(kids) > 1:
            a = np.stack([r_init @ (jb[c] - jb[k]) for c in kids])
            b = np.stack([joints[c] - joints[k] for c in kids])
            na = np.linalg.norm(a, axis=1, keepdims=True)
            nb = np.linalg.norm(b, axis=1, keepdims=True)
            ok = (na[:, 0] > 1e-12) & (nb[:, 0] > 1e-12)
            if ok.sum() >= 2:
                try:
                    r_align = _kabsch_core(
                        a[ok] / na[ok], b[ok] / nb[ok], np.ones(int(ok.sum()))
                    )
                except DegenerateCovariance:
                    r_align = shortest_arc_rotation(a[ok][0], b[ok][0])
                    warnings.append(f"{skel.names[k]}: parallel child bones, shortest-arc fallback")
            elif ok.sum() == 1:
                r_align = shortest_arc_rotation(a[ok][0], b[ok][0])

        deltas[k] = r_align @ r_init
        rotations[k] = deltas[k] @ skel.bind_rotations[k]

    return SkeletonState(rotations=rotations, positions=joints, source="fitted", warnings=warnings)


def fit_skeleton(
    rig: RigAsset,
    rest_vertices: np.ndarray,
    regressor: JointRegressor | None = None,
) -> SkeletonState:
    """Joint regression followed by rotation fitting; one analytical pass."""
    if regressor is None:
        if rig.regressor_cache is not None:
            regressor = JointRegressor(matrix=rig.regressor_cache)
        else:
            regressor = build_joint_regressor(rig)
    joints = regress_joints(regressor, np.asarray(rest_vertices, dtype=np.float64))
    return fit_joint_rotations(rig, rest_vertices, joints)
