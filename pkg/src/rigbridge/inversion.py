"""Pose inversion: recover per-joint rotations from posed vertices.

Three stages, each usable on its own:

* ``invert_init``: skeleton-transfer initialization (regression + Procrustes),
  fast and coarse.
* ``invert_analytical``: hierarchical inverse-LBS sweeps. Each joint's update
  subtracts the non-subtree blend contribution from the observations, treats
  the subtree blend as rigid about the joint, and orthogonalizes the
  incremental cross-covariance with Newton-Schulz instead of SVD, which keeps
  the estimate continuous when the covariance is near rank-deficient.
* ``invert_autograd`` (see ``diff``): 6D gradient refinement through FK+LBS,
  warm-start mandatory.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .animation import bind_inverse_transforms, forward_kinematics
from .errors import DegenerateCovariance, InvalidConfig, UnknownTopology
from .rig import PoseFrame, RigAsset, SkeletonState
from .skeleton_fit import (
    SUPPORT_THRESHOLD,
    JointRegressor,
    _kabsch_core,
    build_joint_regressor,
    fit_skeleton,
    regress_joints,
)
from .rotations import matrix_to_rot6d, rot6d_to_matrix
from .transfer import apply_correspondence

NS_ZERO_NORM = 1e-12


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    """Gram-Schmidt snap-back; keeps composed updates proper to ~1e-15."""
    return rot6d_to_matrix(matrix_to_rot6d(R))


@dataclass
class PolarResult:
    rotation: np.ndarray
    iterations: int
    flag: str  # converged | zero_covariance | negative_det | not_converged


def _inf_norm(M: np.ndarray) -> float:
    return float(np.abs(M).sum(axis=1).max())


def newton_schulz_polar(
    H: np.ndarray,
    R_current: np.ndarray,
    max_iterations: int = 30,
    tol: float = 1e-9,
) -> PolarResult:
    """Polar factor of the incremental covariance, composed onto R_current.

    Runs ``X <- X(3I - X^T X)/2`` on ``dH = R_current^T H`` scaled by its
    infinity norm. Cases where the polar factor would be improper (negative
    determinant), the covariance is numerically zero, or the iteration fails
    to orthogonalize under the cap (rank-deficient dH) all return R_current
    unchanged and are flagged: staying at the current estimate is what keeps
    the rotation path continuous through degeneracies.
    """
    H = np.asarray(H, dtype=np.float64)
    R_current = np.asarray(R_current, dtype=np.float64)
    if _inf_norm(H) < NS_ZERO_NORM:
        return PolarResult(R_current, 0, "zero_covariance")
    dH = R_current.T @ H
    if np.linalg.det(dH) < 0.0:
        return PolarResult(R_current, 0, "negative_det")
    X = dH / _inf_norm(dH)
    eye = np.eye(3)
    for i in range(1, max_iterations + 1):
        X = 0.5 * X @ (3.0 * eye - X.T @ X)
        if np.linalg.norm(X.T @ X - eye) < tol:
            return PolarResult(R_current @ X, i, "converged")
    return PolarResult(R_current, max_iterations, "not_converged")


@dataclass
class InversionConfig:
    body_passes: int = 2
    finger_passes: int = 1
    global_passes: int = 1
    tau: float = 0.5  # subtree weight-mass threshold for vertex selection
    ns_max_iterations: int = 30
    ns_tol: float = 1e-9
    mode: str = "analytical"  # init | analytical | autograd
    autograd_iterations: int = 100
    autograd_step: float = 1e-2
    region_weights: dict[str, float] = field(default_factory=dict)
    allow_cold_start: bool = False  # unsafe: autograd from the bind pose diverges

    def validate(self) -> "InversionConfig":
        if min(self.body_passes, self.finger_passes, self.global_passes) < 0:
            raise InvalidConfig("pass counts must be >= 0")
        if not 0.0 < self.tau < 1.0:
            raise InvalidConfig("tau must be in (0, 1)")
        if self.mode not in ("init", "analytical", "autograd"):
            raise InvalidConfig(f"unknown inversion mode '{self.mode}'")
        if self.ns_max_iterations < 1 or self.ns_tol <= 0:
            raise InvalidConfig("bad Newton-Schulz settings")
        if self.autograd_iterations < 0 or self.autograd_step <= 0:
            raise InvalidConfig("bad autograd settings")
        return self


@dataclass
class InversionResult:
    pose: PoseFrame
    joint_residuals: np.ndarray  # (J,) mean vertex residual per joint selection
    mean_vertex_error: float
    diagnostics: dict = field(default_factory=dict)


def _local_rotations_from_state(
    rig: RigAsset, rest_state: SkeletonState, posed_state: SkeletonState
) -> np.ndarray:
    """Local pose matrices Q such that FK(rest_state, Q) hits posed_state."""
    skel = rig.skeleton
    J = skel.num_joints
    Rr = rest_state.rotations
    Rp = posed_state.rotations
    Q = np.empty((J, 3, 3))
    Q[0] = Rr[0].T @ Rp[0]
    for k in range(1, J):
        p = int(skel.parents[k])
        local_bind = Rr[p].T @ Rr[k]
        Q[k] = local_bind.T @ (Rp[p].T @ Rp[k])
    return Q


def _fit_posed_rotations(rig: RigAsset, posed: np.ndarray, joints: np.ndarray) -> SkeletonState:
    """World rotations from per-joint weighted Procrustes on *centered* clouds.

    Centering both clouds about their weighted centroids makes the rotation
    estimate independent of the (blend-biased) regressed joint positions;
    child-bone alignment is deliberately skipped here since it re-introduces
    that bias for posed inputs. Squared weights de-emphasize blend-zone
    vertices, which move only fractionally with the joint.
    """
    skel = rig.skeleton
    J = skel.num_joints
    Vb = rig.bind_vertices()
    jb = skel.bind_translations
    Wc = rig.weights.matrix(J).tocsc()
    rotations = np.empty((J, 3, 3))
    warnings: list[str] = []
    for k in range(J):
        vidx = Wc.indices[Wc.indptr[k] : Wc.indptr[k + 1]]
        wv = Wc.data[Wc.indptr[k] : Wc.indptr[k + 1]]
        strong = wv >= SUPPORT_THRESHOLD
        vi, w = vidx[strong], wv[strong] ** 2
        delta = np.eye(3)
        if vi.size >= 3:
            wn = (w / w.sum())[:, None]
            src = Vb[vi] - jb[k]
            dst = posed[vi] - joints[k]
            src = src - (wn * src).sum(axis=0)
            dst = dst - (wn * dst).sum(axis=0)
            try:
                delta = _kabsch_core(src, dst, w)
            except DegenerateCovariance:
                warnings.append(f"{skel.names[k]}: degenerate posed covariance")
        else:
            warnings.append(f"{skel.names[k]}: <3 supported vertices")
        rotations[k] = delta @ skel.bind_rotations[k]
    return SkeletonState(rotations=rotations, positions=joints, source="posed", warnings=warnings)


def _rest_state(rig: RigAsset, rest_vertices, regressor) -> SkeletonState:
    """Fitted rest skeleton; the bind rest short-circuits to bind transforms.

    fit_skeleton on the bind shape reproduces the bind skeleton to ~1e-15
    (tested invariant), so skipping it for the default rest changes nothing
    but removes a per-call fit from the fast paths.
    """
    if rest_vertices is None:
        return SkeletonState(
            rotations=rig.skeleton.bind_rotations.copy(),
            positions=rig.skeleton.bind_translations.copy(),
            source="fitted",
        )
    return fit_skeleton(rig, np.asarray(rest_vertices, np.float64), regressor=regressor)


def invert_init(
    rig: RigAsset,
    posed_vertices: np.ndarray,
    rest_vertices: np.ndarray | None = None,
    regressor: JointRegressor | None = None,
) -> tuple[SkeletonState, PoseFrame]:
    """Skeleton-transfer initialization: regress joints, Procrustes, localize."""
    posed = np.asarray(posed_vertices, dtype=np.float64)
    if regressor is None:
        regressor = build_joint_regressor(rig)
    rest_state = _rest_state(rig, rest_vertices, regressor)
    joints = regress_joints(regressor, posed)
    posed_state = _fit_posed_rotations(rig, posed, joints)
    Q = _local_rotations_from_state(rig, rest_state, posed_state)
    t0 = posed_state.positions[0] - rest_state.positions[0]
    pose = PoseFrame(rotations=Q, encoding="matrix", root_translation=t0, joint_orient=True)
    return posed_state, pose


class _AnalyticalSolver:
    """Per-rig precomputation shared across frames of an inversion run."""

    def __init__(self, rig: RigAsset, config: InversionConfig, rest_vertices=None, regressor=None):
        self.rig = rig
        self.config = config.validate()
        self.rest = (
            rig.bind_vertices() if rest_vertices is None else np.asarray(rest_vertices, np.float64)
        )
        self.regressor = regressor if regressor is not None else build_joint_regressor(rig)
        self.rest_state = _rest_state(rig, rest_vertices, self.regressor)
        self.bind_inv = bind_inverse_transforms(self.rest_state)

        skel = rig.skeleton
        J = skel.num_joints
        W = rig.weights.matrix(J)
        self.W = W
        dense = W.toarray()
        subtree = skel.subtree_masks()  # (J, J)
        mass = W @ subtree.T.astype(np.float64)  # (N, J): subtree weight mass
        self.selections = []
        for k in range(J):
            sel = np.flatnonzero(mass[:, k] >= self.config.tau)
            sub_cols = np.flatnonzero(subtree[k])
            Wsel = W[sel]
            self.selections.append(
                {
                    "sel": sel,
                    "mass": mass[sel, k],
                    # covariance weights: the joint's own skinning weights,
                    # which concentrate the fit on vertices rigid with k and
                    # keep unresolved descendant bending out of the update
                    "own": dense[sel, k],
                    "sub_cols": sub_cols,
                    "W_full": Wsel,
                    "W_sub": Wsel[:, sub_cols].toarray(),
                }
            )
        finger = skel.finger_joints()
        self.body_joints = [k for k in range(J) if not finger[k]]
        self.finger_joints = [k for k in range(J) if finger[k]]
        self.all_joints = list(range(J))

    def _fk(self, pose_Q: np.ndarray, t0: np.ndarray):
        frame = PoseFrame(rotations=pose_Q, encoding="matrix", root_translation=t0)
        return forward_kinematics(self.rig.skeleton, frame, state=self.rest_state)

    def solve(self, posed_vertices: np.ndarray, init: PoseFrame | None = None) -> InversionResult:
        rig, cfg = self.rig, self.config
        posed = np.asarray(posed_vertices, dtype=np.float64)
        J = rig.num_joints
        if init is None:
            _, init = invert_init(rig, posed, self.rest, self.regressor)
        Q = init.rotation_matrices().copy()
        t0 = (
            init.root_translation.copy()
            if init.root_translation is not None
            else np.zeros(3)
        )

        ns_iterations = 0
        flags: dict[str, int] = {}
        schedule = (
            [self.body_joints] * cfg.body_passes
            + [self.finger_joints] * cfg.finger_passes
            + [self.all_joints] * cfg.global_passes
        )
        passes_run = 0
        for joint_set in schedule:
            if not joint_set:
                continue
            passes_run += 1
            for k in joint_set:
                entry = self.selections[k]
                sel = entry["sel"]
                if sel.size == 0:
                    flags["empty_selection"] = flags.get("empty_selection", 0) + 1
                    continue
                g = self._fk(Q, t0)
                M = (g.matrices() @ self.bind_inv)[:, :3, :]  # (J, 3, 4)
                full = (entry["W_full"] @ M.reshape(J, 12)).reshape(-1, 3, 4)
                pred_full = np.einsum("nij,nj->ni", full[:, :, :3], self.rest[sel]) + full[:, :, 3]
                Msub = M[entry["sub_cols"]].reshape(len(entry["sub_cols"]), 12)
                sub = (entry["W_sub"] @ Msub).reshape(-1, 3, 4)
                pred_sub = np.einsum("nij,nj->ni", sub[:, :, :3], self.rest[sel]) + sub[:, :, 3]

                w = entry["own"]
                if k == 0:
                    # Root carries the translation DOF: solving its rotation
                    # about the joint while a separate step owns translation
                    # couples two near-degenerate directions, so solve the
                    # rigid pair jointly on centered clouds.
                    wn = (w / w.sum())[:, None]
                    ca = (wn * pred_sub).sum(axis=0)
                    cb = (wn * posed[sel]).sum(axis=0)
                    C = ((posed[sel] - cb) * w[:, None]).T @ (pred_sub - ca)
                    res = newton_schulz_polar(C, np.eye(3), cfg.ns_max_iterations, cfg.ns_tol)
                    ns_iterations += res.iterations
                    flags[res.flag] = flags.get(res.flag, 0) + 1
                    if res.flag != "converged":
                        continue
                    dR = res.rotation
                    j0 = g.translations[0]
                    t0 = t0 + (cb - (dR @ (ca - j0) + j0))
                    Q[0] = _orthonormalize(self.rest_state.rotations[0].T @ (dR @ g.rotations[0]))
                    continue

                jk = g.translations[k]
                s = entry["mass"][:, None]
                a = pred_sub - s * jk
                b = (posed[sel] - (pred_full - pred_sub)) - s * jk
                C = (b * w[:, None]).T @ a  # polar(C) maps a-cloud onto b-cloud
                res = newton_schulz_polar(C, np.eye(3), cfg.ns_max_iterations, cfg.ns_tol)
                ns_iterations += res.iterations
                flags[res.flag] = flags.get(res.flag, 0) + 1
                if res.flag != "converged":
                    continue
                dR = res.rotation
                # premultiply joint k's world rotation and relocalize
                p = int(rig.skeleton.parents[k])
                Rg_new = dR @ g.rotations[k]
                local_bind = self.rest_state.rotations[p].T @ self.rest_state.rotations[k]
                Q[k] = _orthonormalize(local_bind.T @ g.rotations[p].T @ Rg_new)

        g = self._fk(Q, t0)
        M = (g.matrices() @ self.bind_inv)[:, :3, :]
        blended = (self.W @ M.reshape(J, 12)).reshape(-1, 3, 4)
        predicted = np.einsum("nij,nj->ni", blended[:, :, :3], self.rest) + blended[:, :, 3]
        per_vertex = np.linalg.norm(predicted - posed, axis=1)
        joint_res = np.array(
            [
                per_vertex[e["sel"]].mean() if e["sel"].size else np.nan
                for e in self.selections
            ]
        )
        pose = PoseFrame(rotations=Q, encoding="matrix", root_translation=t0, joint_orient=True)
        return InversionResult(
            pose=pose,
            joint_residuals=joint_res,
            mean_vertex_error=float(per_vertex.mean()),
            diagnostics={
                "passes_run": passes_run,
                "ns_iterations": ns_iterations,
                "ns_flags": flags,
            },
        )


def invert_analytical(
    rig: RigAsset,
    posed_vertices: np.ndarray,
    config: InversionConfig | None = None,
    rest_vertices: np.ndarray | None = None,
    init: PoseFrame | None = None,
    regressor: JointRegressor | None = None,
) -> InversionResult:
    solver = _AnalyticalSolver(rig, config or InversionConfig(), rest_vertices, regressor)
    return solver.solve(posed_vertices, init=init)


def _wrap_init_result(rig, posed, rest, regressor) -> InversionResult:
    """Init-only result with diagnostics; avoids the sweep solver's setup."""
    rest_arr = rig.bind_vertices() if rest is None else np.asarray(rest, np.float64)
    _, pose = invert_init(rig, posed, rest, regressor)
    rest_state = _rest_state(rig, rest, regressor)
    g = forward_kinematics(rig.skeleton, pose, state=rest_state)
    J = rig.num_joints
    W = rig.weights.matrix(J)
    M = (g.matrices() @ bind_inverse_transforms(rest_state))[:, :3, :]
    blended = (W @ M.reshape(J, 12)).reshape(-1, 3, 4)
    predicted = np.einsum("nij,nj->ni", blended[:, :, :3], rest_arr) + blended[:, :, 3]
    per_vertex = np.linalg.norm(predicted - posed, axis=1)
    Wc = W.tocsc()
    joint_res = np.empty(J)
    for k in range(J):
        vidx = Wc.indices[Wc.indptr[k] : Wc.indptr[k + 1]]
        strong = vidx[Wc.data[Wc.indptr[k] : Wc.indptr[k + 1]] >= SUPPORT_THRESHOLD]
        joint_res[k] = per_vertex[strong].mean() if strong.size else np.nan
    return InversionResult(
        pose=pose,
        joint_residuals=joint_res,
        mean_vertex_error=float(per_vertex.mean()),
        diagnostics={"passes_run": 0, "ns_iterations": 0, "ns_flags": {}},
    )


def invert(
    rig: RigAsset,
    posed_vertices: np.ndarray,
    source_topology_id: str | None = None,
    config: InversionConfig | None = None,
    rest_vertices: np.ndarray | None = None,
    regressor: JointRegressor | None = None,
) -> InversionResult:
    """Full pipeline: optional topology transfer, init, then refinement."""
    cfg = (config or InversionConfig()).validate()
    posed = np.asarray(posed_vertices, dtype=np.float64)
    if source_topology_id is not None:
        corr = rig.correspondences.get(source_topology_id)
        if corr is None:
            raise UnknownTopology(
                f"no correspondence registered for topology '{source_topology_id}'"
            )
        posed = apply_correspondence(corr, posed)

    if regressor is None:
        regressor = build_joint_regressor(rig)
    if cfg.mode == "init":
        return _wrap_init_result(rig, posed, rest_vertices, regressor)
    analytical = invert_analytical(rig, posed, cfg, rest_vertices, regressor=regressor)
    if cfg.mode == "analytical":
        return analytical
    from .diff import invert_autograd  # deferred: torch import is heavy

    return invert_autograd(
        rig, posed, init=analytical.pose, config=cfg, rest_vertices=rest_vertices,
        regressor=regressor,
    )


def config_to_dict(config: InversionConfig) -> dict:
    return asdict(config)
