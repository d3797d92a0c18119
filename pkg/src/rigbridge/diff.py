"""Differentiable mirror of the posing chain plus gradient-based pose refinement.

Everything here is float64 torch and mirrors the numpy pipeline operation by
operation, so the two paths agree to ~1e-12 and finite differences of the
numpy side validate gradients of this side. The optimizer (`invert_autograd`)
parameterizes rotations as continuous 6D vectors and must be warm-started:
cold starts from the bind pose land in wrong-limb local minima.
"""

from __future__ import annotations

import numpy as np
import torch

from .errors import Diverged, MissingInit
from .inversion import InversionConfig, InversionResult
from .rig import REGION_NAMES, PoseFrame, RigAsset
from .rotations import matrix_to_rot6d
from .skeleton_fit import SUPPORT_THRESHOLD, JointRegressor, build_joint_regressor, fit_skeleton

_DT = torch.float64


def _t(x) -> torch.Tensor:
    # np.array copy: inputs are often frozen (non-writable) rig arrays
    return torch.as_tensor(np.array(x), dtype=_DT)


def axis_angle_to_matrix_t(aa: torch.Tensor) -> torch.Tensor:
    theta = torch.linalg.norm(aa, dim=-1, keepdim=True)
    small = theta < 1e-8
    k = aa / torch.where(small, torch.ones_like(theta), theta)
    s = torch.sin(theta)[..., None]
    c = torch.cos(theta)[..., None]
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    zeros = torch.zeros_like(kx)
    K = torch.stack(
        [
            torch.stack([zeros, -kz, ky], dim=-1),
            torch.stack([kz, zeros, -kx], dim=-1),
            torch.stack([-ky, kx, zeros], dim=-1),
        ],
        dim=-2,
    )
    eye = torch.eye(3, dtype=aa.dtype).expand(K.shape)
    R = eye + s * K + (1.0 - c) * (K @ K)
    A = torch.stack(
        [
            torch.stack([zeros, -aa[..., 2], aa[..., 1]], dim=-1),
            torch.stack([aa[..., 2], zeros, -aa[..., 0]], dim=-1),
            torch.stack([-aa[..., 1], aa[..., 0], zeros], dim=-1),
        ],
        dim=-2,
    )
    return torch.where(small[..., None], eye + A, R)


def rot6d_to_matrix_t(r6: torch.Tensor) -> torch.Tensor:
    a, b = r6[..., :3], r6[..., 3:]
    b1 = a / torch.linalg.norm(a, dim=-1, keepdim=True).clamp_min(1e-12)
    b2 = b - (b1 * b).sum(-1, keepdim=True) * b1
    b2 = b2 / torch.linalg.norm(b2, dim=-1, keepdim=True).clamp_min(1e-12)
    b3 = torch.linalg.cross(b1, b2)
    return torch.stack([b1, b2, b3], dim=-1)


def _kabsch_t(src: torch.Tensor, dst: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    H = (src * w[:, None]).T @ dst
    U, S, Vh = torch.linalg.svd(H)
    V = Vh.mH
    d = torch.det(V @ U.mH)
    D = torch.diag_embed(torch.stack([torch.ones_like(d), torch.ones_like(d), d]))
    return V @ D @ U.mH


def _shortest_arc_t(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    a = a / torch.linalg.norm(a).clamp_min(1e-12)
    b = b / torch.linalg.norm(b).clamp_min(1e-12)
    w = torch.linalg.cross(a, b)
    c = (a * b).sum()
    W = torch.stack(
        [
            torch.stack([torch.zeros_like(c), -w[2], w[1]]),
            torch.stack([w[2], torch.zeros_like(c), -w[0]]),
            torch.stack([-w[1], w[0], torch.zeros_like(c)]),
        ]
    )
    return torch.eye(3, dtype=a.dtype) + W + (W @ W) / (1.0 + c).clamp_min(1e-12)


class DifferentiableRig:
    """Constant tensors and index sets mirroring one RigAsset."""

    def __init__(self, rig: RigAsset, regressor: JointRegressor | None = None):
        self.rig = rig
        if regressor is None:
            regressor = build_joint_regressor(rig)
        J = rig.num_joints
        self.J = J
        self.parents = rig.skeleton.parents.tolist()
        self.W_reg = _t(regressor.matrix.toarray())
        self.W_skin = _t(rig.weights.matrix(J).toarray())
        self.V_bind = _t(rig.bind_vertices())
        self.R_bind = _t(rig.skeleton.bind_rotations)
        self.j_bind = _t(rig.skeleton.bind_translations)
        self.children = rig.skeleton.children()

        Wc = rig.weights.matrix(J).tocsc()
        self.supports = []
        for k in range(J):
            vidx = Wc.indices[Wc.indptr[k] : Wc.indptr[k + 1]]
            wv = Wc.data[Wc.indptr[k] : Wc.indptr[k + 1]]
            m = wv >= SUPPORT_THRESHOLD
            self.supports.append((torch.as_tensor(vidx[m].copy(), dtype=torch.long), _t(wv[m])))

        net = rig.correctives
        if net is not None:
            from .animation import corrective_zero_offset

            self.c_w1 = _t(net.stage1_weight)
            self.c_b1 = _t(net.stage1_bias)
            self.c_w2 = _t(net.stage2_weight)
            self.c_zero = _t(corrective_zero_offset(net))
        else:
            self.c_w1 = None

    # -- skeleton fitting ---------------------------------------------------

    def fit_skeleton_t(self, rest: torch.Tensor):
        """Differentiable two-stage fit; mirrors skeleton_fit.fit_skeleton."""
        J = self.J
        joints = self.W_reg @ rest
        deltas: list[torch.Tensor] = [None] * J
        rotations: list[torch.Tensor] = [None] * J
        eye = torch.eye(3, dtype=_DT)
        for k in range(J):
            vidx, w = self.supports[k]
            kids = self.children[k]
            if vidx.numel() == 0 and not kids:
                parent = self.parents[k]
                deltas[k] = deltas[parent] if parent >= 0 else eye
                rotations[k] = deltas[k] @ self.R_bind[k]
                continue
            r_init = eye
            if vidx.numel() >= 3:
                src = self.V_bind[vidx] - self.j_bind[k]
                dst = rest[vidx] - joints[k]
                r_init = _kabsch_t(src, dst, w)
            r_align = eye
            if len(kids) == 1:
                a = r_init @ (self.j_bind[kids[0]] - self.j_bind[k])
                b = joints[kids[0]] - joints[k]
                r_align = _shortest_arc_t(a, b)
            elif len(kids) > 1:
                a = torch.stack([r_init @ (self.j_bind[c] - self.j_bind[k]) for c in kids])
                b = torch.stack([joints[c] - joints[k] for c in kids])
                a = a / torch.linalg.norm(a, dim=1, keepdim=True).clamp_min(1e-12)
                b = b / torch.linalg.norm(b, dim=1, keepdim=True).clamp_min(1e-12)
                r_align = _kabsch_t(a, b, torch.ones(len(kids), dtype=_DT))
            deltas[k] = r_align @ r_init
            rotations[k] = deltas[k] @ self.R_bind[k]
        return torch.stack(rotations), joints

    # -- forward kinematics ---------------------------------------------------

    def forward_kinematics_t(
        self,
        Q: torch.Tensor,  # (J, 3, 3) local pose rotations
        t0: torch.Tensor,  # (3,)
        state_R: torch.Tensor,
        state_t: torch.Tensor,
        joint_orient: bool = True,
    ):
        J = self.J
        G_R: list[torch.Tensor] = [None] * J
        G_t: list[torch.Tensor] = [None] * J
        for k in range(J):
            p = self.parents[k]
            if k == 0:
                loc_R, loc_t = state_R[0], state_t[0]
            else:
                loc_R = state_R[p].mT @ state_R[k]
                loc_t = state_R[p].mT @ (state_t[k] - state_t[p])
            Rk = loc_R @ Q[k] if joint_orient else Q[k]
            if k == 0:
                G_R[0] = Rk
                G_t[0] = loc_t + t0
            else:
                G_R[k] = G_R[p] @ Rk
                G_t[k] = G_R[p] @ loc_t + G_t[p]
        return torch.stack(G_R), torch.stack(G_t)

    # -- skinning --------------------------------------------------------------

    def lbs_t(self, rest, G_R, G_t, bind_R, bind_t):
        M_R = G_R @ bind_R.mT  # (J, 3, 3)
        M_t = G_t - (M_R @ bind_t[..., None])[..., 0]  # (J, 3)
        A_R = torch.einsum("nj,jab->nab", self.W_skin, M_R)
        A_t = self.W_skin @ M_t
        return torch.einsum("nab,nb->na", A_R, rest) + A_t

    def correctives_t(self, Q: torch.Tensor) -> torch.Tensor:
        r6 = torch.cat([Q[..., :, 0], Q[..., :, 1]], dim=-1).reshape(-1)
        z = torch.tanh(self.c_w1 @ r6 + self.c_b1)
        return (z @ self.c_w2).reshape(-1, 3) - self.c_zero

    # -- end-to-end -------------------------------------------------------------

    def pose_mesh_t(
        self,
        rest: torch.Tensor,
        pose_aa: torch.Tensor | None = None,
        pose_Q: torch.Tensor | None = None,
        t0: torch.Tensor | None = None,
        correctives: bool = True,
    ) -> torch.Tensor:
        """Differentiable fit -> FK -> (+correctives) -> LBS, single frame."""
        Q = axis_angle_to_matrix_t(pose_aa) if pose_Q is None else pose_Q
        if t0 is None:
            t0 = torch.zeros(3, dtype=_DT)
        state_R, state_t = self.fit_skeleton_t(rest)
        G_R, G_t = self.forward_kinematics_t(Q, t0, state_R, state_t)
        effective = rest
        if correctives and self.c_w1 is not None:
            effective = rest + self.correctives_t(Q)
        return self.lbs_t(effective, G_R, G_t, state_R, state_t)


def _region_weight_vector(rig: RigAsset, region_weights: dict[str, float]) -> np.ndarray:
    w = np.ones(rig.num_vertices)
    if region_weights and rig.mesh.regions is not None:
        for name, scale in region_weights.items():
            if name == "all":
                w *= scale
                continue
            w[rig.mesh.regions == REGION_NAMES.index(name)] = scale
    return w


def invert_autograd(
    rig: RigAsset,
    posed_vertices: np.ndarray,
    init: PoseFrame | None,
    config: InversionConfig | None = None,
    rest_vertices: np.ndarray | None = None,
    regressor: JointRegressor | None = None,
    use_correctives: bool = False,
) -> InversionResult:
    """Adam refinement of 6D rotations + root translation through FK+LBS.

    ``init`` is mandatory unless ``config.allow_cold_start`` explicitly opts
    into the documented cold-start failure mode (bind-pose starts converge to
    wrong-limb minima). The best-so-far iterate under the optimization loss is
    returned, so a warm start can only improve.
    """
    cfg = (config or InversionConfig()).validate()
    if init is None:
        if not cfg.allow_cold_start:
            raise MissingInit(
                "invert_autograd requires a warm start; pass init or set allow_cold_start"
            )
        init = PoseFrame.identity(rig.num_joints)

    posed = np.asarray(posed_vertices, dtype=np.float64)
    rest = rig.bind_vertices() if rest_vertices is None else np.asarray(rest_vertices, np.float64)
    if regressor is None:
        regressor = build_joint_regressor(rig)
    drig = DifferentiableRig(rig, regressor=regressor)

    # the fitted skeleton is pose-independent: hold it constant
    state = fit_skeleton(rig, rest, regressor=regressor)
    state_R, state_t = _t(state.rotations), _t(state.positions)
    rest_t = _t(rest)
    obs = _t(posed)
    vweights = _t(_region_weight_vector(rig, cfg.region_weights))[:, None]

    params6 = torch.tensor(
        matrix_to_rot6d(init.rotation_matrices()), dtype=_DT, requires_grad=True
    )
    t0_init = (
        init.root_translation if init.root_translation is not None else np.zeros(3)
    )
    t0 = torch.tensor(np.asarray(t0_init, dtype=np.float64), requires_grad=True)

    def forward(p6, trans):
        Q = rot6d_to_matrix_t(p6)
        G_R, G_t = drig.forward_kinematics_t(Q, trans, state_R, state_t)
        effective = rest_t
        if use_correctives and drig.c_w1 is not None:
            effective = rest_t + drig.correctives_t(Q)
        return drig.lbs_t(effective, G_R, G_t, state_R, state_t)

    def loss_of(pred):
        return (vweights * (pred - obs) ** 2).sum() / vweights.sum()

    optimizer = torch.optim.Adam([params6, t0], lr=cfg.autograd_step, betas=(0.9, 0.999))
    with torch.no_grad():
        initial_loss = float(loss_of(forward(params6, t0)))
    best = {
        "loss": initial_loss,
        "p6": params6.detach().clone(),
        "t0": t0.detach().clone(),
        "iteration": 0,
    }
    for it in range(1, cfg.autograd_iterations + 1):
        optimizer.zero_grad()
        loss = loss_of(forward(params6, t0))
        loss.backward()
        optimizer.step()
        with torch.no_grad():
            current = float(loss_of(forward(params6, t0)))
        # Runaway guard: 10x the starting loss, with an absolute floor so the
        # transient first steps of a near-converged warm start never trip it.
        if current > 10.0 * initial_loss and current > initial_loss + 1e-2:
            raise Diverged(
                f"loss {current:.3e} exceeded 10x the initial {initial_loss:.3e} at step {it}"
            )
        if current < best["loss"]:
            best = {
                "loss": current,
                "p6": params6.detach().clone(),
                "t0": t0.detach().clone(),
                "iteration": it,
            }

    with torch.no_grad():
        Q_best = rot6d_to_matrix_t(best["p6"])
        pred = forward(best["p6"], best["t0"]).numpy()
    per_vertex = np.linalg.norm(pred - posed, axis=1)

    J = rig.num_joints
    Wd = rig.weights.matrix(J).toarray()
    joint_res = np.array(
        [
            per_vertex[Wd[:, k] >= SUPPORT_THRESHOLD].mean()
            if np.any(Wd[:, k] >= SUPPORT_THRESHOLD)
            else np.nan
            for k in range(J)
        ]
    )
    pose = PoseFrame(
        rotations=Q_best.numpy(),
        encoding="matrix",
        root_translation=best["t0"].numpy(),
        joint_orient=True,
    )
    return InversionResult(
        pose=pose,
        joint_residuals=joint_res,
        mean_vertex_error=float(per_vertex.mean()),
        diagnostics={
            "iterations": cfg.autograd_iterations,
            "best_iteration": best["iteration"],
            "initial_loss": initial_loss,
            "best_loss": best["loss"],
        },
    )
