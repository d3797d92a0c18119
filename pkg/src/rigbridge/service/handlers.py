"""Operations layer shared by the HTTP app and the CLI.

A ``RigWorkspace`` owns loaded rigs plus their factored regressors, so a
long-running service pays correspondence/regressor precomputation once and
serves many pose/invert calls against it. Handlers are plain functions of
pydantic models; the CLI calls them in-process, the app routes to them.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .. import __version__
from ..animation import pose_mesh
from ..bench import throughput_bench
from ..errors import UnknownTopology, ValidationError
from ..inversion import InversionConfig, invert
from ..io import load_obj, load_rig, save_rig
from ..metrics import region_breakdown, vertex_error_stats
from ..rig import Mesh, MotionSequence, PoseFrame, RigAsset
from ..skeleton_fit import JointRegressor, build_joint_regressor, fit_skeleton
from ..synth import SynthConfig, SynthRig, make_rig, sample_pose, with_correctives
from ..transfer import apply_correspondence, precompute_correspondence
from . import schemas as S


@dataclass
class RigEntry:
    rig: RigAsset
    regressor: JointRegressor
    synth: SynthRig | None = None


@dataclass
class RigWorkspace:
    rigs: dict[str, RigEntry] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def add(self, rig_id: str, rig: RigAsset, synth: SynthRig | None = None) -> RigEntry:
        entry = RigEntry(rig=rig, regressor=build_joint_regressor(rig), synth=synth)
        with self.lock:
            self.rigs[rig_id] = entry
        return entry

    def get(self, rig_id: str) -> RigEntry:
        with self.lock:
            entry = self.rigs.get(rig_id)
        if entry is None:
            raise ValidationError(f"no rig loaded under id '{rig_id}'")
        return entry


def _summary(rig_id: str, rig: RigAsset, saved_to: str | None = None) -> S.RigSummary:
    return S.RigSummary(
        rig_id=rig_id,
        vertices=rig.num_vertices,
        faces=rig.mesh.num_faces,
        joints=rig.num_joints,
        joint_names=list(rig.skeleton.names),
        has_correctives=rig.correctives is not None,
        has_regions=rig.mesh.regions is not None,
        correspondences=sorted(rig.correspondences),
        saved_to=saved_to,
    )


def health() -> S.HealthResponse:
    return S.HealthResponse(status="ok", version=__version__)


def synth_rig(ws: RigWorkspace, req: S.SynthRigRequest) -> S.RigSummary:
    cfg = SynthConfig(**req.spec.model_dump())
    synth = make_rig(cfg)
    if req.with_correctives:
        from ..animation import derive_corrective_masks, replicate_masks
        from ..synth import make_correctives_fixture

        masks = derive_corrective_masks(synth.rig, geodesic_radius=0.05)
        net = make_correctives_fixture(synth, masks, seed=cfg.seed)
        synth = with_correctives(synth, net)
    saved = None
    if req.save_path:
        save_rig(synth.rig, req.save_path)
        saved = req.save_path
    ws.add(req.rig_id, synth.rig, synth=synth)
    return _summary(req.rig_id, synth.rig, saved_to=saved)


def load(ws: RigWorkspace, req: S.LoadRigRequest) -> S.RigSummary:
    rig = load_rig(req.path)
    ws.add(req.rig_id, rig)
    return _summary(req.rig_id, rig)


def list_rigs(ws: RigWorkspace) -> list[S.RigSummary]:
    with ws.lock:
        items = list(ws.rigs.items())
    return [_summary(rig_id, e.rig) for rig_id, e in items]


def fit_skeleton_op(ws: RigWorkspace, rig_id: str, req: S.FitSkeletonRequest) -> S.FitSkeletonResponse:
    entry = ws.get(rig_id)
    rest = (
        entry.rig.bind_vertices()
        if req.rest_vertices is None
        else req.rest_vertices.to_numpy().astype(np.float64)
    )
    state = fit_skeleton(entry.rig, rest, regressor=entry.regressor)
    return S.FitSkeletonResponse(
        rotations=S.ArrayPayload.from_numpy(state.rotations),
        positions=S.ArrayPayload.from_numpy(state.positions),
        warnings=state.warnings,
    )


def pose_op(ws: RigWorkspace, rig_id: str, req: S.PoseRequest) -> S.PoseResponse:
    entry = ws.get(rig_id)
    rig = entry.rig
    rot = req.rotations.to_numpy().astype(np.float64)
    trans = None if req.root_translations is None else req.root_translations.to_numpy()
    rest = (
        rig.bind_vertices()
        if req.rest_vertices is None
        else req.rest_vertices.to_numpy().astype(np.float64)
    )
    single = rot.ndim == 2
    if single:
        pose = PoseFrame(
            rotations=rot,
            encoding=req.encoding,
            root_translation=trans,
            joint_orient=req.joint_orient,
        ).validate(rig.num_joints)
    else:
        pose = MotionSequence(
            fps=30.0,
            rotations=rot,
            encoding=req.encoding,
            root_translations=trans,
            joint_orient=req.joint_orient,
        )
    out = pose_mesh(rig, rest, pose, correctives=req.correctives, regressor=entry.regressor)
    return S.PoseResponse(vertices=S.ArrayPayload.from_numpy(out))


def transfer_op(ws: RigWorkspace, rig_id: str, req: S.TransferRequest) -> S.TransferResponse:
    entry = ws.get(rig_id)
    corr = entry.rig.correspondences.get(req.source_topology)
    if corr is None:
        raise UnknownTopology(f"no correspondence registered for '{req.source_topology}'")
    out = apply_correspondence(corr, req.source_vertices.to_numpy().astype(np.float64))
    return S.TransferResponse(vertices=S.ArrayPayload.from_numpy(out))


def precompute_op(ws: RigWorkspace, rig_id: str, req: S.PrecomputeRequest) -> S.PrecomputeResponse:
    entry = ws.get(rig_id)
    rig = entry.rig
    if req.source_path:
        source = load_obj(req.source_path)
    elif req.source_vertices is not None and req.source_faces is not None:
        source = Mesh(
            vertices=req.source_vertices.to_numpy().astype(np.float32),
            faces=req.source_faces.to_numpy().astype(np.int32),
        ).validate()
    else:
        raise ValidationError("precompute needs source_path or source arrays")
    wrap_vertices = (
        rig.mesh.vertices.copy()
        if req.wrap_vertices is None
        else req.wrap_vertices.to_numpy().astype(np.float32)
    )
    wrap = Mesh(vertices=wrap_vertices, faces=rig.mesh.faces.copy()).validate()
    corr = precompute_correspondence(source, wrap, source_id=req.source_topology)
    recon = apply_correspondence(corr, source.vertices.astype(np.float64))
    err = float(np.linalg.norm(recon - wrap.vertices.astype(np.float64), axis=1).mean())

    new_rig = RigAsset(
        mesh=rig.mesh,
        skeleton=rig.skeleton,
        weights=rig.weights,
        correctives=rig.correctives,
        correspondences={**rig.correspondences, corr.source_id: corr},
        regressor_cache=rig.regressor_cache,
    ).validate()
    saved = None
    if req.save_path:
        save_rig(new_rig, req.save_path)
        saved = req.save_path
    with ws.lock:
        ws.rigs[rig_id] = RigEntry(rig=new_rig, regressor=entry.regressor, synth=entry.synth)
    return S.PrecomputeResponse(
        source_topology=corr.source_id,
        targets=corr.num_targets,
        mean_reconstruction_error=err,
        saved_to=saved,
    )


def invert_op(ws: RigWorkspace, rig_id: str, req: S.InvertRequest) -> S.InvertResponse:
    entry = ws.get(rig_id)
    rig = entry.rig
    cfg = InversionConfig(
        mode=req.settings.mode,
        body_passes=req.settings.body_passes,
        finger_passes=req.settings.finger_passes,
        global_passes=req.settings.global_passes,
        tau=req.settings.tau,
        autograd_iterations=req.settings.autograd_iterations,
        autograd_step=req.settings.autograd_step,
        region_weights=dict(req.settings.region_weights),
        allow_cold_start=req.settings.allow_cold_start,
    ).validate()
    posed = req.posed_vertices.to_numpy().astype(np.float64)
    frames = posed[None] if posed.ndim == 2 else posed
    rotations, translations, diags = [], [], []
    for f in range(frames.shape[0]):
        result = invert(
            rig,
            frames[f],
            source_topology_id=req.source_topology,
            config=cfg,
            regressor=entry.regressor,
        )
        rotations.append(result.pose.rotation_matrices())
        t = result.pose.root_translation
        translations.append(np.zeros(3) if t is None else t)
        diags.append(
            S.FrameDiagnostics(
                mean_vertex_error=result.mean_vertex_error,
                joint_residuals=[float(x) for x in result.joint_residuals],
                extra=jsonable(result.diagnostics),
            )
        )
    return S.InvertResponse(
        rotations=S.ArrayPayload.from_numpy(np.stack(rotations)),
        root_translations=S.ArrayPayload.from_numpy(np.stack(translations)),
        encoding="matrix",
        diagnostics=diags,
    )


def vertex_error_op(req: S.VertexErrorRequest) -> S.VertexErrorResponse:
    a = req.a.to_numpy().astype(np.float64)
    b = req.b.to_numpy().astype(np.float64)
    if req.regions is not None:
        split = region_breakdown(a, b, req.regions.to_numpy())
        overall = split.pop("all")
        return S.VertexErrorResponse(
            overall=S.StatsBlock(**overall.as_mm()),
            per_region={k: S.StatsBlock(**v.as_mm()) for k, v in split.items()},
        )
    return S.VertexErrorResponse(overall=S.StatsBlock(**vertex_error_stats(a, b).as_mm()))


def bench_op(ws: RigWorkspace, rig_id: str, req: S.BenchRequest) -> S.BenchResponse:
    entry = ws.get(rig_id)
    rig = entry.rig
    rest = rig.bind_vertices()
    pose = sample_pose(rig, seed=req.seed)
    posed = pose_mesh(rig, rest, pose, correctives=False, regressor=entry.regressor)

    if req.stage == "pose":
        def stage(batch: int):
            seq = MotionSequence(
                fps=30.0,
                rotations=np.repeat(pose.rotations[None], batch, axis=0),
                root_translations=np.repeat(pose.root_translation[None], batch, axis=0),
            )
            return pose_mesh(rig, rest, seq, correctives=False, regressor=entry.regressor)
    elif req.stage in ("invert-init", "invert-analytical"):
        mode = "init" if req.stage == "invert-init" else "analytical"
        cfg = InversionConfig(mode=mode)

        def stage(batch: int):
            return [
                invert(rig, posed, config=cfg, regressor=entry.regressor)
                for _ in range(batch)
            ]
    else:
        raise ValidationError(f"unknown bench stage '{req.stage}'")

    report = throughput_bench(
        stage, req.batch_sizes, repetitions=req.repetitions, stage_name=req.stage
    )
    return S.BenchResponse(
        stage=report.stage,
        machine=report.machine,
        rows=[S.BenchRowModel(**vars(r)) for r in report.rows],
    )


def jsonable(obj):
    """Recursively convert numpy scalars/arrays for JSON-safe diagnostics."""
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    return obj
