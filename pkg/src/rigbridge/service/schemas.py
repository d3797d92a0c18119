"""Pydantic request/response models for the service and the CLI client.

Numeric arrays travel as base64-encoded little-endian buffers with explicit
dtype and shape, so values survive the wire bit-exactly.
"""

from __future__ import annotations

import base64

import numpy as np
from pydantic import BaseModel, Field


class ArrayPayload(BaseModel):
    dtype: str  # numpy dtype string, e.g. "<f8"
    shape: list[int]
    data_b64: str

    @classmethod
    def from_numpy(cls, arr: np.ndarray, dtype: str | None = None) -> "ArrayPayload":
        a = np.ascontiguousarray(arr if dtype is None else arr.astype(np.dtype(dtype)))
        return cls(
            dtype=a.dtype.str,
            shape=list(a.shape),
            data_b64=base64.b64encode(a.tobytes()).decode("ascii"),
        )

    def to_numpy(self) -> np.ndarray:
        raw = base64.b64decode(self.data_b64)
        return np.frombuffer(raw, dtype=np.dtype(self.dtype)).reshape(self.shape).copy()


class HealthResponse(BaseModel):
    status: str
    version: str


class SynthSpec(BaseModel):
    seed: int = 7
    radial_segments: int = 14
    axial_density: float = 28.0
    arms: int = 2
    legs: int = 2
    fingers: int = 0
    dense_chain: bool = False
    pose_limit_deg: float = 45.0


class SynthRigRequest(BaseModel):
    rig_id: str = "synthetic"
    spec: SynthSpec = Field(default_factory=SynthSpec)
    with_correctives: bool = False
    save_path: str | None = None  # server-side directory to persist the rig


class LoadRigRequest(BaseModel):
    rig_id: str
    path: str  # server-side rig directory or manifest


class RigSummary(BaseModel):
    rig_id: str
    vertices: int
    faces: int
    joints: int
    joint_names: list[str]
    has_correctives: bool
    has_regions: bool
    correspondences: list[str]
    saved_to: str | None = None


class FitSkeletonRequest(BaseModel):
    rest_vertices: ArrayPayload | None = None  # default: the rig's bind mesh


class FitSkeletonResponse(BaseModel):
    rotations: ArrayPayload  # (J, 3, 3)
    positions: ArrayPayload  # (J, 3)
    warnings: list[str]


class PoseRequest(BaseModel):
    rotations: ArrayPayload  # (J, D) single frame or (F, J, D) batch
    encoding: str = "axis_angle"
    root_translations: ArrayPayload | None = None  # (3,) or (F, 3)
    joint_orient: bool = True
    correctives: bool = True
    rest_vertices: ArrayPayload | None = None


class PoseResponse(BaseModel):
    vertices: ArrayPayload  # (N, 3) or (F, N, 3)


class TransferRequest(BaseModel):
    source_topology: str
    source_vertices: ArrayPayload  # (N_s, 3) or (F, N_s, 3)


class TransferResponse(BaseModel):
    vertices: ArrayPayload


class PrecomputeRequest(BaseModel):
    source_topology: str
    source_path: str | None = None  # OBJ on the server
    source_vertices: ArrayPayload | None = None
    source_faces: ArrayPayload | None = None
    wrap_vertices: ArrayPayload | None = None  # default: the rig's bind mesh
    save_path: str | None = None  # persist updated rig here


class PrecomputeResponse(BaseModel):
    source_topology: str
    targets: int
    mean_reconstruction_error: float
    saved_to: str | None = None


class InversionSettings(BaseModel):
    mode: str = "analytical"  # init | analytical | autograd
    body_passes: int = 2
    finger_passes: int = 1
    global_passes: int = 1
    tau: float = 0.5
    autograd_iterations: int = 100
    autograd_step: float = 1e-2
    region_weights: dict[str, float] = Field(default_factory=dict)
    allow_cold_start: bool = False


class InvertRequest(BaseModel):
    posed_vertices: ArrayPayload  # (N, 3) or (F, N, 3)
    source_topology: str | None = None
    settings: InversionSettings = Field(default_factory=InversionSettings)


class FrameDiagnostics(BaseModel):
    mean_vertex_error: float
    joint_residuals: list[float]
    extra: dict


class InvertResponse(BaseModel):
    rotations: ArrayPayload  # (F, J, 3, 3)
    root_translations: ArrayPayload  # (F, 3)
    encoding: str
    diagnostics: list[FrameDiagnostics]


class VertexErrorRequest(BaseModel):
    a: ArrayPayload
    b: ArrayPayload
    regions: ArrayPayload | None = None


class StatsBlock(BaseModel):
    mean_mm: float
    median_mm: float
    p95_mm: float
    max_mm: float
    count: int


class VertexErrorResponse(BaseModel):
    overall: StatsBlock
    per_region: dict[str, StatsBlock] = Field(default_factory=dict)


class BenchRequest(BaseModel):
    stage: str = "pose"  # pose | invert-init | invert-analytical
    batch_sizes: list[int] = Field(default_factory=lambda: [1, 8, 32])
    repetitions: int = 5
    seed: int = 7


class BenchRowModel(BaseModel):
    batch: int
    ms_per_call: float
    items_per_sec: float
    repetitions: int
    low_confidence: bool


class BenchResponse(BaseModel):
    stage: str
    machine: dict
    rows: list[BenchRowModel]
