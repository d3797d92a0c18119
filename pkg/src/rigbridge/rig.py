"""Canonical rig data model: mesh, skeleton, weights, poses and the bundled asset.

All geometry is in meters once an object exists; unit conversion happens in
the loader, never downstream. Arrays are frozen (``writeable=False``) after
validation so assets can be shared across workers without copies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ValidationFailure
from .rotations import rot6d_to_matrix, axis_angle_to_matrix

REGION_NAMES = ("body", "hands", "feet", "head")

MIN_TRIANGLE_AREA = 1e-12  # m^2
ROTATION_ORTHO_TOL = 1e-8
WEIGHT_SUM_TOL = 1e-6
POSE_MATRIX_TOL = 1e-6

FINGER_PREFIX = "finger_"


def _freeze(*arrays: np.ndarray) -> None:
    for a in arrays:
        a.flags.writeable = False


@dataclass
class Mesh:
    """Triangle mesh; ``regions`` holds per-vertex indices into REGION_NAMES."""

    vertices: np.ndarray  # (N, 3) float32
    faces: np.ndarray  # (F, 3) int32
    regions: np.ndarray | None = None  # (N,) int32

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float32)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int32)
        if self.regions is not None:
            self.regions = np.ascontiguousarray(self.regions, dtype=np.int32)

    @property
    def num_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def num_faces(self) -> int:
        return int(self.faces.shape[0])

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices.astype(np.float64)
        a, b, c = v[self.faces[:, 0]], v[self.faces[:, 1]], v[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def region_mask(self, name: str) -> np.ndarray:
        if self.regions is None:
            raise ValidationFailure("region labels missing from mesh")
        if name == "all":
            return np.ones(self.num_vertices, dtype=bool)
        return self.regions == REGION_NAMES.index(name)

    def validate(self) -> "Mesh":
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValidationFailure("mesh vertices shape")
        if not np.all(np.isfinite(self.vertices)):
            raise ValidationFailure("mesh vertices finite")
        if self.faces.size:
            if self.faces.ndim != 2 or self.faces.shape[1] != 3:
                raise ValidationFailure("mesh faces shape")
            if self.faces.min() < 0 or self.faces.max() >= self.num_vertices:
                raise ValidationFailure("face index out of range")
            f = self.faces
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise ValidationFailure("degenerate face: repeated vertex index")
            if np.any(self.triangle_areas() <= MIN_TRIANGLE_AREA):
                raise ValidationFailure("degenerate face: near-zero area")
        if self.regions is not None:
            if self.regions.shape != (self.num_vertices,):
                raise ValidationFailure("region label count")
            if self.regions.min() < 0 or self.regions.max() >= len(REGION_NAMES):
                raise ValidationFailure("region label out of range")
            _freeze(self.regions)
        _freeze(self.vertices, self.faces)
        return self


@dataclass
class Skeleton:
    """Topologically sorted joint hierarchy with world-space bind transforms.

    ``parents[0] == -1`` marks the root; every other parent index precedes its
    child. The pose vector downstream has one rotation per joint.
    """

    names: list[str]
    parents: np.ndarray  # (J,) int32, root == -1
    bind_rotations: np.ndarray  # (J, 3, 3) float64
    bind_translations: np.ndarray  # (J, 3) float64

    def __post_init__(self):
        self.parents = np.ascontiguousarray(self.parents, dtype=np.int32)
        self.bind_rotations = np.ascontiguousarray(self.bind_rotations, dtype=np.float64)
        self.bind_translations = np.ascontiguousarray(self.bind_translations, dtype=np.float64)
        self.names = list(self.names)

    @property
    def num_joints(self) -> int:
        return int(self.parents.shape[0])

    def children(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.num_joints)]
        for j in range(1, self.num_joints):
            out[int(self.parents[j])].append(j)
        return out

    def subtree_masks(self) -> np.ndarray:
        """(J, J) bool; row k flags k and all of its descendants."""
        J = self.num_joints
        masks = np.eye(J, dtype=bool)
        for j in range(J - 1, 0, -1):
            masks[int(self.parents[j])] |= masks[j]
        return masks

    def finger_joints(self) -> np.ndarray:
        return np.array([n.startswith(FINGER_PREFIX) for n in self.names], dtype=bool)

    def validate(self) -> "Skeleton":
        J = self.num_joints
        if len(self.names) != J:
            raise ValidationFailure("joint name count")
        if J == 0:
            raise ValidationFailure("empty skeleton")
        if self.parents[0] != -1:
            raise ValidationFailure("hierarchy root: joint 0 must have parent -1")
        if np.sum(self.parents < 0) != 1:
            raise ValidationFailure("hierarchy must have exactly one root")
        for j in range(1, J):
            if not (0 <= self.parents[j] < j):
                raise ValidationFailure(
                    f"hierarchy cycle or unsorted parent at joint {j} "
                    "(parent index must be smaller than the joint index)"
                )
        if self.bind_rotations.shape != (J, 3, 3):
            raise ValidationFailure("bind rotation shape")
        if self.bind_translations.shape != (J, 3):
            raise ValidationFailure("bind translation shape")
        if not np.all(np.isfinite(self.bind_rotations)) or not np.all(
            np.isfinite(self.bind_translations)
        ):
            raise ValidationFailure("bind transform finite")
        R = self.bind_rotations
        defect = np.linalg.norm(np.swapaxes(R, 1, 2) @ R - np.eye(3), axis=(1, 2))
        if np.any(defect > ROTATION_ORTHO_TOL):
            raise ValidationFailure("bind rotation orthonormality")
        if np.any(np.linalg.det(R) < 0.0):
            raise ValidationFailure("bind rotation determinant")
        _freeze(self.parents, self.bind_rotations, self.bind_translations)
        return self


@dataclass
class SkinningWeights:
    """CSR-style sparse vertex-to-joint weights (row per vertex)."""

    offsets: np.ndarray  # (N+1,) int32
    indices: np.ndarray  # (nnz,) int32
    values: np.ndarray  # (nnz,) float32

    def __post_init__(self):
        self.offsets = np.ascontiguousarray(self.offsets, dtype=np.int32)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int32)
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)

    @property
    def num_vertices(self) -> int:
        return int(self.offsets.shape[0] - 1)

    def matrix(self, num_joints: int) -> sp.csr_matrix:
        """Double-precision CSR view with rows renormalized to sum exactly 1.

        Values are stored in float32, so raw row sums carry ~1e-7 quantization;
        renormalizing here keeps blend identities (e.g. zero-pose LBS) exact.
        """
        m = sp.csr_matrix(
            (self.values.astype(np.float64), self.indices, self.offsets),
            shape=(self.num_vertices, num_joints),
        )
        sums = np.asarray(m.sum(axis=1)).ravel()
        scale = np.where(sums > 0, 1.0 / np.where(sums > 0, sums, 1.0), 1.0)
        m.data *= np.repeat(scale, np.diff(m.indptr))
        return m

    def to_dense(self, num_joints: int) -> np.ndarray:
        return self.matrix(num_joints).toarray()

    @classmethod
    def from_dense(cls, dense: np.ndarray, prune: float = 1e-9) -> "SkinningWeights":
        dense = np.where(np.abs(dense) < prune, 0.0, dense)
        m = sp.csr_matrix(dense)
        m.eliminate_zeros()
        return cls(
            offsets=m.indptr.astype(np.int32),
            indices=m.indices.astype(np.int32),
            values=m.data.astype(np.float32),
        )

    def validate(self, num_joints: int) -> "SkinningWeights":
        if self.offsets[0] != 0 or self.offsets[-1] != self.values.shape[0]:
            raise ValidationFailure("weights offsets malformed")
        if np.any(np.diff(self.offsets) < 0):
            raise ValidationFailure("weights offsets malformed")
        if self.indices.shape != self.values.shape:
            raise ValidationFailure("weights indices/values length mismatch")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= num_joints):
            raise ValidationFailure("weight joint index out of range")
        if np.any(self.values < 0.0):
            raise ValidationFailure("weights non-negative")
        sums = np.add.reduceat(
            self.values.astype(np.float64),
            self.offsets[:-1],
        ) if self.values.size else np.zeros(self.num_vertices)
        # reduceat misbehaves on empty rows; recompute via the sparse matrix.
        if np.any(np.diff(self.offsets) == 0):
            sums = np.asarray(self.matrix(num_joints).sum(axis=1)).ravel()
        if np.any(np.abs(sums - 1.0) > WEIGHT_SUM_TOL):
            raise ValidationFailure("weights sum to one per vertex")
        _freeze(self.offsets, self.indices, self.values)
        return self


@dataclass
class PoseFrame:
    """Per-joint local rotations plus optional root translation.

    ``joint_orient=True`` means rotations are relative to each joint's bind
    frame, so the all-identity pose reproduces the bind skeleton.
    """

    rotations: np.ndarray  # (J, 3) axis-angle | (J, 3, 3) matrix | (J, 6) 6d
    encoding: str = "axis_angle"  # axis_angle | matrix | rot6d
    root_translation: np.ndarray | None = None  # (3,)
    joint_orient: bool = True

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        if self.root_translation is not None:
            self.root_translation = np.asarray(self.root_translation, dtype=np.float64)

    @property
    def num_joints(self) -> int:
        return int(self.rotations.shape[0])

    def rotation_matrices(self) -> np.ndarray:
        if self.encoding == "axis_angle":
            return axis_angle_to_matrix(self.rotations)
        if self.encoding == "matrix":
            return self.rotations
        if self.encoding == "rot6d":
            return rot6d_to_matrix(self.rotations)
        raise ValidationFailure(f"unknown pose encoding '{self.encoding}'")

    def validate(self, num_joints: int) -> "PoseFrame":
        expected = {"axis_angle": (num_joints, 3), "matrix": (num_joints, 3, 3), "rot6d": (num_joints, 6)}
        if self.encoding not in expected:
            raise ValidationFailure(f"unknown pose encoding '{self.encoding}'")
        if self.rotations.shape != expected[self.encoding]:
            raise ValidationFailure(
                f"pose rotation count: expected {expected[self.encoding]}, got {self.rotations.shape}"
            )
        if self.encoding == "matrix":
            R = self.rotations
            defect = np.linalg.norm(np.swapaxes(R, 1, 2) @ R - np.eye(3), axis=(1, 2))
            if np.any(defect > POSE_MATRIX_TOL) or np.any(np.linalg.det(R) < 0):
                raise ValidationFailure("pose matrix not a valid rotation")
        if self.root_translation is not None and self.root_translation.shape != (3,):
            raise ValidationFailure("root translation shape")
        return self

    @classmethod
    def identity(cls, num_joints: int, joint_orient: bool = True) -> "PoseFrame":
        return cls(rotations=np.zeros((num_joints, 3)), encoding="axis_angle", joint_orient=joint_orient)


@dataclass
class MotionSequence:
    """Frames share encoding/joint count; timestamps are index / fps."""

    fps: float
    rotations: np.ndarray  # (F, J, D)
    encoding: str = "axis_angle"
    root_translations: np.ndarray | None = None  # (F, 3)
    joint_orient: bool = True

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        if self.root_translations is not None:
            self.root_translations = np.asarray(self.root_translations, dtype=np.float64)

    def __len__(self) -> int:
        return int(self.rotations.shape[0])

    def frame(self, i: int) -> PoseFrame:
        t = None if self.root_translations is None else self.root_translations[i]
        return PoseFrame(
            rotations=self.rotations[i],
            encoding=self.encoding,
            root_translation=t,
            joint_orient=self.joint_orient,
        )

    def timestamps(self) -> np.ndarray:
        return np.arange(len(self)) / self.fps


@dataclass
class Correspondence:
    """Fixed barycentric map from a source topology onto the canonical mesh.

    ``corners`` materializes the lifted tetra's face table: the three source
    vertex indices of each referenced face, so runtime application needs only
    deformed source vertices, never the source face list.
    """

    source_id: str
    face_index: np.ndarray  # (N_h,) int32
    bary: np.ndarray  # (N_h, 4) float64
    source_face_count: int
    source_vertex_count: int
    corners: np.ndarray = None  # (N_h, 3) int32
    unmatched: np.ndarray | None = None  # (N_h,) bool, optional exclusion mask

    def __post_init__(self):
        self.face_index = np.ascontiguousarray(self.face_index, dtype=np.int32)
        self.bary = np.ascontiguousarray(self.bary, dtype=np.float64)
        if self.corners is not None:
            self.corners = np.ascontiguousarray(self.corners, dtype=np.int32)
        if self.unmatched is not None:
            self.unmatched = np.ascontiguousarray(self.unmatched, dtype=bool)

    @property
    def num_targets(self) -> int:
        return int(self.face_index.shape[0])

    def validate(self) -> "Correspondence":
        if self.bary.shape != (self.num_targets, 4):
            raise ValidationFailure("barycentric array shape")
        if np.any(np.abs(self.bary.sum(axis=1) - 1.0) > 1e-6):
            raise ValidationFailure("barycentric partition of unity")
        if self.face_index.size and (
            self.face_index.min() < 0 or self.face_index.max() >= self.source_face_count
        ):
            raise ValidationFailure("correspondence face index out of range")
        if self.corners is None or self.corners.shape != (self.num_targets, 3):
            raise ValidationFailure("correspondence corner table shape")
        if self.corners.size and (
            self.corners.min() < 0 or self.corners.max() >= self.source_vertex_count
        ):
            raise ValidationFailure("correspondence corner index out of range")
        if self.unmatched is not None and self.unmatched.shape != (self.num_targets,):
            raise ValidationFailure("unmatched mask shape")
        _freeze(self.face_index, self.bary, self.corners)
        return self


@dataclass
class CorrectivesNet:
    """Two-stage corrective displacement net with fixed per-activation masks.

    Stage 1 maps flattened 6D local rotations to K = J * C activations; stage 2
    maps activations to per-vertex displacements. Masks are baked into the
    stage-2 weights at construction so out-of-mask vertices are exactly zero.
    """

    stage1_weight: np.ndarray  # (K, J*6) float32
    stage1_bias: np.ndarray  # (K,) float32
    stage2_weight: np.ndarray  # (K, N*3) float32
    masks: np.ndarray  # (K, N) bool
    channels: int  # C, activations per joint

    def __post_init__(self):
        self.stage1_weight = np.ascontiguousarray(self.stage1_weight, dtype=np.float32)
        self.stage1_bias = np.ascontiguousarray(self.stage1_bias, dtype=np.float32)
        self.stage2_weight = np.ascontiguousarray(self.stage2_weight, dtype=np.float32)
        self.masks = np.ascontiguousarray(self.masks, dtype=bool)
        # Bake masks into stage 2 so locality holds exactly at runtime.
        masked = self.stage2_weight.reshape(self.masks.shape[0], -1, 3).copy()
        masked[~self.masks] = 0.0
        self.stage2_weight = np.ascontiguousarray(masked.reshape(self.masks.shape[0], -1))

    @property
    def num_activations(self) -> int:
        return int(self.stage1_weight.shape[0])

    @property
    def num_joints(self) -> int:
        return int(self.stage1_weight.shape[1] // 6)

    @property
    def num_vertices(self) -> int:
        return int(self.stage2_weight.shape[1] // 3)

    def validate(self, num_joints: int, num_vertices: int) -> "CorrectivesNet":
        K = self.num_activations
        if self.stage1_weight.shape != (K, num_joints * 6):
            raise ValidationFailure("correctives stage-1 shape")
        if K != num_joints * self.channels:
            raise ValidationFailure("correctives activation count K != J*C")
        if self.stage1_bias.shape != (K,):
            raise ValidationFailure("correctives stage-1 bias shape")
        if self.stage2_weight.shape != (K, num_vertices * 3):
            raise ValidationFailure("correctives stage-2 shape")
        if self.masks.shape != (K, num_vertices):
            raise ValidationFailure("correctives mask shape")
        frac = self.masks.mean(axis=1)
        if np.any(frac >= 0.3):
            raise ValidationFailure("correctives mask sparsity (>= 30% of vertices)")
        _freeze(self.stage1_weight, self.stage1_bias, self.stage2_weight, self.masks)
        return self


@dataclass
class SkeletonState:
    """World-space rigid transform per joint, either fitted or posed."""

    rotations: np.ndarray  # (J, 3, 3) float64
    positions: np.ndarray  # (J, 3) float64
    source: str = "fitted"  # fitted | posed
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.float64)

    @property
    def num_joints(self) -> int:
        return int(self.positions.shape[0])

    def matrices(self) -> np.ndarray:
        J = self.num_joints
        M = np.tile(np.eye(4), (J, 1, 1))
        M[:, :3, :3] = self.rotations
        M[:, :3, 3] = self.positions
        return M


@dataclass
class RigAsset:
    """Immutable bundle consumed by every downstream stage."""

    mesh: Mesh
    skeleton: Skeleton
    weights: SkinningWeights
    correctives: CorrectivesNet | None = None
    correspondences: dict[str, Correspondence] = field(default_factory=dict)
    unit_scale: float = 1.0  # meters per native unit; 1.0 once loaded
    regressor_cache: sp.csr_matrix | None = None  # optional precomputed J x N map

    @property
    def num_joints(self) -> int:
        return self.skeleton.num_joints

    @property
    def num_vertices(self) -> int:
        return self.mesh.num_vertices

    def bind_vertices(self) -> np.ndarray:
        return self.mesh.vertices.astype(np.float64)

    def validate(self) -> "RigAsset":
        self.mesh.validate()
        self.skeleton.validate()
        self.weights.validate(self.num_joints)
        if self.weights.num_vertices != self.num_vertices:
            raise ValidationFailure("weight row count != mesh vertex count")
        lo = self.mesh.vertices.min(axis=0).astype(np.float64)
        hi = self.mesh.vertices.max(axis=0).astype(np.float64)
        center, half = (lo + hi) / 2, (hi - lo) / 2
        pad = half * 1.1 + 1e-9
        t = self.skeleton.bind_translations
        if np.any(np.abs(t - center) > pad):
            raise ValidationFailure("bind joint outside inflated mesh bounding box")
        if self.correctives is not None:
            self.correctives.validate(self.num_joints, self.num_vertices)
        for corr in self.correspondences.values():
            corr.validate()
            if corr.num_targets != self.num_vertices:
                raise ValidationFailure("correspondence target count != canonical vertex count")
        return self
