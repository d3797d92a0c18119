"""Asset serialization: JSON manifests referencing raw little-endian blobs.

A rig lives in a directory: ``rig.json`` plus one ``.bin`` file per array.
Blob references are self-describing (``{"path", "dtype", "shape"}``) so the
loader never guesses dtypes. Loading converts to meters exactly once via the
manifest's ``unit_scale``; saving always writes meters with ``unit_scale=1``.
Binary payloads round-trip bit-exactly.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import (
    IoFailure,
    JointCountMismatch,
    MalformedAsset,
    MalformedMotion,
    UnitMissing,
)
from .rig import (
    CorrectivesNet,
    Correspondence,
    Mesh,
    MotionSequence,
    PoseFrame,
    RigAsset,
    Skeleton,
    SkinningWeights,
)

MANIFEST_NAME = "rig.json"
FORMAT_VERSION = 1


# -- blob helpers ----------------------------------------------------------

def _write_blob(directory: Path, name: str, array: np.ndarray, dtype: str) -> dict:
    arr = np.ascontiguousarray(array, dtype=np.dtype(dtype))
    path = directory / f"{name}.bin"
    try:
        arr.tofile(path)
    except OSError as exc:
        raise IoFailure(f"cannot write blob {path}: {exc}") from exc
    return {"path": path.name, "dtype": dtype, "shape": list(arr.shape)}


def _read_blob(directory: Path, ref: dict) -> np.ndarray:
    try:
        path = directory / ref["path"]
        dtype = np.dtype(ref["dtype"])
        shape = tuple(int(s) for s in ref["shape"])
    except (KeyError, TypeError) as exc:
        raise MalformedAsset(f"bad blob reference {ref!r}") from exc
    if not path.is_file():
        raise MalformedAsset(f"missing blob file {path}")
    data = np.fromfile(path, dtype=dtype)
    expected = int(np.prod(shape)) if shape else data.size
    if data.size != expected:
        raise MalformedAsset(f"blob {path.name}: expected {expected} items, found {data.size}")
    return data.reshape(shape)


def _resolve_manifest(path: str | os.PathLike) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_NAME
    if not p.is_file():
        raise MalformedAsset(f"no rig manifest at {p}")
    return p


# -- rig -------------------------------------------------------------------

def load_rig(path: str | os.PathLike) -> RigAsset:
    """Load and fully validate a rig bundle; raises on any invariant breach."""
    manifest_path = _resolve_manifest(path)
    directory = manifest_path.parent
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedAsset(f"cannot parse {manifest_path}: {exc}") from exc
    if "unit_scale" not in manifest:
        raise UnitMissing(f"{manifest_path} declares no unit_scale")
    scale = float(manifest["unit_scale"])

    try:
        mesh_spec = manifest["mesh"]
        skel_spec = manifest["skeleton"]
        weight_spec = manifest["weights"]
    except KeyError as exc:
        raise MalformedAsset(f"manifest missing section {exc}") from exc

    vertices = _read_blob(directory, mesh_spec["vertices_blob"]).astype(np.float64) * scale
    mesh = Mesh(
        vertices=vertices.astype(np.float32),
        faces=_read_blob(directory, mesh_spec["faces_blob"]),
        regions=(
            _read_blob(directory, mesh_spec["regions_blob"])
            if "regions_blob" in mesh_spec
            else None
        ),
    )
    skeleton = Skeleton(
        names=list(skel_spec["names"]),
        parents=np.asarray(skel_spec["parents"], dtype=np.int32),
        bind_rotations=_read_blob(directory, skel_spec["bind_rotations_blob"]),
        bind_translations=_read_blob(directory, skel_spec["bind_translations_blob"]) * scale,
    )
    weights = SkinningWeights(
        offsets=_read_blob(directory, weight_spec["offsets_blob"]),
        indices=_read_blob(directory, weight_spec["indices_blob"]),
        values=_read_blob(directory, weight_spec["values_blob"]),
    )

    correctives = None
    if "correctives" in manifest:
        c = manifest["correctives"]
        correctives = CorrectivesNet(
            stage1_weight=_read_blob(directory, c["stage1_weight_blob"]),
            stage1_bias=_read_blob(directory, c["stage1_bias_blob"]),
            stage2_weight=_read_blob(directory, c["stage2_weight_blob"]),
            masks=_read_blob(directory, c["masks_blob"]).astype(bool),
            channels=int(c["channels"]),
        )

    correspondences = {}
    for spec in manifest.get("correspondences", []):
        corr = Correspondence(
            source_id=spec["source_id"],
            face_index=_read_blob(directory, spec["faces_blob"]),
            bary=_read_blob(directory, spec["bary_blob"]),
            source_face_count=int(spec["source_face_count"]),
            source_vertex_count=int(spec["source_vertex_count"]),
            corners=_read_blob(directory, spec["corners_blob"]),
            unmatched=(
                _read_blob(directory, spec["unmatched_blob"]).astype(bool)
                if "unmatched_blob" in spec
                else None
            ),
        )
        correspondences[corr.source_id] = corr

    regressor = None
    if "regressor" in manifest:
        r = manifest["regressor"]
        regressor = sp.csr_matrix(
            (
                _read_blob(directory, r["values_blob"]),
                _read_blob(directory, r["indices_blob"]),
                _read_blob(directory, r["offsets_blob"]),
            ),
            shape=(skeleton.num_joints, mesh.num_vertices),
        )

    rig = RigAsset(
        mesh=mesh,
        skeleton=skeleton,
        weights=weights,
        correctives=correctives,
        correspondences=correspondences,
        unit_scale=1.0,
        regressor_cache=regressor,
    )
    return rig.validate()


def save_rig(rig: RigAsset, path: str | os.PathLike) -> None:
    """Write a rig bundle; ``load_rig(save_rig(rig))`` reproduces it bit-exactly."""
    directory = Path(path)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {directory}: {exc}") from exc

    manifest: dict = {
        "version": FORMAT_VERSION,
        "unit_scale": 1.0,
        "mesh": {
            "vertices_blob": _write_blob(directory, "mesh_vertices", rig.mesh.vertices, "<f4"),
            "faces_blob": _write_blob(directory, "mesh_faces", rig.mesh.faces, "<i4"),
        },
        "skeleton": {
            "names": rig.skeleton.names,
            "parents": [int(p) for p in rig.skeleton.parents],
            "bind_rotations_blob": _write_blob(
                directory, "bind_rotations", rig.skeleton.bind_rotations, "<f8"
            ),
            "bind_translations_blob": _write_blob(
                directory, "bind_translations", rig.skeleton.bind_translations, "<f8"
            ),
        },
        "weights": {
            "offsets_blob": _write_blob(directory, "weight_offsets", rig.weights.offsets, "<i4"),
            "indices_blob": _write_blob(directory, "weight_indices", rig.weights.indices, "<i4"),
            "values_blob": _write_blob(directory, "weight_values", rig.weights.values, "<f4"),
        },
    }
    if rig.mesh.regions is not None:
        manifest["mesh"]["regions_blob"] = _write_blob(
            directory, "mesh_regions", rig.mesh.regions, "<i4"
        )
    if rig.correctives is not None:
        c = rig.correctives
        manifest["correctives"] = {
            "channels": c.channels,
            "stage1_weight_blob": _write_blob(directory, "corr_stage1_w", c.stage1_weight, "<f4"),
            "stage1_bias_blob": _write_blob(directory, "corr_stage1_b", c.stage1_bias, "<f4"),
            "stage2_weight_blob": _write_blob(directory, "corr_stage2_w", c.stage2_weight, "<f4"),
            "masks_blob": _write_blob(directory, "corr_masks", c.masks.astype(np.uint8), "u1"),
        }
    if rig.correspondences:
        entries = []
        for source_id in sorted(rig.correspondences):
            corr = rig.correspondences[source_id]
            tag = f"corr_{source_id}"
            entry = {
                "source_id": source_id,
                "source_face_count": corr.source_face_count,
                "source_vertex_count": corr.source_vertex_count,
                "faces_blob": _write_blob(directory, f"{tag}_faces", corr.face_index, "<i4"),
                "bary_blob": _write_blob(directory, f"{tag}_bary", corr.bary, "<f8"),
                "corners_blob": _write_blob(directory, f"{tag}_corners", corr.corners, "<i4"),
            }
            if corr.unmatched is not None:
                entry["unmatched_blob"] = _write_blob(
                    directory, f"{tag}_unmatched", corr.unmatched.astype(np.uint8), "u1"
                )
            entries.append(entry)
        manifest["correspondences"] = entries
    if rig.regressor_cache is not None:
        m = rig.regressor_cache
        manifest["regressor"] = {
            "offsets_blob": _write_blob(directory, "regressor_offsets", m.indptr, "<i4"),
            "indices_blob": _write_blob(directory, "regressor_indices", m.indices, "<i4"),
            "values_blob": _write_blob(directory, "regressor_values", m.data, "<f8"),
        }

    try:
        (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    except OSError as exc:
        raise IoFailure(f"cannot write manifest in {directory}: {exc}") from exc


# -- motion ------------------------------------------------------------------

_ENCODING_DIM = {"axis_angle": (3,), "matrix": (3, 3), "rot6d": (6,)}


def save_motion(seq: MotionSequence, path: str | os.PathLike) -> None:
    """Write a motion file: JSON header plus binary frame blob(s)."""
    header_path = Path(path)
    directory = header_path.parent
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {directory}: {exc}") from exc
    stem = header_path.stem
    F = len(seq)
    J = int(seq.rotations.shape[1]) if seq.rotations.ndim >= 2 else 0
    header = {
        "version": FORMAT_VERSION,
        "fps": seq.fps,
        "encoding": seq.encoding,
        "joint_count": J,
        "frame_count": F,
        "joint_orient": seq.joint_orient,
        "rotations_blob": _write_blob(directory, f"{stem}_rotations", seq.rotations, "<f4"),
    }
    if seq.root_translations is not None:
        header["root_translations_blob"] = _write_blob(
            directory, f"{stem}_translations", seq.root_translations, "<f4"
        )
    try:
        header_path.write_text(json.dumps(header, indent=2))
    except OSError as exc:
        raise IoFailure(f"cannot write motion header {header_path}: {exc}") from exc


def load_motion(path: str | os.PathLike, expected_joints: int | None = None) -> MotionSequence:
    header_path = Path(path)
    if not header_path.is_file():
        raise MalformedMotion(f"no motion file at {header_path}")
    try:
        header = json.loads(header_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedMotion(f"cannot parse {header_path}: {exc}") from exc
    try:
        encoding = header["encoding"]
        joint_count = int(header["joint_count"])
        frame_count = int(header["frame_count"])
        fps = float(header["fps"])
        rot_ref = header["rotations_blob"]
    except KeyError as exc:
        raise MalformedMotion(f"motion header missing {exc}") from exc
    if encoding not in _ENCODING_DIM:
        raise MalformedMotion(f"unknown encoding '{encoding}'")
    try:
        rotations = _read_blob(header_path.parent, rot_ref)
    except MalformedAsset as exc:
        raise MalformedMotion(str(exc)) from exc
    expected_shape = (frame_count, joint_count, *_ENCODING_DIM[encoding])
    if tuple(rotations.shape) != expected_shape:
        raise MalformedMotion(
            f"rotation blob shape {rotations.shape} != header-implied {expected_shape}"
        )
    if expected_joints is not None and joint_count != expected_joints:
        raise JointCountMismatch(
            f"motion declares {joint_count} joints, rig has {expected_joints}"
        )
    translations = None
    if "root_translations_blob" in header:
        try:
            translations = _read_blob(header_path.parent, header["root_translations_blob"])
        except MalformedAsset as exc:
            raise MalformedMotion(str(exc)) from exc
        if tuple(translations.shape) != (frame_count, 3):
            raise MalformedMotion("root translation blob shape mismatch")
    seq = MotionSequence(
        fps=fps,
        rotations=rotations.astype(np.float64),
        encoding=encoding,
        root_translations=None if translations is None else translations.astype(np.float64),
        joint_orient=bool(header.get("joint_orient", True)),
    )
    if frame_count:
        seq.frame(0).validate(joint_count)
    return seq


# -- wavefront OBJ -----------------------------------------------------------

def load_obj(path: str | os.PathLike) -> Mesh:
    """Import a source mesh; polygon faces are fan-triangulated."""
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    try:
        with open(path) as fh:
            for line in fh:
                parts = line.split()
                if not parts:
                    continue
                if parts[0] == "v":
                    vertices.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                    idx = [i - 1 if i > 0 else len(vertices) + i for i in idx]
                    for k in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[k], idx[k + 1]])
    except OSError as exc:
        raise IoFailure(f"cannot read OBJ {path}: {exc}") from exc
    except ValueError as exc:
        raise MalformedAsset(f"bad OBJ line in {path}: {exc}") from exc
    return Mesh(
        vertices=np.asarray(vertices, dtype=np.float32),
        faces=np.asarray(faces, dtype=np.int32).reshape(-1, 3),
    ).validate()


def save_obj(path: str | os.PathLike, vertices: np.ndarray, faces: np.ndarray) -> None:
    try:
        with open(path, "w") as fh:
            for v in np.asarray(vertices, dtype=np.float64):
                fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
            for f in np.asarray(faces, dtype=np.int64) + 1:
                fh.write(f"f {f[0]} {f[1]} {f[2]}\n")
    except OSError as exc:
        raise IoFailure(f"cannot write OBJ {path}: {exc}") from exc
