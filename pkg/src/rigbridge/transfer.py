"""Tetrahedral-barycentric topology transfer.

Precompute binds every canonical vertex to its closest source triangle,
lifted to a tetrahedron by an unnormalized cross-product vertex
``u4 = u1 + (u2 - u1) x (u3 - u1)``; runtime application is a pure gather
plus the same lifting, so off-surface registrations reproduce exactly and
the whole map stays differentiable in the source vertices.
"""

from __future__ import annotations

import numpy as np

from .bvh import TriangleBVH
from .errors import DegenerateTriangle, EmptyMesh, SizeMismatch
from .rig import Correspondence, Mesh

DEGENERATE_LIFT_NORM = 1e-12
DET_GUARD = 1e-15


def _lift_corners(u1: np.ndarray, u2: np.ndarray, u3: np.ndarray) -> np.ndarray:
    """Fourth tetra vertex along the (unnormalized) face normal."""
    return u1 + np.cross(u2 - u1, u3 - u1)


def solve_tet_barycentric_batch(
    points: np.ndarray, u1: np.ndarray, u2: np.ndarray, u3: np.ndarray
) -> np.ndarray:
    """Vectorized 4-coordinate solve; rows sum to one by construction."""
    e1 = u2 - u1
    e2 = u3 - u1
    n = np.cross(e1, e2)
    det = np.sum(n * n, axis=-1)
    if np.any(np.abs(det) < DET_GUARD):
        raise DegenerateTriangle(
            f"lifted tetra determinant below {DET_GUARD:g} (min {np.abs(det).min():g})"
        )
    d = points - u1
    # Cramer's rule for [e1 e2 n] x = d; the n column makes the cofactors cheap.
    b2 = np.sum(d * np.cross(e2, n), axis=-1) / det
    b3 = np.sum(d * np.cross(n, e1), axis=-1) / det
    b4 = np.sum(d * n, axis=-1) / det
    b1 = 1.0 - b2 - b3 - b4
    return np.stack([b1, b2, b3, b4], axis=-1)


def solve_tet_barycentric(point: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """4-vector b with b.sum()==1 reproducing ``point`` from the lifted tetra."""
    tri = np.asarray(tri, dtype=np.float64)
    u1, u2, u3 = tri[0], tri[1], tri[2]
    if np.linalg.norm(np.cross(u2 - u1, u3 - u1)) <= DEGENERATE_LIFT_NORM:
        raise DegenerateTriangle("triangle lifting cross-product norm below 1e-12")
    return solve_tet_barycentric_batch(
        np.asarray(point, dtype=np.float64)[None], u1[None], u2[None], u3[None]
    )[0]


def precompute_correspondence(
    source: Mesh,
    wrap: Mesh,
    source_id: str = "source",
    unmatched: np.ndarray | None = None,
) -> Correspondence:
    """Bind each wrap vertex to its closest non-degenerate source triangle.

    ``unmatched`` optionally flags canonical vertices that have no meaningful
    source counterpart; they are still attached to their nearest face (so the
    runtime gather is total) but carry the flag for downstream exclusion.
    """
    if source.num_faces == 0:
        raise EmptyMesh("source mesh has no faces")
    sv = source.vertices.astype(np.float64)
    faces = source.faces.astype(np.int64)
    cross = np.cross(
        sv[faces[:, 1]] - sv[faces[:, 0]], sv[faces[:, 2]] - sv[faces[:, 0]]
    )
    active = np.linalg.norm(cross, axis=1) > DEGENERATE_LIFT_NORM
    tree = TriangleBVH(sv, faces, active=active)

    queries = wrap.vertices.astype(np.float64)
    _, face_ids, _ = tree.closest_points(queries)

    corners = faces[face_ids]
    bary = solve_tet_barycentric_batch(
        queries, sv[corners[:, 0]], sv[corners[:, 1]], sv[corners[:, 2]]
    )
    corr = Correspondence(
        source_id=source_id,
        face_index=face_ids.astype(np.int32),
        bary=bary,
        source_face_count=source.num_faces,
        source_vertex_count=source.num_vertices,
        unmatched=None if unmatched is None else np.asarray(unmatched, dtype=bool),
        corners=corners.astype(np.int32),
    )
    return corr.validate()


def apply_correspondence(corr: Correspondence, source_vertices: np.ndarray) -> np.ndarray:
    """Reconstruct canonical vertices from (possibly deformed) source vertices.

    Accepts a single (N_s, 3) array or a batch (B, N_s, 3); cost is a gather
    over the referenced corners, independent of the source vertex count.
    """
    v = np.asarray(source_vertices, dtype=np.float64)
    if v.shape[-2] != corr.source_vertex_count or v.shape[-1] != 3:
        raise SizeMismatch(
            f"source vertices shape {v.shape} != (..., {corr.source_vertex_count}, 3)"
        )
    c = corr.corners
    u1 = v[..., c[:, 0], :]
    u2 = v[..., c[:, 1], :]
    u3 = v[..., c[:, 2], :]
    u4 = _lift_corners(u1, u2, u3)
    b = corr.bary
    return (
        b[:, 0, None] * u1
        + b[:, 1, None] * u2
        + b[:, 2, None] * u3
        + b[:, 3, None] * u4
    )
