"""Axis-aligned bounding-box tree over triangles with exact closest-point queries.

Queries return the true closest triangle (verified against brute force in
tests); ties within ``TIE_EPS`` meters resolve to the lowest face index so
results are deterministic. A centroid KD-tree seeds each query with a tight
upper bound before the exact traversal, which makes pruning effective.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyMesh

TIE_EPS = 1e-12
_LEAF_SIZE = 8


def closest_point_on_triangles(
    p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray
) -> np.ndarray:
    """Closest point to ``p`` on each triangle (a, b, c); all inputs broadcast.

    Vectorized transcription of Ericson's ClosestPtPointTriangle.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.sum(ab * ap, axis=-1)
    d2 = np.sum(ac * ap, axis=-1)
    bp = p - b
    d3 = np.sum(ab * bp, axis=-1)
    d4 = np.sum(ac * bp, axis=-1)
    cp = p - c
    d5 = np.sum(ab * cp, axis=-1)
    d6 = np.sum(ac * cp, axis=-1)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    def safe_div(num, den):
        return num / np.where(np.abs(den) < 1e-300, 1.0, den)

    v_ab = safe_div(d1, d1 - d3)[..., None]
    w_ac = safe_div(d2, d2 - d6)[..., None]
    w_bc = safe_div(d4 - d3, (d4 - d3) + (d5 - d6))[..., None]
    denom = safe_div(np.ones_like(va), va + vb + vc)
    v_f = (vb * denom)[..., None]
    w_f = (vc * denom)[..., None]

    conds = [
        ((d1 <= 0) & (d2 <= 0))[..., None],
        ((d3 >= 0) & (d4 <= d3))[..., None],
        ((vc <= 0) & (d1 >= 0) & (d3 <= 0))[..., None],
        ((d6 >= 0) & (d5 <= d6))[..., None],
        ((vb <= 0) & (d2 >= 0) & (d6 <= 0))[..., None],
        ((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0))[..., None],
    ]
    choices = [
        np.broadcast_arrays(a, p)[0],
        np.broadcast_arrays(b, p)[0],
        a + v_ab * ab,
        np.broadcast_arrays(c, p)[0],
        a + w_ac * ac,
        b + w_bc * (c - b),
    ]
    face_pt = a + ab * v_f + ac * w_f
    out = face_pt
    for cond, choice in zip(reversed(conds), reversed(choices)):
        out = np.where(cond, choice, out)
    return out


class TriangleBVH:
    """Median-split AABB tree; leaves hold contiguous runs of triangle ids."""

    def __init__(self, vertices: np.ndarray, faces: np.ndarray, active: np.ndarray | None = None):
        vertices = np.asarray(vertices, dtype=np.float64)
        faces = np.asarray(faces, dtype=np.int64)
        if active is not None:
            self.face_ids = np.flatnonzero(np.asarray(active, dtype=bool)).astype(np.int64)
        else:
            self.face_ids = np.arange(faces.shape[0], dtype=np.int64)
        if self.face_ids.size == 0:
            raise EmptyMesh("no (non-degenerate) triangles to index")

        tris = faces[self.face_ids]
        self.tri_a = np.ascontiguousarray(vertices[tris[:, 0]])
        self.tri_b = np.ascontiguousarray(vertices[tris[:, 1]])
        self.tri_c = np.ascontiguousarray(vertices[tris[:, 2]])

        lo = np.minimum(np.minimum(self.tri_a, self.tri_b), self.tri_c)
        hi = np.maximum(np.maximum(self.tri_a, self.tri_b), self.tri_c)
        centroids = (self.tri_a + self.tri_b + self.tri_c) / 3.0

        n = self.face_ids.shape[0]
        self.order = np.arange(n, dtype=np.int64)
        # node arrays, grown in a list then stacked
        bounds_lo: list[np.ndarray] = []
        bounds_hi: list[np.ndarray] = []
        left: list[int] = []
        right: list[int] = []
        start: list[int] = []
        count: list[int] = []

        def new_node(lo_v, hi_v):
            bounds_lo.append(lo_v)
            bounds_hi.append(hi_v)
            left.append(-1)
            right.append(-1)
            start.append(-1)
            count.append(0)
            return len(bounds_lo) - 1

        # iterative build: (node_id, lo_idx, hi_idx) ranges over self.order
        root = new_node(np.zeros(3), np.zeros(3))
        stack = [(root, 0, n)]
        while stack:
            node, i0, i1 = stack.pop()
            idx = self.order[i0:i1]
            node_lo = lo[idx].min(axis=0)
            node_hi = hi[idx].max(axis=0)
            bounds_lo[node] = node_lo
            bounds_hi[node] = node_hi
            if i1 - i0 <= _LEAF_SIZE:
                start[node] = i0
                count[node] = i1 - i0
                continue
            cen = centroids[idx]
            span = cen.max(axis=0) - cen.min(axis=0)
            axis = int(np.argmax(span))
            if span[axis] < 1e-300:
                start[node] = i0
                count[node] = i1 - i0
                continue
            mid = (i1 - i0) // 2
            part = np.argpartition(cen[:, axis], mid)
            self.order[i0:i1] = idx[part]
            lchild = new_node(np.zeros(3), np.zeros(3))
            rchild = new_node(np.zeros(3), np.zeros(3))
            left[node] = lchild
            right[node] = rchild
            stack.append((lchild, i0, i0 + mid))
            stack.append((rchild, i0 + mid, i1))

        self.bounds_lo = np.stack(bounds_lo)
        self.bounds_hi = np.stack(bounds_hi)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.start = np.asarray(start, dtype=np.int64)
        self.count = np.asarray(count, dtype=np.int64)
        self._centroid_tree = cKDTree(centroids)

    @property
    def num_triangles(self) -> int:
        return int(self.face_ids.shape[0])

    def _box_dist(self, node: int, q: np.ndarray) -> float:
        d = np.maximum(self.bounds_lo[node] - q, 0.0) + np.maximum(q - self.bounds_hi[node], 0.0)
        return float(np.sqrt(np.dot(d, d)))

    def _leaf_best(self, node: int, q: np.ndarray):
        i0 = self.start[node]
        idx = self.order[i0 : i0 + self.count[node]]
        pts = closest_point_on_triangles(q, self.tri_a[idx], self.tri_b[idx], self.tri_c[idx])
        dists = np.linalg.norm(pts - q, axis=-1)
        return idx, dists, pts

    def closest_point(self, query: np.ndarray, seed_k: int = 8):
        """Return (distance, face_id, point) for the nearest surface point.

        Among triangles within TIE_EPS of the minimum distance the lowest
        original face index wins.
        """
        q = np.asarray(query, dtype=np.float64)
        best_d = np.inf
        best_tri = -1
        best_pt = q

        # seed with exact distances to a few centroid-nearest triangles
        k = min(seed_k, self.num_triangles)
        _, seed_idx = self._centroid_tree.query(q, k=k)
        seed_idx = np.atleast_1d(seed_idx)
        pts = closest_point_on_triangles(
            q, self.tri_a[seed_idx], self.tri_b[seed_idx], self.tri_c[seed_idx]
        )
        dists = np.linalg.norm(pts - q, axis=-1)
        for j in range(len(seed_idx)):
            d = float(dists[j])
            fid = int(self.face_ids[seed_idx[j]])
            if d < best_d - TIE_EPS or (d <= best_d + TIE_EPS and fid < best_tri):
                best_d, best_tri, best_pt = d, fid, pts[j]

        stack = [0]
        while stack:
            node = stack.pop()
            if self._box_dist(node, q) > best_d + TIE_EPS:
                continue
            if self.left[node] < 0:
                idx, dists, pts = self._leaf_best(node, q)
                for j in range(len(idx)):
                    d = float(dists[j])
                    fid = int(self.face_ids[idx[j]])
                    if d < best_d - TIE_EPS or (d <= best_d + TIE_EPS and fid < best_tri):
                        best_d, best_tri, best_pt = d, fid, pts[j]
                continue
            l, r = int(self.left[node]), int(self.right[node])
            dl, dr = self._box_dist(l, q), self._box_dist(r, q)
            # push farther child first so the nearer one is processed next
            if dl <= dr:
                if dr <= best_d + TIE_EPS:
                    stack.append(r)
                if dl <= best_d + TIE_EPS:
                    stack.append(l)
            else:
                if dl <= best_d + TIE_EPS:
                    stack.append(l)
                if dr <= best_d + TIE_EPS:
                    stack.append(r)
        return best_d, best_tri, best_pt

    def closest_points(self, queries: np.ndarray):
        """Batched closest_point; returns (distances, face_ids, points)."""
        queries = np.asarray(queries, dtype=np.float64)
        n = queries.shape[0]
        dists = np.empty(n)
        fids = np.empty(n, dtype=np.int64)
        pts = np.empty((n, 3))
        for i in range(n):
            dists[i], fids[i], pts[i] = self.closest_point(queries[i])
        return dists, fids, pts


def build_bvh(mesh) -> TriangleBVH:
    """Index a validated mesh for closest-triangle queries."""
    if mesh.num_faces == 0:
        raise EmptyMesh("mesh has no faces")
    return TriangleBVH(mesh.vertices, mesh.faces)
