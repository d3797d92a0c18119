"""Evaluation utilities: per-vertex error statistics, region breakdowns,
temporal stability, all in meters internally with millimeter reporting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bvh import build_bvh
from .errors import EmptyMesh, EmptySelection, SizeMismatch, TooFewFrames
from .rig import Mesh, REGION_NAMES
from .rotations import geodesic_angle


@dataclass
class ErrorStats:
    mean: float
    median: float
    p95: float
    max: float
    count: int

    def as_mm(self) -> dict:
        return {
            "mean_mm": self.mean * 1000.0,
            "median_mm": self.median * 1000.0,
            "p95_mm": self.p95 * 1000.0,
            "max_mm": self.max * 1000.0,
            "count": self.count,
        }


def _stats(distances: np.ndarray) -> ErrorStats:
    if distances.size == 0:
        raise EmptySelection("no vertices selected for error statistics")
    return ErrorStats(
        mean=float(distances.mean()),
        median=float(np.percentile(distances, 50.0)),  # linear interpolation
        p95=float(np.percentile(distances, 95.0)),
        max=float(distances.max()),
        count=int(distances.size),
    )


def vertex_error_stats(
    a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None
) -> ErrorStats:
    """Paired per-vertex L2 distance statistics."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise SizeMismatch(f"shape mismatch {a.shape} vs {b.shape}")
    d = np.linalg.norm(a - b, axis=-1).ravel()
    if mask is not None:
        d = d[np.asarray(mask, dtype=bool).ravel()]
    return _stats(d)


def region_breakdown(
    a: np.ndarray, b: np.ndarray, regions: np.ndarray
) -> dict[str, ErrorStats]:
    """ErrorStats per region label plus 'all' over the union."""
    regions = np.asarray(regions)
    out = {"all": vertex_error_stats(a, b)}
    for idx, name in enumerate(REGION_NAMES):
        mask = regions == idx
        if np.any(mask):
            out[name] = vertex_error_stats(a, b, mask)
    return out


def closest_point_error(
    queries: np.ndarray, surface: Mesh, exclusion_mask: np.ndarray | None = None
) -> ErrorStats:
    """Distance from each query point to the nearest point on the mesh."""
    if surface.num_faces == 0:
        raise EmptyMesh("surface has no faces")
    queries = np.asarray(queries, dtype=np.float64)
    if exclusion_mask is not None:
        queries = queries[~np.asarray(exclusion_mask, dtype=bool)]
    if queries.shape[0] == 0:
        raise EmptySelection("all query points excluded")
    tree = build_bvh(surface)
    dists, _, _ = tree.closest_points(queries)
    return _stats(dists)


def temporal_stability(
    sequence: np.ndarray, region_mask: np.ndarray | None = None
) -> dict[str, float]:
    """Frame-to-frame deltas of a per-frame error or rotation sequence.

    Accepts per-vertex errors (F, N) -> deltas of region-mean error in
    mm/frame, or rotations (F, 3, 3) / (F, J, 3, 3) -> geodesic steps in
    deg/frame. Returns max and mean delta.
    """
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.shape[0] < 2:
        raise TooFewFrames("need at least 2 frames")
    if seq.ndim >= 3 and seq.shape[-1] == 3 and seq.shape[-2] == 3:
        steps = geodesic_angle(seq[:-1], seq[1:])
        steps = np.rad2deg(steps.reshape(steps.shape[0], -1)).max(axis=1)
        unit = "deg_per_frame"
    else:
        if region_mask is not None:
            seq = seq[:, np.asarray(region_mask, dtype=bool)]
        means = seq.mean(axis=1)
        steps = np.abs(np.diff(means)) * 1000.0
        unit = "mm_per_frame"
    return {"max_delta": float(steps.max()), "mean_delta": float(steps.mean()), "unit": unit}
