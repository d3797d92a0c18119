"""Procedural capsule-tube meshing and watertight welding for synthetic rigs.

Tubes are UV-capsules with ring metadata (needed by decimate-lite); welding
merges a child tube into a body by cutting one vertex fan on each side and
zipping the two boundary loops, which preserves closedness: the result stays
a single watertight genus-0 surface (Euler characteristic 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_PROFILE_BULGE_PERIODS = 1.0


def _perp_frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    return u, v


@dataclass
class TubeInfo:
    """Ring bookkeeping for one tube; indices are global within the build."""

    rings: list[list[int]] = field(default_factory=list)
    cyl_first: int = 0  # index into rings of the first cylinder ring
    cyl_last: int = 0  # index into rings of the last cylinder ring
    apexes: list[int] = field(default_factory=list)


@dataclass
class MeshBuild:
    """Mutable triangle soup with tube metadata, compacted on demand."""

    vertices: list[np.ndarray] = field(default_factory=list)
    faces: list[tuple[int, int, int]] = field(default_factory=list)
    tubes: list[TubeInfo] = field(default_factory=list)
    dead: set[int] = field(default_factory=set)
    protected: set[int] = field(default_factory=set)

    def add_vertex(self, p: np.ndarray) -> int:
        self.vertices.append(np.asarray(p, dtype=np.float64))
        return len(self.vertices) - 1

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Compacted (vertices, faces, old->new map); drops dead vertices."""
        n = len(self.vertices)
        remap = -np.ones(n, dtype=np.int64)
        alive = [i for i in range(n) if i not in self.dead]
        remap[alive] = np.arange(len(alive))
        verts = np.stack([self.vertices[i] for i in alive])
        faces = np.asarray(self.faces, dtype=np.int64)
        faces = remap[faces]
        if np.any(faces < 0):
            raise AssertionError("face references dead vertex")
        return verts, faces, remap


def _ring_points(center, radius, u, v, n):
    theta = 2.0 * np.pi * np.arange(n) / n
    return center + radius * (np.cos(theta)[:, None] * u + np.sin(theta)[:, None] * v)


def _band(lower: list[int], upper: list[int]) -> list[tuple[int, int, int]]:
    n = len(lower)
    out = []
    for j in range(n):
        jn = (j + 1) % n
        out.append((lower[j], lower[jn], upper[jn]))
        out.append((lower[j], upper[jn], upper[j]))
    return out


def _fan(apex: int, ring: list[int], apex_first: bool) -> list[tuple[int, int, int]]:
    n = len(ring)
    out = []
    for j in range(n):
        jn = (j + 1) % n
        if apex_first:
            out.append((apex, ring[j], ring[jn]))
        else:
            out.append((apex, ring[jn], ring[j]))
    return out


def add_tube(
    build: MeshBuild,
    p0: np.ndarray,
    p1: np.ndarray,
    radius: float,
    n_radial: int,
    n_axial: int,
    n_cap: int = 3,
    taper: float = 0.0,
    bulge: float = 0.08,
) -> TubeInfo:
    """Append a closed capsule tube from p0 to p1.

    The radius profile ``r(t) = radius * (1 - taper*t) * (1 + bulge*sin(pi t))``
    keeps the wall curved so ring decimation produces a measurable (but small)
    chord error.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    axis = axis / length
    u, v = _perp_frame(axis)

    def profile(t: float) -> float:
        return radius * (1.0 - taper * t) * (
            1.0 + bulge * np.sin(np.pi * _PROFILE_BULGE_PERIODS * t)
        )

    info = TubeInfo()
    r0, r1 = profile(0.0), profile(1.0)

    apex0 = build.add_vertex(p0 - r0 * axis)
    rings: list[list[int]] = []
    for i in range(1, n_cap):
        phi = 0.5 * np.pi * i / n_cap
        center = p0 - r0 * np.cos(phi) * axis
        pts = _ring_points(center, r0 * np.sin(phi), u, v, n_radial)
        rings.append([build.add_vertex(p) for p in pts])
    info.cyl_first = len(rings)
    for j in range(n_axial + 1):
        t = j / n_axial
        center = p0 + t * length * axis
        pts = _ring_points(center, profile(t), u, v, n_radial)
        rings.append([build.add_vertex(p) for p in pts])
    info.cyl_last = len(rings) - 1
    for i in range(n_cap - 1, 0, -1):
        phi = 0.5 * np.pi * i / n_cap
        center = p1 + r1 * np.cos(phi) * axis
        pts = _ring_points(center, r1 * np.sin(phi), u, v, n_radial)
        rings.append([build.add_vertex(p) for p in pts])
    apex1 = build.add_vertex(p1 + r1 * axis)

    build.faces.extend(_fan(apex0, rings[0], apex_first=False))
    for lower, upper in zip(rings[:-1], rings[1:]):
        build.faces.extend(_band(lower, upper))
    build.faces.extend(_fan(apex1, rings[-1], apex_first=True))

    info.rings = rings
    info.apexes = [apex0, apex1]
    build.tubes.append(info)
    return info


def _vertex_faces(build: MeshBuild) -> dict[int, list[int]]:
    table: dict[int, list[int]] = {}
    for fi, (a, b, c) in enumerate(build.faces):
        table.setdefault(a, []).append(fi)
        table.setdefault(b, []).append(fi)
        table.setdefault(c, []).append(fi)
    return table


def _link_cycle(build: MeshBuild, center: int, face_ids: list[int]) -> list[int]:
    """Ordered one-ring boundary of ``center``, following face winding."""
    succ: dict[int, int] = {}
    for fi in face_ids:
        tri = build.faces[fi]
        k = tri.index(center)
        a, b = tri[(k + 1) % 3], tri[(k + 2) % 3]
        succ[a] = b
    start = next(iter(succ))
    cycle = [start]
    while True:
        nxt = succ[cycle[-1]]
        if nxt == start:
            break
        cycle.append(nxt)
        if len(cycle) > len(succ):
            raise AssertionError("non-manifold vertex link")
    return cycle


def _free_direction(cycle: list[int], face_set: set[tuple[int, int, int]]) -> list[int]:
    """Orient a boundary cycle so its consecutive edges are absent from faces."""
    directed = set()
    for tri in face_set:
        directed.add((tri[0], tri[1]))
        directed.add((tri[1], tri[2]))
        directed.add((tri[2], tri[0]))
    forward_used = sum((cycle[i], cycle[(i + 1) % len(cycle)]) in directed for i in range(len(cycle)))
    if forward_used == 0:
        return cycle
    backward = cycle[::-1]
    backward_used = sum(
        (backward[i], backward[(i + 1) % len(backward)]) in directed for i in range(len(backward))
    )
    if backward_used == 0:
        return backward
    raise AssertionError("boundary cycle is not free on either side")


def weld_tube(build: MeshBuild, tube: TubeInfo, attach_point: np.ndarray) -> None:
    """Open one vertex fan on the body nearest ``attach_point``, open the
    tube's start cap, and zip the two boundary loops into a bridge strip."""
    attach_point = np.asarray(attach_point, dtype=np.float64)
    tube_verts = {vid for ring in tube.rings for vid in ring} | set(tube.apexes)
    table = _vertex_faces(build)

    # candidate body vertices: alive, not protected, full link outside the tube
    order = sorted(
        (np.linalg.norm(build.vertices[i] - attach_point), i)
        for i in range(len(build.vertices))
        if i not in build.dead and i not in build.protected and i not in tube_verts
    )
    chosen = None
    for _, cand in order:
        try:
            cycle = _link_cycle(build, cand, table[cand])
        except (AssertionError, KeyError):
            continue
        if any((v in build.protected) or (v in build.dead) or (v in tube_verts) for v in cycle):
            continue
        chosen = (cand, cycle)
        break
    if chosen is None:
        raise AssertionError("no weldable body vertex near attach point")
    center, body_cycle = chosen

    removed = set(table[center])
    build.faces = [f for fi, f in enumerate(build.faces) if fi not in removed]
    build.dead.add(center)

    apex = tube.apexes[0]
    apex_faces = {fi for fi, f in enumerate(build.faces) if apex in f}
    build.faces = [f for fi, f in enumerate(build.faces) if fi not in apex_faces]
    build.dead.add(apex)
    tube_cycle = list(tube.rings[0])

    face_set = set(build.faces)
    body_cycle = _free_direction(body_cycle, face_set)
    # The strip walks the body loop along its free direction and the tube
    # loop against its own: the two boundaries of an annulus run opposite.
    tube_cycle = _free_direction(tube_cycle, face_set)[::-1]

    # Align starting points by proximity, then zip with proportional marching.
    # Proportional advances keep the lattice path near its diagonal, so the
    # wrap anchors at both ends can never reuse a diagonal edge.
    V = build.vertices
    m, n = len(body_cycle), len(tube_cycle)
    j0 = min(range(n), key=lambda j: np.linalg.norm(V[tube_cycle[j]] - V[body_cycle[0]]))
    P = body_cycle
    C = tube_cycle[j0:] + tube_cycle[:j0]
    bridge: list[tuple[int, int, int]] = []
    i = j = 0
    while i < m or j < n:
        adv_p = i < m and (j >= n or (i + 1) * n <= (j + 1) * m)
        if adv_p:
            bridge.append((P[i % m], P[(i + 1) % m], C[j % n]))
            i += 1
        else:
            bridge.append((P[i % m], C[(j + 1) % n], C[j % n]))
            j += 1
    build.faces.extend(bridge)

    build.protected.update(body_cycle)
    build.protected.update(tube_cycle)
    build.protected.add(center)


def check_closed(vertices: np.ndarray, faces: np.ndarray) -> dict:
    """Watertightness / orientation / Euler report; raises on violations."""
    directed: dict[tuple[int, int], int] = {}
    for a, b, c in faces:
        for e in ((a, b), (b, c), (c, a)):
            directed[e] = directed.get(e, 0) + 1
    for (a, b), cnt in directed.items():
        if cnt != 1:
            raise AssertionError(f"directed edge {(a, b)} used {cnt} times")
        if directed.get((b, a), 0) != 1:
            raise AssertionError(f"edge {(a, b)} lacks an opposite-direction twin")
    E = len(directed) // 2
    Vn = vertices.shape[0]
    F = faces.shape[0]
    euler = Vn - E + F
    va, vb, vc = vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]
    volume = float(np.sum(np.einsum("ij,ij->i", va, np.cross(vb, vc))) / 6.0)
    return {"euler": euler, "volume": volume, "edges": E}


def subdivide(vertices: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint 1-to-4 split; original vertices keep their indices/positions."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    midpoint_id: dict[tuple[int, int], int] = {}
    new_vertices = [v for v in vertices]

    def midpoint(a: int, b: int) -> int:
        key = (min(a, b), max(a, b))
        if key not in midpoint_id:
            new_vertices.append((vertices[key[0]] + vertices[key[1]]) / 2.0)
            midpoint_id[key] = len(new_vertices) - 1
        return midpoint_id[key]

    new_faces = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        new_faces.extend([(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)])
    return np.stack(new_vertices), np.asarray(new_faces, dtype=np.int64)


def decimate_rings(build: MeshBuild) -> tuple[np.ndarray, np.ndarray]:
    """Drop every other interior cylinder ring of each tube and re-stitch.

    Rings adjacent to welds (protected vertices) are kept so bridges stay
    untouched; the bulged radius profile makes the re-stitched wall sit
    measurably inside the original surface.
    """
    remove: set[int] = set()
    removed_rings: list[tuple[list[int], list[int], list[int]]] = []
    for tube in build.tubes:
        candidates = []
        for ri in range(tube.cyl_first + 1, tube.cyl_last):
            ring = tube.rings[ri]
            ring_set = set(ring)
            prev_set = set(tube.rings[ri - 1])
            next_set = set(tube.rings[ri + 1])
            involved = ring_set | prev_set | next_set
            if involved & (build.protected | build.dead):
                continue
            candidates.append(ri)
        for idx in candidates[::2]:
            ring = tube.rings[idx]
            if set(ring) & remove:
                continue
            prev_ring = tube.rings[idx - 1]
            next_ring = tube.rings[idx + 1]
            if set(prev_ring) & remove or set(next_ring) & remove:
                continue
            remove.update(ring)
            removed_rings.append((prev_ring, ring, next_ring))

    faces = [f for f in build.faces if not (set(f) & remove)]
    for prev_ring, _, next_ring in removed_rings:
        faces.extend(_band(prev_ring, next_ring))

    n = len(build.vertices)
    dead = build.dead | remove
    remap = -np.ones(n, dtype=np.int64)
    alive = [i for i in range(n) if i not in dead]
    remap[alive] = np.arange(len(alive))
    verts = np.stack([build.vertices[i] for i in alive])
    f = remap[np.asarray(faces, dtype=np.int64)]
    if np.any(f < 0):
        raise AssertionError("decimation produced dangling face")
    return verts, f
