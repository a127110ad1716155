"""Exact convex-polyhedron primitives.

Vertices/faces representation with half-space clipping, divergence-theorem
measures, principal axes, and inscribed/circumscribed sphere bounds.  All
quantities are double precision in millimetres; the tolerance constants
below are the single source of truth for the geometric comparisons used
throughout the package.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull

from .errors import DegenerateSpec

# Geometric tolerances (mm unless stated otherwise).
PLANARITY_TOL = 1e-9     # max vertex deviation from its face plane
CONVEXITY_TOL = 1e-9     # max outside-excursion of a vertex past a face plane
CLIP_TOL = 1e-10         # vertex-on-plane classification during clipping
FACE_AREA_TOL = 1e-9     # mm^2, below which a face is a sliver
INSCRIBED_TOL = 1e-9     # inscribed-sphere LP tolerance

_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


class Empty:
    """Result of clipping a polyhedron entirely away."""

    def __repr__(self):
        return "Empty()"

    def __bool__(self):
        return False


EMPTY = Empty()


@dataclass(frozen=True)
class EllipsoidSpec:
    """Reference sphere diameter, per-axis scale factors, facet budget."""

    diameter: float
    scale: tuple[float, float, float]
    facet_count: int = 320

    def __post_init__(self):
        if self.diameter <= 0 or any(s <= 0 for s in self.scale):
            raise DegenerateSpec(f"non-positive diameter/scale: {self}")
        if self.facet_count < 20:
            raise DegenerateSpec(f"facet_count must be >= 20: {self.facet_count}")

    @property
    def semi_axes(self) -> np.ndarray:
        return np.asarray(self.scale, dtype=float) * (self.diameter / 2.0)


class ConvexPolyhedron:
    """Convex polyhedron as vertices plus CCW (from outside) face rings.

    Instances are immutable after construction; face_tags optionally carries
    one opaque label per face (used by the tessellation to track which clip
    plane created a face).
    """

    __slots__ = ("vertices", "faces", "face_tags")

    def __init__(self, vertices, faces, face_tags=None):
        v = np.ascontiguousarray(vertices, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", tuple(tuple(int(i) for i in f) for f in faces))
        object.__setattr__(self, "face_tags", None if face_tags is None else tuple(face_tags))
        if self.face_tags is not None and len(self.face_tags) != len(self.faces):
            raise ValueError("face_tags length must match faces")

    def __setattr__(self, name, value):
        raise AttributeError("ConvexPolyhedron is immutable")

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_planes(self) -> tuple[np.ndarray, np.ndarray]:
        """Outward unit normals and offsets, one per face (n . x <= off inside)."""
        normals = np.empty((len(self.faces), 3))
        offsets = np.empty(len(self.faces))
        for k, ring in enumerate(self.faces):
            pts = self.vertices[list(ring)]
            n = _newell_normal(pts)
            normals[k] = n
            offsets[k] = float(n @ pts.mean(axis=0))
        return normals, offsets

    def validate(self, planarity_tol=PLANARITY_TOL, convexity_tol=CONVEXITY_TOL):
        """Check face rings, planarity, convexity and the Euler characteristic."""
        if self.n_vertices < 4 or self.n_faces < 4:
            raise ValueError("degenerate polyhedron")
        normals, offsets = self.face_planes()
        edges = set()
        for k, ring in enumerate(self.faces):
            if len(ring) < 3:
                raise ValueError(f"face {k} has fewer than 3 vertices")
            pts = self.vertices[list(ring)]
            dev = np.abs(pts @ normals[k] - offsets[k])
            if dev.max() > planarity_tol:
                raise ValueError(f"face {k} not planar: {dev.max():.3e}")
            for a, b in zip(ring, ring[1:] + ring[:1]):
                edges.add((min(a, b), max(a, b)))
        excursion = self.vertices @ normals.T - offsets[None, :]
        if excursion.max() > convexity_tol:
            raise ValueError(f"not convex: excursion {excursion.max():.3e}")
        euler = self.n_vertices - len(edges) + self.n_faces
        if euler != 2:
            raise ValueError(f"Euler characteristic {euler} != 2")
        return True


@dataclass(frozen=True)
class PolyMeasure:
    """Divergence-theorem measures of a convex polyhedron."""

    volume: float           # mm^3
    surface_area: float     # mm^2
    centroid: np.ndarray    # mm
    inertia_tensor: np.ndarray  # unit density, about the centroid
    diameter: float         # max pairwise vertex distance, mm


def _newell_normal(pts: np.ndarray) -> np.ndarray:
    rolled = np.roll(pts, -1, axis=0)
    n = np.cross(pts, rolled).sum(axis=0)
    norm = np.linalg.norm(n)
    if norm == 0.0:
        raise ValueError("degenerate face (zero normal)")
    return n / norm


def _fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n, dtype=float)
    z = 1.0 - 2.0 * (k + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = k * _GOLDEN_ANGLE
    return np.column_stack((r * np.cos(phi), r * np.sin(phi), z))


def _hull_volume_ratio(m: int) -> float:
    """Hull volume of m unit Fibonacci points over the unit-sphere volume.

    Linear maps commute with convex hulls, so the ratio depends only on the
    point count and the same correction is exact for every ellipsoid.
    """
    ratio = _HULL_RATIO_CACHE.get(m)
    if ratio is None:
        hull = ConvexHull(_fibonacci_sphere(m))
        ratio = float(hull.volume) / (4.0 * math.pi / 3.0)
        _HULL_RATIO_CACHE[m] = ratio
    return ratio


_HULL_RATIO_CACHE: dict[int, float] = {}


def ellipsoid_polyhedron(spec: EllipsoidSpec) -> ConvexPolyhedron:
    """Volume-matched polyhedral stand-in for the ellipsoid.

    Hull of a Fibonacci point set mapped through the semi-axes; a hull over
    m points in general position has 2m - 4 triangular facets, so m is
    chosen to land within the facet budget.  The vertex shell is inflated by
    the (precomputed) hull/sphere volume ratio so the polyhedron volume
    equals the ellipsoid volume, rather than carrying the ~3% deficit of a
    strictly inscribed hull at this resolution.
    """
    m = max(12, (spec.facet_count + 4) // 2)
    inflate = _hull_volume_ratio(m) ** (-1.0 / 3.0)
    pts = _fibonacci_sphere(m) * (inflate * spec.semi_axes)[None, :]
    hull = ConvexHull(pts)
    used = np.sort(np.unique(hull.simplices))
    remap = {int(old): new for new, old in enumerate(used)}
    normals = hull.equations[:, :3]
    faces = []
    for simplex, n in zip(hull.simplices, normals):
        a, b, c = (pts[i] for i in simplex)
        if np.cross(b - a, c - a) @ n < 0.0:
            simplex = simplex[[0, 2, 1]]
        faces.append(tuple(remap[int(i)] for i in simplex))
    return ConvexPolyhedron(pts[used], faces)


def clip(poly: ConvexPolyhedron, plane, tag=None, tol=CLIP_TOL):
    """Intersect poly with the half-space {x : n . x <= offset}.

    plane is (normal, offset) with a unit normal.  Returns EMPTY when no
    vertex satisfies the half-space.  The closing face (if any) is labelled
    with `tag` when the input carries face tags.
    """
    normal, offset = plane
    normal = np.asarray(normal, dtype=float)
    V = poly.vertices
    d = V @ normal - offset
    if np.all(d <= tol):
        return poly
    inside = d <= tol
    if not inside.any():
        return EMPTY

    # Vertices kept verbatim, re-indexed densely.
    keep_new = np.full(V.shape[0], -1, dtype=np.intp)
    n_keep = int(inside.sum())
    keep_new[inside] = np.arange(n_keep)
    on_plane_kept = inside & (np.abs(d) <= 10.0 * tol)

    # Unique cut edges, interpolated in one vectorized pass.
    inside_list = inside.tolist()
    cut_map: dict[tuple[int, int], int] = {}
    for ring in poly.faces:
        prev = ring[-1]
        prev_in = inside_list[prev]
        for v in ring:
            v_in = inside_list[v]
            if v_in != prev_in:
                key = (prev, v) if prev < v else (v, prev)
                if key not in cut_map:
                    cut_map[key] = n_keep + len(cut_map)
            prev, prev_in = v, v_in
    if cut_map:
        ea = np.fromiter((k[0] for k in cut_map), dtype=np.intp, count=len(cut_map))
        eb = np.fromiter((k[1] for k in cut_map), dtype=np.intp, count=len(cut_map))
        t = (d[ea] / (d[ea] - d[eb]))[:, None]
        cut_pts = V[ea] + t * (V[eb] - V[ea])
        new_vertices = np.vstack([V[inside], cut_pts])
    else:
        new_vertices = V[inside]

    new_faces = []
    new_tags = [] if poly.face_tags is not None or tag is not None else None
    old_tags = poly.face_tags if poly.face_tags is not None else (None,) * len(poly.faces)
    section = set()        # new-vertex indices lying on the clip plane
    keep_list = keep_new.tolist()
    on_plane_list = on_plane_kept.tolist()
    for ring, face_tag in zip(poly.faces, old_tags):
        out_ring = []
        prev = ring[-1]
        prev_in = inside_list[prev]
        for v in ring:
            v_in = inside_list[v]
            if v_in != prev_in:
                key = (prev, v) if prev < v else (v, prev)
                k = cut_map[key]
                out_ring.append(k)
                section.add(k)
            if v_in:
                out_ring.append(keep_list[v])
                if on_plane_list[v]:
                    section.add(keep_list[v])
            prev, prev_in = v, v_in
        # Drop consecutive duplicates (vertex exactly on the plane).
        dedup = [v for k, v in enumerate(out_ring) if v != out_ring[k - 1]]
        if len(dedup) >= 3:
            new_faces.append(tuple(dedup))
            if new_tags is not None:
                new_tags.append(face_tag)

    if len(section) >= 3:
        ring = _order_section(new_vertices, sorted(section), normal)
        new_faces.append(ring)
        if new_tags is not None:
            new_tags.append(tag)

    if len(new_faces) < 4 or new_vertices.shape[0] < 4:
        return EMPTY
    return ConvexPolyhedron(new_vertices, new_faces, new_tags)


def _order_section(vertices: np.ndarray, idx: list[int], normal: np.ndarray) -> tuple:
    """Order coplanar section points CCW around +normal (convex section)."""
    pts = vertices[idx]
    center = pts.mean(axis=0)
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(normal)))] = 1.0
    e1 = np.cross(normal, axis)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    rel = pts - center
    ang = np.arctan2(rel @ e2, rel @ e1)
    order = np.argsort(ang, kind="stable")
    return tuple(int(idx[k]) for k in order)


def fan_triangles(faces) -> np.ndarray:
    """Fan-triangulation index array (m, 3) of a list of face rings."""
    tri = []
    for ring in faces:
        r0 = ring[0]
        for i, j in zip(ring[1:-1], ring[2:]):
            tri.append((r0, i, j))
    return np.asarray(tri, dtype=np.intp)


def centroid_volume(poly: ConvexPolyhedron) -> tuple[np.ndarray, float]:
    """Centroid and volume only (cheaper than measure, used in inner loops)."""
    T = fan_triangles(poly.faces)
    A, B, C = (poly.vertices[T[:, k]] for k in range(3))
    vol6 = np.einsum("ij,ij->i", A, np.cross(B, C))
    volume = float(vol6.sum()) / 6.0
    moment = ((vol6[:, None] / 6.0) * (A + B + C) / 4.0).sum(axis=0)
    return moment / volume, volume


def measure(poly: ConvexPolyhedron) -> PolyMeasure:
    """Volume, area, centroid, inertia (about centroid) and vertex diameter."""
    V = poly.vertices
    T = fan_triangles(poly.faces)
    A, B, C = (V[T[:, k]] for k in range(3))
    area = 0.5 * float(np.linalg.norm(np.cross(B - A, C - A), axis=1).sum())
    vol6 = np.einsum("ij,ij->i", A, np.cross(B, C))
    volume = float(vol6.sum()) / 6.0
    S = A + B + C
    centroid = ((vol6[:, None] / 6.0) * S / 4.0).sum(axis=0) / volume
    w = vol6 / (6.0 * 20.0)
    second_moment = (np.einsum("i,ij,ik->jk", w, A, A)
                     + np.einsum("i,ij,ik->jk", w, B, B)
                     + np.einsum("i,ij,ik->jk", w, C, C)
                     + np.einsum("i,ij,ik->jk", w, S, S))
    second_c = second_moment - volume * np.outer(centroid, centroid)
    inertia = np.trace(second_c) * np.eye(3) - second_c
    diff = V[:, None, :] - V[None, :, :]
    diameter = math.sqrt(float(np.max(np.einsum("ijk,ijk->ij", diff, diff))))
    return PolyMeasure(volume=volume, surface_area=area,
                       centroid=centroid, inertia_tensor=inertia, diameter=diameter)


def principal_axes(poly: ConvexPolyhedron):
    """Principal frame from the vertex covariance tensor.

    Returns ((alpha, beta, gamma), (L, I, S)): ZXZ Euler angles of the frame
    and half peak-to-peak extents along the axes, ordered L >= I >= S.
    Coincident eigenvalues are tie-broken by lexicographic eigenvector order
    rather than raised as an error (spheres are a first-class input).
    """
    X = poly.vertices - poly.vertices.mean(axis=0)
    cov = (X.T @ X) / poly.n_vertices
    evals, evecs = np.linalg.eigh(cov)

    axes = []
    for k in range(3):
        v = evecs[:, k].copy()
        if v[int(np.argmax(np.abs(v)))] < 0.0:
            v = -v
        proj = X @ v
        ext = 0.5 * float(proj.max() - proj.min())
        axes.append((ext, tuple(v), v))
    # Descending extent; exact extent ties (coincident eigenvalues, e.g. a
    # sphere or cube) fall through to lexicographic eigenvector order.
    axes.sort(key=lambda t: (-t[0], t[1]))
    extents = np.array([a[0] for a in axes])
    R = np.column_stack([a[2] for a in axes])
    if np.linalg.det(R) < 0.0:
        R[:, 2] = -R[:, 2]
    return _euler_zxz(R), (float(extents[0]), float(extents[1]), float(extents[2]))


def _euler_zxz(R: np.ndarray) -> tuple[float, float, float]:
    """ZXZ Euler angles (alpha, beta, gamma) in [-pi, pi] of a rotation."""
    beta = math.acos(min(1.0, max(-1.0, float(R[2, 2]))))
    if math.sin(beta) > 1e-12:
        alpha = math.atan2(R[0, 2], -R[1, 2])
        gamma = math.atan2(R[2, 0], R[2, 1])
    else:
        alpha = math.atan2(R[1, 0], R[0, 0])
        gamma = 0.0
    return (alpha, beta, gamma)


def rotation_zxz(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Rotation matrix for ZXZ Euler angles (inverse of _euler_zxz)."""
    ca, sa = math.cos(alpha), math.sin(alpha)
    cb, sb = math.cos(beta), math.sin(beta)
    cg, sg = math.cos(gamma), math.sin(gamma)
    rz_a = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    rx_b = np.array([[1.0, 0.0, 0.0], [0.0, cb, -sb], [0.0, sb, cb]])
    rz_g = np.array([[cg, -sg, 0.0], [sg, cg, 0.0], [0.0, 0.0, 1.0]])
    return rz_a @ rx_b @ rz_g


def sphere_bounds(poly: ConvexPolyhedron) -> tuple[float, float]:
    """(inscribed diameter, circumscribed diameter).

    Circumscribed: minimum enclosing ball of the vertices (Welzl).
    Inscribed: LP maximising the distance to all face planes.
    """
    center, radius = _min_enclosing_ball(poly.vertices)
    normals, offsets = poly.face_planes()
    # max r s.t. n_f . x + r <= off_f for all faces
    res = linprog(c=[0.0, 0.0, 0.0, -1.0],
                  A_ub=np.hstack([normals, np.ones((len(offsets), 1))]),
                  b_ub=offsets,
                  bounds=[(None, None)] * 3 + [(0.0, None)],
                  method="highs")
    if not res.success:
        raise ValueError(f"inscribed-sphere LP failed: {res.message}")
    return 2.0 * float(res.x[3]), 2.0 * radius


def _ball_from_support(pts: list[np.ndarray]) -> tuple[np.ndarray, float]:
    n = len(pts)
    if n == 0:
        return np.zeros(3), -1.0
    if n == 1:
        return pts[0].copy(), 0.0
    if n == 2:
        c = 0.5 * (pts[0] + pts[1])
        return c, float(np.linalg.norm(pts[0] - c))
    if n == 3:
        a, b, c = pts
        u, v = b - a, c - a
        uu, vv, uv = u @ u, v @ v, u @ v
        det = uu * vv - uv * uv
        if abs(det) < 1e-14 * max(uu, vv, 1e-300):
            pairs = [(a, b), (a, c), (b, c)]
            dists = [np.linalg.norm(p - q) for p, q in pairs]
            p, q = pairs[int(np.argmax(dists))]
            return _ball_from_support([p, q])
        alpha = 0.5 * vv * (uu - uv) / det
        beta = 0.5 * uu * (vv - uv) / det
        center = a + alpha * u + beta * v
        return center, float(np.linalg.norm(center - a))
    # 4 support points: solve 2 (p_i - p_0) . x = |p_i|^2 - |p_0|^2
    a = pts[0]
    A = 2.0 * np.array([p - a for p in pts[1:]])
    b = np.array([p @ p - a @ a for p in pts[1:]])
    try:
        center = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        balls = [_ball_from_support([pts[i] for i in range(4) if i != k]) for k in range(4)]
        return max(balls, key=lambda cr: cr[1])
    return center, float(np.linalg.norm(center - a))


def _min_enclosing_ball(points: np.ndarray) -> tuple[np.ndarray, float]:
    """Welzl's algorithm with a fixed-seed shuffle (deterministic)."""
    pts = [points[i].copy() for i in range(points.shape[0])]
    rng = np.random.default_rng(0x5EED)
    rng.shuffle(pts)
    scale = float(np.abs(points).max()) + 1.0

    def welzl(i, support):
        if i == len(pts) or len(support) == 4:
            return _ball_from_support(support)
        c, r = welzl(i + 1, support)
        if np.linalg.norm(pts[i] - c) <= r + 1e-12 * scale:
            return c, r
        return welzl(i + 1, support + [pts[i]])

    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, 4 * len(pts) + 100))
    try:
        center, radius = welzl(0, [])
    finally:
        sys.setrecursionlimit(old_limit)
    return center, radius
