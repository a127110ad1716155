"""Seeded Voronoi tessellation of a particle into fragment cells.

Cells are computed by clipping the particle polyhedron with seed-bisector
planes (quadratic in the seed count, which is capped at 216), refined by
centroid replacement until the seeds stop moving.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyCell
from .geometry import (
    EMPTY,
    FACE_AREA_TOL,
    ConvexPolyhedron,
    EllipsoidSpec,
    centroid_volume,
    clip,
    ellipsoid_polyhedron,
)

BOUNDARY_TAG = -1          # face tag for particle-surface faces
REFERENCE_DIAMETER = 11.86  # mm, diameter at which a particle has 8 cells
MIN_CELLS = 8
MAX_CELLS = 216

TESS_SCHEMA = "crushlab/tess/v1"


@dataclass(frozen=True)
class FragmentMesh:
    """Tessellated particle: cells, seeds and shared-face adjacency."""

    spec: EllipsoidSpec
    rng_seed: int
    seeds: np.ndarray                      # (n, 3) mm
    particle: ConvexPolyhedron
    cells: tuple[ConvexPolyhedron, ...]
    adjacency: tuple[tuple[int, int, np.ndarray], ...]  # (i, j, face polygon), i < j
    lloyd_iters: int = 0
    lloyd_displacements: tuple[float, ...] = field(default_factory=tuple)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def neighbor_lists(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.n_cells)]
        for i, j, _ in self.adjacency:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return nbrs

    def is_connected(self) -> bool:
        if self.n_cells == 0:
            return False
        nbrs = self.neighbor_lists()
        seen = {0}
        stack = [0]
        while stack:
            for j in nbrs[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == self.n_cells


def cell_count(diameter: float) -> int:
    """Cubic cell-count law: 8 cells at the reference diameter, capped [8, 216]."""
    n = int(math.floor(8.0 * (diameter / REFERENCE_DIAMETER) ** 3 + 0.5))
    return max(MIN_CELLS, min(MAX_CELLS, n))


def generate_seeds(spec: EllipsoidSpec, rng_seed: int) -> np.ndarray:
    """Uniform seeds inside the particle, rejection-sampled from the bounding box."""
    n = cell_count(spec.diameter)
    rng = np.random.default_rng(rng_seed)
    axes = spec.semi_axes
    particle = ellipsoid_polyhedron(spec)
    normals, offsets = particle.face_planes()
    seeds = np.empty((n, 3))
    have = 0
    while have < n:
        pts = rng.uniform(-1.0, 1.0, size=(4 * (n - have), 3)) * axes
        ok = (np.square(pts / axes).sum(axis=1) < 1.0)
        # Also require strict interiority w.r.t. the faceted particle.
        ok &= np.all(pts @ normals.T < offsets[None, :] - 1e-9, axis=1)
        pts = pts[ok]
        take = min(n - have, pts.shape[0])
        seeds[have:have + take] = pts[:take]
        have += take
    seeds.setflags(write=False)
    return seeds


def _polygon_area(pts: np.ndarray) -> float:
    rolled = np.roll(pts, -1, axis=0)
    return 0.5 * float(np.linalg.norm(np.cross(pts, rolled).sum(axis=0)))


def voronoi_cells(particle: ConvexPolyhedron, seeds: np.ndarray):
    """Clip the particle into Voronoi cells; returns (cells, adjacency).

    Bisector planes are processed nearest-first so that planes farther than
    twice the current cell radius can be skipped exactly.
    """
    seeds = np.asarray(seeds, dtype=float)
    n = seeds.shape[0]
    if n < 2:
        raise ValueError("need at least 2 seeds")
    tagged = ConvexPolyhedron(particle.vertices, particle.faces,
                              (BOUNDARY_TAG,) * particle.n_faces)
    diff = seeds[:, None, :] - seeds[None, :, :]
    dists = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    off_diag = dists[~np.eye(n, dtype=bool)]
    if off_diag.min() < 1e-12:
        raise EmptyCell("coincident seeds produce empty cells")

    cells = []
    for i in range(n):
        order = np.argsort(dists[i], kind="stable")
        cell = tagged
        radius = float(np.linalg.norm(cell.vertices - seeds[i], axis=1).max())
        for j in order:
            if j == i:
                continue
            d_ij = dists[i, j]
            if 0.5 * d_ij > radius:
                break
            normal = (seeds[j] - seeds[i]) / d_ij
            offset = float(normal @ (0.5 * (seeds[i] + seeds[j])))
            new_cell = clip(cell, (normal, offset), tag=int(j))
            if new_cell is EMPTY:
                raise EmptyCell(f"seed {i} produced an empty cell")
            if new_cell is not cell:
                cell = new_cell
                radius = float(np.linalg.norm(cell.vertices - seeds[i], axis=1).max())
        cells.append(cell)

    adjacency = []
    for i, cell in enumerate(cells):
        for ring, tag in zip(cell.faces, cell.face_tags):
            if tag is None or tag == BOUNDARY_TAG or tag <= i:
                continue
            poly = cell.vertices[list(ring)]
            if _polygon_area(poly) > FACE_AREA_TOL:
                adjacency.append((i, int(tag), poly))
    adjacency.sort(key=lambda e: (e[0], e[1]))
    return tuple(cells), tuple(adjacency)


def voronoi(spec: EllipsoidSpec, seeds: np.ndarray, rng_seed: int = 0) -> FragmentMesh:
    particle = ellipsoid_polyhedron(spec)
    cells, adjacency = voronoi_cells(particle, seeds)
    seeds = np.asarray(seeds, dtype=float).copy()
    seeds.setflags(write=False)
    return FragmentMesh(spec=spec, rng_seed=rng_seed, seeds=seeds,
                        particle=particle, cells=cells, adjacency=adjacency)


def _cell_centroids(cells) -> np.ndarray:
    cents = np.empty((len(cells), 3))
    for k, cell in enumerate(cells):
        cents[k], _ = centroid_volume(cell)
    return cents


def lloyd_refine(mesh: FragmentMesh, max_iters: int = 50, tol: float | None = None) -> FragmentMesh:
    """Centroid-replacement refinement until seeds move less than tol.

    tol defaults to 1e-3 of the particle diameter.  The displacement history
    and the number of re-tessellations are recorded on the returned mesh.
    """
    if tol is None:
        tol = 1e-3 * mesh.spec.diameter
    current = mesh
    displacements: list[float] = []
    iters = 0
    for _ in range(max_iters):
        cents = _cell_centroids(current.cells)
        disp = float(np.linalg.norm(cents - current.seeds, axis=1).max())
        displacements.append(disp)
        if disp < tol:
            break
        current = voronoi(mesh.spec, cents, rng_seed=mesh.rng_seed)
        iters += 1
    return replace(current, lloyd_iters=iters,
                   lloyd_displacements=tuple(displacements))


def tessellate(spec: EllipsoidSpec, rng_seed: int, lloyd: bool = True,
               lloyd_max_iters: int = 50, lloyd_tol: float | None = None) -> FragmentMesh:
    """Seed, tessellate and (optionally) Lloyd-refine a particle."""
    seeds = generate_seeds(spec, rng_seed)
    mesh = voronoi(spec, seeds, rng_seed=rng_seed)
    if lloyd:
        mesh = lloyd_refine(mesh, max_iters=lloyd_max_iters, tol=lloyd_tol)
    return mesh


def rotate_mesh(mesh: FragmentMesh, rotation: np.ndarray) -> FragmentMesh:
    """Rigidly rotate every geometric quantity of the mesh (for invariance tests)."""
    R = np.asarray(rotation, dtype=float)

    def rot_poly(poly: ConvexPolyhedron) -> ConvexPolyhedron:
        return ConvexPolyhedron(poly.vertices @ R.T, poly.faces, poly.face_tags)

    seeds = mesh.seeds @ R.T
    seeds.setflags(write=False)
    return replace(mesh,
                   seeds=seeds,
                   particle=rot_poly(mesh.particle),
                   cells=tuple(rot_poly(c) for c in mesh.cells),
                   adjacency=tuple((i, j, poly @ R.T) for i, j, poly in mesh.adjacency))


def _poly_to_obj(poly: ConvexPolyhedron) -> dict:
    out = {"vertices": poly.vertices.tolist(),
           "faces": [list(f) for f in poly.faces]}
    if poly.face_tags is not None:
        out["tags"] = [t if t is None else int(t) for t in poly.face_tags]
    return out


def _poly_from_obj(obj: dict) -> ConvexPolyhedron:
    return ConvexPolyhedron(np.asarray(obj["vertices"], dtype=float),
                            obj["faces"], obj.get("tags"))


def mesh_to_obj(mesh: FragmentMesh) -> dict:
    return {
        "schema": TESS_SCHEMA,
        "spec": {"diameter": mesh.spec.diameter,
                 "scale": list(mesh.spec.scale),
                 "facet_count": mesh.spec.facet_count},
        "rng_seed": int(mesh.rng_seed),
        "seeds": mesh.seeds.tolist(),
        "particle": _poly_to_obj(mesh.particle),
        "cells": [_poly_to_obj(c) for c in mesh.cells],
        "adjacency": [{"i": i, "j": j, "face": poly.tolist()}
                      for i, j, poly in mesh.adjacency],
        "lloyd_iters": mesh.lloyd_iters,
        "lloyd_displacements": list(mesh.lloyd_displacements),
    }


def mesh_from_obj(obj: dict) -> FragmentMesh:
    from .errors import SchemaMismatch
    if obj.get("schema") != TESS_SCHEMA:
        raise SchemaMismatch(f"expected {TESS_SCHEMA}, got {obj.get('schema')!r}")
    spec = EllipsoidSpec(diameter=obj["spec"]["diameter"],
                         scale=tuple(obj["spec"]["scale"]),
                         facet_count=obj["spec"]["facet_count"])
    seeds = np.asarray(obj["seeds"], dtype=float)
    seeds.setflags(write=False)
    return FragmentMesh(
        spec=spec,
        rng_seed=obj["rng_seed"],
        seeds=seeds,
        particle=_poly_from_obj(obj["particle"]),
        cells=tuple(_poly_from_obj(c) for c in obj["cells"]),
        adjacency=tuple((e["i"], e["j"], np.asarray(e["face"], dtype=float))
                        for e in obj["adjacency"]),
        lloyd_iters=obj["lloyd_iters"],
        lloyd_displacements=tuple(obj["lloyd_displacements"]),
    )


def mesh_to_json(mesh: FragmentMesh) -> str:
    return json.dumps(mesh_to_obj(mesh), sort_keys=True, separators=(",", ":"))


def mesh_from_json(text: str) -> FragmentMesh:
    return mesh_from_obj(json.loads(text))
