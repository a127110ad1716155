"""Voronoi tessellation: partition, adjacency, refinement, determinism."""

import math

import numpy as np
import pytest

from crushlab.errors import EmptyCell
from crushlab.geometry import EllipsoidSpec, measure
from crushlab.tessellation import (
    BOUNDARY_TAG,
    cell_count,
    generate_seeds,
    lloyd_refine,
    mesh_from_json,
    mesh_to_json,
    tessellate,
    voronoi,
    voronoi_cells,
)
from test_geometry import hull_poly

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


def octa_sphere(level=6, radius=1.0):
    """Subdivided-octahedron sphere, symmetric under the full octahedral group."""
    pts = []
    n = level
    for i in range(n + 1):
        for j in range(n + 1 - i):
            k = n - i - j
            base = np.array([i, j, k], dtype=float) / n
            for sx in (1, -1):
                for sy in (1, -1):
                    for sz in (1, -1):
                        p = base * (sx, sy, sz)
                        norm = np.linalg.norm(p)
                        pts.append(tuple(np.round(p / norm * radius, 12)))
    pts = np.array(sorted(set(pts)))
    return hull_poly(pts)


def test_cell_count_law():
    assert cell_count(11.86) == 8
    assert cell_count(35.57) == 216
    assert cell_count(2 * 11.86) == 64
    assert cell_count(1.0) == 8       # clamped low
    assert cell_count(100.0) == 216   # clamped high


def test_generate_seeds_inside_and_deterministic():
    spec = EllipsoidSpec(diameter=11.86, scale=(1.4, 1.4, 1))
    s1 = generate_seeds(spec, rng_seed=7)
    s2 = generate_seeds(spec, rng_seed=7)
    assert np.array_equal(s1, s2)
    assert s1.shape == (8, 3)
    axes = spec.semi_axes
    assert np.all(np.square(s1 / axes).sum(axis=1) < 1.0)


def test_two_symmetric_seeds_equal_volumes():
    # The Fibonacci point set has an exact two-fold rotation symmetry that
    # flips z, so seeds at +/- s*z yield congruent cells.
    spec = EllipsoidSpec(diameter=2.0, scale=(1, 1, 1))
    seeds = np.array([[0.0, 0.0, 0.35], [0.0, 0.0, -0.35]])
    mesh = voronoi(spec, seeds)
    v0 = measure(mesh.cells[0]).volume
    v1 = measure(mesh.cells[1]).volume
    assert v0 == pytest.approx(v1, abs=1e-9)
    assert len(mesh.adjacency) == 1


def test_eight_cube_corner_seeds_congruent_cells():
    particle = octa_sphere(level=6, radius=1.0)
    a = 0.4
    seeds = np.array([[sx * a, sy * a, sz * a]
                      for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)])
    cells, adjacency = voronoi_cells(particle, seeds)
    vols = np.array([measure(c).volume for c in cells])
    assert np.all(np.abs(vols - vols[0]) <= 1e-6 * vols[0])
    # every cell touches its 3 axis-neighbours
    degrees = np.zeros(8, dtype=int)
    for i, j, _ in adjacency:
        degrees[i] += 1
        degrees[j] += 1
    assert np.all(degrees >= 3)


def test_nearest_seed_oracle():
    rng = np.random.default_rng(100)
    for trial in range(5):
        spec = EllipsoidSpec(diameter=rng.uniform(11.86, 18.0),
                             scale=(rng.uniform(1.0, 1.5), rng.uniform(1.0, 1.5), 1.0))
        mesh = tessellate(spec, rng_seed=trial, lloyd=False)
        planes = [c.face_planes() for c in mesh.cells]
        checked = 0
        pts = rng.uniform(mesh.particle.vertices.min(axis=0),
                          mesh.particle.vertices.max(axis=0), size=(2000, 3))
        for p in pts:
            if checked >= 100:
                break
            containing = [k for k, (nr, off) in enumerate(planes)
                          if np.all(p @ nr.T <= off - 1e-9)]
            if len(containing) != 1:
                continue
            checked += 1
            nearest = int(np.argmin(np.linalg.norm(mesh.seeds - p, axis=1)))
            assert nearest == containing[0]
        assert checked == 100


def test_partition_and_adjacency_invariants():
    spec = EllipsoidSpec(diameter=16.85, scale=(1.2, 1.1, 1.0))
    mesh = tessellate(spec, rng_seed=5, lloyd_max_iters=5)
    vols = [measure(c).volume for c in mesh.cells]
    total = measure(mesh.particle).volume
    assert sum(vols) == pytest.approx(total, rel=1e-6)
    assert mesh.is_connected()

    seen = set()
    for i, j, poly in mesh.adjacency:
        assert i < j
        assert (i, j) not in seen
        seen.add((i, j))
        area = _polygon_area(poly)
        assert area > 0

    # per-cell internal area equals the sum of its shared-face areas
    for k, cell in enumerate(mesh.cells):
        total_area = measure(cell).surface_area
        boundary = 0.0
        for ring, tag in zip(cell.faces, cell.face_tags):
            if tag == BOUNDARY_TAG:
                boundary += _polygon_area(cell.vertices[list(ring)])
        internal = total_area - boundary
        shared = sum(_polygon_area(poly) for i, j, poly in mesh.adjacency
                     if k in (i, j))
        assert shared == pytest.approx(internal, rel=1e-6)


def test_cells_validate():
    mesh = tessellate(EllipsoidSpec(diameter=14.35, scale=(1, 1, 1)),
                      rng_seed=8, lloyd_max_iters=4)
    for cell in mesh.cells:
        cell.validate()


def test_interiors_disjoint():
    mesh = tessellate(EllipsoidSpec(diameter=13.10, scale=(1.1, 1.1, 1.0)),
                      rng_seed=2, lloyd=False)
    planes = [c.face_planes() for c in mesh.cells]
    rng = np.random.default_rng(0)
    pts = rng.uniform(mesh.particle.vertices.min(axis=0),
                      mesh.particle.vertices.max(axis=0), size=(500, 3))
    for p in pts:
        strictly_in = sum(bool(np.all(p @ nr.T < off - 1e-9)) for nr, off in planes)
        assert strictly_in <= 1


def test_determinism_byte_identical():
    spec = EllipsoidSpec(diameter=15.60, scale=(1.25, 0.968, 1.0))
    a = mesh_to_json(tessellate(spec, rng_seed=99, lloyd_max_iters=6))
    b = mesh_to_json(tessellate(spec, rng_seed=99, lloyd_max_iters=6))
    assert a == b


def test_json_roundtrip():
    mesh = tessellate(EllipsoidSpec(diameter=11.86, scale=(1, 1, 1)),
                      rng_seed=12, lloyd=False)
    text = mesh_to_json(mesh)
    assert mesh_to_json(mesh_from_json(text)) == text


def test_lloyd_fixed_point():
    spec = EllipsoidSpec(diameter=2.0, scale=(1, 1, 1))
    seeds = np.array([[0.0, 0.0, 0.35], [0.0, 0.0, -0.35]])
    mesh = voronoi(spec, seeds)
    from crushlab.tessellation import _cell_centroids
    centroidal = voronoi(spec, _cell_centroids(mesh.cells))
    refined = lloyd_refine(centroidal)
    assert refined.lloyd_iters <= 1
    assert refined.lloyd_displacements[-1] < 1e-3 * spec.diameter


def test_lloyd_convergence_log():
    spec = EllipsoidSpec(diameter=11.86, scale=(1, 1, 1))
    mesh = tessellate(spec, rng_seed=42)
    tol = 1e-3 * spec.diameter
    seq = mesh.lloyd_displacements
    assert len(seq) >= 2
    assert seq[-1] < tol
    assert seq[0] > seq[-1]


def test_lloyd_infinite_tol_noop():
    spec = EllipsoidSpec(diameter=11.86, scale=(1, 1, 1))
    mesh = tessellate(spec, rng_seed=1, lloyd=False)
    refined = lloyd_refine(mesh, tol=math.inf)
    assert refined.lloyd_iters == 0
    assert mesh_to_json(refined) == mesh_to_json(
        type(mesh)(**{**mesh.__dict__,
                      "lloyd_iters": refined.lloyd_iters,
                      "lloyd_displacements": refined.lloyd_displacements}))


def test_coincident_seeds_rejected():
    spec = EllipsoidSpec(diameter=2.0, scale=(1, 1, 1))
    seeds = np.array([[0.1, 0.0, 0.0], [0.1, 0.0, 0.0], [0.0, 0.2, 0.0]])
    with pytest.raises(EmptyCell):
        voronoi(spec, seeds)


def _polygon_area(pts):
    rolled = np.roll(pts, -1, axis=0)
    return 0.5 * float(np.linalg.norm(np.cross(pts, rolled).sum(axis=0)))
