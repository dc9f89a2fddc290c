from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

import sys
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from fem2nn.errors import MeshError  # noqa: E402
from fem2nn.mesh import shape_regularity, validate_regularity  # noqa: E402
from fem2nn.refine import (  # noqa: E402
    GeometricMeshSpec,
    build_domain,
    geometric_refine,
    grading_report,
    lshape,
    point_simplex_distance,
    random_mesh,
    refine_marked,
    refine_uniform,
    square_corner,
    unit_square,
)


def test_uniform_refinement_quadruples_elements() -> None:
    mesh = refine_uniform(unit_square(1))
    assert mesh.n_elements == 16
    assert mesh.total_volume() == pytest.approx(1.0)
    assert validate_regularity(mesh).ok
    assert shape_regularity(mesh).kappa == pytest.approx(shape_regularity(unit_square(1)).kappa)


def test_marked_refinement_closes_with_green_bisections() -> None:
    mesh = refine_marked(unit_square(1), {0})
    # one red element (4 children), two green neighbours (2 each), one untouched
    assert mesh.n_elements == 9
    assert mesh.total_volume() == pytest.approx(1.0)
    assert validate_regularity(mesh).ok


def test_refinement_rejects_3d() -> None:
    with pytest.raises(MeshError):
        refine_uniform(build_domain("cube"))


@pytest.mark.parametrize("levels", [1, 3])
def test_geometric_refine_returns_every_level(levels: int) -> None:
    base = lshape(1)
    spec = GeometricMeshSpec(sigma=0.5, corners=base.corners, levels=levels, base_mesh=base)
    meshes = geometric_refine(spec)
    assert len(meshes) == levels + 1
    counts = [m.n_elements for m in meshes]
    assert counts == sorted(counts)
    for ell, mesh in enumerate(meshes):
        assert mesh.total_volume() == pytest.approx(3.0)
        assert validate_regularity(mesh).ok
        assert shape_regularity(mesh).kappa <= spec.kappa_cap
        corner = mesh.corner_vertices()[0]
        touching = (mesh.elements == corner).any(axis=1)
        assert np.allclose(mesh.diameters[touching], 0.5**ell)


def test_geometric_refine_only_builds_half_ratio() -> None:
    base = square_corner(1)
    with pytest.raises(MeshError):
        geometric_refine(GeometricMeshSpec(sigma=0.3, corners=base.corners, levels=2, base_mesh=base))
    with pytest.raises(MeshError):
        GeometricMeshSpec(sigma=1.5, corners=base.corners, levels=2, base_mesh=base)
    with pytest.raises(MeshError):
        GeometricMeshSpec(sigma=0.5, corners=base.corners, levels=-1, base_mesh=base)


def test_grading_report_on_graded_mesh() -> None:
    base = square_corner(1)
    mesh = geometric_refine(GeometricMeshSpec(sigma=0.5, corners=base.corners, levels=4, base_mesh=base))[-1]
    report = grading_report(mesh)
    corner = mesh.corner_vertices()[0]
    touching = (mesh.elements == corner).any(axis=1)
    assert np.all(np.isnan(report.ratios[touching]))
    assert np.all(np.isfinite(report.ratios[~touching]))
    lo, hi = report.bounds()
    assert 0.0 < lo <= hi < 10.0
    assert report.layers.max() == 4
    assert report.layers.min() == 0


def test_geometric_lshape_is_graded_with_linear_growth() -> None:
    base = lshape(1)
    meshes = geometric_refine(GeometricMeshSpec(sigma=0.5, corners=base.corners, levels=5, base_mesh=base))
    counts = np.array([mesh.n_elements for mesh in meshes])
    steps = np.diff(counts)
    assert np.all(steps > 0)
    assert len(set(steps[1:].tolist())) == 1
    for mesh in meshes[1:]:
        lo, hi = grading_report(mesh).bounds()
        assert 0.5 < lo <= hi < 2.0


def test_point_simplex_distance() -> None:
    tri = np.array([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)])
    assert point_simplex_distance(np.array([0.2, 0.2]), tri) == 0.0
    assert point_simplex_distance(np.array([2.0, 0.0]), tri) == pytest.approx(1.0)
    assert point_simplex_distance(np.array([1.0, 1.0]), tri) == pytest.approx(np.sqrt(0.5))


def test_build_domain_names() -> None:
    assert build_domain("square", 2).n_elements == 16
    assert len(build_domain("square_corner").corners) == 1
    with pytest.raises(MeshError):
        build_domain("disk")


def test_random_mesh_is_seeded() -> None:
    one = random_mesh("square", seed=5)
    two = random_mesh("square", seed=5)
    other = random_mesh("square", seed=6)
    assert np.array_equal(one.vertices, two.vertices)
    assert not np.array_equal(one.vertices, other.vertices)
    assert np.array_equal(one.vertices[one.boundary_vertices], unit_square(2).vertices[one.boundary_vertices])
    assert validate_regularity(one).ok
