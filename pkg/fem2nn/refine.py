from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Set, Tuple

import numpy as np

from .errors import MeshError
from .mesh import Mesh, shape_regularity

_logger = logging.getLogger("fem2nn.refine")

DEFAULT_KAPPA_CAP = 25.0
# the red-green generator halves element size per level
BUILTIN_SIGMA = 0.5

DOMAINS = ("square", "lshape", "square_corner", "cube")


@dataclass(frozen=True)
class GeometricMeshSpec:
    sigma: float
    corners: np.ndarray
    levels: int
    base_mesh: Mesh
    kappa_cap: float = DEFAULT_KAPPA_CAP

    def __post_init__(self) -> None:
        if not 0.0 < self.sigma < 1.0:
            raise MeshError(f"sigma must lie in (0, 1), got {self.sigma}")
        if self.levels < 0:
            raise MeshError(f"levels must be >= 0, got {self.levels}")
        corners = np.array(self.corners, dtype=float).reshape(-1, self.base_mesh.dim)
        object.__setattr__(self, "corners", corners)


@dataclass(frozen=True)
class GradingReport:
    """diam(K)/dist(K, S) per element (nan where K touches S) and layer index j."""

    ratios: np.ndarray
    layers: np.ndarray

    def bounds(self) -> Tuple[float, float]:
        finite = self.ratios[np.isfinite(self.ratios)]
        if not finite.size:
            return (math.nan, math.nan)
        return float(finite.min()), float(finite.max())


def _criss_cross(
    xs: np.ndarray, ys: np.ndarray, keep: np.ndarray | None = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Split every kept grid cell into four triangles around its center.
    keep[i, j] selects cell [xs[i], xs[i+1]] x [ys[j], ys[j+1]].
    """
    nx, ny = len(xs) - 1, len(ys) - 1
    if keep is None:
        keep = np.ones((nx, ny), dtype=bool)
    index: Dict[Tuple, int] = {}
    coords: List[Tuple[float, float]] = []

    def vid(key: Tuple, point: Tuple[float, float]) -> int:
        if key not in index:
            index[key] = len(coords)
            coords.append(point)
        return index[key]

    triangles: List[Tuple[int, int, int]] = []
    for i in range(nx):
        for j in range(ny):
            if not keep[i, j]:
                continue
            a = vid(("g", i, j), (xs[i], ys[j]))
            b = vid(("g", i + 1, j), (xs[i + 1], ys[j]))
            c = vid(("g", i + 1, j + 1), (xs[i + 1], ys[j + 1]))
            d = vid(("g", i, j + 1), (xs[i], ys[j + 1]))
            m = vid(("c", i, j), (0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])))
            triangles.extend([(a, b, m), (b, c, m), (c, d, m), (d, a, m)])
    return np.array(coords, dtype=float), np.array(triangles, dtype=np.int64)


def unit_square(n: int = 1) -> Mesh:
    """Criss-cross mesh of (0,1)^2 with n x n cells (4n^2 triangles)."""
    if n < 1:
        raise MeshError("n must be >= 1")
    grid = np.linspace(0.0, 1.0, n + 1)
    vertices, elements = _criss_cross(grid, grid)
    return Mesh(vertices, elements)


def square_corner(n: int = 1) -> Mesh:
    """Unit square with the singular corner at the origin."""
    return unit_square(n).with_corners(np.zeros((1, 2)))


def lshape(n: int = 1) -> Mesh:
    """(-1,1)^2 minus [0,1]x[-1,0], criss-cross cells of width 1/n, reentrant corner at 0."""
    if n < 1:
        raise MeshError("n must be >= 1")
    grid = np.linspace(-1.0, 1.0, 2 * n + 1)
    keep = np.ones((2 * n, 2 * n), dtype=bool)
    keep[n:, :n] = False
    vertices, elements = _criss_cross(grid, grid, keep)
    return Mesh(vertices, elements, np.zeros((1, 2)))


def unit_cube() -> Mesh:
    """Kuhn subdivision of the unit cube into six tetrahedra."""
    vertices = np.array(list(itertools.product((0.0, 1.0), repeat=3)))[:, ::-1]
    lookup = {tuple(v.astype(int)): k for k, v in enumerate(vertices)}
    elements = []
    for perm in itertools.permutations(range(3)):
        point = np.zeros(3, dtype=int)
        tet = [lookup[tuple(point)]]
        for axis in perm:
            point[axis] = 1
            tet.append(lookup[tuple(point)])
        elements.append(tet)
    mesh = Mesh(vertices, np.array(elements))
    return _orient(mesh)


def _orient(mesh: Mesh) -> Mesh:
    elements = mesh.elements.copy()
    flip = mesh.signed_volumes < 0
    elements[flip, 0], elements[flip, 1] = mesh.elements[flip, 1], mesh.elements[flip, 0]
    return Mesh(mesh.vertices, elements, mesh.corners)


def build_domain(domain: str, n: int = 1) -> Mesh:
    if domain == "square":
        return unit_square(n)
    if domain == "lshape":
        return lshape(n)
    if domain == "square_corner":
        return square_corner(n)
    if domain == "cube":
        return unit_cube()
    raise MeshError(f"unknown domain {domain!r}; expected one of {', '.join(DOMAINS)}")


def random_mesh(domain: str, seed: int, n: int = 2, jitter: float = 0.15) -> Mesh:
    """
    Structured mesh with interior vertices moved by a seeded uniform jitter of at most
    `jitter` times the cell width per coordinate. Boundary and corner vertices stay put.
    """
    base = build_domain(domain, n)
    rng = np.random.default_rng(seed)
    width = 1.0 / n
    interior = np.setdiff1d(np.arange(base.n_vertices), base.boundary_vertices)
    vertices = base.vertices.copy()
    vertices[interior] += rng.uniform(-jitter * width, jitter * width, size=(len(interior), base.dim))
    mesh = Mesh(vertices, base.elements, base.corners)
    flipped = np.flatnonzero(np.sign(mesh.signed_volumes) != np.sign(base.signed_volumes))
    if flipped.size:
        raise MeshError("jitter inverted elements", flipped.tolist())
    return mesh


def _edge(i: int, j: int) -> Tuple[int, int]:
    return (i, j) if i < j else (j, i)


def _triangle_edges(tri: np.ndarray) -> List[Tuple[int, int]]:
    a, b, c = (int(v) for v in tri)
    return [_edge(a, b), _edge(b, c), _edge(c, a)]


def refine_marked(mesh: Mesh, marked: Set[int]) -> Mesh:
    """
    Red refinement of the marked triangles with red-green closure: elements with two or
    more split edges become red, elements with exactly one are bisected (green).
    """
    if mesh.dim != 2:
        raise MeshError("the built-in refinement supports d = 2 only")
    red = set(int(k) for k in marked)
    split: Set[Tuple[int, int]] = set()
    while True:
        split = {e for k in red for e in _triangle_edges(mesh.elements[k])}
        grown = {
            k
            for k in range(mesh.n_elements)
            if k not in red and sum(e in split for e in _triangle_edges(mesh.elements[k])) >= 2
        }
        if not grown:
            break
        red |= grown

    vertices = [tuple(v) for v in mesh.vertices]
    midpoint: Dict[Tuple[int, int], int] = {}

    def mid(i: int, j: int) -> int:
        key = _edge(i, j)
        if key not in midpoint:
            midpoint[key] = len(vertices)
            vertices.append(tuple(0.5 * (mesh.vertices[i] + mesh.vertices[j])))
        return midpoint[key]

    elements: List[Tuple[int, int, int]] = []
    for k, tri in enumerate(mesh.elements):
        a, b, c = (int(v) for v in tri)
        if k in red:
            mab, mbc, mca = mid(a, b), mid(b, c), mid(c, a)
            elements.extend([(a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mab, mbc, mca)])
            continue
        edges = [(a, b, c), (b, c, a), (c, a, b)]
        hit = [(x, y, z) for x, y, z in edges if _edge(x, y) in split]
        if not hit:
            elements.append((a, b, c))
            continue
        x, y, z = hit[0]
        m = mid(x, y)
        elements.extend([(x, m, z), (m, y, z)])
    return Mesh(np.array(vertices, dtype=float), np.array(elements, dtype=np.int64), mesh.corners)


def refine_uniform(mesh: Mesh) -> Mesh:
    return refine_marked(mesh, set(range(mesh.n_elements)))


def geometric_refine(spec: GeometricMeshSpec) -> List[Mesh]:
    """
    Geometric mesh sequence graded toward the corners: at each level every element
    that has a corner as a vertex is red-refined. Returns the meshes of levels 0..levels.
    """
    if abs(spec.sigma - BUILTIN_SIGMA) > 1e-12:
        raise MeshError(
            f"the built-in generator only produces sigma = {BUILTIN_SIGMA}; import other meshes from file"
        )
    base = spec.base_mesh.with_corners(spec.corners)
    if base.dim != 2:
        raise MeshError("the built-in geometric generator supports d = 2 only")
    corner_ids = set(base.corner_vertices())

    meshes = [base]
    current = base
    for level in range(1, spec.levels + 1):
        marked = {k for k, tri in enumerate(current.elements) if corner_ids.intersection(tri.tolist())}
        current = refine_marked(current, marked)
        kappa = shape_regularity(current).kappa
        if kappa > spec.kappa_cap:
            raise MeshError(f"level {level} has shape constant {kappa:.3g} above cap {spec.kappa_cap}")
        _logger.debug("level %d: %d elements, kappa %.3f", level, current.n_elements, kappa)
        meshes.append(current)
    return meshes


def point_simplex_distance(point: np.ndarray, simplex: np.ndarray) -> float:
    """Euclidean distance from a point to a closed triangle (d = 2) or to its vertices otherwise."""
    if simplex.shape == (3, 2):
        a, b, c = simplex
        T = np.column_stack([b - a, c - a])
        lam = np.linalg.solve(T, point - a)
        if lam.min() >= 0 and lam.sum() <= 1:
            return 0.0
        return min(_segment_distance(point, simplex[i], simplex[(i + 1) % 3]) for i in range(3))
    return float(np.sqrt(((simplex - point) ** 2).sum(axis=1)).min())


def _segment_distance(point: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    t = float(np.clip((point - a) @ ab / (ab @ ab), 0.0, 1.0))
    return float(np.linalg.norm(point - (a + t * ab)))


def grading_report(mesh: Mesh, corners: np.ndarray | None = None, sigma: float = BUILTIN_SIGMA) -> GradingReport:
    corners = mesh.corners if corners is None else np.asarray(corners, dtype=float).reshape(-1, mesh.dim)
    diam = mesh.diameters
    ratios = np.full(mesh.n_elements, np.nan)
    for k in range(mesh.n_elements):
        simplex = mesh.element_coords[k]
        dist = min((point_simplex_distance(c, simplex) for c in corners), default=math.inf)
        if dist > 1e-14 * mesh.scale:
            ratios[k] = diam[k] / dist
    layers = np.floor(np.log(diam.max() / diam) / math.log(1.0 / sigma) + 1e-9).astype(np.int64)
    return GradingReport(ratios=ratios, layers=layers)
