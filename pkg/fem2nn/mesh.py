from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import cKDTree

from .errors import MeshError
from .fileio import atomic_write_text

_logger = logging.getLogger("fem2nn.mesh")

# vol(K) < DEGENERACY_TOL * h_K^d counts as degenerate
DEGENERACY_TOL = 1e-14
LOCATE_TOL = 1e-12
_LOCATE_CHUNK = 256


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Regular simplicial partition of a polytopal domain.

    `vertices` is (n, d), `elements` is (m, d+1) with vertex indices,
    `corners` holds the coordinates of singular points (possibly empty).
    Arrays are made read-only; derived data is cached on first use.
    """

    vertices: np.ndarray
    elements: np.ndarray
    corners: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self) -> None:
        vertices = np.array(self.vertices, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] < 2:
            raise MeshError("vertices must be an (n, d) array with d >= 2")
        d = vertices.shape[1]
        elements = np.array(self.elements, dtype=np.int64).reshape(-1, d + 1)
        if elements.size:
            bad = np.flatnonzero((elements < 0).any(axis=1) | (elements >= len(vertices)).any(axis=1))
            if bad.size:
                raise MeshError("elements reference invalid vertex indices", bad.tolist())
        corners = np.array(self.corners, dtype=float).reshape(-1, d)
        for arr in (vertices, elements, corners):
            arr.flags.writeable = False
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "corners", corners)

    @property
    def dim(self) -> int:
        return int(self.vertices.shape[1])

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_elements(self) -> int:
        return int(self.elements.shape[0])

    @cached_property
    def element_coords(self) -> np.ndarray:
        """(m, d+1, d) vertex coordinates per element."""
        return self.vertices[self.elements]

    @cached_property
    def jacobians(self) -> np.ndarray:
        """(m, d, d) matrices whose columns are x_k - x_0."""
        X = self.element_coords
        return np.transpose(X[:, 1:, :] - X[:, :1, :], (0, 2, 1))

    @cached_property
    def signed_volumes(self) -> np.ndarray:
        return np.linalg.det(self.jacobians) / math.factorial(self.dim)

    @cached_property
    def volumes(self) -> np.ndarray:
        return np.abs(self.signed_volumes)

    @cached_property
    def diameters(self) -> np.ndarray:
        X = self.element_coords
        diff = X[:, :, None, :] - X[:, None, :, :]
        return np.sqrt((diff**2).sum(axis=-1)).max(axis=(1, 2))

    def degenerate_elements(self) -> List[int]:
        bad = self.volumes < DEGENERACY_TOL * self.diameters**self.dim
        return np.flatnonzero(bad).tolist()

    @cached_property
    def barycentric_maps(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        (G, g) with shapes (m, d+1, d) and (m, d+1) such that the barycentric
        coordinates of x in element K are G[K] @ x + g[K].
        """
        degenerate = self.degenerate_elements()
        if degenerate:
            raise MeshError(f"degenerate elements: {degenerate}", degenerate)
        Binv = np.linalg.inv(self.jacobians)
        x0 = self.element_coords[:, 0, :]
        m, d = self.n_elements, self.dim
        G = np.empty((m, d + 1, d))
        g = np.empty((m, d + 1))
        G[:, 1:, :] = Binv
        g[:, 1:] = -np.einsum("mkd,md->mk", Binv, x0)
        G[:, 0, :] = -Binv.sum(axis=1)
        g[:, 0] = 1.0 - g[:, 1:].sum(axis=1)
        G.flags.writeable = False
        g.flags.writeable = False
        return G, g

    @cached_property
    def boundary_faces(self) -> np.ndarray:
        """(nb, d) sorted vertex-index tuples of facets owned by exactly one element."""
        d = self.dim
        faces = []
        for k in range(d + 1):
            faces.append(np.delete(self.elements, k, axis=1))
        allf = np.sort(np.concatenate(faces, axis=0), axis=1)
        if not len(allf):
            return np.zeros((0, d), dtype=np.int64)
        uniq, counts = np.unique(allf, axis=0, return_counts=True)
        return uniq[counts == 1]

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_faces)

    @property
    def scale(self) -> float:
        if not self.n_vertices:
            return 1.0
        span = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(max(span.max(), 1e-300))

    def corner_vertices(self) -> List[int]:
        """Vertex indices of the singular corners; every corner must be a mesh vertex."""
        if not len(self.corners):
            return []
        tree = cKDTree(self.vertices)
        dist, idx = tree.query(self.corners)
        tol = 1e-10 * self.scale
        missing = [i for i, dd in enumerate(np.atleast_1d(dist)) if dd > tol]
        if missing:
            raise MeshError(f"corners {missing} are not mesh vertices", missing)
        return [int(i) for i in np.atleast_1d(idx)]

    def with_corners(self, corners: np.ndarray) -> "Mesh":
        return Mesh(self.vertices, self.elements, corners)

    def total_volume(self) -> float:
        return float(self.volumes.sum())


@dataclass(frozen=True)
class RegularityReport:
    ok: bool
    violations: List[Tuple[int, int]]
    degenerate: List[int]


@dataclass(frozen=True)
class PatchIndex:
    elements_of: Tuple[Tuple[int, ...], ...]
    s: np.ndarray
    s_max: int


@dataclass(frozen=True)
class ShapeReport:
    h: np.ndarray
    r: np.ndarray
    kappa: float


def barycentric(mesh: Mesh, element: int, x: np.ndarray) -> np.ndarray:
    """
    Barycentric coordinates of x (a point or an (n, d) batch) with respect to
    the given element; they sum to one and are affine in x.
    """
    G, g = mesh.barycentric_maps
    pts = np.asarray(x, dtype=float)
    if pts.shape[-1] != mesh.dim:
        raise MeshError(f"point dimension {pts.shape[-1]} != mesh dimension {mesh.dim}")
    return pts @ G[element].T + g[element]


def locate_many(mesh: Mesh, points: np.ndarray, tol: float = LOCATE_TOL) -> np.ndarray:
    """
    Element index per point, -1 for points outside the domain. Points on shared
    faces go to the lowest-indexed incident element.
    """
    G, g = mesh.barycentric_maps
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.full(len(pts), -1, dtype=np.int64)
    for start in range(0, len(pts), _LOCATE_CHUNK):
        chunk = pts[start : start + _LOCATE_CHUNK]
        lam = np.einsum("mkd,nd->nmk", G, chunk) + g[None, :, :]
        inside = lam.min(axis=-1) >= -tol
        first = inside.argmax(axis=1)
        hit = inside[np.arange(len(chunk)), first]
        out[start : start + len(chunk)] = np.where(hit, first, -1)
    return out


def locate(mesh: Mesh, x: np.ndarray) -> Optional[int]:
    idx = int(locate_many(mesh, np.asarray(x, dtype=float)[None, :])[0])
    return None if idx < 0 else idx


def patch_index(mesh: Mesh) -> PatchIndex:
    buckets: List[List[int]] = [[] for _ in range(mesh.n_vertices)]
    for k, element in enumerate(mesh.elements):
        for v in element:
            buckets[int(v)].append(k)
    s = np.array([len(b) for b in buckets], dtype=np.int64)
    return PatchIndex(
        elements_of=tuple(tuple(b) for b in buckets),
        s=s,
        s_max=int(s.max()) if len(s) else 0,
    )


def facet_measures(mesh: Mesh) -> np.ndarray:
    """(m, d+1) measures of the facet opposite each local vertex."""
    X = mesh.element_coords
    d = mesh.dim
    out = np.empty((mesh.n_elements, d + 1))
    for k in range(d + 1):
        Y = np.delete(X, k, axis=1)
        E = Y[:, 1:, :] - Y[:, :1, :]
        gram = E @ np.transpose(E, (0, 2, 1))
        out[:, k] = np.sqrt(np.clip(np.linalg.det(gram), 0.0, None)) / math.factorial(d - 1)
    return out


def shape_regularity(mesh: Mesh) -> ShapeReport:
    degenerate = mesh.degenerate_elements()
    if degenerate:
        raise MeshError(f"degenerate element {degenerate[0]}", degenerate)
    h = mesh.diameters
    r = mesh.dim * mesh.volumes / facet_measures(mesh).sum(axis=1)
    return ShapeReport(h=h, r=r, kappa=float((h / r).max()))


def validate_regularity(mesh: Mesh) -> RegularityReport:
    """
    Pairwise conformity check: the intersection of any two closed elements must be
    the convex hull of their shared vertices. Facet-sharing pairs are settled by a
    side test, all other pairs with overlapping bounding boxes by a small LP.
    """
    if mesh.n_elements == 0 or mesh.n_vertices == 0:
        raise MeshError("empty mesh")
    tree = cKDTree(mesh.vertices)
    dupes = sorted(tree.query_pairs(1e-12 * mesh.scale))
    if dupes:
        flat = sorted({i for pair in dupes for i in pair})
        raise MeshError(f"duplicate vertices: {dupes}", flat)

    degenerate = mesh.degenerate_elements()
    if degenerate:
        _logger.warning("mesh has %d degenerate elements", len(degenerate))
        return RegularityReport(ok=False, violations=[], degenerate=degenerate)

    G, g = mesh.barycentric_maps
    X = mesh.element_coords
    lo, hi = X.min(axis=1), X.max(axis=1)
    pad = 1e-12 * mesh.scale
    violations: List[Tuple[int, int]] = []
    for a in range(mesh.n_elements - 1):
        rest = np.arange(a + 1, mesh.n_elements)
        overlap = np.all(lo[rest] <= hi[a] + pad, axis=1) & np.all(hi[rest] >= lo[a] - pad, axis=1)
        set_a = set(mesh.elements[a].tolist())
        for b in rest[overlap]:
            b = int(b)
            shared = set_a.intersection(mesh.elements[b].tolist())
            if not _pair_is_conforming(mesh, a, b, shared, G, g):
                violations.append((a, b))
    if violations:
        _logger.info("regularity check found %d violating pairs", len(violations))
    return RegularityReport(ok=not violations, violations=violations, degenerate=[])


def _pair_is_conforming(mesh: Mesh, a: int, b: int, shared: set, G: np.ndarray, g: np.ndarray) -> bool:
    d = mesh.dim
    if len(shared) == d + 1:
        return False
    if len(shared) == d:
        # common facet: the two remaining vertices must lie strictly on opposite sides
        k_a = [k for k, v in enumerate(mesh.elements[a]) if v not in shared][0]
        k_b = [k for k, v in enumerate(mesh.elements[b]) if v not in shared][0]
        opposite = mesh.vertices[mesh.elements[b][k_b]]
        # λ_{k_a} of element a vanishes on the shared facet and is positive at a's own vertex
        value = float(opposite @ G[a, k_a] + g[a, k_a])
        return value < -1e-10
    nonshared = [k for k, v in enumerate(mesh.elements[a]) if v not in shared]
    c = -G[a, nonshared].sum(axis=0)
    const = g[a, nonshared].sum()
    A_ub = np.vstack([-G[a], -G[b]])
    b_ub = np.concatenate([g[a], g[b]])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * d, method="highs")
    if res.status == 2:
        return not shared
    if res.status != 0:
        raise MeshError(f"intersection test failed for elements {a}, {b}: {res.message}", [a, b])
    return -float(res.fun) + const <= 1e-9


def sample_points(mesh: Mesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """Points distributed uniformly over the domain."""
    vol = mesh.volumes
    elems = rng.choice(mesh.n_elements, size=n, p=vol / vol.sum())
    lam = rng.dirichlet(np.ones(mesh.dim + 1), size=n)
    return np.einsum("nk,nkd->nd", lam, mesh.element_coords[elems])


def sample_boundary_points(mesh: Mesh, n: int, rng: np.random.Generator) -> np.ndarray:
    faces = mesh.boundary_faces
    Y = mesh.vertices[faces]
    E = Y[:, 1:, :] - Y[:, :1, :]
    meas = np.sqrt(np.clip(np.linalg.det(E @ np.transpose(E, (0, 2, 1))), 0.0, None))
    picks = rng.choice(len(faces), size=n, p=meas / meas.sum())
    lam = rng.dirichlet(np.ones(mesh.dim), size=n)
    return np.einsum("nk,nkd->nd", lam, Y[picks])


def mesh_to_json(mesh: Mesh) -> str:
    data = {
        "dim": mesh.dim,
        "vertices": mesh.vertices.tolist(),
        "elements": mesh.elements.tolist(),
    }
    if len(mesh.corners):
        data["corners"] = mesh.corners.tolist()
    return json.dumps(data) + "\n"


def mesh_from_json(text: str) -> Mesh:
    try:
        data = json.loads(text)
        dim = int(data["dim"])
        vertices = np.array(data["vertices"], dtype=float).reshape(-1, dim)
        elements = np.array(data["elements"], dtype=np.int64).reshape(-1, dim + 1)
        corners = np.array(data.get("corners", []), dtype=float).reshape(-1, dim)
    except (KeyError, TypeError, ValueError) as exc:
        raise MeshError(f"malformed mesh JSON: {exc}") from exc
    return Mesh(vertices, elements, corners)


def save_mesh(mesh: Mesh, path: Path | str) -> Path:
    return atomic_write_text(path, mesh_to_json(mesh))


def load_mesh(path: Path | str) -> Mesh:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise MeshError(f"cannot read mesh file {path}: {exc}") from exc
    return mesh_from_json(text)
