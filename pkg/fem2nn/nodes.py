from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from itertools import combinations
from typing import Dict, List, Tuple

import numpy as np

from .errors import MeshError
from .mesh import Mesh

NodeKey = Tuple[Tuple[int, int], ...]


@lru_cache(maxsize=None)
def multi_indices(p: int, n: int) -> Tuple[Tuple[int, ...], ...]:
    """All n-tuples of nonnegative integers summing to p, in lexicographic order."""
    out = []
    for bars in combinations(range(p + n - 1), n - 1):
        parts, prev = [], -1
        for bar in bars:
            parts.append(bar - prev - 1)
            prev = bar
        parts.append(p + n - 2 - prev)
        out.append(tuple(parts))
    return tuple(sorted(out))


@dataclass(frozen=True, eq=False)
class LagrangeNodeSet:
    """
    Degree-p Lagrange nodes of a mesh, one entry per distinct point.

    Node i lies in the interior of the subsimplex spanned by `vertices[i]`
    (global vertex indices, ascending) at barycentric position alphas[i] / p.
    `element_nodes[K, j]` is the global node of local multi-index `local[j]`.
    """

    p: int
    coords: np.ndarray
    vertices: Tuple[Tuple[int, ...], ...]
    alphas: Tuple[Tuple[int, ...], ...]
    local: Tuple[Tuple[int, ...], ...]
    element_nodes: np.ndarray

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def size(self) -> int:
        return len(self.vertices)

    @cached_property
    def m(self) -> np.ndarray:
        return np.array([len(a) - 1 for a in self.vertices], dtype=np.int64)

    @cached_property
    def index(self) -> Dict[NodeKey, int]:
        return {tuple(zip(a, al)): i for i, (a, al) in enumerate(zip(self.vertices, self.alphas))}

    def key(self, i: int) -> NodeKey:
        return tuple(zip(self.vertices[i], self.alphas[i]))


def _node_key(element: np.ndarray, beta: Tuple[int, ...]) -> NodeKey:
    return tuple(sorted((int(v), b) for v, b in zip(element, beta) if b > 0))


def interpolation_nodes(mesh: Mesh, p: int) -> LagrangeNodeSet:
    """
    Enumerate the degree-p Lagrange nodes. Shared nodes are identified by their exact
    integer key (sorted global vertices with multi-index), never by coordinates.
    """
    if p < 1:
        raise MeshError(f"polynomial degree must be >= 1, got {p}")
    local = multi_indices(p, mesh.dim + 1)
    keys: Dict[NodeKey, None] = {}
    element_keys: List[List[NodeKey]] = []
    for element in mesh.elements:
        row = [_node_key(element, beta) for beta in local]
        element_keys.append(row)
        for key in row:
            keys.setdefault(key, None)

    ordered = sorted(keys, key=lambda k: (tuple(v for v, _ in k), tuple(a for _, a in k)))
    position = {k: i for i, k in enumerate(ordered)}
    vertices = tuple(tuple(v for v, _ in k) for k in ordered)
    alphas = tuple(tuple(a for _, a in k) for k in ordered)
    coords = np.array(
        [sum(a * mesh.vertices[v] for v, a in k) / p for k in ordered], dtype=float
    ).reshape(-1, mesh.dim)
    element_nodes = np.array([[position[k] for k in row] for row in element_keys], dtype=np.int64)
    element_nodes = element_nodes.reshape(mesh.n_elements, len(local))
    for arr in (coords, element_nodes):
        arr.flags.writeable = False
    return LagrangeNodeSet(
        p=p,
        coords=coords,
        vertices=vertices,
        alphas=alphas,
        local=local,
        element_nodes=element_nodes,
    )


def boundary_nodes(mesh: Mesh, nodes: LagrangeNodeSet) -> np.ndarray:
    """Indices of nodes whose subsimplex lies in a boundary facet."""
    faces = set()
    for face in mesh.boundary_faces:
        face = tuple(int(v) for v in face)
        for r in range(1, len(face) + 1):
            faces.update(combinations(face, r))
    return np.array([i for i, a in enumerate(nodes.vertices) if a in faces], dtype=np.int64)
