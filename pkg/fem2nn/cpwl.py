"""
Exact ReLU networks for the piecewise-linear hat basis.

Each hat function is written as rho(max_t min_{q in S_t} P_q(x)) over a small set of
affine pieces P_q (barycentric coordinates of the patch elements, extended affinely,
plus guard pieces where needed). The form is certified on the closed domain by
checks at mesh vertices, which suffice because both sides are affine per element.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.spatial import ConvexHull, QhullError

from .combinators import (
    concatenate,
    depth_align,
    full_parallelize,
    linear_output,
    max2_net,
    min2_net,
    parallelize,
    relu_identity_net,
)
from .errors import CompilationError, MeshError, NetworkError
from .mesh import Mesh, barycentric, locate_many, patch_index
from .network import Activation, Layer, Network, prune

_logger = logging.getLogger("fem2nn.cpwl")

PIECE_TOL = 1e-10
_GUARD_MARGIN = 1.01


@dataclass(frozen=True)
class AffinePiece:
    slope: Tuple[float, ...]
    intercept: float
    vertex: int
    element: Optional[int]
    guard: bool = False

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ np.asarray(self.slope) + self.intercept


@dataclass(frozen=True)
class LatticeForm:
    """theta(x) = max(0, max over terms of min over the pieces a term selects)."""

    vertex: int
    pieces: Tuple[AffinePiece, ...]
    terms: Tuple[Tuple[int, ...], ...]

    @cached_property
    def coefficients(self) -> np.ndarray:
        return np.array([list(p.slope) + [p.intercept] for p in self.pieces], dtype=float)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        values = pts @ self.coefficients[:, :-1].T + self.coefficients[:, -1]
        best = np.full(len(pts), -np.inf)
        for term in self.terms:
            best = np.maximum(best, values[:, list(term)].min(axis=1))
        return np.maximum(best, 0.0)

    @property
    def n_pieces(self) -> int:
        return sum(len(t) for t in self.terms)


def _patch_is_convex(mesh: Mesh, patch: Sequence[int]) -> bool:
    ids = np.unique(mesh.elements[list(patch)])
    try:
        hull = ConvexHull(mesh.vertices[ids])
    except QhullError:
        return False
    area = float(mesh.volumes[list(patch)].sum())
    return abs(hull.volume - area) <= 1e-10 * max(area, 1e-300)


def _patch_pieces(mesh: Mesh, vertex: int, patch: Sequence[int]) -> Tuple[List[AffinePiece], Dict[int, int]]:
    """Distinct pieces lambda_{vertex,K}; maps each patch element to its piece."""
    G, g = mesh.barycentric_maps
    pieces: List[AffinePiece] = []
    coeffs: List[np.ndarray] = []
    owner: Dict[int, int] = {}
    for k in patch:
        local = int(np.flatnonzero(mesh.elements[k] == vertex)[0])
        c = np.append(G[k, local], g[k, local])
        scale = 1.0 + np.abs(c).max()
        for q, other in enumerate(coeffs):
            if np.abs(other - c).max() <= 1e-12 * scale:
                owner[k] = q
                break
        else:
            owner[k] = len(pieces)
            coeffs.append(c)
            pieces.append(AffinePiece(tuple(G[k, local].tolist()), float(g[k, local]), vertex, int(k)))
    return pieces, owner


class _Certifier:
    """Vertex-based checks of a candidate lattice form against the hat of one vertex."""

    def __init__(self, mesh: Mesh, vertex: int, tol: float) -> None:
        self.mesh = mesh
        self.vertex = vertex
        self.tol = tol
        self.delta = np.zeros(mesh.n_vertices)
        self.delta[vertex] = 1.0
        self.homog = np.column_stack([mesh.vertices, np.ones(mesh.n_vertices)])

    def values(self, coeffs: np.ndarray) -> np.ndarray:
        # (pieces, mesh vertices)
        return coeffs @ self.homog.T

    def below_hat(self, coeffs: np.ndarray) -> np.ndarray:
        """(pieces, elements) True where the piece is <= the hat on the whole element."""
        below = self.values(coeffs) <= self.delta[None, :] + self.tol
        return below[:, self.mesh.elements].all(axis=2)

    def dominating(self, coeffs: np.ndarray, element: int) -> List[int]:
        verts = self.mesh.elements[element]
        ok = self.values(coeffs)[:, verts] >= self.delta[verts][None, :] - self.tol
        return np.flatnonzero(ok.all(axis=1)).tolist()


def _separator(
    mesh: Mesh, K: int, E: int, targets: np.ndarray, lam: np.ndarray, delta: np.ndarray, tol: float
) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """
    Guard offset M*h for element K: h affine, h >= 0 on K, h <= 0 on the targets it
    serves, and lambda_K + M*h <= hat at their vertices. Normals are taken from
    hyperplanes through d vertices of K and E; the candidate serving the most targets
    wins, then the smallest M. E must be served.
    Returns the affine coefficients of M*h and the mask of served targets, or None.
    """
    d = mesh.dim
    kv, ev = mesh.elements[K], mesh.elements[E]
    pool = mesh.vertices[np.unique(np.concatenate([kv, ev]))]
    xk = mesh.vertices[kv]
    xt = mesh.element_coords[targets]
    need = (lam - delta)[mesh.elements[targets]]
    e_pos = int(np.flatnonzero(targets == E)[0])
    scale = mesh.scale
    best: Optional[Tuple[int, float, np.ndarray, np.ndarray]] = None
    for subset in itertools.combinations(range(len(pool)), d):
        pts = pool[list(subset)]
        _, s, vt = np.linalg.svd(pts[1:] - pts[0], full_matrices=True)
        if s[-1] < 1e-12 * scale:
            continue
        for sign in (1.0, -1.0):
            n = sign * vt[-1] / scale
            offset = -float((xk @ n).min())
            h = xt @ n + offset
            below = h < -tol
            on_plane = np.abs(h) <= tol
            served = np.all(below | (on_plane & (need <= tol)), axis=1)
            if not served[e_pos]:
                continue
            ratios = np.where(below, need / np.where(below, -h, 1.0), 0.0)
            M = float(ratios[served].max(initial=0.0)) * _GUARD_MARGIN
            if M <= 0.0:
                continue
            count = int(served.sum())
            if best is None or count > best[0] or (count == best[0] and M < best[1]):
                best = (count, M, np.append(M * n, M * offset), served)
    return None if best is None else (best[2], best[3])


def hat_lattice(
    mesh: Mesh, vertex: int, tol: float = PIECE_TOL, patch: Optional[Sequence[int]] = None
) -> LatticeForm:
    """
    Max-min form of the hat function of `vertex`. A convex patch starts from the single
    term over all patch pieces; otherwise each patch element gets the term of pieces
    dominating the hat on it, merged where identical. A term must equal the hat on the
    elements it is responsible for and stay below it everywhere else. Failing merged
    terms are split per element; single-element terms that still fail get guard pieces.
    """
    if not 0 <= vertex < mesh.n_vertices:
        raise MeshError(f"vertex {vertex} out of range")
    if patch is None:
        patch = np.flatnonzero((mesh.elements == vertex).any(axis=1)).tolist()
    patch = [int(k) for k in patch]
    if not patch:
        raise MeshError(f"vertex {vertex} belongs to no element", [vertex])
    degenerate = set(mesh.degenerate_elements()).intersection(patch)
    if degenerate:
        raise MeshError(f"degenerate element in the patch of vertex {vertex}", sorted(degenerate))

    pieces, owner = _patch_pieces(mesh, vertex, patch)
    cert = _Certifier(mesh, vertex, tol)
    coeffs = np.array([list(p.slope) + [p.intercept] for p in pieces])
    dominating = {k: frozenset(cert.dominating(coeffs, k)) for k in patch}

    pending: List[Tuple[FrozenSet[int], FrozenSet[int]]]
    if _patch_is_convex(mesh, patch):
        pending = [(frozenset(range(len(pieces))), frozenset(patch))]
    else:
        by_set: Dict[FrozenSet[int], set] = {}
        for k in patch:
            by_set.setdefault(dominating[k], set()).add(k)
        pending = [(s, frozenset(r)) for s, r in by_set.items()]

    terms: List[List[int]] = []
    while pending:
        selection, resp = pending.pop(0)
        exact_on_resp = all(selection <= dominating[k] for k in resp)
        covered = cert.below_hat(coeffs[sorted(selection)]).any(axis=0)
        failing = [int(e) for e in np.flatnonzero(~covered) if int(e) not in resp]
        if exact_on_resp and not failing:
            terms.append(sorted(selection))
            continue
        if len(resp) > 1:
            pending.extend((dominating[k], frozenset([k])) for k in sorted(resp))
            continue
        (K,) = tuple(resp)
        chosen = set(selection)
        lam = cert.values(coeffs[owner[K]][None, :])[0]
        centroid = mesh.element_coords.mean(axis=1)
        remaining = np.array(failing, dtype=int)
        while remaining.size:
            # nearest uncovered element first
            gap = np.linalg.norm(centroid[remaining] - centroid[K], axis=1)
            E = int(remaining[np.argmin(gap)])
            found = _separator(mesh, K, E, remaining, lam, cert.delta, tol)
            if found is None:
                raise CompilationError(f"no guard piece separates element {K} from element {E} for vertex {vertex}")
            c = coeffs[owner[K]] + found[0]
            coeffs = np.vstack([coeffs, c])
            pieces.append(AffinePiece(tuple(c[:-1].tolist()), float(c[-1]), vertex, K, guard=True))
            chosen.add(len(pieces) - 1)
            covered = cert.below_hat(coeffs[sorted(chosen)]).any(axis=0)
            left = remaining[~covered[remaining]]
            if left.size == remaining.size:
                raise CompilationError(f"hat of vertex {vertex} failed certification on elements {left[:5].tolist()}")
            remaining = left
        terms.append(sorted(chosen))

    used = sorted({q for t in terms for q in t})
    remap = {q: i for i, q in enumerate(used)}
    unique_terms = sorted({tuple(remap[q] for q in t) for t in terms})
    if len(unique_terms) > 1:
        _logger.debug("vertex %d: %d terms over %d pieces", vertex, len(unique_terms), len(used))
    return LatticeForm(vertex=vertex, pieces=tuple(pieces[q] for q in used), terms=tuple(unique_terms))


def _tree_level(groups: List[int], gadget: Network) -> Tuple[Network, List[int]]:
    """One level of pairwise reductions inside each group; odd leftovers pass through."""
    nets: List[Network] = []
    sizes: List[int] = []
    passthrough = relu_identity_net(1, 2)
    for size in groups:
        nets.extend([gadget] * (size // 2))
        if size % 2:
            nets.append(passthrough)
        sizes.append((size + 1) // 2)
    return full_parallelize(nets), sizes


def lattice_to_relu(form: LatticeForm) -> Network:
    """
    ReLU network for a lattice form: affine pieces, balanced min trees per term, a
    balanced max tree over terms, then a final ReLU.
    """
    if not form.terms:
        raise NetworkError("empty lattice form")
    rows = [q for term in form.terms for q in term]
    coeffs = form.coefficients[rows]
    net = Network.affine(sparse.csr_matrix(coeffs[:, :-1]), coeffs[:, -1])
    groups = [len(t) for t in form.terms]
    while max(groups) > 1:
        level, groups = _tree_level(groups, min2_net())
        net = concatenate(level, net)
    groups = [len(groups)]
    while groups[0] > 1:
        level, groups = _tree_level(groups, max2_net())
        net = concatenate(level, net)
    final_relu = Network(
        1,
        (
            Layer(np.ones((1, 1)), np.zeros(1), np.array([Activation.RELU], dtype=np.int8)),
            Layer(np.ones((1, 1)), np.zeros(1), np.zeros(1, dtype=np.int8)),
        ),
    )
    return concatenate(final_relu, net)


def hat_lattices(mesh: Mesh) -> List[LatticeForm]:
    patches = patch_index(mesh).elements_of
    return [hat_lattice(mesh, i, patch=patches[i]) for i in range(mesh.n_vertices)]


def hat_networks(mesh: Mesh) -> Network:
    """ReLU network whose output i is the hat function of vertex i on the closed domain."""
    nets = [lattice_to_relu(form) for form in hat_lattices(mesh)]
    net = parallelize(depth_align(nets, Activation.RELU))
    _logger.debug("hat networks: %d outputs, depth %d, size %d", net.output_dim, net.depth, net.size)
    return net


def cpwl_function_net(mesh: Mesh, nodal_values: Sequence[float]) -> Network:
    values = np.asarray(nodal_values, dtype=float)
    if values.shape != (mesh.n_vertices,):
        raise NetworkError(f"expected {mesh.n_vertices} nodal values, got {values.shape}")
    return prune(linear_output(hat_networks(mesh), values))


def hat_values(mesh: Mesh, points: np.ndarray) -> np.ndarray:
    """(n, |V|) hat values by point location and barycentric coordinates."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    elems = locate_many(mesh, pts)
    if np.any(elems < 0):
        raise MeshError("point outside the domain", np.flatnonzero(elems < 0).tolist())
    out = np.zeros((len(pts), mesh.n_vertices))
    for k in np.unique(elems):
        sel = np.flatnonzero(elems == k)
        lam = barycentric(mesh, int(k), pts[sel])
        out[sel[:, None], mesh.elements[k][None, :]] = lam
    return out
