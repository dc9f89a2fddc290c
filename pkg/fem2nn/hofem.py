from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import Polynomial
from scipy import sparse

from .combinators import (
    depth_align,
    factor_poly_net,
    full_parallelize,
    identity_net,
    linear_output,
    parallelize,
    product_d,
    sparse_concat,
)
from .cpwl import hat_networks
from .errors import CompilationError, MeshError, VerificationError
from .fileio import atomic_write_text, fmt_float
from .mesh import Mesh, barycentric, locate_many
from .network import Activation, Network, prune, realize, size_depth
from .nodes import LagrangeNodeSet, interpolation_nodes

_logger = logging.getLogger("fem2nn.hofem")


@dataclass(frozen=True)
class BasisFactorization:
    """theta_i = prod_k w_{alphas[i][k]}(hat_{vertices[i][k]})."""

    p: int
    m: Tuple[int, ...]
    vertices: Tuple[Tuple[int, ...], ...]
    alphas: Tuple[Tuple[int, ...], ...]


def node_factorization(nodes: LagrangeNodeSet) -> BasisFactorization:
    for i, (verts, alpha) in enumerate(zip(nodes.vertices, nodes.alphas)):
        if not verts or len(verts) != len(alpha) or sum(alpha) != nodes.p or min(alpha) < 1:
            raise CompilationError(f"node {i} has no valid containing subsimplex")
    return BasisFactorization(
        p=nodes.p,
        m=tuple(len(v) - 1 for v in nodes.vertices),
        vertices=nodes.vertices,
        alphas=nodes.alphas,
    )


def w_alpha_factors(p: int, alpha: int) -> List[Tuple[float, float]]:
    """Affine factors (p/(j+1)) t - j/(j+1), j = 0..alpha-1."""
    if not 1 <= alpha <= p:
        raise CompilationError(f"alpha must lie in 1..{p}, got {alpha}")
    return [(p / (j + 1), -j / (j + 1)) for j in range(alpha)]


def w_alpha_value(p: int, alpha: int, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.ones_like(t)
    for j in range(alpha):
        out = out * (p * t - j) / (j + 1)
    return out


@lru_cache(maxsize=None)
def _w_polynomial(p: int, alpha: int) -> Polynomial:
    poly = Polynomial([1.0])
    for j in range(alpha):
        poly = poly * Polynomial([-j / (j + 1), p / (j + 1)])
    return poly


@lru_cache(maxsize=None)
def w_depth(p: int) -> int:
    """Common depth c*ceil(log2(p+1)) with the smallest c fitting all w_alpha."""
    unit = math.ceil(math.log2(p + 1))
    longest = max(factor_poly_net(w_alpha_factors(p, a)).depth for a in range(1, p + 1))
    return unit * math.ceil(longest / unit)


@lru_cache(maxsize=None)
def w_alpha_net(p: int, alpha: int) -> Network:
    net = factor_poly_net(w_alpha_factors(p, alpha))
    gap = w_depth(p) - net.depth
    if gap > 0:
        net = sparse_concat(identity_net(1, gap), net)
    return net


@lru_cache(maxsize=None)
def vertex_stack(p: int) -> Network:
    """t -> (w_1(t), ..., w_p(t))."""
    return parallelize([w_alpha_net(p, a) for a in range(1, p + 1)])


def routing_matrix(factors: BasisFactorization, n_vertices: int) -> sparse.csr_matrix:
    """
    Selects w_{alpha_k}(hat_{a_k}) for every factor of every node, node by node.
    Column a*p + alpha - 1 holds w_alpha of vertex a.
    """
    p = factors.p
    cols = [a * p + al - 1 for verts, alphas in zip(factors.vertices, factors.alphas) for a, al in zip(verts, alphas)]
    rows = np.arange(len(cols))
    return sparse.csr_matrix((np.ones(len(cols)), (rows, cols)), shape=(len(cols), p * n_vertices))


@lru_cache(maxsize=None)
def _aligned_products(max_factors: int) -> Tuple[Network, ...]:
    """Product networks for 1..max_factors factors, padded to a common depth."""
    nets = [identity_net(1, 1)] + [product_d(k) for k in range(2, max_factors + 1)]
    return tuple(depth_align(nets, Activation.RELU2))


@dataclass(frozen=True, eq=False)
class CompiledBasis:
    mesh: Mesh
    nodes: LagrangeNodeSet
    factors: BasisFactorization
    routing: sparse.csr_matrix
    network: Network
    stage_depths: Tuple[int, int, int, int]


def compile_basis(mesh: Mesh, p: int, nodes: Optional[LagrangeNodeSet] = None) -> CompiledBasis:
    """
    Four stages, joined by sparse concatenation: hat functions (ReLU), w_alpha stacks per
    vertex, the routing layer, and per-node products (ReLU^2).
    """
    nodes = nodes if nodes is not None else interpolation_nodes(mesh, p)
    factors = node_factorization(nodes)
    hats = hat_networks(mesh)
    stacks = full_parallelize([vertex_stack(p)] * mesh.n_vertices)
    routing = routing_matrix(factors, mesh.n_vertices)
    route = Network.affine(routing)
    products = _aligned_products(min(mesh.dim, p) + 1)
    nodes_stage = full_parallelize([products[m] for m in factors.m])
    network = sparse_concat(nodes_stage, sparse_concat(route, sparse_concat(stacks, hats)))
    network = prune(network)
    _logger.info(
        "compiled p=%d basis: %d nodes, depth %d, size %d", p, nodes.size, network.depth, network.size
    )
    return CompiledBasis(
        mesh=mesh,
        nodes=nodes,
        factors=factors,
        routing=routing,
        network=network,
        stage_depths=(nodes_stage.depth, route.depth, stacks.depth, hats.depth),
    )


def basis_networks(mesh: Mesh, p: int) -> Network:
    return compile_basis(mesh, p).network


@dataclass(frozen=True, eq=False)
class FEFunction:
    mesh: Mesh
    p: int
    coefficients: np.ndarray
    nodes: Optional[LagrangeNodeSet] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        nodes = self.nodes if self.nodes is not None else interpolation_nodes(self.mesh, self.p)
        coefficients = np.array(self.coefficients, dtype=float).reshape(-1)
        if coefficients.shape[0] != nodes.size:
            raise CompilationError(f"expected {nodes.size} coefficients, got {coefficients.shape[0]}")
        coefficients.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "coefficients", coefficients)

    @cached_property
    def sup_norm(self) -> float:
        return float(np.abs(self.coefficients).max(initial=0.0))


def fe_function_net(v: FEFunction, basis: Optional[Network] = None) -> Network:
    basis = basis if basis is not None else compile_basis(v.mesh, v.p, v.nodes).network
    return prune(linear_output(basis, v.coefficients))


def _local_tables(p: int, lam: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """w_a(lam_k) and w_a'(lam_k) for a = 0..p: two (n, d+1, p+1) arrays."""
    values = np.ones(lam.shape + (p + 1,))
    derivs = np.zeros(lam.shape + (p + 1,))
    for a in range(1, p + 1):
        values[..., a] = w_alpha_value(p, a, lam)
        derivs[..., a] = _w_polynomial(p, a).deriv()(lam)
    return values, derivs


def local_basis(p: int, local: Sequence[Tuple[int, ...]], lam: np.ndarray) -> np.ndarray:
    """(n, n_local) Lagrange basis values from barycentric coordinates."""
    values, _ = _local_tables(p, lam)
    idx = np.array(local)
    k = np.arange(idx.shape[1])
    return np.prod(values[:, k[None, :], idx], axis=2)


def _element_values(v: FEFunction, elems: np.ndarray, pts: np.ndarray, gradients: bool):
    mesh, nodes = v.mesh, v.nodes
    idx = np.array(nodes.local)
    k = np.arange(idx.shape[1])
    G, _ = mesh.barycentric_maps
    out = np.zeros(len(pts))
    grad = np.zeros((len(pts), mesh.dim))
    for e in np.unique(elems):
        sel = np.flatnonzero(elems == e)
        lam = barycentric(mesh, int(e), pts[sel])
        table, dtable = _local_tables(v.p, lam)
        picked = table[:, k[None, :], idx]
        coeff = v.coefficients[nodes.element_nodes[e]]
        out[sel] = np.prod(picked, axis=2) @ coeff
        if gradients:
            dpicked = dtable[:, k[None, :], idx]
            # d(phi)/d(lam_j) = w'(lam_j) * prod_{l != j} w(lam_l)
            dphi = np.zeros(picked.shape)
            for j in range(idx.shape[1]):
                others = np.delete(picked, j, axis=2).prod(axis=2)
                dphi[:, :, j] = dpicked[:, :, j] * others
            dlam = np.einsum("nbj,b->nj", dphi, coeff)
            grad[sel] = dlam @ G[e]
    return out, grad


def evaluate_fe_direct(v: FEFunction, x: np.ndarray) -> np.ndarray:
    """Value of v at one point or a batch, by point location and the barycentric formula."""
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    elems = locate_many(v.mesh, pts)
    if np.any(elems < 0):
        raise MeshError("point outside the domain", np.flatnonzero(elems < 0).tolist())
    values, _ = _element_values(v, elems, pts, gradients=False)
    return values[0] if single else values


def fe_gradient(v: FEFunction, elements: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Gradient of v restricted to the given elements (one element per point)."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    elems = np.broadcast_to(np.asarray(elements, dtype=np.int64), (len(pts),))
    _, grad = _element_values(v, elems, pts, gradients=True)
    return grad


def fe_values_on_elements(v: FEFunction, elements: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    elems = np.broadcast_to(np.asarray(elements, dtype=np.int64), (len(pts),))
    return _element_values(v, elems, pts, gradients=True)


def basis_values(mesh: Mesh, nodes: LagrangeNodeSet, x: np.ndarray) -> np.ndarray:
    """(n, |N|) values of every global basis function."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    elems = locate_many(mesh, pts)
    if np.any(elems < 0):
        raise MeshError("point outside the domain", np.flatnonzero(elems < 0).tolist())
    out = np.zeros((len(pts), nodes.size))
    for e in np.unique(elems):
        sel = np.flatnonzero(elems == e)
        phi = local_basis(nodes.p, nodes.local, barycentric(mesh, int(e), pts[sel]))
        out[sel[:, None], nodes.element_nodes[e][None, :]] = phi
    return out


def _bernstein(p: int, local: Sequence[Tuple[int, ...]], lam: np.ndarray) -> np.ndarray:
    idx = np.array(local)
    coef = np.array([math.factorial(p) / np.prod([math.factorial(b) for b in beta]) for beta in local])
    return coef[None, :] * np.prod(lam[:, None, :] ** idx[None, :, :], axis=2)


def bernstein_evaluate(v: FEFunction, x: np.ndarray) -> np.ndarray:
    """
    Independent oracle: convert the local nodal coefficients to Bernstein form by a
    linear solve on the element's nodes, then evaluate the Bernstein polynomials.
    """
    mesh, nodes = v.mesh, v.nodes
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    elems = locate_many(mesh, pts)
    if np.any(elems < 0):
        raise MeshError("point outside the domain", np.flatnonzero(elems < 0).tolist())
    node_lam = np.array(nodes.local, dtype=float) / nodes.p
    vandermonde = _bernstein(nodes.p, nodes.local, node_lam)
    out = np.zeros(len(pts))
    for e in np.unique(elems):
        sel = np.flatnonzero(elems == e)
        control = np.linalg.solve(vandermonde, v.coefficients[nodes.element_nodes[e]])
        out[sel] = _bernstein(nodes.p, nodes.local, barycentric(mesh, int(e), pts[sel])) @ control
    return out


@dataclass(frozen=True)
class VerificationReport:
    max_error: float
    location: Optional[List[float]]
    threshold: float
    passed: bool
    samples: int


def verify_network(
    net: Network,
    v: FEFunction,
    points: np.ndarray,
    tol: float = 1e-9,
    raise_on_failure: bool = False,
) -> VerificationReport:
    """Compare the network with direct evaluation; threshold tol * (1 + |v|_inf)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    expected = evaluate_fe_direct(v, pts)
    got = realize(net, pts)[:, 0]
    diff = np.abs(got - expected)
    worst = int(np.argmax(diff)) if len(diff) else 0
    max_error = float(diff[worst]) if len(diff) else 0.0
    threshold = tol * (1.0 + v.sup_norm)
    report = VerificationReport(
        max_error=max_error,
        location=pts[worst].tolist() if len(diff) else None,
        threshold=threshold,
        passed=bool(max_error <= threshold),
        samples=len(pts),
    )
    if raise_on_failure and not report.passed:
        raise VerificationError(
            f"network deviates by {max_error:.3e} (threshold {threshold:.3e})", max_error, report.location
        )
    return report


@dataclass(frozen=True)
class AuditRow:
    p: int
    n_nodes: int
    M: int
    L: int
    neurons: int
    relu_layers: int
    relu2_layers: int
    mixed_layers: int

    @property
    def M_over_N(self) -> float:
        return self.M / self.n_nodes


AUDIT_COLUMNS = ["p", "|N|", "M", "L", "M_over_N", "relu_layers", "relu2_layers"]


def size_audit(mesh: Mesh, p: int, compiled: Optional[CompiledBasis] = None) -> AuditRow:
    compiled = compiled if compiled is not None else compile_basis(mesh, p)
    report = size_depth(compiled.network)
    return AuditRow(
        p=p,
        n_nodes=compiled.nodes.size,
        M=report.M,
        L=report.L,
        neurons=report.neurons,
        relu_layers=report.relu_layers,
        relu2_layers=report.relu2_layers,
        mixed_layers=compiled.network.layer_kinds().count("mixed"),
    )


@dataclass(frozen=True)
class AuditSweep:
    rows: List[AuditRow]
    depth_constant: float
    ratio_limit: float
    flagged: List[int]
    layer_order_ok: bool


def _relu_before_relu2(net: Network) -> bool:
    kinds = [k for k in net.layer_kinds() if k != "identity"]
    seen_relu2 = False
    for kind in kinds:
        if kind == "mixed" or (kind == "relu" and seen_relu2):
            return False
        seen_relu2 = seen_relu2 or kind == "relu2"
    return True


def audit_sweep(mesh: Mesh, pmax: int) -> AuditSweep:
    """
    Size/depth audit over p = 1..pmax. Rows whose M/|N| exceeds four times the p=2
    ratio are flagged; the depth constant is max (L(p) - L(1)) / log2(p+1).
    """
    rows: List[AuditRow] = []
    order_ok = True
    for p in range(1, pmax + 1):
        compiled = compile_basis(mesh, p)
        rows.append(size_audit(mesh, p, compiled))
        order_ok = order_ok and _relu_before_relu2(compiled.network)
    reference = rows[1].M_over_N if len(rows) > 1 else rows[0].M_over_N
    limit = 4.0 * reference
    flagged = [row.p for row in rows if row.M_over_N > limit]
    base = rows[0].L
    depth_constant = max(((row.L - base) / math.log2(row.p + 1) for row in rows[1:]), default=0.0)
    return AuditSweep(rows=rows, depth_constant=depth_constant, ratio_limit=limit, flagged=flagged, layer_order_ok=order_ok)


def audit_csv(rows: Sequence[AuditRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(AUDIT_COLUMNS)
    for row in rows:
        writer.writerow(
            [row.p, row.n_nodes, row.M, row.L, fmt_float(row.M_over_N), row.relu_layers, row.relu2_layers]
        )
    return buf.getvalue()


def write_audit_csv(rows: Sequence[AuditRow], path: Path | str) -> Path:
    return atomic_write_text(path, audit_csv(rows))
