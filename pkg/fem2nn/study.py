from __future__ import annotations

import asyncio
import csv
import io
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import gammaln
from scipy.stats import linregress

from .errors import StudyError
from .fileio import atomic_write_text, fmt_float
from .hofem import FEFunction, compile_basis, fe_function_net, fe_values_on_elements, verify_network
from .instances import SingularInstance
from .mesh import Mesh, sample_points
from .nodes import LagrangeNodeSet, interpolation_nodes
from .quadrature import gauss_simplex, map_rule
from .refine import GeometricMeshSpec, geometric_refine

_logger = logging.getLogger("fem2nn.study")

CORNER_SPLIT_LEVELS = 4
GATE_SAMPLES = 100
GATE_TOL = 1e-8
STUDY_COLUMNS = ["p", "ell", "N", "M", "L", "l2_error", "h1_error", "seconds"]


@dataclass(frozen=True)
class ConvergenceRecord:
    p: int
    ell: int
    n_dofs: int
    size: int
    depth: int
    l2_error: float
    h1_error: float
    seconds: float


@dataclass(frozen=True)
class ExponentialFit:
    """log(error) ~ log(C) - b * feature, feature = N^exponent (or its Gamma form)."""

    b: float
    C: float
    r2: float
    exponent: float
    delta: float

    def feature(self, dofs: np.ndarray) -> np.ndarray:
        x = np.asarray(dofs, dtype=float) ** self.exponent
        return x if self.delta >= 1.0 else (1.0 - self.delta) * gammaln(x)

    def predict(self, dofs: np.ndarray) -> np.ndarray:
        return self.C * np.exp(-self.b * self.feature(dofs))


def nodal_interpolant(
    mesh: Mesh, p: int, u: Callable[[np.ndarray], np.ndarray], nodes: Optional[LagrangeNodeSet] = None
) -> FEFunction:
    nodes = nodes if nodes is not None else interpolation_nodes(mesh, p)
    values = np.asarray(u(nodes.coords), dtype=float).reshape(-1)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise StudyError(f"non-finite samples at nodes {bad[:5].tolist()}")
    return FEFunction(mesh, p, values, nodes)


def _corner_cells(simplex: np.ndarray, corner: int, levels: int) -> List[np.ndarray]:
    """Dyadic splitting toward one vertex: three finished cells per level plus the last corner cell."""
    order = [corner] + [k for k in range(3) if k != corner]
    a, b, c = simplex[order]
    cells = []
    for _ in range(levels):
        mab, mbc, mca = (a + b) / 2, (b + c) / 2, (c + a) / 2
        cells.extend([np.array([mab, b, mbc]), np.array([mca, mbc, c]), np.array([mab, mbc, mca])])
        b, c = mab, mca
    cells.append(np.array([a, b, c]))
    return cells


def integration_cells(mesh: Mesh, levels: int = CORNER_SPLIT_LEVELS) -> Tuple[np.ndarray, np.ndarray]:
    """Cells (c, d+1, d) and their parent elements; corner elements are split toward the corner."""
    corners = set(mesh.corner_vertices()) if mesh.dim == 2 else set()
    cells: List[np.ndarray] = []
    parents: List[int] = []
    for k, element in enumerate(mesh.elements):
        local = [j for j, v in enumerate(element) if int(v) in corners]
        if local and levels > 0:
            split = _corner_cells(mesh.element_coords[k], local[0], levels)
            cells.extend(split)
            parents.extend([k] * len(split))
        else:
            cells.append(mesh.element_coords[k])
            parents.append(k)
    return np.array(cells), np.array(parents, dtype=np.int64)


def h1_error(
    mesh: Mesh,
    p: int,
    v: FEFunction,
    u: Callable[[np.ndarray], np.ndarray],
    grad_u: Callable[[np.ndarray], np.ndarray],
    order: Optional[int] = None,
) -> Tuple[float, float]:
    """L2 error and H1-seminorm error of v against u, by elementwise quadrature."""
    order = 2 * p + 2 if order is None else order
    if order < 2 * p + 2:
        raise StudyError(f"quadrature order {order} is below 2p+2 = {2 * p + 2}")
    rule = gauss_simplex(order, mesh.dim)
    cells, parents = integration_cells(mesh)
    points, weights = map_rule(rule, cells)
    pts = points.reshape(-1, mesh.dim)
    w = weights.reshape(-1)
    owner = np.repeat(parents, rule.weights.shape[0])
    values, grads = fe_values_on_elements(v, owner, pts)
    diff = np.asarray(u(pts)) - values
    gdiff = np.asarray(grad_u(pts)) - grads
    l2 = math.sqrt(float(np.dot(w, diff**2)))
    h1 = math.sqrt(float(np.dot(w, (gdiff**2).sum(axis=1))))
    return l2, h1


def error_with_order(
    mesh: Mesh,
    p: int,
    v: FEFunction,
    u: Callable[[np.ndarray], np.ndarray],
    grad_u: Callable[[np.ndarray], np.ndarray],
    order: int,
) -> Tuple[float, float]:
    return h1_error(mesh, p, v, u, grad_u, order=order)


def levels_for(p: int, delta: float, c_ell: float = 1.0) -> int:
    return max(0, math.ceil(c_ell * p ** (1.0 / delta) - 1e-12))


def study_step(
    instance: SingularInstance,
    p: int,
    *,
    sigma: float = 0.5,
    c_ell: float = 1.0,
    delta: Optional[float] = None,
    seed: int = 0,
) -> ConvergenceRecord:
    """One p of the study: grade, interpolate, compile, gate, and measure the error."""
    start = time.perf_counter()
    delta = instance.delta if delta is None else delta
    ell = levels_for(p, delta, c_ell)
    spec = GeometricMeshSpec(sigma=sigma, corners=instance.corners, levels=ell, base_mesh=instance.base_mesh())
    mesh = geometric_refine(spec)[-1]
    nodes = interpolation_nodes(mesh, p)
    v = nodal_interpolant(mesh, p, instance.u, nodes)
    compiled = compile_basis(mesh, p, nodes)
    net = fe_function_net(v, compiled.network)

    rng = np.random.default_rng(seed + p)
    gate = verify_network(net, v, sample_points(mesh, GATE_SAMPLES, rng), tol=GATE_TOL)
    if not gate.passed:
        raise StudyError(
            f"exactness gate failed at p={p}, ell={ell}: max error {gate.max_error:.3e} "
            f"at {gate.location} (threshold {gate.threshold:.3e})"
        )
    l2, h1 = h1_error(mesh, p, v, instance.u, instance.grad_u)
    record = ConvergenceRecord(
        p=p,
        ell=ell,
        n_dofs=nodes.size,
        size=net.size,
        depth=net.depth,
        l2_error=l2,
        h1_error=h1,
        seconds=time.perf_counter() - start,
    )
    _logger.info("study %s p=%d ell=%d N=%d M=%d h1=%.3e", instance.name, p, ell, record.n_dofs, record.size, h1)
    return record


async def run_study_async(
    instance: SingularInstance,
    *,
    sigma: float = 0.5,
    p_max: int = 6,
    c_ell: float = 1.0,
    delta: Optional[float] = None,
    seed: int = 0,
    threads: int = 1,
    on_record: Optional[Callable[[ConvergenceRecord], None]] = None,
) -> List[ConvergenceRecord]:
    """Independent p-steps run in worker threads, at most `threads` at a time; sorted by p."""
    if p_max < 2:
        raise StudyError("a convergence study needs p_max >= 2")
    semaphore = asyncio.Semaphore(max(1, threads))

    async def one(p: int) -> ConvergenceRecord:
        async with semaphore:
            record = await asyncio.to_thread(
                study_step, instance, p, sigma=sigma, c_ell=c_ell, delta=delta, seed=seed
            )
        if on_record is not None:
            on_record(record)
        return record

    records = await asyncio.gather(*(one(p) for p in range(1, p_max + 1)))
    return sorted(records, key=lambda r: r.p)


def convergence_study(
    instance: SingularInstance,
    sigma: float = 0.5,
    p_max: int = 6,
    c_ell: float = 1.0,
    **kwargs,
) -> List[ConvergenceRecord]:
    return asyncio.run(run_study_async(instance, sigma=sigma, p_max=p_max, c_ell=c_ell, **kwargs))


def fit_exponential_arrays(dofs: Sequence[float], errors: Sequence[float], d: int, delta: float) -> ExponentialFit:
    dofs = np.asarray(dofs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(dofs) < 4:
        raise StudyError(f"need at least 4 records to fit, got {len(dofs)}")
    if delta <= 0:
        raise StudyError("delta must be positive")
    if np.any(errors <= 0):
        raise StudyError("errors must be positive to fit a log-rate")
    exponent = 1.0 / (1.0 + delta * d)
    fit = ExponentialFit(b=0.0, C=1.0, r2=0.0, exponent=exponent, delta=delta)
    result = linregress(fit.feature(dofs), np.log(errors))
    return ExponentialFit(
        b=-float(result.slope),
        C=float(math.exp(result.intercept)),
        r2=float(result.rvalue**2),
        exponent=exponent,
        delta=delta,
    )


def fit_exponential(records: Sequence[ConvergenceRecord], d: int, delta: float, error: str = "h1") -> ExponentialFit:
    errors = [r.h1_error if error == "h1" else r.l2_error for r in records]
    return fit_exponential_arrays([r.n_dofs for r in records], errors, d, delta)


def dof_exponent(records: Sequence[ConvergenceRecord], p_min: int = 2) -> float:
    """Slope of log N against log p over the records with p >= p_min."""
    used = [r for r in records if r.p >= p_min]
    if len(used) < 2:
        raise StudyError(f"need at least 2 records with p >= {p_min}")
    result = linregress(np.log([r.p for r in used]), np.log([r.n_dofs for r in used]))
    return float(result.slope)


def study_csv(records: Sequence[ConvergenceRecord], timings: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(STUDY_COLUMNS)
    for r in records:
        writer.writerow(
            [
                r.p,
                r.ell,
                r.n_dofs,
                r.size,
                r.depth,
                fmt_float(r.l2_error),
                fmt_float(r.h1_error),
                fmt_float(r.seconds if timings else 0.0),
            ]
        )
    return buf.getvalue()


def write_study_csv(records: Sequence[ConvergenceRecord], path: Path | str, timings: bool = True) -> Path:
    return atomic_write_text(path, study_csv(records, timings))


def study_svg(records: Sequence[ConvergenceRecord], fit: ExponentialFit, error: str = "h1") -> str:
    """log(error) against the fit feature, with the fitted line."""
    width, height, pad = 640, 420, 60
    errors = np.array([r.h1_error if error == "h1" else r.l2_error for r in records])
    xs = fit.feature(np.array([r.n_dofs for r in records]))
    ys = np.log(errors)
    line_y = math.log(fit.C) - fit.b * xs
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(min(ys.min(), line_y.min())), float(max(ys.max(), line_y.max()))
    x_span = x_hi - x_lo or 1.0
    y_span = y_hi - y_lo or 1.0

    def px(x: float) -> float:
        return pad + (x - x_lo) / x_span * (width - 2 * pad)

    def py(y: float) -> float:
        return height - pad - (y - y_lo) / y_span * (height - 2 * pad)

    label = "N^{:.4g}".format(fit.exponent) if fit.delta >= 1 else "(1-delta) lnGamma(N^{:.4g})".format(fit.exponent)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 15}" text-anchor="middle" font-size="14">{label}</text>',
        f'<text x="15" y="{height / 2:.1f}" font-size="14" transform="rotate(-90 15 {height / 2:.1f})"'
        f' text-anchor="middle">log {error} error</text>',
        f'<polyline fill="none" stroke="#c0392b" stroke-width="2" points="'
        f'{px(x_lo):.2f},{py(math.log(fit.C) - fit.b * x_lo):.2f} '
        f'{px(x_hi):.2f},{py(math.log(fit.C) - fit.b * x_hi):.2f}"/>',
    ]
    for r, x, y in zip(records, xs, ys):
        parts.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="4" fill="#2c3e50"><title>p={r.p}</title></circle>')
    parts.append(
        f'<text x="{width - pad}" y="{pad - 20}" text-anchor="end" font-size="13">'
        f"b={fit.b:.4g}, C={fit.C:.4g}, R2={fit.r2:.4f}</text>"
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_study_svg(
    records: Sequence[ConvergenceRecord], fit: ExponentialFit, path: Path | str, error: str = "h1"
) -> Path:
    return atomic_write_text(path, study_svg(records, fit, error))
