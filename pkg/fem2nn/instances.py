from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .errors import StudyError
from .mesh import Mesh
from .refine import lshape, square_corner

ScalarField = Callable[[np.ndarray], np.ndarray]
VectorField = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SingularInstance:
    """
    Model function with a corner singularity: closed-form u and grad u, the domain it
    lives on, and the regularity metadata (radial exponent, Gevrey index, weight).
    """

    name: str
    domain: str
    area: float
    corners: np.ndarray
    a: float
    delta: float
    beta: Tuple[float, ...]
    u: ScalarField = field(repr=False)
    grad_u: VectorField = field(repr=False)
    base_mesh: Callable[[], Mesh] = field(repr=False)
    description: str = ""


def _polar(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    r = np.hypot(pts[:, 0], pts[:, 1])
    phi = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2.0 * math.pi)
    return r, phi


def _radial(r: np.ndarray, power: float) -> np.ndarray:
    out = np.zeros_like(r)
    pos = r > 0
    out[pos] = r[pos] ** power
    return out


def _lshape_u(points: np.ndarray) -> np.ndarray:
    r, phi = _polar(points)
    return _radial(r, 2.0 / 3.0) * np.sin(2.0 * phi / 3.0)


def _lshape_grad(points: np.ndarray) -> np.ndarray:
    r, phi = _polar(points)
    scale = (2.0 / 3.0) * _radial(r, -1.0 / 3.0)
    return np.column_stack([-scale * np.sin(phi / 3.0), scale * np.cos(phi / 3.0)])


# analytic radial damping rather than a compactly supported cutoff; delta stays 1
def _corner_u(a: float) -> ScalarField:
    def u(points: np.ndarray) -> np.ndarray:
        r, _ = _polar(points)
        return _radial(r, a) * np.exp(-(r**2))

    return u


def _corner_grad(a: float) -> VectorField:
    def grad(points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        r, _ = _polar(pts)
        factor = (a * _radial(r, a - 2.0) - 2.0 * _radial(r, a)) * np.exp(-(r**2))
        return factor[:, None] * pts

    return grad


_QUARTER = math.pi / 2.0


def _bump(phi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """g = exp(-1/(phi (pi/2 - phi))) and its derivative; zero outside (0, pi/2)."""
    g = np.zeros_like(phi)
    dg = np.zeros_like(phi)
    inside = (phi > 0) & (phi < _QUARTER)
    t = phi[inside]
    q = t * (_QUARTER - t)
    g[inside] = np.exp(-1.0 / q)
    dg[inside] = g[inside] * (_QUARTER - 2.0 * t) / q**2
    return g, dg


def _gevrey_u(a: float) -> ScalarField:
    def u(points: np.ndarray) -> np.ndarray:
        r, phi = _polar(points)
        g, _ = _bump(phi)
        return _radial(r, a) * g

    return u


def _gevrey_grad(a: float) -> VectorField:
    def grad(points: np.ndarray) -> np.ndarray:
        r, phi = _polar(points)
        g, dg = _bump(phi)
        rad = _radial(r, a - 1.0)
        er = np.column_stack([np.cos(phi), np.sin(phi)])
        ephi = np.column_stack([-np.sin(phi), np.cos(phi)])
        return (a * rad * g)[:, None] * er + (rad * dg)[:, None] * ephi

    return grad


def _beta(a: float) -> Tuple[float, ...]:
    # weight exponent just below -1, inside the admissible window for exponent a
    return (-1.0 - a / 2.0,)


def lshape_instance() -> SingularInstance:
    return SingularInstance(
        name="lshape",
        domain="lshape",
        area=3.0,
        corners=np.zeros((1, 2)),
        a=2.0 / 3.0,
        delta=1.0,
        beta=_beta(2.0 / 3.0),
        u=_lshape_u,
        grad_u=_lshape_grad,
        base_mesh=lambda: lshape(1),
        description="r^(2/3) sin(2 phi / 3) on the L-shaped domain",
    )


def square_corner_instance(a: float = 0.5) -> SingularInstance:
    if not 0.0 < a < 1.0:
        raise StudyError(f"radial exponent must lie in (0, 1), got {a}")
    return SingularInstance(
        name="square_corner",
        domain="square_corner",
        area=1.0,
        corners=np.zeros((1, 2)),
        a=a,
        delta=1.0,
        beta=_beta(a),
        u=_corner_u(a),
        grad_u=_corner_grad(a),
        base_mesh=lambda: square_corner(1),
        description=f"r^{a} exp(-r^2) on the unit square: analytic radial damping, singular at the origin",
    )


def gevrey_instance(a: float = 0.5) -> SingularInstance:
    if not 0.0 < a < 1.0:
        raise StudyError(f"radial exponent must lie in (0, 1), got {a}")
    return SingularInstance(
        name="gevrey",
        domain="square_corner",
        area=1.0,
        corners=np.zeros((1, 2)),
        a=a,
        delta=2.0,
        beta=_beta(a),
        u=_gevrey_u(a),
        grad_u=_gevrey_grad(a),
        base_mesh=lambda: square_corner(1),
        description=f"r^{a} exp(-1/(phi (pi/2 - phi))) on the unit square",
    )


INSTANCES: Dict[str, Callable[..., SingularInstance]] = {
    "lshape": lshape_instance,
    "square_corner": square_corner_instance,
    "gevrey": gevrey_instance,
}


def builtin_instances() -> List[SingularInstance]:
    return [factory() for factory in INSTANCES.values()]


def get_instance(name: str, a: Optional[float] = None) -> SingularInstance:
    try:
        factory = INSTANCES[name]
    except KeyError:
        raise StudyError(f"unknown instance {name!r}; choose from {', '.join(INSTANCES)}") from None
    if a is None or name == "lshape":
        return factory()
    return factory(a)
