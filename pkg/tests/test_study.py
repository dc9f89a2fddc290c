from __future__ import annotations

import math
from pathlib import Path
from typing import List

import numpy as np
import pytest
from scipy.special import gammaln

import sys
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from fem2nn.errors import StudyError  # noqa: E402
from fem2nn.hofem import fe_values_on_elements  # noqa: E402
from fem2nn.instances import get_instance  # noqa: E402
from fem2nn.refine import refine_uniform, square_corner, unit_square  # noqa: E402
from fem2nn.study import (  # noqa: E402
    STUDY_COLUMNS,
    ConvergenceRecord,
    convergence_study,
    dof_exponent,
    error_with_order,
    fit_exponential,
    fit_exponential_arrays,
    h1_error,
    integration_cells,
    levels_for,
    nodal_interpolant,
    run_study_async,
    study_csv,
    study_step,
    write_study_csv,
    write_study_svg,
)


def _records(n: int = 5) -> List[ConvergenceRecord]:
    out = []
    for p in range(1, n + 1):
        dofs = 10 * p**2
        out.append(
            ConvergenceRecord(
                p=p,
                ell=p,
                n_dofs=dofs,
                size=100 * dofs,
                depth=10 + p,
                l2_error=0.5 * math.exp(-1.5 * dofs ** (1 / 3)),
                h1_error=2.0 * math.exp(-1.2 * dofs ** (1 / 3)),
                seconds=0.25 * p,
            )
        )
    return out


def test_levels_follow_degree() -> None:
    assert [levels_for(p, 1.0) for p in range(1, 5)] == [1, 2, 3, 4]
    assert levels_for(4, 2.0) == 2
    assert levels_for(5, 2.0) == 3
    assert levels_for(3, 1.0, c_ell=1.5) == 5


def test_integration_cells_refine_corner_elements() -> None:
    mesh = square_corner(1)
    cells, parents = integration_cells(mesh)
    # two elements touch the corner, each split into 4 * 3 + 1 cells
    assert len(cells) == 2 * 13 + 2
    x0 = cells[:, 0, :]
    B = np.transpose(cells[:, 1:, :] - x0[:, None, :], (0, 2, 1))
    assert np.abs(np.linalg.det(B)).sum() / 2 == pytest.approx(1.0)
    assert sorted(set(parents.tolist())) == [0, 1, 2, 3]
    plain, _ = integration_cells(unit_square(1))
    assert len(plain) == 4


def test_interpolant_of_polynomial_has_no_error() -> None:
    mesh = square_corner(1)
    u = lambda x: x[:, 0] ** 2 - 3.0 * x[:, 0] * x[:, 1]  # noqa: E731
    grad = lambda x: np.column_stack([2.0 * x[:, 0] - 3.0 * x[:, 1], -3.0 * x[:, 0]])  # noqa: E731
    v = nodal_interpolant(mesh, 2, u)
    l2, h1 = h1_error(mesh, 2, v, u, grad)
    assert l2 < 1e-12
    assert h1 < 1e-12

    linear = nodal_interpolant(mesh, 1, u)
    l2, h1 = h1_error(mesh, 1, linear, u, grad)
    assert l2 > 1e-3
    assert h1 > l2


def test_quadrature_order_is_checked_and_converges() -> None:
    mesh = unit_square(2)
    u = lambda x: np.sin(3.0 * x[:, 0]) * np.exp(x[:, 1])  # noqa: E731
    grad = lambda x: np.column_stack(  # noqa: E731
        [3.0 * np.cos(3.0 * x[:, 0]) * np.exp(x[:, 1]), np.sin(3.0 * x[:, 0]) * np.exp(x[:, 1])]
    )
    v = nodal_interpolant(mesh, 2, u)
    with pytest.raises(StudyError):
        h1_error(mesh, 2, v, u, grad, order=4)
    base = error_with_order(mesh, 2, v, u, grad, 6)
    fine = error_with_order(mesh, 2, v, u, grad, 16)
    assert base[1] == pytest.approx(fine[1], rel=1e-3)


def test_smooth_error_decreases_under_uniform_refinement() -> None:
    u = lambda x: np.sin(3.0 * x[:, 0]) * np.exp(x[:, 1])  # noqa: E731
    grad = lambda x: np.column_stack(  # noqa: E731
        [3.0 * np.cos(3.0 * x[:, 0]) * np.exp(x[:, 1]), np.sin(3.0 * x[:, 0]) * np.exp(x[:, 1])]
    )
    mesh = unit_square(1)
    errors = []
    for _ in range(4):
        errors.append(h1_error(mesh, 2, nodal_interpolant(mesh, 2, u), u, grad)[1])
        mesh = refine_uniform(mesh)
    assert all(fine < coarse for coarse, fine in zip(errors, errors[1:]))
    assert errors[-1] * 20.0 < errors[0]


def test_interpolant_has_no_jump_across_shared_facets() -> None:
    instance = get_instance("lshape")
    mesh = refine_uniform(instance.base_mesh())
    v = nodal_interpolant(mesh, 3, instance.u)
    owners: dict = {}
    for k, element in enumerate(mesh.elements.tolist()):
        for drop in range(3):
            face = tuple(sorted(element[:drop] + element[drop + 1 :]))
            owners.setdefault(face, []).append(k)
    shared = [(face, ks) for face, ks in owners.items() if len(ks) == 2]
    assert shared
    rng = np.random.default_rng(3)
    for face, (a, b) in shared:
        t = rng.uniform(size=(5, 1))
        pts = t * mesh.vertices[face[0]] + (1.0 - t) * mesh.vertices[face[1]]
        left, _ = fe_values_on_elements(v, np.array([a]), pts)
        right, _ = fe_values_on_elements(v, np.array([b]), pts)
        assert np.abs(left - right).max() <= 1e-10


def test_interpolant_rejects_non_finite_samples() -> None:
    with pytest.raises(StudyError):
        nodal_interpolant(unit_square(1), 1, lambda x: np.full(len(x), np.nan))


def test_study_step_records_one_degree() -> None:
    record = study_step(get_instance("lshape"), 2)
    assert record.p == 2
    assert record.ell == 2
    assert record.n_dofs > 0
    assert record.size > 0
    assert record.depth > 0
    assert 0.0 < record.l2_error < record.h1_error
    assert record.seconds >= 0.0


@pytest.mark.asyncio
async def test_async_study_runs_steps_concurrently() -> None:
    seen: List[int] = []
    records = await run_study_async(
        get_instance("square_corner"), p_max=3, threads=2, on_record=lambda r: seen.append(r.p)
    )
    assert [r.p for r in records] == [1, 2, 3]
    assert sorted(seen) == [1, 2, 3]
    assert [r.ell for r in records] == [1, 2, 3]
    assert records[-1].n_dofs > records[0].n_dofs


def test_study_rejects_short_sweeps() -> None:
    with pytest.raises(StudyError):
        convergence_study(get_instance("lshape"), p_max=1)


def test_exponential_fit_recovers_synthetic_rate() -> None:
    records = _records()
    fit = fit_exponential(records, d=2, delta=1.0)
    assert fit.exponent == pytest.approx(1.0 / 3.0)
    assert fit.b == pytest.approx(1.2)
    assert fit.C == pytest.approx(2.0)
    assert fit.r2 == pytest.approx(1.0)
    l2 = fit_exponential(records, d=2, delta=1.0, error="l2")
    assert l2.b == pytest.approx(1.5)
    assert np.allclose(fit.predict(np.array([r.n_dofs for r in records])), [r.h1_error for r in records])


def test_gamma_feature_for_sub_analytic_index() -> None:
    dofs = np.array([20.0, 60.0, 150.0, 300.0, 600.0])
    delta = 0.5
    exponent = 1.0 / (1.0 + 2.0 * delta)
    errors = 3.0 * np.exp(-0.8 * (1.0 - delta) * gammaln(dofs**exponent))
    fit = fit_exponential_arrays(dofs, errors, d=2, delta=delta)
    assert fit.b == pytest.approx(0.8)
    assert fit.C == pytest.approx(3.0)


def test_fit_input_checks() -> None:
    with pytest.raises(StudyError):
        fit_exponential(_records(3), d=2, delta=1.0)
    with pytest.raises(StudyError):
        fit_exponential_arrays([1, 2, 3, 4], [1.0, 0.0, 1.0, 1.0], d=2, delta=1.0)
    with pytest.raises(StudyError):
        fit_exponential_arrays([1, 2, 3, 4], [1.0, 1.0, 1.0, 1.0], d=2, delta=0.0)


def test_dof_exponent() -> None:
    assert dof_exponent(_records()) == pytest.approx(2.0)
    assert dof_exponent(_records(), p_min=1) == pytest.approx(2.0)
    with pytest.raises(StudyError):
        dof_exponent(_records(2))
    with pytest.raises(StudyError):
        dof_exponent(_records(1))


def test_csv_and_svg_output(tmp_path: Path) -> None:
    records = _records()
    text = study_csv(records, timings=False)
    lines = text.splitlines()
    assert lines[0] == ",".join(STUDY_COLUMNS)
    assert all(line.endswith(",0.0") for line in lines[1:])
    assert study_csv(records, timings=False) == text
    assert repr(records[0].h1_error) in lines[1]

    path = write_study_csv(records, tmp_path / "study.csv")
    assert path.read_text(encoding="utf-8") == study_csv(records)

    fit = fit_exponential(records, d=2, delta=1.0)
    svg = write_study_svg(records, fit, tmp_path / "study.svg").read_text(encoding="utf-8")
    assert svg.startswith("<svg")
    assert svg.count("<circle") == len(records)
    assert "b=1.2" in svg


@pytest.mark.slow
def test_lshape_convergence_is_exponential() -> None:
    records = convergence_study(get_instance("lshape"), sigma=0.5, p_max=6, threads=2)
    assert [r.ell for r in records] == [1, 2, 3, 4, 5, 6]
    fit = fit_exponential(records, d=2, delta=1.0)
    assert fit.b > 0
    assert fit.r2 >= 0.97
    by_p = {r.p: r for r in records}
    assert by_p[6].h1_error * 10.0 <= by_p[2].h1_error
    # N grows like p^(d + 1/delta) = p^3 once p = 1 is left out
    assert 2.7 <= dof_exponent(records) <= 3.3
