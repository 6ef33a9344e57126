import io
import math

import numpy as np
import pytest

from capshift import capsolver, modelgeom
from capshift.capsolver import SolverError


@pytest.fixture(scope="module")
def secular_a1(axis_basis):
    return {e: capsolver.solve_secular(axis_basis, e, 1.0, 1) for e in (0.1, 0.05)}


# Galerkin ----------------------------------------------------------------------------

def test_galerkin_above_unperturbed(galerkin_table):
    for s in galerkin_table:
        assert s.lambda_j == 0.0
        assert np.isfinite(s.lambda_eps) and s.lambda_eps >= s.lambda_j
        assert s.method == "galerkin" and s.l_max == 40


def test_galerkin_monotone_and_vanishing(galerkin_table):
    lam = [s.lambda_eps for s in galerkin_table]
    assert all(l1 > l2 for l1, l2 in zip(lam, lam[1:]))
    assert galerkin_table[-1].lambda_eps < 0.05


def test_galerkin_constraint_doubling_stable(galerkin_table):
    for s in galerkin_table:
        assert s.diag_residual < 1e-3
        assert s.diagnostics["flex_min_eig"] > 0


def test_galerkin_leading_order(galerkin_table):
    # shift / (3 eps / pi) -> 1 with an error of order eps |log eps|
    ratios = np.array([s.shift / (3 * s.eps / math.pi) for s in galerkin_table])
    err = np.abs(ratios - 1)
    assert np.all(np.diff(err) < 0)
    eps = np.array([s.eps for s in galerkin_table])
    assert np.all(err < eps * np.abs(np.log(eps)))


def test_galerkin_truncation_convergence(galerkin_table):
    ref = galerkin_table[1]
    coarse = capsolver.solve_galerkin(modelgeom.build_basis(30, 10, 0), 0.1, 1.0, 1,
                                      n_constraints=12, check_doubling=False)
    assert abs(coarse.lambda_eps - ref.lambda_eps) < 5e-3 * ref.lambda_eps


def test_galerkin_penalty_crosscheck(axis_basis, galerkin_table):
    # the penalty variant enforces exact vanishing of the moments and omits the
    # static response beyond the truncation, so it can only sit above
    s = capsolver.solve_galerkin(axis_basis, 0.1, 1.0, 1, constraint="penalty", check_doubling=False)
    assert s.lambda_eps > galerkin_table[1].lambda_eps


def test_galerkin_second_eigenvalue(axis_basis):
    g = capsolver.solve_galerkin(axis_basis, 0.1, 1.0, 2, check_doubling=False)
    s = capsolver.solve_secular(axis_basis, 0.1, 1.0, 2)
    assert g.lambda_j == pytest.approx(2.0815759778671**2, rel=1e-10)
    assert g.lambda_eps > g.lambda_j
    assert abs(g.shift - s.shift) < 0.02 * g.shift


def test_galerkin_errors(axis_basis):
    with pytest.raises(ValueError):
        capsolver.solve_galerkin(axis_basis, 0.1, 1.0, 1, n_constraints=3)
    with pytest.raises(SolverError):
        capsolver.solve_galerkin(axis_basis, 0.1, 1.0, len(axis_basis) + 1)
    small = modelgeom.build_basis(3, 2, 0)
    # the cutoff 73.7 is not ten times above the sixth eigenvalue 35.3
    with pytest.raises(SolverError):
        capsolver.solve_galerkin(small, 0.1, 1.0, 6)
    with pytest.raises(ValueError):
        capsolver.solve_galerkin(axis_basis, 0.9, 1.0, 1)
    with pytest.raises(ValueError):
        capsolver.solve_galerkin(axis_basis, 0.1, 1.0, 1, constraint="lagrange", check_doubling=False)


def test_galerkin_quadrature_limit_reported(axis_basis):
    with pytest.raises(SolverError):
        capsolver.solve_galerkin(axis_basis, 0.1, 1.0, 1, n_constraints=24, check_doubling=False)


# secular equation ---------------------------------------------------------------------------

@pytest.mark.parametrize("eps", [0.1, 0.05, 0.025])
def test_secular_first_order_root(axis_basis, eps):
    # <L_1^{-1} u, u> = u^2 2 pi / K_1, so the one-term root is 3 eps / pi
    s = capsolver.solve_secular(axis_basis, eps, 1.0, 1, order=1)
    assert s.shift == pytest.approx(3 * eps / math.pi, rel=1e-12)


@pytest.mark.parametrize("eps", [0.1, 0.05])
def test_cross_method_unit_disk(galerkin_table, secular_a1, eps):
    g = next(s for s in galerkin_table if s.eps == eps)
    s = secular_a1[eps]
    assert s.lambda_eps > s.lambda_j
    assert s.diag_residual < 1e-8
    assert abs(g.lambda_eps - s.lambda_eps) < 0.02 * g.lambda_eps


@pytest.mark.parametrize("eps", [0.1, 0.05])
def test_cross_method_half_aspect(even_basis, eps):
    g = capsolver.solve_galerkin(even_basis, eps, 0.5, 1, check_doubling=False)
    s = capsolver.solve_secular(even_basis, eps, 0.5, 1)
    assert abs(g.lambda_eps - s.lambda_eps) < 0.02 * g.lambda_eps


def test_secular_exact_form(axis_basis, galerkin_table):
    s = capsolver.solve_secular(axis_basis, 0.1, 1.0, 1, form="exact")
    assert abs(s.lambda_eps - galerkin_table[1].lambda_eps) < 0.02 * galerkin_table[1].lambda_eps


def test_secular_pole_side(axis_basis):
    sysm = capsolver._SecularSystem(axis_basis, 0.1, 1.0, 1, capsolver.diskops.build_grid(12, 24), "expansion")
    first = sysm.first_order()
    vals = [sysm.secular(d * first) for d in (1e-2, 1e-4, 1e-6)]
    assert vals[0] < 0 and vals[1] < vals[0] and vals[2] < vals[1]
    assert sysm.secular(5.0) > 0


def test_secular_rejects_form(axis_basis):
    with pytest.raises(ValueError):
        capsolver.solve_secular(axis_basis, 0.1, 1.0, 1, form="other")


# shift tables and CSV -------------------------------------------------------------------------

@pytest.mark.parametrize("eps_list", [[], [0.1, 0.1], [0.05, 0.1], [0.2, 0.9]])
def test_shift_table_rejects(axis_basis, eps_list):
    with pytest.raises(ValueError):
        capsolver.shift_table(eps_list, 1.0, 1, basis=axis_basis)


def test_shift_table_unknown_method(axis_basis):
    with pytest.raises(ValueError):
        capsolver.shift_table([0.1], 1.0, 1, methods=("fem",), basis=axis_basis)


def test_shift_table_aggregates_failures():
    # a target index beyond the truncation fails every sample but not the sweep
    small = modelgeom.build_basis(3, 2, 0)
    samples, failures = capsolver.shift_table([0.2, 0.1], 1.0, len(small) + 1, basis=small)
    assert samples == []
    assert [(f["method"], f["epsilon"]) for f in failures] == [
        ("galerkin", 0.2), ("galerkin", 0.1), ("secular", 0.2), ("secular", 0.1)]
    assert all(f["error"] for f in failures)


def test_csv_format(galerkin_table):
    buf = io.StringIO()
    capsolver.write_csv(galerkin_table, buf, header_lines=("capshift test",))
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# capshift test"
    assert lines[1] == ",".join(capsolver.CSV_COLUMNS)
    assert len(lines) == 2 + len(galerkin_table)
    row = lines[3].split(",")
    assert float(row[0]) == 0.1 and row[3] == "galerkin"
    assert float(row[4]) == galerkin_table[1].lambda_eps
    assert "e" in row[4] or len(row[4].replace(".", "").lstrip("0")) >= 16


def test_sample_row_roundtrip(galerkin_table):
    s = galerkin_table[0]
    r = s.row()
    assert tuple(r) == capsolver.CSV_COLUMNS
    assert r["lambda_eps"] == s.lambda_eps and r["epsilon"] == s.eps and r["j"] == 1
