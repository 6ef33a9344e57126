import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from capshift import coeffs, fitshift
from capshift.coeffs import PointData
from capshift.fitshift import ShiftExpansionRegressor

EPS = np.array([0.2, 0.1, 0.05, 0.025])


def model(eps, A, B, C):
    eps = np.asarray(eps, dtype=float)
    return A * eps + B * eps**2 * np.log(eps) + C * eps**2


def test_exact_recovery():
    fit = fitshift.fit_expansion(zip(EPS, model(EPS, 1.0, -2.0, 0.5)))
    assert abs(fit.A - 1.0) < 1e-10 and abs(fit.B + 2.0) < 1e-10 and abs(fit.C - 0.5) < 1e-10
    assert fit.residual >= 0 and fit.valid
    assert fit.eps == tuple(EPS)


def test_contaminated_recovery():
    y = model(EPS, 1.0, -2.0, 0.5) + 1e-3 * EPS**3 * np.log(EPS) ** 2
    fit = fitshift.fit_expansion(zip(EPS, y))
    assert abs(fit.A - 1.0) < 0.01
    assert 0.7 <= fit.remainder_slope <= 1.3
    assert fit.remainder_amplitude == pytest.approx(1e-3, rel=1e-6)


def test_contaminated_slope_with_spare_points():
    # with four points the residual has one direction and the slope is 1 by
    # construction; eight points make the slope a real test
    eps = 0.2 * 0.7 ** np.arange(8)
    y = model(eps, 1.0, -2.0, 0.5) + 1e-3 * eps**3 * np.log(eps) ** 2
    fit = fitshift.fit_expansion(zip(eps, y))
    assert abs(fit.A - 1.0) < 0.01
    assert 0.7 <= fit.remainder_slope <= 1.3
    assert np.all(np.isfinite(fit.covariance))


def test_unweighted_option():
    fit = fitshift.fit_expansion(zip(EPS, model(EPS, 0.3, 1.0, -1.0)), weighting="none")
    assert abs(fit.A - 0.3) < 1e-10


@pytest.mark.parametrize("pts", [
    [(0.2, 0.1), (0.1, 0.05)],
    [(0.2, 0.1), (0.2, 0.1), (0.1, 0.05), (0.05, 0.02)],
    [(0.2, 0.1), (0.18, 0.09), (0.16, 0.08), (0.14, 0.07)],
    [(0.2, 0.1), (0.1, 0.05), (0.05, 0.02), (0.0, 0.0)],
])
def test_fit_rejects(pts):
    with pytest.raises(ValueError):
        fitshift.fit_expansion(pts)


def test_fit_rejects_bad_weighting():
    with pytest.raises(ValueError):
        fitshift.fit_expansion(zip(EPS, EPS), weighting="sqrt")


@settings(max_examples=30, deadline=None)
@given(st.permutations(range(6)), st.floats(-2, 2), st.floats(-2, 2))
def test_reorder_invariance(perm, B, C):
    eps = 0.2 * 0.6 ** np.arange(6)
    y = model(eps, 1.0, B, C) + 1e-4 * eps**3
    f1 = fitshift.fit_expansion(zip(eps, y))
    f2 = fitshift.fit_expansion(zip(eps[list(perm)], y[list(perm)]))
    for k in ("A", "B", "C"):
        assert getattr(f2, k) == pytest.approx(getattr(f1, k), rel=1e-9, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([0.5, 2.0, 4.0, 0.125, 1024.0]))
def test_scaling_equivariance(s):
    # power-of-two scales keep the floating-point solve exact
    y = model(EPS, 0.9, 0.3, -0.4) + 1e-4 * EPS**3
    f1 = fitshift.fit_expansion(zip(EPS, y))
    f2 = fitshift.fit_expansion(zip(EPS, s * y))
    for k in ("A", "B", "C"):
        assert getattr(f2, k) == pytest.approx(s * getattr(f1, k), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100.0))
def test_scaling_equivariance_general(s):
    y = model(EPS, 0.9, 0.3, -0.4) + 1e-4 * EPS**3
    f1 = fitshift.fit_expansion(zip(EPS, y))
    f2 = fitshift.fit_expansion(zip(EPS, s * y))
    for k in ("A", "B", "C"):
        assert getattr(f2, k) == pytest.approx(s * getattr(f1, k), rel=1e-9)


def test_accepts_samples(galerkin_table):
    fit = fitshift.fit_expansion(galerkin_table)
    assert fit.eps == tuple(s.eps for s in galerkin_table)
    assert fit.valid


# estimator -------------------------------------------------------------------------------

def test_estimator_interface():
    est = ShiftExpansionRegressor(weighting="none")
    assert est.get_params() == {"weighting": "none", "min_span": 4.0}
    with pytest.raises(NotFittedError):
        est.predict(EPS)
    y = model(EPS, 1.0, 0.5, 0.25)
    est.fit(EPS[:, None], y)
    assert np.allclose(est.predict(EPS[:, None]), y, atol=1e-14)
    assert est.score(EPS[:, None], y) == pytest.approx(1.0)
    c = clone(est)
    assert c.get_params() == est.get_params() and not hasattr(c, "coef_")


def test_estimator_rejects_shapes():
    est = ShiftExpansionRegressor()
    with pytest.raises(ValueError):
        est.fit(np.column_stack([EPS, EPS]), EPS)
    with pytest.raises(ValueError):
        est.fit(EPS, EPS[:3])


# adjudication ----------------------------------------------------------------------------

U_GROUND = math.sqrt(3.0 / (4.0 * math.pi))


@pytest.fixture(scope="module")
def ground_coeffs():
    pd = PointData(u_star=U_GROUND, R_star=(5 * math.log(2) - 9) / (20 * math.pi))
    ints = {"J_log": coeffs.J_LOG_TARGET, "I_inf": 0.0}
    return coeffs.ball_coeffs(pd), coeffs.ellipse_coeffs(pd, 1.0, None, integrals=ints)


def test_adjudicate_report_fields(ground_coeffs):
    b, e = ground_coeffs
    fit = fitshift.fit_expansion(zip(EPS, model(EPS, b.A, b.B, b.C)))
    rep = fitshift.adjudicate(fit, b, e)
    for k in ("A_fit", "B_fit", "C_fit", "A_pred_ball", "A_pred_ellipse", "B_pred_ball", "B_pred_ellipse",
              "C_pred_ball", "C_pred_ellipse", "verdicts", "residual", "remainder_slope"):
        assert k in rep
    assert rep["verdicts"]["A"] == "indistinguishable"
    assert rep["verdicts"]["B"] == "ball" and rep["verdicts"]["C"] == "ball"
    assert rep["relative_deviations"]["B"]["ball"] < 1e-8


def test_adjudicate_picks_ellipse(ground_coeffs):
    b, e = ground_coeffs
    fit = fitshift.fit_expansion(zip(EPS, model(EPS, e.A, e.B, e.C)))
    rep = fitshift.adjudicate(fit, b, e)
    assert rep["verdicts"]["B"] == "ellipse"


def test_adjudicate_indistinguishable():
    # equal curvatures: the two formula sets give identical predictions when
    # only C2 could tell them apart
    c = coeffs.AsymCoeffs(A=1.0, B=0.5, a=1.0, provenance="ball", C_ball=0.2)
    fit = fitshift.fit_expansion(zip(EPS, model(EPS, 1.1, 0.4, 0.3)))
    rep = fitshift.adjudicate(fit, c, c)
    assert set(rep["verdicts"].values()) == {"indistinguishable"}


def test_adjudicate_rejects(ground_coeffs):
    b, e = ground_coeffs
    with pytest.raises(TypeError):
        fitshift.adjudicate({"A": 1.0}, b, e)
    bad = fitshift.FitResult(float("nan"), 0.0, 0.0, np.zeros((3, 3)), 0.0, 1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        fitshift.adjudicate(bad, b, e)
    other = coeffs.ball_coeffs(PointData(u_star=2 * U_GROUND))
    fit = fitshift.fit_expansion(zip(EPS, model(EPS, 1, 0, 0)))
    with pytest.raises(ValueError):
        fitshift.adjudicate(fit, other, e)


def test_condition_flag():
    fit = fitshift.FitResult(1.0, 0.0, 0.0, np.zeros((3, 3)), 0.0, 2e10, 1.0, 0.0)
    assert not fit.valid
