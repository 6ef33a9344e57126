import math

import mpmath
import numpy as np
import pytest
from numpy.polynomial import legendre as L

from capshift import greens, modelgeom
from capshift.greens import Conventions

NORTH = np.array([0.0, 0.0, 1.0])
R_GROUND = (5 * math.log(2) - 9) / (20 * math.pi)


def random_pair(rng, max_sep=0.4):
    x = rng.standard_normal(3)
    x /= np.linalg.norm(x)
    e1, e2 = greens.tangent_frame(x)
    ang = rng.uniform(0, 2 * np.pi)
    d = rng.uniform(0.01, max_sep)
    return x, greens.point_on_geodesic(x, d, math.cos(ang) * e1 + math.sin(ang) * e2)


# static kernel and series ---------------------------------------------------------------

def test_static_kernel_cesaro_series():
    # N0 = 1/(20 pi) + sum_{l>=1} (2l+1)/(4 pi l) P_l; Cesaro means of the partial sums
    gam = 0.5
    c = math.cos(gam)
    p0, p1 = 1.0, c
    s = 1.0 / (20 * math.pi)
    partial = []
    for l in range(1, 6001):
        if l > 1:
            p0, p1 = p1, ((2 * l - 1) * c * p1 - (l - 1) * p0) / l
        s += (2 * l + 1) / (4 * math.pi * l) * p1
        partial.append(s)
    assert abs(np.mean(partial[3000:]) - greens.static_kernel(gam)) < 1e-5


@pytest.fixture(scope="module")
def dynamic_oracle():
    # (2l+1)/(4 pi) [S_l(-1) - S_l(0)] from modified spherical Bessel functions
    mpmath.mp.dps = 30
    k = mpmath.mpf(1)

    def S(l):
        f = lambda z: mpmath.sqrt(mpmath.pi / (2 * z)) * mpmath.besseli(l + 0.5, z)  # noqa: E731
        return f(k) / (k * mpmath.diff(f, k))

    return np.array([(2 * l + 1) / (4 * math.pi) * float(S(l) - (mpmath.mpf(1) / l if l else mpmath.mpf(1) / 5))
                     for l in range(501)])


@pytest.mark.parametrize("gam", [0.05, 0.3, 1.0, 2.5])
def test_accelerated_series_against_bessel_oracle(axis_basis, dynamic_oracle, gam):
    y = greens.point_on_geodesic(NORTH, gam)
    g = greens.greens_boundary(axis_basis, -1.0, NORTH, y).value
    ref = float(greens.static_kernel(gam)) + L.legval(math.cos(gam), dynamic_oracle)
    assert abs(g - ref) < 5e-6


def test_plain_modal_sum_approaches_accelerated():
    # the plain modal sum converges slowly and with oscillation; a fine
    # truncation must land close to the accelerated value
    x = NORTH
    y = greens.point_on_geodesic(x, 1.0)
    ref = greens.greens_boundary(modelgeom.build_basis(40, 10, 0), -1.0, x, y).value
    coarse = greens.greens_boundary(modelgeom.build_basis(5, 3, 0), -1.0, x, y, accelerate=False).value
    fine = greens.greens_boundary(modelgeom.build_basis(160, 80, 0), -1.0, x, y, accelerate=False).value
    assert abs(fine - ref) < 1e-3
    assert abs(fine - ref) < 0.05 * abs(coarse - ref)


def test_symmetry(axis_basis, rng):
    full = modelgeom.build_basis(6, 3)
    for _ in range(5):
        x, y = random_pair(rng)
        assert greens.greens_boundary(axis_basis, -1.0, x, y).value == greens.greens_boundary(
            axis_basis, -1.0, y, x).value
        assert greens.greens_boundary(full, 2.0, x, y, accelerate=False).value == pytest.approx(
            greens.greens_boundary(full, 2.0, y, x, accelerate=False).value, rel=1e-13)


@pytest.mark.parametrize("j", [1, 2])
def test_residue(axis_basis, j):
    md = axis_basis.mode(j)
    y = greens.point_on_geodesic(NORTH, 0.3)
    ux, uy = modelgeom.trace_matrix([md], np.vstack([NORTH, y]))[:, 0]
    split = greens.greens_boundary(axis_basis, md.lam - 0.01, NORTH, y, split_j=j)
    assert split.pole * 0.01 == pytest.approx(ux * uy, rel=1e-14)
    deltas = np.array([1e-2, 5e-3, 2.5e-3, 1.25e-3])
    errs = np.array([abs(dl * greens.greens_boundary(axis_basis, md.lam - dl, NORTH, y).value - ux * uy)
                     for dl in deltas])
    rate = np.polyfit(np.log(deltas), np.log(errs), 1)[0]
    assert 0.8 <= rate <= 1.2


def test_pole_guard(axis_basis):
    y = greens.point_on_geodesic(NORTH, 0.2)
    with pytest.raises(greens.PoleError):
        greens.greens_boundary(axis_basis, 0.0, NORTH, y)
    g = greens.greens_boundary(axis_basis, 0.0 + 1e-3, NORTH, y, split_j=1)
    assert np.isfinite(g.value) and g.pole_separated


def test_coincident_points(axis_basis):
    with pytest.raises(ValueError):
        greens.greens_boundary(axis_basis, -1.0, NORTH, NORTH)
    with pytest.raises(ValueError):
        greens.greens_boundary(axis_basis, -1.0, NORTH, [0.0, 0.0, 2.0])


def test_leading_singularity(axis_basis):
    ds = np.array([0.2, 0.15, 0.1, 0.07, 0.05])
    vals = []
    for d in ds:
        y = greens.point_on_geodesic(NORTH, d)
        vals.append(2 * math.pi * d * greens.greens_boundary(axis_basis, -1.0, NORTH, y).value)
    # 2 pi d G = 1 + c1 d log d + c2 d + ...
    X = np.column_stack([np.ones_like(ds), ds * np.log(ds), ds])
    coef = np.linalg.lstsq(X, np.array(vals), rcond=None)[0]
    assert abs(coef[0] - 1) < 2e-2


def test_remainder_bounded_and_holder(axis_basis):
    ds = 0.2 * 0.5 ** np.arange(4)
    ds = np.append(ds, 0.02)
    rem = []
    for d in ds:
        y = greens.point_on_geodesic(NORTH, d)
        rem.append(greens.greens_boundary(axis_basis, -1.0, NORTH, y).value - greens.singular_eval(NORTH, y).total)
    rem = np.array(rem)
    assert np.abs(rem).max() < 1.0
    diffs = np.abs(np.diff(rem[:4]))
    assert np.all(np.diff(diffs) < 0)
    alpha = np.polyfit(np.log(ds[1:4]), np.log(diffs), 1)[0]
    assert alpha >= 0.3


# singular terms ----------------------------------------------------------------------------

def test_chord_arc_identity(rng):
    for _ in range(100):
        x, y = random_pair(rng)
        dh = float(modelgeom.great_circle_distance(x, y)[0])
        dg = float(np.linalg.norm(x - y))
        assert abs(dg - 2 * math.sin(dh / 2)) < 1e-12


def test_leading_term_value():
    y = greens.point_on_geodesic(NORTH, 0.1)
    s = greens.singular_eval(NORTH, y)
    mpmath.mp.dps = 40
    ref = 1 / (2 * mpmath.pi * 2 * mpmath.sin(mpmath.mpf("0.05")))
    assert abs(s.newton - float(ref)) < 1e-12
    assert abs(s.newton - 1.592213) < 1e-6


def test_sphere_terms_vanish(rng):
    for _ in range(20):
        x, y = random_pair(rng)
        s = greens.singular_eval(x, y)
        assert s.second_form == 0.0 and s.tangential_force == 0.0 and s.normal_force == 0.0


def test_second_form_and_force_terms():
    frame = (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
    conv = Conventions(H=1.0, kappa1=3.0, kappa2=1.0, g_F_nu=0.5, f_tangent=(2.0, -1.0), frame=frame)
    ang = 0.3
    y = greens.point_on_geodesic(NORTH, 0.1, [math.cos(ang), math.sin(ang), 0.0])
    s = greens.singular_eval(NORTH, y, conv)
    c1, c2 = math.cos(ang), math.sin(ang)
    assert s.second_form == pytest.approx((3.0 - 1.0) * (c1 * c1 - c2 * c2) / (16 * math.pi), rel=1e-12)
    assert s.tangential_force == pytest.approx((2.0 * c1 - c2) / (4 * math.pi), rel=1e-12)
    assert s.normal_force == pytest.approx(0.5 * math.log(0.1) / (4 * math.pi), rel=1e-12)
    assert s.mean_curvature == pytest.approx(-math.log(0.1) / (4 * math.pi), rel=1e-12)


def test_singular_eval_rejects():
    with pytest.raises(ValueError):
        greens.singular_eval(NORTH, NORTH)
    with pytest.raises(ValueError):
        greens.singular_eval(NORTH, greens.point_on_geodesic(NORTH, 0.8))


# regular part -------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def rp40(axis_basis):
    return greens.regular_part(axis_basis, 1)


def test_regular_part_ground_state(rp40):
    assert abs(rp40.value - R_GROUND) < 1e-4
    assert abs(rp40.value - R_GROUND) < 3 * rp40.uncertainty
    assert rp40.fit_condition < 1e8


def test_regular_part_delta_exponent(rp40):
    assert 0.8 <= rp40.delta_exponent <= 1.2


def test_regular_part_dual_truncation(rp40):
    rp30 = greens.regular_part(modelgeom.build_basis(30, 10, 0), 1)
    assert abs(rp30.value - rp40.value) < 1e-3 * abs(rp40.value)


def test_regular_part_needs_six_separations(axis_basis):
    with pytest.raises(ValueError):
        greens.regular_part(axis_basis, 1, separations=(0.1, 0.05, 0.02))


def test_extrapolation_guard():
    with pytest.raises(greens.ExtrapolationError):
        greens.extrapolate_log_model([0.1, 0.1 + 1e-12, 0.1 + 2e-12, 0.1 + 3e-12], [1, 2, 3, 4])


def test_regular_kernel_limit():
    dyn = greens.DynamicTable(40, 1e-3, modelgeom.constant_mode(), 0.5)
    near = greens.regular_kernel(math.cos(1e-7), dyn)
    at = greens.regular_kernel(1.0, dyn)
    assert abs(near - at) < 1e-6


def test_ball_point_data(axis_basis, rp40):
    pd, rp = greens.ball_point_data(axis_basis, 1, rp=rp40)
    assert pd.u_star == pytest.approx(math.sqrt(3 / (4 * math.pi)), rel=1e-15)
    assert pd.H == 1.0 and pd.kappa1 == pd.kappa2 == 1.0
    assert pd.R_star == rp40.value
    pd2, _ = greens.ball_point_data(axis_basis, 1, "sum", rp=rp40)
    assert pd2.H == 2.0
