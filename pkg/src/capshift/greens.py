"""Boundary-restricted Neumann Green's function of the unit ball.

For boundary points at angle ``gamma`` the eigenfunction series collapses,
by the addition theorem, to

    G(gamma) = sum_l (2l + 1)/(4 pi) S_l(omega2) P_l(cos gamma)

with the radial factors ``S_l`` of :func:`capshift.modelgeom.radial_factors`.
Convergence is accelerated by splitting off the static kernel ``N0`` (all
non-constant modes at ``omega2 = 0``), which is known in closed form:

    N0(gamma) = 1/(2 pi d) + log(2 / (1 - cos gamma + d)) / (4 pi) - 9 / (20 pi),

``d = 2 sin(gamma / 2)`` the chord.  The dynamic remainder has coefficients
``O(omega2 / l^2)``; degrees up to ``l_max`` are summed exactly and the tail is
summed from the first-order model ``S_l - 1/l ~ t_l / (l (l - t_l))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as C
from numpy.polynomial import legendre as L

from . import modelgeom
from .modelgeom import Mode, SpectralBasis

S0_STATIC = 0.2  # regular static part of the l = 0 block
TAIL_FACTOR = 64
TAIL_MIN = 4000
POLE_GUARD = 1e-8


class PoleError(ValueError):
    pass


class ExtrapolationError(RuntimeError):
    pass


def chord(gamma):
    return 2.0 * np.sin(0.5 * np.asarray(gamma, dtype=float))


def static_kernel(gamma) -> np.ndarray:
    """Pole-free static kernel ``N0`` on the unit sphere, ``gamma > 0``."""
    g = np.asarray(gamma, dtype=float)
    d = chord(g)
    return 1.0 / (2.0 * math.pi * d) + np.log(2.0 / (1.0 - np.cos(g) + d)) / (4.0 * math.pi) - 9.0 / (20.0 * math.pi)


def static_regular_limit() -> float:
    """``lim_{gamma -> 0} [N0 - 1/(2 pi d) + log(gamma) / (4 pi)]``."""
    return (5.0 * math.log(2.0) - 9.0) / (20.0 * math.pi)


def _static_coeffs(l_max):
    s = np.empty(l_max + 1)
    s[0] = S0_STATIC
    s[1:] = 1.0 / np.arange(1, l_max + 1)
    return s


def _tail_coeffs(l_lo, l_hi, omega2):
    l = np.arange(l_lo, l_hi + 1, dtype=float)
    t = omega2 / (2.0 * l + 3.0 - omega2 / (2.0 * l + 5.0))
    return (2.0 * l + 1.0) / (4.0 * math.pi) * t / (l * (l - t))


def dynamic_coeffs(l_max: int, omega2: float, split: Mode | None = None, tail: bool = True) -> np.ndarray:
    """Legendre coefficients of ``G - N0`` (minus the split pole, if any)."""
    S = modelgeom.radial_factors(l_max, omega2)
    if not np.all(np.isfinite(S)):
        raise PoleError(f"omega2={omega2} hits a radial pole below degree {l_max}")
    l = np.arange(l_max + 1)
    c = (2 * l + 1) / (4.0 * math.pi) * (S - _static_coeffs(l_max))
    if split is not None:
        w = modelgeom.trace_weight(split.l, split.root)
        c[split.l] -= (2 * split.l + 1) / (4.0 * math.pi) * w / (split.lam - omega2)
    if tail:
        top = max(TAIL_FACTOR * max(l_max, 1), TAIL_MIN)
        c = np.concatenate([c, _tail_coeffs(l_max + 1, top, omega2)])
    return c


def _angle(x, y):
    return float(modelgeom.great_circle_distance(np.asarray(x, float), np.asarray(y, float))[0])


@dataclass(frozen=True)
class GreensEval:
    omega2: float
    x: np.ndarray
    y: np.ndarray
    value: float
    l_max: int
    pole_separated: bool = False
    pole: float = 0.0
    regular: float = field(default=float("nan"))


def _check_pole(basis, omega2):
    lams = basis.lams
    gap = np.min(np.abs(lams - omega2))
    if gap <= POLE_GUARD:
        raise PoleError(f"omega2={omega2} within {gap:.2e} of a basis eigenvalue")


def _split_mode(basis, split_j):
    if split_j is None:
        return None
    md = basis.mode(split_j)
    lam = md.lam
    if np.sum(np.abs(basis.lams - lam) < 1e-9 * max(1.0, lam)) > 1:
        raise ValueError(f"eigenvalue {split_j} is not simple in the truncated basis")
    return md


def greens_boundary(basis: SpectralBasis, omega2: float, x, y, split_j: int | None = None,
                    accelerate: bool = True) -> GreensEval:
    """Evaluate the boundary Green's function at ``(x, y)``.

    Parameters
    ----------
    basis : SpectralBasis
        Truncation: ``basis.l_max`` bounds the exactly summed degrees; with
        ``accelerate=False`` the plain modal sum over ``basis.modes`` is used.
    omega2 : float
    x, y : array_like, shape (3,)
        Distinct points of the unit sphere.
    split_j : int, optional
        1-based index of a mode whose pole term is reported separately.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    for p in (x, y):
        if abs(np.linalg.norm(p) - 1.0) > 1e-10:
            raise ValueError("points must lie on the unit sphere")
    gamma = _angle(x, y)
    if gamma == 0.0:
        raise ValueError("coincident points")
    _check_pole(basis, omega2)
    md = _split_mode(basis, split_j)
    pole = 0.0
    if md is not None:
        ux, uy = modelgeom.trace_matrix([md], np.vstack([x, y]))[:, 0]
        pole = ux * uy / (md.lam - omega2)
    if accelerate:
        c = dynamic_coeffs(basis.l_max, omega2, md)
        reg = float(static_kernel(gamma) + L.legval(math.cos(gamma), c))
        val = reg + pole
    else:
        T = modelgeom.trace_matrix(basis.modes, np.vstack([x, y]))
        terms = T[0] * T[1] / (basis.lams - omega2)
        val = float(np.sum(terms))
        reg = val - pole
    return GreensEval(omega2, x, y, val, basis.l_max, md is not None, pole, reg)


@dataclass(frozen=True)
class SingularStructure:
    """Closed-form near-diagonal terms at a pair of boundary points."""

    newton: float
    mean_curvature: float
    normal_force: float
    second_form: float
    tangential_force: float
    pole: float = 0.0

    @property
    def total(self) -> float:
        return self.newton + self.mean_curvature + self.normal_force + self.second_form + self.tangential_force


@dataclass(frozen=True)
class Conventions:
    """Point data needed by the singular terms at ``x``.

    ``frame`` holds the principal directions ``E1, E2`` at ``x``; when
    omitted an orthonormal tangent frame is built from the coordinate axes.
    """

    H: float = 1.0
    kappa1: float = 1.0
    kappa2: float = 1.0
    g_F_nu: float = 0.0
    f_tangent: tuple = (0.0, 0.0)
    frame: tuple | None = None


def tangent_frame(x) -> tuple:
    x = np.asarray(x, dtype=float)
    ref = np.array([1.0, 0.0, 0.0]) if abs(x[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = ref - np.dot(ref, x) * x
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(x, e1)
    return e1, e2


def log_map(x, y) -> np.ndarray:
    """``exp_x^{-1}(y)`` on the unit sphere, as a tangent vector in R^3."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    gamma = _angle(x, y)
    v = y - np.dot(x, y) * x
    nv = np.linalg.norm(v)
    if nv == 0.0:
        raise ValueError("log map undefined for coincident or antipodal points")
    return gamma * v / nv


def singular_eval(x, y, conv: Conventions | None = None, near: float = 0.5) -> SingularStructure:
    """Closed-form singular terms of the boundary Green's function.

    Uses the chord ``d_g`` and the great-circle distance ``d_h``.
    """
    conv = conv or Conventions()
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    dh = _angle(x, y)
    if dh == 0.0:
        raise ValueError("coincident points")
    if dh >= near:
        raise ValueError(f"points too far apart for the near-diagonal expansion (d_h={dh:.3g})")
    dg = float(np.linalg.norm(x - y))
    e1, e2 = conv.frame if conv.frame is not None else tangent_frame(x)
    v = log_map(x, y)
    v = v / np.linalg.norm(v)
    c1, c2 = float(np.dot(v, e1)), float(np.dot(v, e2))
    # star rotates (c1, c2) to (-c2, c1)
    ii = conv.kappa1 * c1 * c1 + conv.kappa2 * c2 * c2
    ii_star = conv.kappa1 * c2 * c2 + conv.kappa2 * c1 * c1
    logd = math.log(dh)
    return SingularStructure(
        newton=1.0 / (2.0 * math.pi * dg),
        mean_curvature=-conv.H * logd / (4.0 * math.pi),
        normal_force=conv.g_F_nu * logd / (4.0 * math.pi),
        second_form=(ii - ii_star) / (16.0 * math.pi),
        tangential_force=(conv.f_tangent[0] * c1 + conv.f_tangent[1] * c2) / (4.0 * math.pi),
    )


def point_on_geodesic(x, d: float, direction=None) -> np.ndarray:
    """Point at geodesic distance ``d`` from ``x`` along a tangent direction."""
    x = np.asarray(x, float)
    e = tangent_frame(x)[0] if direction is None else np.asarray(direction, float)
    return math.cos(d) * x + math.sin(d) * e


@dataclass(frozen=True)
class RegularPart:
    value: float
    uncertainty: float
    separations: np.ndarray
    remainders: np.ndarray
    fit_coeffs: np.ndarray
    fit_condition: float
    deltas: np.ndarray
    delta_values: np.ndarray
    delta_exponent: float


DEFAULT_LADDER = tuple(0.1 * 0.6**k for k in range(8))
DEFAULT_DELTAS = (1e-2, 5e-3, 2.5e-3)


def extrapolate_log_model(d, r, cond_max: float = 1e8):
    """Least-squares fit ``r = c0 + c1 d log d + c2 d``; returns (coeffs, cond)."""
    d = np.asarray(d, float)
    X = np.column_stack([np.ones_like(d), d * np.log(d), d])
    scale = np.linalg.norm(X, axis=0)
    Xs = X / scale
    cond = float(np.linalg.cond(Xs))
    if not cond < cond_max:
        raise ExtrapolationError(f"extrapolation design condition {cond:.3e} exceeds {cond_max:.1e}")
    coef, *_ = np.linalg.lstsq(Xs, np.asarray(r, float), rcond=None)
    return coef / scale, cond


def regular_part(basis: SpectralBasis, j: int, x_star=None, conv: Conventions | None = None,
                 separations=DEFAULT_LADDER, deltas=DEFAULT_DELTAS) -> RegularPart:
    """Regular part of the Green's function at ``(x*, x*)`` for eigenvalue ``j``.

    For each spectral offset ``delta`` the pole-split kernel at
    ``lambda_j + delta`` minus the singular terms is extrapolated to zero
    separation; the ``delta`` dependence, linear to leading order, is then
    removed by Richardson extrapolation over the two smallest offsets.
    """
    x_star = np.array([0.0, 0.0, 1.0]) if x_star is None else np.asarray(x_star, float)
    md = _split_mode(basis, j)
    if len(separations) < 6:
        raise ValueError("need at least six separations")
    deltas = np.asarray(sorted(deltas, reverse=True), float)
    seps = np.asarray(separations, float)
    per_delta = []
    rem_rows = []
    cond = 0.0
    coef = None
    for dl in deltas:
        om = md.lam + dl
        rem = []
        for d in seps:
            y = point_on_geodesic(x_star, d)
            g = greens_boundary(basis, om, x_star, y, split_j=j)
            rem.append(g.regular - singular_eval(x_star, y, conv).total)
        rem = np.array(rem)
        coef, cond = extrapolate_log_model(seps, rem)
        per_delta.append(coef[0])
        rem_rows.append(rem)
    per_delta = np.array(per_delta)
    value = 2.0 * per_delta[-1] - per_delta[-2]
    if len(per_delta) >= 3:
        d1 = abs(per_delta[-3] - per_delta[-2])
        d2 = abs(per_delta[-2] - per_delta[-1])
        ratio = deltas[-3] / deltas[-2]
        expo = math.log(d1 / d2) / math.log(ratio) if d1 > 0 and d2 > 0 else float("nan")
    else:
        expo = float("nan")
    # model error: refit without the widest separation
    alt, _ = extrapolate_log_model(seps[1:], rem_rows[-1][1:])
    unc = abs(alt[0] - coef[0]) + abs(per_delta[-1] - per_delta[-2])
    return RegularPart(value, unc, seps, np.array(rem_rows), coef, cond, deltas, per_delta, expo)


class DynamicTable:
    """Interpolant of the dynamic kernel ``G - N0 - pole`` on ``[0, gamma_max]``.

    Chebyshev interpolation in ``cos(gamma)``; used when the kernel is
    needed on many point pairs of a small cap.
    """

    def __init__(self, l_max, omega2, split: Mode | None, gamma_max, degree=96):
        self.coeffs = dynamic_coeffs(l_max, omega2, split)
        lo = math.cos(min(gamma_max, math.pi))
        self.lo = lo
        self.cheb = C.Chebyshev.interpolate(lambda u: L.legval(u, self.coeffs), degree, domain=[lo, 1.0])

    def __call__(self, cosg):
        return self.cheb(np.clip(cosg, self.lo, 1.0))


def regular_kernel(cosg, dyn: DynamicTable) -> np.ndarray:
    """Regular part of the pole-split kernel on the unit sphere.

    ``N0 - 1/(2 pi d_g) + log(d_h) / (4 pi) + dynamic``, continuous up to
    ``gamma = 0`` where the limit is used.  The log coefficient of ``N0`` is
    exactly ``-1/(4 pi)``, i.e. ``H = 1`` (average of the principal
    curvatures).
    """
    cosg = np.clip(np.asarray(cosg, float), -1.0, 1.0)
    gamma = np.arccos(cosg)
    small = gamma < 1e-12
    g = np.where(small, 1.0, gamma)
    d = chord(g)
    # 1 - cos(gamma) = d^2 / 2
    stat = (math.log(2.0) + np.log(g / (d * (1.0 + 0.5 * d)))) / (4.0 * math.pi) - 9.0 / (20.0 * math.pi)
    stat = np.where(small, static_regular_limit(), stat)
    return stat + dyn(cosg)


def ball_point_data(basis: SpectralBasis, j: int = 1, h_convention: str = "mean", rp: RegularPart | None = None):
    """Point data at the north pole of the unit ball for eigenvalue ``j``.

    Returns ``(PointData, RegularPart)``.
    """
    from .coeffs import PointData

    md = basis.mode(j)
    pole = np.array([[0.0, 0.0, 1.0]])
    u = float(modelgeom.trace_matrix([md], pole)[0, 0])
    rp = rp or regular_part(basis, j)
    k1, k2 = modelgeom.SPHERE_KAPPA
    pd = PointData(u_star=u, exp_phi=1.0, dnu_phi=0.0, H=modelgeom.sphere_mean_curvature(h_convention),
                   kappa1=k1, kappa2=k2, f_tangent=(0.0, 0.0), R_star=rp.value)
    return pd, rp
