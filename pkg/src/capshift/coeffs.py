"""Asymptotic coefficients of the eigenvalue shift.

The shift of a simple Neumann eigenvalue under a small Dirichlet window of
size ``eps`` centred at ``x*`` is modelled as

    lambda_eps - lambda_j = A eps + B eps^2 log(eps) + C eps^2 + ...

with the natural logarithm.  Two sets of formulas are evaluated: the disk
formulas (window = geodesic disk) and the ellipse formulas parameterized by
the aspect ``a``, which must reduce to the disk case at ``a = 1``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diskops

LOG = np.log  # single source for the log convention shared with fitshift
J_LOG_TARGET = math.pi**2 * (8.0 * math.log(2.0) - 6.0)


@dataclass(frozen=True)
class PointData:
    """Geometric and spectral data at the window centre ``x*``.

    Attributes
    ----------
    u_star : float
        Eigenfunction value ``u_j(x*)``.
    exp_phi : float
        ``exp(phi(x*))`` for the weight ``phi``; 1 for the plain Laplacian.
    dnu_phi : float
        Normal derivative of ``phi`` at ``x*``.
    H : float
        Mean curvature.
    kappa1, kappa2 : float
        Principal curvatures.
    f_tangent : tuple of float
        Tangential force components ``(F1, F2)`` at ``x*``.
    R_star : float
        Regular part of the boundary Green's function at ``(x*, x*)``.
    """

    u_star: float
    exp_phi: float = 1.0
    dnu_phi: float = 0.0
    H: float = 1.0
    kappa1: float = 1.0
    kappa2: float = 1.0
    f_tangent: tuple = (0.0, 0.0)
    R_star: float = 0.0

    def __post_init__(self):
        vals = [self.u_star, self.exp_phi, self.dnu_phi, self.H, self.kappa1, self.kappa2, self.R_star]
        vals += list(self.f_tangent)
        if len(self.f_tangent) != 2:
            raise ValueError("f_tangent must have two components")
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("PointData entries must be finite")
        if self.exp_phi <= 0:
            raise ValueError("exp_phi must be positive")

    @property
    def pref(self) -> float:
        """``|u*|^2 e^phi``."""
        return self.u_star**2 * self.exp_phi


@dataclass(frozen=True)
class AsymCoeffs:
    """Coefficients of the shift expansion from one set of formulas."""

    A: float
    B: float
    a: float
    provenance: str
    C_ball: float | None = None
    C1: float | None = None
    C2: float | None = None
    C3: float | None = None
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def C(self) -> float:
        if self.provenance == "ball":
            return self.C_ball
        return self.C1 + self.C2 + self.C3


def compute_Ka(a: float, rtol: float = 1e-15) -> float:
    """``K_a = (pi/2) int_0^{2 pi} a (a^2 cos^2 + sin^2)^(-1/2) dtheta``.

    Periodic trapezoidal rule, doubled until two successive values agree;
    the convergence is geometric with rate set by ``a``.
    """
    a = float(a)
    if not (0.0 < a <= 1.0):
        raise ValueError(f"aspect a must lie in (0, 1], got {a}")
    prev = None
    n = 64
    while n <= 2**22:
        th = 2.0 * np.pi * np.arange(n) / n
        val = 0.5 * np.pi * a * np.sum(1.0 / np.sqrt((a * np.cos(th)) ** 2 + np.sin(th) ** 2)) * (2.0 * np.pi / n)
        if prev is not None and abs(val - prev) <= rtol * abs(val):
            return float(val)
        prev = val
        n *= 2
    raise RuntimeError(f"K_a quadrature did not converge for a={a}")


def ball_coeffs(pd: PointData) -> AsymCoeffs:
    """Coefficients for a geodesic disk window."""
    p = pd.pref
    s = pd.H - pd.dnu_phi
    A = 4.0 * p
    B = 4.0 * math.pi * p * s
    C = p * ((8.0 * math.log(2.0) - 6.0) / math.pi * s - 16.0 * pd.R_star)
    return AsymCoeffs(A=A, B=B, a=1.0, provenance="ball", C_ball=C)


def weighted_double_integrals(a: float, grid: diskops.DiskGrid) -> dict:
    """``J_log`` and ``I_inf``, the kernels' double integrals against ``w x w``.

    Both are bilinear forms ``<R w, w> / a`` with the diagonally corrected
    operators of :mod:`capshift.diskops`.
    """
    w = grid.rim_weight
    ww = grid.weighted_weights
    out = {}
    for name, kind in (("J_log", "RLog"), ("I_inf", "RInf")):
        op = diskops.assemble(kind, a, grid)
        out[name] = float(ww @ diskops.apply(op, w)) / a
    return out


def ellipse_coeffs(pd: PointData, a: float, grid: diskops.DiskGrid, integrals: dict | None = None) -> AsymCoeffs:
    """Coefficients for a geodesic ellipse window of aspect ``a``.

    Parameters
    ----------
    pd : PointData
    a : float
    grid : DiskGrid
        Grid for the double integrals.
    integrals : dict, optional
        Precomputed output of :func:`weighted_double_integrals`.
    """
    a = float(a)
    Ka = compute_Ka(a)
    p = pd.pref
    s = pd.H - pd.dnu_phi
    A = 4.0 * math.pi**2 * a * p / Ka
    B = 4.0 * math.pi**3 * a**2 * p * s / Ka**2
    pre2 = a**2 * math.pi * (pd.kappa1 - pd.kappa2) * p / (4.0 * Ka**2)
    need = integrals
    if need is None:
        need = weighted_double_integrals(a, grid) if (s != 0 or pre2 != 0) else {"J_log": 0.0, "I_inf": 0.0}
    C1 = a**2 * math.pi * s * p / Ka**2 * need["J_log"]
    C2 = 0.0 if pre2 == 0 else pre2 * need["I_inf"]
    C3 = 16.0 * math.pi**4 * a**2 * pd.R_star * p / Ka**2
    return AsymCoeffs(A=A, B=B, a=a, provenance="ellipse", C1=C1, C2=C2, C3=C3,
                      extras={"K_a": Ka, **need})


def predict_shift(coeffs: AsymCoeffs, eps) -> float | np.ndarray:
    """``A eps + B eps^2 log(eps) + C eps^2``."""
    e = np.asarray(eps, dtype=float)
    if np.any(~(e > 0) | ~(e < 1)):
        raise ValueError("eps must lie in (0, 1)")
    out = coeffs.A * e + coeffs.B * e**2 * LOG(e) + coeffs.C * e**2
    return float(out) if out.ndim == 0 else out


def consistency_report(pd: PointData, grid: diskops.DiskGrid) -> dict:
    """Compare the disk formulas with the ellipse formulas at ``a = 1``."""
    ball = ball_coeffs(pd)
    ints = weighted_double_integrals(1.0, grid)
    ell = ellipse_coeffs(pd, 1.0, grid, integrals=ints)
    return {
        "a": 1.0,
        "A_ball": ball.A,
        "A_ellipse": ell.A,
        "B_ball": ball.B,
        "B_ellipse": ell.B,
        "C_ball": ball.C_ball,
        "C1": ell.C1,
        "C2": ell.C2,
        "C3": ell.C3,
        "J_log": ints["J_log"],
        "J_log_target": J_LOG_TARGET,
    }


def to_dict(c: AsymCoeffs) -> dict:
    d = asdict(c)
    d["C"] = c.C
    return d
