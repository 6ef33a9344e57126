"""Perturbed eigenvalues of the unit ball with a Dirichlet cap at the north pole.

Two independent routes:

* :func:`solve_galerkin` -- Rayleigh-Ritz in the Neumann eigenbasis with the
  Dirichlet condition imposed weakly, ``int_cap u q_i dS = 0`` for test
  functions ``q_i = w(t) p_i(t)``.  Modes beyond the truncation are not
  dropped: their static response is folded in through the closed-form
  static kernel (residual flexibility), which is what lets a truncation of
  ``l_max = 40`` resolve caps much smaller than ``1 / l_max``.
* :func:`solve_secular` -- the scalar secular equation obtained from the
  boundary integral equation on the cap.  ``form="expansion"`` uses the
  flat-chart operators plus the regular part of the Green's function;
  ``form="exact"`` keeps the full pole-free kernel and the sphere's chart.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh, null_space
from scipy.optimize import brentq

from . import diskops, greens, modelgeom
from .modelgeom import SpectralBasis

CSV_COLUMNS = ("epsilon", "a", "j", "method", "lambda_eps", "lmax", "nmax", "n_constraints", "diag_residual")


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ShiftSample:
    """One computed perturbed eigenvalue."""

    eps: float
    a: float
    j: int
    lambda_eps: float
    method: str
    lambda_j: float
    l_max: int
    n_max: int
    n_constraints: int
    diag_residual: float
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def shift(self) -> float:
        return self.lambda_eps - self.lambda_j

    def row(self) -> dict:
        return {
            "epsilon": self.eps,
            "a": self.a,
            "j": self.j,
            "method": self.method,
            "lambda_eps": self.lambda_eps,
            "lmax": self.l_max,
            "nmax": self.n_max,
            "n_constraints": self.n_constraints,
            "diag_residual": self.diag_residual,
        }


def _check_eps(eps):
    eps = float(eps)
    if not (0.0 < eps < math.pi / 4):
        raise ValueError(f"eps must lie in (0, pi/4), got {eps}")
    return eps


def _test_polys(t, n, radial):
    """Test polynomials at disk points ``t``; even in both coordinates."""
    if radial:
        u = 2.0 * (t[..., 0] ** 2 + t[..., 1] ** 2) - 1.0
        return np.stack([np.polynomial.legendre.legval(u, np.eye(n)[i]) for i in range(n)], axis=-1)
    pairs = []
    deg = 0
    while len(pairs) < n:
        for al in range(deg, -1, -1):
            pairs.append((al, deg - al))
        deg += 1
    pairs = pairs[:n]
    u1 = 2.0 * t[..., 0] ** 2 - 1.0
    u2 = 2.0 * t[..., 1] ** 2 - 1.0
    cols = []
    for al, be in pairs:
        cols.append(np.polynomial.legendre.legval(u1, np.eye(al + 1)[al]) * np.polynomial.legendre.legval(u2, np.eye(be + 1)[be]))
    return np.stack(cols, axis=-1)


def static_cap_gram(chart, grid: diskops.DiskGrid, n_test: int, radial: bool):
    """Test-function moments against the static kernel and the chart measure.

    Returns ``(P, F)`` where ``P[p, i] = p_i(t_p)`` at the grid nodes and
    ``F[i, j] = int int q_i(x) N0(x, y) q_j(y) dS dS``.
    """
    eps, a = chart.eps, chart.a
    scale = a * eps**2

    def integrand(t, s1, s2, rho):
        x = chart.points(t)
        sh = s1.shape
        y = chart.points(np.column_stack([s1.ravel(), s2.ravel()])).reshape(sh + (3,))
        xb = x[:, None, None, :]
        cr = np.linalg.norm(np.cross(np.broadcast_to(xb, y.shape), y), axis=-1)
        dot = np.sum(xb * y, axis=-1)
        gam = np.arctan2(cr, dot)
        kern = greens.static_kernel(np.where(gam > 0, gam, 1.0))
        kern = np.where(gam > 0, kern, 0.0)
        jac = chart.jacobian(np.column_stack([s1.ravel(), s2.ravel()])).reshape(sh)
        polys = _test_polys(np.stack([s1, s2], axis=-1), n_test, radial)
        return (scale * kern * jac * rho)[..., None] * polys

    V = diskops.polar_integrate(grid.nodes, integrand)
    P = _test_polys(grid.nodes, n_test, radial)
    outer = grid.weighted_weights * chart.measure(grid.nodes, 1.0)
    F = (P * outer[:, None]).T @ V
    return P, 0.5 * (F + F.T)


def solve_galerkin(basis: SpectralBasis, eps: float, a: float, j: int, n_constraints: int = 6,
                   grid: diskops.DiskGrid | None = None, constraint: str = "flexibility",
                   check_doubling: bool = True) -> ShiftSample:
    """Perturbed eigenvalue by constrained Rayleigh-Ritz.

    Parameters
    ----------
    basis : SpectralBasis
        Retained Neumann modes.  For a cap centred at the pole the target
        mode and the test functions are invariant under reflections of the
        tangent plane, so ``m_filter=0`` (``a = 1``) or ``"even"`` suffices.
    eps, a : float
        Cap size and aspect.
    j : int
        1-based index of the target eigenvalue within the basis.
    n_constraints : int
        Number of weak constraints (test functions), at least 4.
    grid : DiskGrid, optional
        Quadrature for the cap integrals; default ``16 x 32``.
    constraint : {"flexibility", "nullspace", "penalty"}
        ``flexibility`` adds the static response of the omitted modes;
        ``nullspace`` is plain projection onto the constraint null space;
        ``penalty`` adds ``tau B^T B`` with a large ``tau`` (cross-check).
    check_doubling : bool
        Also solve with ``2 n_constraints`` and report the relative change.
    """
    eps = _check_eps(eps)
    a = diskops._check_aspect(a)
    n_constraints = int(n_constraints)
    if n_constraints < 4:
        raise ValueError("n_constraints must be at least 4")
    if not 1 <= j <= len(basis):
        raise SolverError(f"truncation holds {len(basis)} modes, below the target index {j}")
    lams = basis.lams
    lam_j = lams[j - 1]
    if lams[-1] <= lam_j + 10.0 * max(1.0, lam_j):
        raise SolverError("basis cutoff is not well above the target eigenvalue")
    grid = grid or diskops.build_grid(16, 32)
    chart = modelgeom.cap_chart(eps, a)
    radial = a == 1.0 and basis.m_filter == 0

    def run(n):
        P, F = static_cap_gram(chart, grid, n, radial)
        pts = chart.points(grid.nodes)
        U = modelgeom.trace_matrix(basis.modes, pts)
        wq = grid.weighted_weights * chart.measure(grid.nodes, 1.0)
        B = (P * wq[:, None]).T @ U
        # orthonormalize the test space for conditioning
        G = (P * grid.weighted_weights[:, None]).T @ P
        try:
            Lg = np.linalg.cholesky(G)
        except np.linalg.LinAlgError:
            raise SolverError(f"{n} test functions exceed the resolution of the cap quadrature") from None
        T = np.linalg.inv(Lg)
        B = T @ B
        F = T @ F @ T.T
        diag = {}
        if constraint == "flexibility":
            pos = lams > 0
            Fres = F - (B[:, pos] / lams[pos]) @ B[:, pos].T
            Fres = 0.5 * (Fres + Fres.T)
            ev = np.linalg.eigvalsh(Fres)
            diag["flex_min_eig"] = float(ev[0])
            diag["flex_cond"] = float(ev[-1] / ev[0]) if ev[0] > 0 else float("inf")
            if ev[0] <= 0:
                raise SolverError("residual flexibility is not positive definite; increase the cap quadrature")
            cf = cho_factor(Fres)
            K = np.diag(lams) + B.T @ cho_solve(cf, B)
            vals = eigh(K, eigvals_only=True, subset_by_index=[0, j - 1])
        elif constraint == "nullspace":
            Z = null_space(B)
            if Z.shape[1] != len(basis) - B.shape[0]:
                raise SolverError("constraint rows are rank deficient")
            K = Z.T @ (lams[:, None] * Z)
            vals = eigh(0.5 * (K + K.T), eigvals_only=True, subset_by_index=[0, j - 1])
        elif constraint == "penalty":
            tau = 1e8 * lams.max() / max(np.linalg.norm(B, 2) ** 2, 1e-300)
            K = np.diag(lams) + tau * B.T @ B
            vals = eigh(K, eigvals_only=True, subset_by_index=[0, j - 1])
        else:
            raise ValueError(f"unknown constraint method {constraint!r}")
        return float(vals[j - 1]), diag

    lam, diag = run(n_constraints)
    rel = float("nan")
    if check_doubling:
        try:
            lam2, _ = run(2 * n_constraints)
        except SolverError as exc:
            diag["doubling_error"] = str(exc)
        else:
            rel = abs(lam2 - lam) / max(abs(lam - lam_j), 1e-300)
            diag["lambda_doubled"] = lam2
    diag.update(constraint=constraint, grid=grid.resolution)
    return ShiftSample(eps, a, j, lam, "galerkin", float(lam_j), basis.l_max, basis.n_max,
                       n_constraints, rel, diag)


class _SecularSystem:
    """Cap operators for the secular equation at fixed ``(eps, a, j)``."""

    def __init__(self, basis, eps, a, j, grid, form, H=1.0, dnu_phi=0.0, kappa=(1.0, 1.0), force=(0.0, 0.0)):
        self.basis = basis
        self.eps, self.a, self.j = eps, a, j
        self.grid = grid
        self.form = form
        self.mode = greens._split_mode(basis, j)
        self.chart = modelgeom.cap_chart(eps, a)
        self.pts = self.chart.points(grid.nodes)
        self.u = modelgeom.trace_matrix([self.mode], self.pts)[:, 0]
        # the exact form carries the chart Jacobian in the pole projection
        self.u_test = self.u * self.chart.jacobian(grid.nodes) if form == "exact" else self.u
        cosg = np.clip(self.pts @ self.pts.T, -1.0, 1.0)
        cr = np.linalg.norm(np.cross(self.pts[:, None, :], self.pts[None, :, :]), axis=-1)
        self.gamma = np.arctan2(cr, cosg)
        self.cosg = np.cos(self.gamma)
        self.gamma_max = float(self.gamma.max()) + 1e-3
        pw = grid.plain_weights
        self.La = diskops.assemble("La", a, grid)
        self.K_base = None
        if form == "expansion":
            s = H - dnu_phi
            RLog = diskops.assemble("RLog", a, grid).matrix
            RI = diskops.assemble("RI", a, grid).matrix
            R = -(s / (4 * math.pi)) * (math.log(eps) * RI + RLog)
            if kappa[0] != kappa[1]:
                R += (kappa[0] - kappa[1]) / (16 * math.pi) * diskops.assemble("RInf", a, grid).matrix
            if tuple(force) != (0.0, 0.0):
                R += diskops.assemble("RF", a, grid, force).matrix / (4 * math.pi)
            # M = La + (2 pi / eps) eps^2 (R + R_lambda)
            self.K_base = self.La.matrix + 2 * math.pi * eps * R
        elif form == "exact":
            self.K_base = self._static_operator()
        else:
            raise ValueError(f"unknown secular form {form!r}")
        self.pw = pw

    def _static_operator(self):
        """``(2 pi / eps) * a * int N0(x(t), x(s)) J(s) f(s) ds`` with singularity subtraction."""
        chart, grid, a = self.chart, self.grid, self.a
        jac = chart.jacobian(grid.nodes)
        g = np.where(self.gamma > 0, self.gamma, 1.0)
        K = np.where(self.gamma > 0, greens.static_kernel(g), 0.0)
        K = a * K * jac[None, :]
        np.fill_diagonal(K, 0.0)
        offsum = K @ grid.weighted_weights

        def integrand(t, s1, s2, rho):
            x = chart.points(t)
            sh = s1.shape
            flat = np.column_stack([s1.ravel(), s2.ravel()])
            y = chart.points(flat).reshape(sh + (3,))
            xb = x[:, None, None, :]
            cr = np.linalg.norm(np.cross(np.broadcast_to(xb, y.shape), y), axis=-1)
            gam = np.arctan2(cr, np.sum(xb * y, axis=-1))
            kern = np.where(gam > 0, greens.static_kernel(np.where(gam > 0, gam, 1.0)), 0.0)
            return a * kern * chart.jacobian(flat).reshape(sh) * rho

        D = diskops.polar_integrate(grid.nodes, integrand)
        M = K * grid.plain_weights[None, :]
        M[np.diag_indices_from(M)] = (D - offsum) / grid.rim_weight
        return 2 * math.pi * self.eps * M

    def matrix(self, lam):
        dyn = greens.DynamicTable(self.basis.l_max, lam, self.mode, self.gamma_max)
        if self.form == "expansion":
            Rk = greens.regular_kernel(self.cosg, dyn)
        else:
            Rk = dyn(self.cosg)
            Rk = Rk * self.chart.jacobian(self.grid.nodes)[None, :]
        return self.K_base + 2 * math.pi * self.eps * self.a * Rk * self.pw[None, :]

    def secular(self, lam):
        M = self.matrix(lam)
        psi = diskops.solve_density(M, self.grid, self.u)
        q = float(self.pw @ (psi * self.u_test))
        return 1.0 + 2 * math.pi * self.a * self.eps * q / (self.mode.lam - lam)

    def first_order(self):
        psi = diskops.solve_density(self.La.matrix, self.grid, self.u)
        return 2 * math.pi * self.a * self.eps * float(self.pw @ (psi * self.u))


def solve_secular(basis: SpectralBasis, eps: float, a: float, j: int, grid: diskops.DiskGrid | None = None,
                  form: str = "expansion", order: int = 2, H: float = 1.0) -> ShiftSample:
    """Perturbed eigenvalue from the scalar secular equation.

    Parameters
    ----------
    basis : SpectralBasis
        Supplies the target mode and the exactly summed degrees of the
        Green's function (``basis.l_max``).
    grid : DiskGrid, optional
        Disk grid for the cap operators; default ``20 x 40``.
    form : {"expansion", "exact"}
    order : {1, 2}
        ``1`` drops every correction and returns the one-term root.
    H : float
        Mean curvature used in the log term of the expansion form.
    """
    eps = _check_eps(eps)
    a = diskops._check_aspect(a)
    if not 1 <= j <= len(basis):
        raise SolverError(f"truncation holds {len(basis)} modes, below the target index {j}")
    grid = grid or diskops.build_grid(20, 40)
    sysm = _SecularSystem(basis, eps, a, j, grid, form, H=H)
    lam_j = sysm.mode.lam
    first = sysm.first_order()
    diag = {"first_order_shift": first, "form": form, "grid": grid.resolution}
    if order == 1:
        return ShiftSample(eps, a, j, lam_j + first, "secular", lam_j, basis.l_max, basis.n_max, 0, 0.0, diag)

    lams = basis.lams
    above = lams[lams > lam_j + 1e-12]
    cap = lam_j + 0.5 * (above[0] - lam_j) if above.size else np.inf
    lo = lam_j + 1e-6 * first
    hi = min(lam_j + 2.0 * first, cap)
    s_lo = sysm.secular(lo)
    s_hi = sysm.secular(hi)
    # s -> -inf as lambda decreases to lambda_j and s -> 1 far above it
    while s_hi < 0 and hi < cap:
        hi = min(lam_j + 2.0 * (hi - lam_j), cap)
        s_hi = sysm.secular(hi)
    if not (s_lo < 0 < s_hi):
        raise SolverError(f"no sign change of the secular function on [{lo:.6g}, {hi:.6g}]: "
                          f"s = ({s_lo:.3g}, {s_hi:.3g})")
    # a few bisection steps, then Brent's secant/inverse-quadratic iteration
    for _ in range(4):
        mid = 0.5 * (lo + hi)
        if sysm.secular(mid) < 0:
            lo = mid
        else:
            hi = mid
    root = brentq(sysm.secular, lo, hi, xtol=1e-14 * max(1.0, hi), rtol=1e-13)
    res = abs(sysm.secular(root))
    return ShiftSample(eps, a, j, float(root), "secular", lam_j, basis.l_max, basis.n_max, 0, res, diag)


def shift_table(eps_list, a: float, j: int, methods=("galerkin", "secular"), l_max: int = 40, n_max: int = 10,
                n_constraints: int = 6, grid=None, secular_form: str = "expansion", basis=None):
    """Run the solvers over a decreasing list of cap sizes.

    Failures for individual ``eps`` are collected in the second return
    value instead of aborting the sweep.

    Returns
    -------
    samples : list of ShiftSample
    failures : list of dict
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        raise ValueError("empty eps list")
    if len(set(eps_list)) != len(eps_list):
        raise ValueError("duplicate eps values")
    if any(e2 >= e1 for e1, e2 in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be strictly decreasing")
    for e in eps_list:
        _check_eps(e)
    methods = tuple(methods)
    for m in methods:
        if m not in ("galerkin", "secular"):
            raise ValueError(f"unknown method {m!r}")
    if basis is None:
        basis = modelgeom.build_basis(l_max, n_max, 0 if a == 1.0 else "even")
    samples, failures = [], []
    for m in methods:
        for e in eps_list:
            try:
                if m == "galerkin":
                    samples.append(solve_galerkin(basis, e, a, j, n_constraints))
                else:
                    samples.append(solve_secular(basis, e, a, j, grid, form=secular_form))
            except (SolverError, diskops.ConditionError, ValueError, np.linalg.LinAlgError) as exc:
                failures.append({"method": m, "epsilon": e, "error": str(exc)})
    return samples, failures


def write_csv(samples, path_or_file, header_lines=()):
    """Write samples with 17 significant digits and '.' decimals."""
    def fmt(v):
        if isinstance(v, float):
            return format(v, ".17g")
        return str(v)

    own = isinstance(path_or_file, str)
    fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
    try:
        for line in header_lines:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        for s in samples:
            r = s.row()
            wr.writerow([fmt(r[c]) for c in CSV_COLUMNS])
    finally:
        if own:
            fh.close()
