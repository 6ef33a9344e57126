"""Quadrature on the unit disk and the boundary-layer integral operators.

Every operator acts on densities sampled at the nodes of a :class:`DiskGrid`
and has a kernel of the form ``a * k(t - s)`` with the anisotropic distance

    rho_a(t - s) = ((t1 - s1)**2 + a**2 (t2 - s2)**2) ** 0.5 .

The kinds are

========  ===================================================
``La``    ``a / rho_a``
``RLog``  ``a * log(rho_a)``
``RInf``  ``a * ((t1-s1)**2 - a**2 (t2-s2)**2) / rho_a**2``
``RF``    ``a * (F1 (t1-s1) + a F2 (t2-s2)) / rho_a``
``RI``    ``a``
========  ===================================================

Densities of interest blow up like ``w(s) = (1 - |s|^2)^(-1/2)`` at the rim,
so the grid carries two weight sets: plain weights for smooth integrands and
weights that absorb ``w``.  Singular and direction-dependent kernels are
handled by singularity subtraction: writing ``f = w g``, the row ``p`` is

    sum_q a k_pq ww_q (g_q - g_p) + g_p D_p ,

where ``D_p = a * int k(t_p - s) w(s) ds`` is integrated in polar
coordinates centred on the node.  The substitution ``rho + b = sqrt(q) sin psi``
turns ``w(s) rho d rho`` into ``rho d psi`` and removes the rim singularity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack, lu_factor, lu_solve

KINDS = ("La", "RLog", "RInf", "RF", "RI")

# Rule sizes for the node-centred polar integrals.
_N_ARC = 48
_N_PSI = 24
_ROW_BLOCK = 256


class ConditionError(RuntimeError):
    """Raised when a dense solve is too ill-conditioned to be trusted."""

    def __init__(self, message, cond=None):
        super().__init__(message)
        self.cond = cond


@dataclass(frozen=True, eq=False)
class DiskGrid:
    """Tensor quadrature grid on the open unit disk.

    Radial levels are ``r_i = sin(phi_i)`` with ``phi_i`` Gauss-Legendre
    nodes on ``[0, pi/2]``; the Jacobian ``r dr / sqrt(1 - r^2) = sin(phi) dphi``
    is smooth, so the weighted rule is exact for the rim singularity class.
    Angles are uniform and offset by half a step.

    Attributes
    ----------
    nodes : ndarray, shape (N, 2)
    plain_weights : ndarray, shape (N,)
        Weights for ``int f(t) dt``; they sum to ``pi``.
    weighted_weights : ndarray, shape (N,)
        Weights for ``int g(t) w(t) dt``; they sum to ``2 pi``.
    resolution : tuple of int
        ``(radial, angular)``.
    """

    nodes: np.ndarray
    plain_weights: np.ndarray
    weighted_weights: np.ndarray
    resolution: tuple
    radii: np.ndarray = field(repr=False)
    angles: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def rim_weight(self) -> np.ndarray:
        """``w(t) = (1 - |t|^2)^(-1/2)`` at the nodes."""
        return self.weighted_weights / self.plain_weights

    def radius(self) -> np.ndarray:
        return np.hypot(self.nodes[:, 0], self.nodes[:, 1])


def build_grid(radial: int, angular: int) -> DiskGrid:
    """Build the tensor disk grid.

    Parameters
    ----------
    radial : int
        Number of Gauss-Legendre levels, at least 2.
    angular : int
        Number of uniform angles, at least 4.  Multiples of 4 make the grid
        invariant under the swap ``t1 <-> t2``.
    """
    radial = int(radial)
    angular = int(angular)
    if radial < 2 or angular < 4:
        raise ValueError(f"grid needs radial >= 2 and angular >= 4, got ({radial}, {angular})")
    x, wx = np.polynomial.legendre.leggauss(radial)
    phi = 0.25 * np.pi * (x + 1.0)
    wphi = 0.25 * np.pi * wx
    r = np.sin(phi)
    theta = 2.0 * np.pi * (np.arange(angular) + 0.5) / angular
    dth = 2.0 * np.pi / angular

    rr, tt = np.meshgrid(r, theta, indexing="ij")
    nodes = np.column_stack([(rr * np.cos(tt)).ravel(), (rr * np.sin(tt)).ravel()])
    ww = np.repeat(wphi * np.sin(phi) * dth, angular)
    pw = np.repeat(wphi * np.sin(phi) * np.cos(phi) * dth, angular)
    return DiskGrid(
        nodes=nodes,
        plain_weights=pw,
        weighted_weights=ww,
        resolution=(radial, angular),
        radii=r,
        angles=theta,
    )


@dataclass(frozen=True, eq=False)
class KernelOp:
    """Dense discretization of one disk operator.

    ``matrix @ f`` gives the operator applied to node values ``f``; off the
    diagonal ``matrix[p, q] = a k(t_p - t_q) * plain_weights[q]``.
    """

    grid: DiskGrid
    matrix: np.ndarray
    kind: str
    aspect: float
    force_tangent: tuple | None = None

    def symmetrized(self) -> np.ndarray:
        """``W^(1/2) M W^(-1/2)`` with ``W`` the plain weights."""
        s = np.sqrt(self.grid.plain_weights)
        return self.matrix * s[:, None] / s[None, :]


def _check_aspect(a) -> float:
    a = float(a)
    if not (0.0 < a <= 1.0) or not np.isfinite(a):
        raise ValueError(f"aspect a must lie in (0, 1], got {a}")
    return a


def _angular_part(kind, a, cos_al, sin_al, force):
    """Direction-only factor of the kernel, or None if it is not separable."""
    rho_a = np.sqrt(cos_al**2 + (a * sin_al) ** 2)
    if kind == "RInf":
        return (cos_al**2 - (a * sin_al) ** 2) / rho_a**2
    if kind == "RF":
        return (force[0] * cos_al + a * force[1] * sin_al) / rho_a
    if kind == "RI":
        return np.ones_like(cos_al)
    return None


def _arc_rule(nodes):
    """Per-node angular rule clustered at the two tangential directions.

    For a node close to the rim the chord length to the boundary changes on
    the angular scale ``sqrt(1 - |t|^2)`` around the tangential directions.
    The circle is cut into four quarter arcs that end there, and each arc is
    graded with a sinh map.  The rule is invariant under ``alpha -> alpha + pi``.
    """
    x, wx = np.polynomial.legendre.leggauss(_N_ARC)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * wx
    r = np.hypot(nodes[:, 0], nodes[:, 1])
    base = np.arctan2(nodes[:, 1], nodes[:, 0])
    c = np.clip(1.0 - r**2, 1e-300, None)
    delta = np.clip(np.sqrt(c) / np.maximum(r, 1e-300), 1e-14, 1.0)
    big = np.arcsinh(0.5 * np.pi / delta)
    off = delta[:, None] * np.sinh(big[:, None] * u[None, :])
    doff = delta[:, None] * big[:, None] * np.cosh(big[:, None] * u[None, :]) * wu[None, :]
    # rescale so each arc has length exactly pi/2
    scale = (0.5 * np.pi) / (delta * np.sinh(big))
    off = off * scale[:, None]
    doff = doff * scale[:, None]
    tang = base + 0.5 * np.pi
    arcs = [tang[:, None] - off, tang[:, None] + off, tang[:, None] + np.pi - off, tang[:, None] + np.pi + off]
    alpha = np.concatenate(arcs, axis=1)
    walpha = np.concatenate([doff] * 4, axis=1)
    return alpha, walpha


def _polar_rays(t):
    """Polar coordinates about each node in ``t``: angles, weights and ray geometry."""
    alpha, walpha = _arc_rule(t)
    ca, sa = np.cos(alpha), np.sin(alpha)
    b = t[:, 0:1] * ca + t[:, 1:2] * sa
    c = 1.0 - (t[:, 0:1] ** 2 + t[:, 1:2] ** 2)
    sq = np.sqrt(b**2 + c)
    psi0 = np.arcsin(np.clip(b / sq, -1.0, 1.0))
    span = 0.5 * np.pi - psi0
    return ca, sa, walpha, b, sq, psi0, span


def _ray_points(t, ca, sa, b, sq, psi0, span):
    xg, wg = np.polynomial.legendre.leggauss(_N_PSI)
    v = 0.5 * (xg + 1.0)
    wv = 0.5 * wg
    # psi = psi0 + span v^2 softens the rho log rho endpoint behaviour
    psi = psi0[..., None] + span[..., None] * v**2
    rho = np.maximum(sq[..., None] * np.sin(psi) - b[..., None], 0.0)
    jac = 2.0 * span[..., None] * v * wv
    s1 = t[:, 0:1, None] + rho * ca[..., None]
    s2 = t[:, 1:2, None] + rho * sa[..., None]
    return s1, s2, rho, jac


def polar_integrate(nodes, integrand, chunk: int = 32) -> np.ndarray:
    """Integrate ``int k(t, s) w(s) ds`` over the disk for every node ``t``.

    Parameters
    ----------
    nodes : ndarray, shape (N, 2)
    integrand : callable
        ``integrand(t, s1, s2, rho)`` with ``t`` of shape ``(B, 2)`` and the
        ray samples of shape ``(B, A, V)``; returns ``k(t, s) * rho`` (the
        polar area element's factor ``rho`` included, the rim weight ``w``
        excluded) with shape ``(B, A, V)`` or ``(B, A, V, K)`` for ``K``
        simultaneous integrands.  Kernels up to ``1 / |t - s|`` are allowed.

    Returns
    -------
    ndarray, shape (N,) or (N, K)
    """
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    out = None
    for lo in range(0, nodes.shape[0], chunk):
        t = nodes[lo:lo + chunk]
        ca, sa, walpha, b, sq, psi0, span = _polar_rays(t)
        s1, s2, rho, jac = _ray_points(t, ca, sa, b, sq, psi0, span)
        vals = np.asarray(integrand(t, s1, s2, rho))
        if vals.ndim == 4:
            res = np.einsum("bavk,bav,ba->bk", vals, jac, walpha)
        else:
            res = np.einsum("bav,bav,ba->b", vals, jac, walpha)
        if out is None:
            out = np.empty((nodes.shape[0],) + res.shape[1:])
        out[lo:lo + chunk] = res
    return out


def polar_self_integrals(nodes, a, kind, force=None, density=None):
    """Integrate ``a k(t - s) w(s) [density(s)]`` over the disk for each node.

    Parameters
    ----------
    nodes : ndarray, shape (N, 2)
        Points in the open disk (centres of the polar coordinates).
    a : float
        Aspect ratio.
    kind : str
        One of :data:`KINDS`.
    force : sequence of 2 floats, optional
        Tangential force for ``RF``.
    density : callable, optional
        Smooth factor ``g(s1, s2)``; defaults to 1, in which case the radial
        integrals are done in closed form where possible.

    Returns
    -------
    ndarray, shape (N,)
    """
    a = _check_aspect(a)
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    if density is not None:
        def integrand(t, s1, s2, rho):
            d1 = t[:, 0:1, None] - s1
            d2 = t[:, 1:2, None] - s2
            cosal = -d1 / np.where(rho > 0, rho, 1.0)
            sinal = -d2 / np.where(rho > 0, rho, 1.0)
            rho_a = np.sqrt(cosal**2 + (a * sinal) ** 2)
            g = density(s1, s2)
            if kind == "La":
                k = 1.0 / rho_a
            elif kind == "RLog":
                safe = np.where(rho > 0, rho, 1.0)
                k = np.where(rho > 0, rho * np.log(safe * rho_a), 0.0)
            else:
                k = rho * _angular_part(kind, a, cosal, sinal, force)
            return a * g * k
        return polar_integrate(nodes, integrand)

    out = np.empty(nodes.shape[0])
    for lo in range(0, nodes.shape[0], 64):
        t = nodes[lo:lo + 64]
        ca, sa, walpha, b, sq, psi0, span = _polar_rays(t)
        rho_a = np.sqrt(ca**2 + (a * sa) ** 2)
        ang = _angular_part(kind, a, ca, sa, force)
        if kind == "La":
            inner = span / rho_a
        else:
            # int rho dpsi in closed form
            mom = sq * np.cos(psi0) - b * span
            if ang is not None:
                inner = ang * mom
            else:
                _, _, rho, jac = _ray_points(t, ca, sa, b, sq, psi0, span)
                rlog = np.where(rho > 0, rho * np.log(np.where(rho > 0, rho, 1.0)), 0.0)
                inner = (rlog * jac).sum(-1) + np.log(rho_a) * mom
        out[lo:lo + 64] = a * (inner * walpha).sum(-1)
    return out


def _kernel_block(kind, a, t, s, force):
    d1 = t[:, 0:1] - s[None, :, 0]
    d2 = t[:, 1:2] - s[None, :, 1]
    r2 = d1 * d1 + (a * d2) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == "La":
            k = 1.0 / np.sqrt(r2)
        elif kind == "RLog":
            k = 0.5 * np.log(r2)
        elif kind == "RInf":
            k = (d1 * d1 - (a * d2) ** 2) / r2
        elif kind == "RF":
            k = (force[0] * d1 + a * force[1] * d2) / np.sqrt(r2)
        else:
            k = np.ones_like(r2)
    return a * k


def assemble(kind: str, a: float, grid: DiskGrid, force_tangent=None) -> KernelOp:
    """Assemble one operator as a dense matrix on ``grid``.

    Parameters
    ----------
    kind : {"La", "RLog", "RInf", "RF", "RI"}
    a : float
        Aspect ratio in ``(0, 1]``.
    grid : DiskGrid
    force_tangent : sequence of 2 floats, optional
        ``(F1, F2)``; required for ``RF``.

    Returns
    -------
    KernelOp
    """
    if kind not in KINDS:
        raise ValueError(f"unknown operator kind {kind!r}; expected one of {KINDS}")
    a = _check_aspect(a)
    force = None
    if kind == "RF":
        if force_tangent is None:
            raise ValueError("RF needs force_tangent=(F1, F2)")
        force = tuple(float(x) for x in force_tangent)
        if len(force) != 2:
            raise ValueError("force_tangent must have two components")
    t = grid.nodes
    n = grid.size
    pw = grid.plain_weights
    ww = grid.weighted_weights
    w = grid.rim_weight

    if kind == "RI":
        mat = np.broadcast_to(a * pw, (n, n)).copy()
        return KernelOp(grid, mat, kind, a, None)
    if kind == "RF" and force == (0.0, 0.0):
        return KernelOp(grid, np.zeros((n, n)), kind, a, force)

    mat = np.empty((n, n))
    offsum = np.empty(n)
    for lo in range(0, n, _ROW_BLOCK):
        hi = min(n, lo + _ROW_BLOCK)
        k = _kernel_block(kind, a, t[lo:hi], t, force)
        idx = np.arange(lo, hi)
        k[idx - lo, idx] = 0.0
        offsum[lo:hi] = k @ ww
        mat[lo:hi] = k * pw[None, :]
    self_int = polar_self_integrals(t, a, kind, force)
    mat[np.arange(n), np.arange(n)] = (self_int - offsum) / w
    return KernelOp(grid, mat, kind, a, force)


def apply(op: KernelOp, f) -> np.ndarray:
    """Apply the discretized operator to node values ``f``."""
    f = np.asarray(f, dtype=float)
    if f.shape != (op.grid.size,):
        raise ValueError(f"node values have shape {f.shape}, grid has {op.grid.size} nodes")
    return op.matrix @ f


def apply_at(op: KernelOp, f, points) -> np.ndarray:
    """Evaluate the operator at off-grid points by the plain node rule.

    Accurate when the points stay away from the nodes; the polar centre
    ``(0, 0)`` qualifies because the plain weights carry a factor ``r``.
    """
    f = np.asarray(f, dtype=float)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    k = _kernel_block(op.kind, op.aspect, pts, op.grid.nodes, op.force_tangent)
    return k @ (op.grid.plain_weights * f)


def solve_density(matrix, grid: DiskGrid, rhs, cond_max: float = 1e12) -> np.ndarray:
    """Solve ``matrix @ psi = rhs`` for a rim-singular density ``psi = w g``.

    The unknowns are the smooth factors ``g``; the reciprocal condition
    number of the scaled system is estimated from its LU factors.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (grid.size,):
        raise ValueError(f"rhs has shape {rhs.shape}, grid has {grid.size} nodes")
    w = grid.rim_weight
    sys_mat = matrix * w[None, :]
    anorm = np.abs(sys_mat).sum(axis=0).max()
    lu, piv = lu_factor(sys_mat, check_finite=True)
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    cond = np.inf if rcond == 0 else 1.0 / rcond
    if info != 0 or not cond <= cond_max:
        raise ConditionError(f"condition estimate {cond:.3e} exceeds bound {cond_max:.1e}", cond)
    g = lu_solve((lu, piv), rhs)
    return w * g


def solve_La(a: float, grid: DiskGrid, rhs, cond_max: float = 1e12, op: KernelOp | None = None) -> np.ndarray:
    """Solve ``L_a psi = rhs`` and return the density ``psi`` at the nodes.

    Parameters
    ----------
    a : float
    grid : DiskGrid
    rhs : array_like, shape (N,)
    cond_max : float
        Refuse to solve above this condition estimate.
    op : KernelOp, optional
        Pre-assembled ``La`` on the same grid and aspect.
    """
    a = _check_aspect(a)
    if op is None:
        op = assemble("La", a, grid)
    elif op.kind != "La" or op.grid is not grid or op.aspect != a:
        raise ValueError("op must be the La operator for the same grid and aspect")
    return solve_density(op.matrix, grid, rhs, cond_max)
