"""Neumann spectral data of the unit ball and charts on its boundary sphere.

Eigenfunctions are ``u = N j_l(x_ln r) Y_lm(theta, phi)`` with ``x_ln`` a
positive root of ``j_l'`` and real orthonormal spherical harmonics ``Y_lm``;
the constant mode is ``(l, m, n) = (0, 0, 0)`` with ``u = (3 / (4 pi))^(1/2)``.
"""

from __future__ import annotations

import math
import os
import stat
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout
from scipy.optimize import brentq
from scipy.special import spherical_jn, sph_harm_y

CACHE_ENV = "CAPSHIFT_CACHE_DIR"
CACHE_VERSION = 1
CACHE_NAME = f"neumann_roots_v{CACHE_VERSION}.txt"
CACHE_HEADER = f"# capshift neumann-roots format {CACHE_VERSION}: l n root"
LOCK_TIMEOUT = 30.0

# Curvatures of the unit sphere with inward normal.
SPHERE_KAPPA = (1.0, 1.0)


class RootError(RuntimeError):
    pass


class CacheError(RuntimeError):
    """Cache failure; ``kind`` is "readonly", "busy" or "io"."""

    def __init__(self, message, kind="io"):
        super().__init__(message)
        self.kind = kind


def _writable(directory: Path) -> bool:
    # permission bits are honoured even for privileged users
    try:
        mode = directory.stat().st_mode
    except OSError:
        return False
    return bool(mode & stat.S_IWUSR) and os.access(directory, os.W_OK)


def _djl(l, x):
    return spherical_jn(l, x, derivative=True)


def _scan_roots(l: int, count: int) -> list:
    # zeros of j_l' with j_l != 0 satisfy x^2 > l(l+1) (sign of j_l'' from the ODE)
    step = math.pi / 8.0
    x0 = math.sqrt(l * (l + 1)) if l > 0 else 1e-3
    roots = []
    xa, fa = x0, _djl(l, x0)
    # the n-th zero sits near n pi + l pi / 2 once x is well past l
    limit = max(x0, (count + 2) * math.pi + 0.5 * math.pi * (l + 1)) + 10.0
    while len(roots) < count:
        xb = xa + step
        fb = _djl(l, xb)
        if fa == 0.0:
            roots.append(xa)
        elif fa * fb < 0:
            roots.append(brentq(lambda x: _djl(l, x), xa, xb, xtol=1e-15, rtol=4 * np.finfo(float).eps))
        xa, fa = xb, fb
        if xa > limit and len(roots) < count:
            raise RootError(f"bracketing failed for l={l}: found {len(roots)} of {count} roots below x={xa:.6g}")
    return roots


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "capshift"


class RootCache:
    """Persistent table of Neumann roots, one ``l n root`` line each.

    Readers never lock; writers take an exclusive file lock with a bounded
    wait and replace the file atomically.
    """

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory is not None else default_cache_dir()
        self.path = self.directory / CACHE_NAME
        self._mem: dict = {}

    def load(self) -> dict:
        table = {}
        if not self.path.exists():
            return table
        with open(self.path, encoding="ascii") as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != CACHE_HEADER:
            # stale or foreign format: ignore and let the caller rebuild
            return table
        for line in lines[1:]:
            if not line.strip():
                continue
            l, n, root = line.split()
            table[(int(l), int(n))] = float(root)
        return table

    @staticmethod
    def _format(table: dict) -> str:
        rows = [CACHE_HEADER]
        for (l, n) in sorted(table):
            rows.append(f"{l} {n} {table[(l, n)]:.17g}")
        return "\n".join(rows) + "\n"

    def write(self, table: dict, merge: bool = True):
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CacheError(f"cannot create cache directory {self.directory}: {exc}", kind="readonly") from exc
        if not _writable(self.directory):
            raise CacheError(f"cache directory {self.directory} is not writable", kind="readonly")
        lock = FileLock(str(self.path) + ".lock", timeout=LOCK_TIMEOUT)
        try:
            with lock:
                full = self.load() if merge else {}
                full.update(table)
                tmp = self.path.with_suffix(".tmp")
                with open(tmp, "w", encoding="ascii", newline="\n") as fh:
                    fh.write(self._format(full))
                os.replace(tmp, self.path)
        except Timeout as exc:
            raise CacheError(f"cache lock {lock.lock_file} busy for more than {LOCK_TIMEOUT} s", kind="busy") from exc
        except OSError as exc:
            raise CacheError(f"cannot write cache file {self.path}: {exc}") from exc

    def roots(self, l: int, count: int) -> list:
        key = (l, count)
        if key in self._mem:
            return self._mem[key]
        table = self.load()
        have = [table.get((l, n)) for n in range(1, count + 1)]
        if all(h is not None for h in have):
            out = have
        else:
            out = _scan_roots(l, count)
            new = {(l, n): r for n, r in enumerate(out, start=1)}
            new[(0, 0)] = 0.0
            try:
                self.write(new)
            except CacheError:
                pass  # a read-only cache only costs recomputation
        self._mem[key] = out
        return out


def rebuild_cache(l_max: int, n_max: int, directory=None) -> Path:
    """Regenerate the root table for ``l <= l_max``, ``n <= n_max`` from scratch."""
    cache = RootCache(directory)
    table = {(0, 0): 0.0}
    for l in range(l_max + 1):
        for n, r in enumerate(_scan_roots(l, n_max), start=1):
            table[(l, n)] = r
    cache.write(table, merge=False)
    return cache.path


_DEFAULT_CACHE: RootCache | None = None


def bessel_neumann_roots(l: int, count: int, cache: RootCache | None = None, use_cache: bool = True) -> list:
    """First ``count`` positive roots of ``j_l'``.

    The trivial root ``x = 0`` of ``j_0'`` (the constant mode) is excluded.
    """
    global _DEFAULT_CACHE
    l = int(l)
    count = int(count)
    if l < 0 or count < 1:
        raise ValueError(f"need l >= 0 and count >= 1, got l={l}, count={count}")
    if not use_cache:
        return _scan_roots(l, count)
    if cache is None:
        if _DEFAULT_CACHE is None or _DEFAULT_CACHE.directory != default_cache_dir():
            _DEFAULT_CACHE = RootCache()
        cache = _DEFAULT_CACHE
    return cache.roots(l, count)


@dataclass(frozen=True)
class Mode:
    """One Neumann eigenmode ``N j_l(root r) Y_lm``."""

    l: int
    m: int
    n: int
    root: float
    lam: float
    norm: float

    @property
    def is_constant(self) -> bool:
        return self.n == 0


def _radial_norm(l: int, x: float) -> float:
    # int_0^1 j_l(x r)^2 r^2 dr = j_l(x)^2 (1 - l(l+1)/x^2) / 2 at a root of j_l'
    jl = spherical_jn(l, x)
    return 1.0 / math.sqrt(0.5 * jl * jl * (1.0 - l * (l + 1) / (x * x)))


def constant_mode() -> Mode:
    return Mode(0, 0, 0, 0.0, 0.0, math.sqrt(3.0))


@dataclass(frozen=True)
class SpectralBasis:
    modes: tuple
    l_max: int
    n_max: int
    m_filter: object = None

    def __len__(self):
        return len(self.modes)

    @property
    def lams(self) -> np.ndarray:
        return np.array([m.lam for m in self.modes])

    def mode(self, j: int) -> Mode:
        """Mode with 1-based index ``j`` in eigenvalue order."""
        if not 1 <= j <= len(self.modes):
            raise IndexError(f"mode index {j} outside 1..{len(self.modes)}")
        return self.modes[j - 1]


def _m_values(l, m_filter):
    if m_filter is None:
        return range(-l, l + 1)
    if m_filter == 0:
        return (0,)
    if m_filter == "even":
        return range(0, l + 1, 2)
    raise ValueError(f"unknown m_filter {m_filter!r}; use None, 0 or 'even'")


def build_basis(l_max: int, n_max: int, m_filter=None, cache: RootCache | None = None,
                use_cache: bool = True) -> SpectralBasis:
    """All modes with ``l <= l_max`` and ``1 <= n <= n_max`` plus the constant.

    Parameters
    ----------
    m_filter : None, 0 or "even"
        ``0`` keeps axisymmetric modes; ``"even"`` keeps cosine-type modes
        with even ``m``, the sector invariant under both coordinate
        reflections of the tangent plane at the pole.
    """
    l_max = int(l_max)
    n_max = int(n_max)
    if l_max < 0 or n_max < 0:
        raise ValueError("l_max and n_max must be non-negative")
    list(_m_values(0, m_filter))
    modes = [constant_mode()]
    if n_max > 0:
        for l in range(l_max + 1):
            roots = bessel_neumann_roots(l, n_max, cache=cache, use_cache=use_cache)
            for n, x in enumerate(roots, start=1):
                nrm = _radial_norm(l, x)
                for m in _m_values(l, m_filter):
                    modes.append(Mode(l, m, n, x, x * x, nrm))
    modes.sort(key=lambda md: (md.lam, md.l, md.n, md.m))
    return SpectralBasis(tuple(modes), l_max, n_max, m_filter)


def real_sph_harm(l: int, m: int, theta, phi) -> np.ndarray:
    """Real orthonormal spherical harmonic; ``theta`` is the polar angle."""
    if m == 0:
        return np.real(sph_harm_y(l, 0, theta, phi))
    y = sph_harm_y(l, abs(m), theta, phi)
    s = math.sqrt(2.0) * (-1.0) ** m
    return s * (np.real(y) if m > 0 else np.imag(y))


def _spherical(points):
    p = np.atleast_2d(np.asarray(points, dtype=float))
    r = np.linalg.norm(p, axis=1)
    theta = np.arccos(np.clip(p[:, 2] / np.where(r > 0, r, 1.0), -1.0, 1.0))
    phi = np.arctan2(p[:, 1], p[:, 0])
    return r, theta, phi


def mode_eval(mode: Mode, points) -> np.ndarray:
    """Eigenfunction values at points of the closed ball."""
    r, theta, phi = _spherical(points)
    if np.any(r > 1.0 + 1e-12):
        raise ValueError("point outside the unit ball")
    if mode.is_constant:
        return np.full(r.shape, math.sqrt(3.0 / (4.0 * math.pi)))
    return mode.norm * spherical_jn(mode.l, mode.root * r) * real_sph_harm(mode.l, mode.m, theta, phi)


def boundary_trace(mode: Mode, points) -> np.ndarray:
    """Eigenfunction values on the unit sphere."""
    r, _, _ = _spherical(points)
    if np.any(np.abs(r - 1.0) > 1e-10):
        raise ValueError("point not on the unit sphere")
    return mode_eval(mode, points)


def trace_matrix(modes, points) -> np.ndarray:
    """Boundary traces of many modes, shape ``(len(points), len(modes))``."""
    _, theta, phi = _spherical(points)
    out = np.empty((theta.size, len(modes)))
    ycache: dict = {}
    for k, md in enumerate(modes):
        if md.is_constant:
            out[:, k] = math.sqrt(3.0 / (4.0 * math.pi))
            continue
        key = (md.l, md.m)
        if key not in ycache:
            ycache[key] = real_sph_harm(md.l, md.m, theta, phi)
        out[:, k] = md.norm * spherical_jn(md.l, md.root) * ycache[key]
    return out


def radial_factors(l_max: int, omega2) -> np.ndarray:
    """Per-degree boundary factors ``S_l = j_l(k) / (k j_l'(k))``, ``k^2 = omega2``.

    ``S_l`` sums the boundary traces of all radial modes of degree ``l``:
    ``sum_n c_ln / (x_ln^2 - omega2)`` with the constant mode included for
    ``l = 0``.  Evaluated by the backward ratio recurrence
    ``t_{l-1} = omega2 / (2l + 1 - t_l)``, ``S_l = 1 / (l - t_l)``, which is
    real and stable for either sign of ``omega2``.

    Returns
    -------
    ndarray, shape (l_max + 1,) or (len(omega2), l_max + 1)
    """
    mu = np.atleast_1d(np.asarray(omega2, dtype=float))
    top = int(l_max) + 40 + int(4.0 * math.sqrt(np.max(np.abs(mu)) + 1.0))
    t = mu / (2.0 * top + 3.0)
    out = np.empty((mu.size, l_max + 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        for l in range(top, -1, -1):
            if l <= l_max:
                out[:, l] = 1.0 / (l - t)
            t = mu / (2.0 * l + 1.0 - t)
    return out[0] if np.ndim(omega2) == 0 else out


def trace_weight(l: int, x: float) -> float:
    """``c_ln = N^2 j_l(x)^2``: squared trace of one radial mode per unit ``Y``."""
    if x == 0.0:
        return 3.0
    return 2.0 * x * x / (x * x - l * (l + 1))


@dataclass(frozen=True)
class CapChart:
    """Rescaled geodesic chart of a cap centred at the north pole.

    The disk point ``t`` maps to ``exp_N(eps t1 E1 + eps a t2 E2)`` with
    ``E1, E2`` the x and y axes.
    """

    eps: float
    a: float

    center = np.array([0.0, 0.0, 1.0])

    def tangent(self, t) -> np.ndarray:
        t = np.atleast_2d(np.asarray(t, dtype=float))
        return self.eps * np.column_stack([t[:, 0], self.a * t[:, 1]])

    def geodesic_radius(self, t) -> np.ndarray:
        v = self.tangent(t)
        return np.hypot(v[:, 0], v[:, 1])

    def points(self, t) -> np.ndarray:
        v = self.tangent(t)
        rho = np.hypot(v[:, 0], v[:, 1])
        sinc = np.where(rho > 0, np.sin(rho) / np.where(rho > 0, rho, 1.0), 1.0)
        return np.column_stack([v[:, 0] * sinc, v[:, 1] * sinc, np.cos(rho)])

    def jacobian(self, t) -> np.ndarray:
        """Area factor relative to ``a eps^2 dt`` (``sin(rho) / rho`` on the sphere)."""
        rho = self.geodesic_radius(t)
        return np.where(rho > 0, np.sin(rho) / np.where(rho > 0, rho, 1.0), 1.0)

    def measure(self, t, weights) -> np.ndarray:
        """Boundary-measure weights ``a eps^2 J(t) * weights``."""
        return self.a * self.eps**2 * self.jacobian(t) * np.asarray(weights)


def cap_chart(eps: float, a: float = 1.0) -> CapChart:
    eps = float(eps)
    a = float(a)
    if not (0.0 < eps < math.pi / 4):
        raise ValueError(f"eps must lie in (0, pi/4), got {eps}")
    if not (0.0 < a <= 1.0):
        raise ValueError(f"aspect a must lie in (0, 1], got {a}")
    return CapChart(eps, a)


def great_circle_distance(x, y) -> np.ndarray:
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    c = np.cross(x, y)
    return np.arctan2(np.linalg.norm(c, axis=-1), np.sum(x * y, axis=-1))


def sphere_mean_curvature(convention: str = "mean") -> float:
    """Mean curvature of the unit sphere: average (1) or sum (2) of the principal curvatures."""
    if convention == "mean":
        return 0.5 * sum(SPHERE_KAPPA)
    if convention == "sum":
        return float(sum(SPHERE_KAPPA))
    raise ValueError(f"unknown curvature convention {convention!r}")
