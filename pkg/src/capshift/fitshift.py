"""Least-squares recovery of the shift coefficients from computed tables.

The model is ``shift = A eps + B eps^2 log(eps) + C eps^2`` (natural log).
Rows are weighted by ``1 / eps^2`` in the squared residual, i.e. the fit is
done on ``shift / eps = A + B eps log(eps) + C eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .coeffs import LOG, AsymCoeffs

COND_MAX = 1e10


def _design(eps):
    e = np.asarray(eps, dtype=float)
    return np.column_stack([e, e**2 * LOG(e), e**2])


def _remainder(eps):
    e = np.asarray(eps, dtype=float)
    return e**3 * LOG(e) ** 2


def _as_eps(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError("X must hold a single column of eps values")
        X = X[:, 0]
    if X.ndim != 1:
        raise ValueError("X must be one-dimensional")
    if not np.all(np.isfinite(X)) or np.any((X <= 0) | (X >= 1)):
        raise ValueError("eps values must lie in (0, 1)")
    return X


class ShiftExpansionRegressor(RegressorMixin, BaseEstimator):
    """Weighted linear least squares in the basis ``{eps, eps^2 log eps, eps^2}``.

    Parameters
    ----------
    weighting : {"inverse_square", "none"}
        Weight ``1 / eps^2`` per squared residual, or uniform weights.
    min_span : float
        Required ratio between the largest and smallest ``eps``.

    Attributes
    ----------
    coef_ : ndarray of shape (3,)
        ``(A, B, C)``.
    condition_ : float
        Condition number of the column-scaled weighted design.
    residual_norm_ : float
        Norm of the weighted residual.
    covariance_ : ndarray of shape (3, 3)
        Linear-regression covariance (NaN with no residual degrees of freedom).
    remainder_amplitude_ : float
        Coefficient of ``eps^3 log^2 eps`` explaining the residual.
    remainder_slope_ : float
        Log-log slope of ``|residual|`` against the projected
        ``eps^3 log^2 eps`` regressor; 1 when the residual is fully explained.
    """

    def __init__(self, weighting: str = "inverse_square", min_span: float = 4.0):
        self.weighting = weighting
        self.min_span = min_span

    def fit(self, X, y):
        eps = _as_eps(X)
        y = np.asarray(y, dtype=float)
        if y.shape != eps.shape:
            raise ValueError("X and y have different lengths")
        uniq = np.unique(eps)
        if uniq.size < 4:
            raise ValueError(f"need at least 4 distinct eps values, got {uniq.size}")
        if uniq[-1] / uniq[0] < self.min_span:
            raise ValueError(f"eps values span a factor {uniq[-1] / uniq[0]:.3g}, need {self.min_span}")
        if self.weighting == "inverse_square":
            sw = 1.0 / eps
        elif self.weighting == "none":
            sw = np.ones_like(eps)
        else:
            raise ValueError(f"unknown weighting {self.weighting!r}")
        X_w = _design(eps) * sw[:, None]
        y_w = y * sw
        scale = np.linalg.norm(X_w, axis=0)
        Xs = X_w / scale
        self.condition_ = float(np.linalg.cond(Xs))
        coef_s, *_ = np.linalg.lstsq(Xs, y_w, rcond=None)
        self.coef_ = coef_s / scale
        r = y_w - X_w @ self.coef_
        self.residual_norm_ = float(np.linalg.norm(r))
        dof = eps.size - 3
        inv = np.linalg.inv(Xs.T @ Xs) / np.outer(scale, scale)
        self.covariance_ = inv * (self.residual_norm_**2 / dof) if dof > 0 else np.full((3, 3), np.nan)
        # residual against the projected next-order regressor
        z = _remainder(eps) * sw
        Q, _ = np.linalg.qr(Xs)
        zt = z - Q @ (Q.T @ z)
        zz = float(zt @ zt)
        self.remainder_amplitude_ = float(r @ zt / zz) if zz > 0 else float("nan")
        ok = (np.abs(r) > 1e-14 * max(1.0, np.abs(y_w).max())) & (np.abs(zt) > 1e-14 * np.abs(z).max())
        if ok.sum() >= 2:
            self.remainder_slope_ = float(np.polyfit(np.log(np.abs(zt[ok])), np.log(np.abs(r[ok])), 1)[0])
        else:
            self.remainder_slope_ = float("nan")
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return _design(_as_eps(X)) @ self.coef_


@dataclass(frozen=True)
class FitResult:
    A: float
    B: float
    C: float
    covariance: np.ndarray
    residual: float
    condition: float
    remainder_slope: float
    remainder_amplitude: float
    eps: tuple = field(default=())

    @property
    def valid(self) -> bool:
        return self.condition < COND_MAX


def fit_expansion(samples, **kwargs) -> FitResult:
    """Fit ``(A, B, C)`` to ``(eps, shift)`` pairs.

    Parameters
    ----------
    samples : iterable
        Pairs ``(eps, shift)`` or objects with ``eps`` and ``shift`` attributes.
    """
    eps, shift = [], []
    for s in samples:
        if hasattr(s, "eps"):
            eps.append(s.eps)
            shift.append(s.shift)
        else:
            e, v = s
            eps.append(e)
            shift.append(v)
    est = ShiftExpansionRegressor(**kwargs).fit(np.array(eps), np.array(shift))
    A, B, C = (float(v) for v in est.coef_)
    return FitResult(A, B, C, est.covariance_, est.residual_norm_, est.condition_,
                     est.remainder_slope_, est.remainder_amplitude_, tuple(sorted((float(e) for e in eps), reverse=True)))


def _verdict(fit_v, pb, pe, rtol=1e-9):
    if abs(pb - pe) <= rtol * max(abs(pb), abs(pe), 1e-300):
        return "indistinguishable"
    return "ball" if abs(fit_v - pb) < abs(fit_v - pe) else "ellipse"


def _rel(fit_v, p):
    return abs(fit_v - p) / abs(p) if p != 0 else abs(fit_v)


def adjudicate(fit: FitResult, coeffs_ball: AsymCoeffs, coeffs_ellipse: AsymCoeffs, a_rtol: float = 1e-10) -> dict:
    """Compare fitted coefficients with the disk and ellipse predictions."""
    if not isinstance(fit, FitResult):
        raise TypeError("fit must be a FitResult")
    if not all(math.isfinite(v) for v in (fit.A, fit.B, fit.C)):
        raise ValueError("fit coefficients are not finite")
    if abs(coeffs_ball.A - coeffs_ellipse.A) > a_rtol * max(abs(coeffs_ball.A), 1e-300):
        raise ValueError("leading coefficients of the two formula sets disagree")
    preds = {
        "A": (coeffs_ball.A, coeffs_ellipse.A),
        "B": (coeffs_ball.B, coeffs_ellipse.B),
        "C": (coeffs_ball.C, coeffs_ellipse.C),
    }
    fitted = {"A": fit.A, "B": fit.B, "C": fit.C}
    report = {}
    verdicts = {}
    deviations = {}
    for k, (pb, pe) in preds.items():
        report[f"{k}_fit"] = fitted[k]
        report[f"{k}_pred_ball"] = pb
        report[f"{k}_pred_ellipse"] = pe
        verdicts[k] = _verdict(fitted[k], pb, pe)
        deviations[k] = {"ball": _rel(fitted[k], pb), "ellipse": _rel(fitted[k], pe)}
    report["verdicts"] = verdicts
    report["relative_deviations"] = deviations
    report["residual"] = fit.residual
    report["remainder_slope"] = fit.remainder_slope
    report["remainder_amplitude"] = fit.remainder_amplitude
    report["condition"] = fit.condition
    report["valid"] = fit.valid
    return report
