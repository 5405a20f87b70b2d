"""Outer maximisation over theta and the LR / LM / Wald trinity."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import minimize
from scipy.special import gammaincc

from .exceptions import (ConfigError, DegenerateVariance, NoConvergence,
                         RankDeficientConstraint)
from .model import IndexModel, ModelSpec, PanelData
from .objectives import Objective, fd_jacobian, make_objective
from .profiler import ProfileOptions, ProfileResult

logger = logging.getLogger(__name__)


@dataclass
class Constraint:
    """Null hypothesis ``R(theta) = 0``.

    Use :meth:`point`, :meth:`linear` or :meth:`general` to build one.
    """

    kind: str
    r: int
    theta_star: Optional[np.ndarray] = None
    C: Optional[np.ndarray] = None
    c: Optional[np.ndarray] = None
    R: Optional[Callable] = None
    description: str = ""

    @classmethod
    def point(cls, theta_star, description=None):
        theta_star = np.asarray(theta_star, dtype=float).reshape(-1)
        desc = description or f"theta = {np.array2string(theta_star, precision=6)}"
        return cls("point", theta_star.size, theta_star=theta_star,
                   description=desc)

    @classmethod
    def linear(cls, C, c, description=""):
        C = np.atleast_2d(np.asarray(C, dtype=float))
        c = np.asarray(c, dtype=float).reshape(-1)
        if C.shape[0] != c.size:
            raise ConfigError("C and c disagree on the number of restrictions")
        if np.linalg.matrix_rank(C) < C.shape[0]:
            raise RankDeficientConstraint("linear constraint rows are dependent")
        return cls("linear", C.shape[0], C=C, c=c, description=description)

    @classmethod
    def general(cls, R, r, description=""):
        return cls("general", int(r), R=R, description=description)

    def residual(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "point":
            return theta - self.theta_star
        if self.kind == "linear":
            return self.C @ theta - self.c
        return np.atleast_1d(np.asarray(self.R(theta), dtype=float))

    def jacobian(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "point":
            return np.eye(theta.size)
        if self.kind == "linear":
            return self.C
        return np.atleast_2d(fd_jacobian(self.residual, theta, rel_step=1e-6))

    def check(self, p):
        if self.kind == "point" and self.theta_star.size != p:
            raise ConfigError(f"point null needs {p} values")
        if self.kind == "linear" and self.C.shape[1] != p:
            raise ConfigError(f"constraint matrix needs {p} columns")
        if self.r > p:
            raise RankDeficientConstraint("more restrictions than parameters")


@dataclass
class EstimateResult:
    theta_hat: np.ndarray
    objective_kind: str
    loglik: float
    se: Optional[np.ndarray]
    hessian_theta: Optional[np.ndarray]
    profile: Optional[ProfileResult]
    converged: bool
    constrained_to: Optional[Constraint] = None
    nobs: int = 0
    iterations: int = 0
    score: Optional[np.ndarray] = None
    flags: dict = field(default_factory=dict)


@dataclass
class TestResult:
    kind: str
    objective_kind: str
    statistic: float
    df: int
    p_value: float
    constraint: str
    flags: dict = field(default_factory=dict)


def chi2_sf(x, df):
    """Upper tail of chi-square via the regularised incomplete gamma."""
    return float(gammaincc(0.5 * df, 0.5 * max(float(x), 0.0)))


# -- BFGS ---------------------------------------------------------------------------

def bfgs_maximize(f, grad, x0, hinv0=None, gtol=1e-7, ftol=1e-12, max_iter=200):
    """Maximise ``f`` with BFGS and Armijo backtracking.

    ``hinv0`` approximates ``(-Hessian)^{-1}``.  Returns
    ``(x, fx, gx, iterations, converged)``.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    fx = f(x)
    gx = np.asarray(grad(x), dtype=float)
    hinv = np.eye(n) if hinv0 is None else np.array(hinv0, dtype=float)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(gx)) < gtol:
            converged = True
            break
        d = hinv @ gx
        slope = gx @ d
        if not np.isfinite(slope) or slope <= 0:
            hinv = np.eye(n)
            d = gx.copy()
            slope = gx @ d
        step = 1.0
        ok = False
        for _ in range(40):
            x_new = x + step * d
            try:
                f_new = f(x_new)
            except NoConvergence:
                f_new = -np.inf
            if np.isfinite(f_new) and f_new >= fx + 1e-4 * step * slope:
                ok = True
                break
            step *= 0.5
        if not ok:
            break
        g_new = np.asarray(grad(x_new), dtype=float)
        s = x_new - x
        yv = gx - g_new  # gradient change of -f
        sy = s @ yv
        if sy > 1e-14 * max(1.0, np.linalg.norm(s) * np.linalg.norm(yv)):
            rho = 1.0 / sy
            eye = np.eye(n)
            hinv = ((eye - rho * np.outer(s, yv)) @ hinv
                    @ (eye - rho * np.outer(yv, s)) + rho * np.outer(s, s))
        rel = abs(f_new - fx) / max(1.0, abs(fx))
        x, fx, gx = x_new, f_new, g_new
        if rel < ftol:
            converged = True
            break
    else:
        converged = bool(np.max(np.abs(gx)) < gtol)
    return x, fx, gx, it, converged


def _neg_inv(h):
    try:
        w = np.linalg.eigvalsh(h)
        if np.all(w < 0):
            return np.linalg.inv(-h)
    except np.linalg.LinAlgError:
        pass
    return None


# -- estimation -------------------------------------------------------------------

def standard_errors(result: EstimateResult) -> np.ndarray:
    """``sqrt(diag([-NT * H]^{-1}))``; NaN entries when H is not negative definite."""
    h = result.hessian_theta
    if h is None:
        return None
    h = np.atleast_2d(h)
    try:
        w = np.linalg.eigvalsh(0.5 * (h + h.T))
        nd = bool(np.all(w < 0))
    except np.linalg.LinAlgError:
        nd = False
    if not nd:
        result.flags["indefinite_hessian"] = True
        se = np.full(h.shape[0], np.nan)
    else:
        se = np.sqrt(np.diag(np.linalg.inv(-result.nobs * h)))
    result.se = se
    return se


def maximize_objective(obj: Objective, start, constraint: Optional[Constraint] = None,
                       hinv0=None, gtol=1e-7, ftol=1e-12, max_iter=200,
                       compute_hessian=True) -> EstimateResult:
    """Maximise an objective, optionally under a constraint."""
    start = np.asarray(start, dtype=float)
    p = obj.dim
    flags = {}
    if constraint is not None:
        constraint.check(p)
    if constraint is not None and constraint.kind == "point":
        theta = constraint.theta_star.copy()
        val = obj.value(theta)
        score = obj.score(theta)
        conv, it = True, 0
        flags["optimization_skipped"] = True
    elif constraint is not None and constraint.kind == "linear":
        C, c = constraint.C, constraint.c
        tp = np.linalg.lstsq(C, c, rcond=None)[0]
        Z = null_space(C)
        if Z.shape[1] == 0:
            theta = tp
            val, score, conv, it = obj.value(theta), obj.score(theta), True, 0
        else:
            def fpsi(psi):
                return obj.value(tp + Z @ psi)

            def gpsi(psi):
                return Z.T @ obj.score(tp + Z @ psi)

            h0 = None if hinv0 is None else Z.T @ hinv0 @ Z
            psi, val, _, it, conv = bfgs_maximize(
                fpsi, gpsi, Z.T @ (start - tp), h0, gtol, ftol, max_iter)
            theta = tp + Z @ psi
            score = obj.score(theta)
    elif constraint is not None:
        res = minimize(lambda th: -obj.value(th), start,
                       jac=lambda th: -obj.score(th), method="SLSQP",
                       constraints=[{"type": "eq", "fun": constraint.residual,
                                     "jac": constraint.jacobian}],
                       options={"ftol": 1e-14, "maxiter": max_iter})
        theta, val, conv, it = res.x, -res.fun, bool(res.success), res.nit
        score = obj.score(theta)
    else:
        if hinv0 is None and obj.kind == "raw":
            hinv0 = _neg_inv(obj.hessian(start))
        theta, val, score, it, conv = bfgs_maximize(
            obj.value, obj.score, start, hinv0, gtol, ftol, max_iter)
    hess = obj.hessian(theta) if compute_hessian else None
    prof = obj.profiler(theta)
    result = EstimateResult(
        theta_hat=np.asarray(theta, dtype=float), objective_kind=obj.kind,
        loglik=float(val), se=None, hessian_theta=hess, profile=prof,
        converged=bool(conv), constrained_to=constraint, nobs=obj.nobs,
        iterations=it, score=np.asarray(score), flags=flags)
    if hess is not None:
        standard_errors(result)
    if not conv:
        logger.warning("%s maximisation did not converge", obj.kind)
    return result


def maximize(data: PanelData, spec: ModelSpec, objective: str = "raw",
             constraint: Optional[Constraint] = None, start=None,
             opts: Optional[ProfileOptions] = None, hessian_mode: str = "fd",
             raise_on_failure: bool = False) -> EstimateResult:
    """Estimate theta from the raw (``l_hat``) or corrected (``l_tilde``) objective.

    The corrected maximisation is warm-started at the raw estimate with the
    raw Hessian as initial metric.
    """
    model = IndexModel(spec, data)
    if start is None:
        start = np.zeros(model.p)
    if objective == "corrected" and (constraint is None
                                     or constraint.kind != "point"):
        raw = maximize_objective(RawObjectiveFor(model, opts), start, constraint)
        obj = make_objective("corrected", model, opts, hessian_mode=hessian_mode)
        res = maximize_objective(obj, raw.theta_hat, constraint,
                                 hinv0=_neg_inv(raw.hessian_theta))
    else:
        obj = make_objective(objective, model, opts, hessian_mode=hessian_mode)
        res = maximize_objective(obj, start, constraint)
    if raise_on_failure and not res.converged:
        raise NoConvergence(f"{objective} maximisation did not converge", result=res)
    return res


def RawObjectiveFor(model, opts):
    return make_objective("raw", model, opts)


# -- tests -----------------------------------------------------------------------

def _finish(kind, obj_kind, stat, r, constraint, flags=None):
    flags = dict(flags or {})
    if not np.isfinite(stat):
        flags["nonfinite"] = True
    elif stat < 0:
        if stat < -1e-8:
            flags["negative_statistic"] = float(stat)
        stat = 0.0
    p = chi2_sf(stat, r) if np.isfinite(stat) else float("nan")
    desc = constraint.description if isinstance(constraint, Constraint) else str(constraint)
    return TestResult(kind, obj_kind, float(stat), int(r), p, desc, flags)


def lr_statistic(nobs, val_restricted, val_unrestricted):
    return -2.0 * nobs * (val_restricted - val_unrestricted)


def lm_statistic(nobs, score, hessian):
    try:
        return float(-nobs * score @ np.linalg.solve(hessian, score))
    except np.linalg.LinAlgError as exc:
        raise DegenerateVariance("Hessian singular at the restricted estimate") from exc


def wald_statistic(nobs, resid, jac, hessian):
    try:
        v = jac @ np.linalg.solve(hessian, jac.T)
        return float(-nobs * resid @ np.linalg.solve(v, resid))
    except np.linalg.LinAlgError as exc:
        raise DegenerateVariance("J H^{-1} J' is singular") from exc


def test_from_fits(kind: str, obj: Objective, constraint: Constraint,
                   unrestricted: Optional[EstimateResult] = None,
                   restricted: Optional[EstimateResult] = None) -> TestResult:
    kind = kind.upper()
    r = constraint.r
    if kind == "LR":
        stat = lr_statistic(obj.nobs, restricted.loglik, unrestricted.loglik)
    elif kind == "LM":
        th = restricted.theta_hat
        g = obj.score(th) if restricted.score is None else restricted.score
        h = restricted.hessian_theta
        if h is None:
            h = obj.hessian(th)
        stat = lm_statistic(obj.nobs, g, h)
    elif kind == "WALD":
        th = unrestricted.theta_hat
        h = unrestricted.hessian_theta
        if h is None:
            h = obj.hessian(th)
        stat = wald_statistic(obj.nobs, constraint.residual(th),
                              constraint.jacobian(th), h)
        kind = "Wald"
    else:
        raise ConfigError(f"unknown test kind {kind!r}")
    return _finish(kind, obj.kind, stat, r, constraint)


def test(data: PanelData, spec: ModelSpec, constraint: Constraint,
         objective: str = "corrected", kind: str = "LR", start=None,
         opts: Optional[ProfileOptions] = None, hessian_mode: str = "fd"
         ) -> TestResult:
    """One classical test of ``constraint`` from the chosen objective."""
    return test_all(data, spec, constraint, objective, (kind,), start, opts,
                    hessian_mode)[0]


def test_all(data: PanelData, spec: ModelSpec, constraint: Constraint,
             objective: str = "corrected", kinds=("LR", "LM", "Wald"), start=None,
             opts: Optional[ProfileOptions] = None, hessian_mode: str = "fd",
             fits: Optional[dict] = None):
    """Several tests of one constraint sharing the unrestricted/restricted fits."""
    model = IndexModel(spec, data)
    constraint.check(model.p)
    if start is None:
        start = np.zeros(model.p)
    kinds = [k.upper() for k in kinds]
    raw_fit = (fits or {}).get("raw")
    if raw_fit is None:
        raw_fit = maximize_objective(make_objective("raw", model, opts), start)
    if objective == "raw":
        obj = make_objective("raw", model, opts)
        unres = raw_fit
        hinv = _neg_inv(raw_fit.hessian_theta)
    else:
        obj = make_objective(objective, model, opts, hessian_mode=hessian_mode)
        hinv = _neg_inv(raw_fit.hessian_theta)
        unres = (fits or {}).get(objective)
        if unres is None:
            unres = maximize_objective(obj, raw_fit.theta_hat, hinv0=hinv)
    restr = None
    if "LR" in kinds or "LM" in kinds:
        start_r = unres.theta_hat
        restr = maximize_objective(obj, start_r, constraint, hinv0=hinv,
                                   compute_hessian="LM" in kinds)
    out = []
    for k in kinds:
        out.append(test_from_fits(k, obj, constraint, unres, restr))
    if fits is not None:
        fits.setdefault("raw", raw_fit)
        fits.setdefault(objective, unres)
    return out
