"""Analytical likelihood correction for two-way fixed effects.

``l_tilde(theta) = l_hat(theta) + b_hat(theta) / T + d_hat(theta) / N`` where
``b_hat`` collects the truncated autocovariances of the unit scores and
``d_hat`` the variances of the period scores, each scaled by the matching
fixed-effect curvature.  A trace form using the full fixed-effect Hessian is
provided as an alternative.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.linalg import null_space

from .exceptions import NonNegativeHessian, SingularHessian, TauTooLarge
from .model import IndexModel, ModelSpec, PanelData, link_cdf, link_terms
from .profiler import (Profiler, ProfileOptions, ProfileResult, fe_constraints)

# center(theta, alpha, gamma) -> (E d_alpha l_it, E d_gamma l_it), each N x T
CenterProvider = Callable[[np.ndarray, np.ndarray, np.ndarray], tuple]


@dataclass
class CorrectionTerms:
    b_hat: float
    d_hat: float
    s_alpha: np.ndarray
    s_gamma: np.ndarray
    h_alpha: np.ndarray
    h_gamma: np.ndarray
    tau_used: int
    expectations_dropped: bool
    window_quad: Optional[np.ndarray] = None

    def total(self, n, t):
        return self.b_hat / t + self.d_hat / n


def windowed_quadratic(s: np.ndarray, tau: int) -> np.ndarray:
    """Row-wise ``s_i' W_tau s_i`` for the 0/1 band matrix ``|t - s| <= tau``.

    Computed as lagged cross products, ``O(T tau)`` per row.
    """
    out = np.einsum("it,it->i", s, s)
    for k in range(1, tau + 1):
        out = out + 2.0 * np.einsum("it,it->i", s[:, k:], s[:, :-k])
    return out


def curvature(model: IndexModel, lt, kind: str = "expected"):
    """Second derivative of ``l_it`` in ``pi`` used by the correction.

    ``expected`` averages over ``Y`` under the fitted model (it differs from
    the observed curvature only for probit); ``observed`` uses the data.
    """
    if kind == "observed" or not model.spec.binary:
        return lt.d2
    if kind != "expected":
        raise ValueError(f"unknown curvature {kind!r}")
    c = model.spec.clamp
    pe = np.clip(lt.pi, -c, c)
    fam = model.spec.family
    return link_terms(fam, link_cdf(fam, pe), pe)[2]


def score_matrices(model: IndexModel, theta, prof: ProfileResult,
                   center: Optional[CenterProvider] = None,
                   curv: str = "expected"):
    """Centered scores and curvature averages at ``phi_hat(theta)``."""
    lt = prof.terms
    a, g = model.loadings(theta)
    d2 = curvature(model, lt, curv)
    s_alpha = np.broadcast_to(lt.d1 * a, model.y.shape).copy()
    s_gamma = np.broadcast_to(lt.d1 * g, model.y.shape).copy()
    if center is not None:
        ca, cg = center(np.asarray(theta, float), prof.alpha_hat, prof.gamma_hat)
        s_alpha -= ca
        s_gamma -= cg
    h_alpha = np.broadcast_to(d2 * a * a, model.y.shape).mean(axis=1)
    h_gamma = np.broadcast_to(d2 * g * g, model.y.shape).mean(axis=0)
    return s_alpha, s_gamma, h_alpha, h_gamma


def correction_from_profile(model: IndexModel, theta, prof: ProfileResult,
                            tau: Optional[int] = None,
                            center: Optional[CenterProvider] = None,
                            curv: str = "expected") -> CorrectionTerms:
    spec = model.spec
    tau = spec.effective_tau if tau is None else (0 if spec.strictly_exogenous
                                                  else int(tau))
    n, t = model.N, model.T
    if tau >= t:
        raise TauTooLarge(f"tau={tau} must be smaller than T={t}")
    s_alpha, s_gamma, h_alpha, h_gamma = score_matrices(model, theta, prof, center,
                                                        curv)
    if np.any(h_alpha >= 0) or np.any(h_gamma >= 0):
        raise NonNegativeHessian("fixed-effect curvature averages must be negative")
    quad = windowed_quadratic(s_alpha, tau)
    b_hat = 0.5 * np.mean(quad / t / h_alpha)
    d_hat = 0.5 * np.mean((s_gamma * s_gamma).sum(axis=0) / n / h_gamma)
    return CorrectionTerms(
        b_hat=float(b_hat), d_hat=float(d_hat), s_alpha=s_alpha, s_gamma=s_gamma,
        h_alpha=h_alpha, h_gamma=h_gamma, tau_used=tau,
        expectations_dropped=center is None, window_quad=quad)


def correction_terms(data: PanelData, spec: ModelSpec, theta,
                     profile: Optional[ProfileResult] = None,
                     center: Optional[CenterProvider] = None,
                     opts: Optional[ProfileOptions] = None) -> CorrectionTerms:
    """``b_hat``, ``d_hat`` and the score/curvature summaries they use."""
    model = IndexModel(spec, data)
    if profile is None or profile.terms is None:
        profile = Profiler(model, opts, warm_start=False)(theta)
    return correction_from_profile(model, theta, profile, center=center)


def corrected_loglik(data: PanelData, spec: ModelSpec, theta,
                     opts: Optional[ProfileOptions] = None,
                     center: Optional[CenterProvider] = None) -> float:
    """``l_hat(theta) + b_hat(theta)/T + d_hat(theta)/N`` (cold-started)."""
    model = IndexModel(spec, data)
    prof = Profiler(model, opts, warm_start=False)(theta)
    ct = correction_from_profile(model, theta, prof, center=center)
    return prof.loglik_hat + ct.total(model.N, model.T)


# -- trace form ------------------------------------------------------------------

def fe_hessian_dense(model: IndexModel, theta, prof: ProfileResult,
                     curv: str = "observed") -> np.ndarray:
    """``(N+T) x (N+T)`` Hessian of the average log-likelihood in ``phi``."""
    n, t = model.N, model.T
    lt = replace(prof.terms, d2=curvature(model, prof.terms, curv))
    haa, hgg, hag = model.fe_hessian(theta, lt)
    h = np.zeros((n + t, n + t))
    h[np.arange(n), np.arange(n)] = haa
    h[n + np.arange(t), n + np.arange(t)] = hgg
    h[:n, n:] = hag
    h[n:, :n] = hag.T
    return h / (n * t)


def score_outer_dense(s_alpha, s_gamma, tau) -> np.ndarray:
    """Dense ``G_hat`` built from the centered score matrices."""
    n, t = s_alpha.shape
    scale = 1.0 / (n * n * t * t)
    g = np.zeros((n + t, n + t))
    g[np.arange(n), np.arange(n)] = windowed_quadratic(s_alpha, tau) * scale
    g[n:, n:] = (s_gamma.T @ s_gamma) * scale
    cross = s_alpha.sum(axis=1)[:, None] * s_gamma * scale
    g[:n, n:] = cross
    g[n:, :n] = cross.T
    return g


def trace_correction(model: IndexModel, theta, prof: ProfileResult,
                     tau: Optional[int] = None,
                     center: Optional[CenterProvider] = None,
                     diagonal_surrogate: bool = False,
                     max_dim: int = 4096, curv: str = "expected") -> float:
    """``0.5 tr(H_hat^{-1} G_hat)``.

    With ``diagonal_surrogate`` the inverse keeps only the reciprocal
    diagonal of ``H_hat``.  Otherwise the trace is taken in the coordinates
    left free by the identification constraints.
    """
    spec = model.spec
    n, t = model.N, model.T
    if n + t > max_dim:
        raise ValueError(f"N+T={n + t} exceeds the dense cap {max_dim}")
    tau = spec.effective_tau if tau is None else (0 if spec.strictly_exogenous
                                                  else int(tau))
    if tau >= t:
        raise TauTooLarge(f"tau={tau} must be smaller than T={t}")
    s_alpha, s_gamma, _, _ = score_matrices(model, theta, prof, center, curv)
    h = fe_hessian_dense(model, theta, prof, curv)
    g = score_outer_dense(s_alpha, s_gamma, tau)
    if diagonal_surrogate:
        return 0.5 * float(np.sum(np.diag(g) / np.diag(h)))
    ea, eg, _ = fe_constraints(spec, n, t)
    if ea.shape[0]:
        z = null_space(np.hstack([ea, eg]))
        h = z.T @ h @ z
        g = z.T @ g @ z
    try:
        sol = np.linalg.solve(h, g)
    except np.linalg.LinAlgError as exc:
        raise SingularHessian("fixed-effect Hessian is singular") from exc
    return 0.5 * float(np.trace(sol))


def corrected_loglik_trace(data: PanelData, spec: ModelSpec, theta,
                           opts: Optional[ProfileOptions] = None,
                           center: Optional[CenterProvider] = None,
                           diagonal_surrogate: bool = False,
                           max_dim: int = 4096) -> float:
    """Trace-form corrected likelihood ``l_hat + 0.5 tr(H^{-1} G)``."""
    model = IndexModel(spec, data)
    prof = Profiler(model, opts, warm_start=False)(theta)
    return prof.loglik_hat + trace_correction(
        model, theta, prof, center=center,
        diagonal_surrogate=diagonal_surrogate, max_dim=max_dim)


def corrected_score_and_hessian(data: PanelData, spec: ModelSpec, theta,
                                opts: Optional[ProfileOptions] = None,
                                hessian: str = "fd"):
    """Finite-difference score and Hessian of the corrected likelihood.

    ``hessian='raw'`` substitutes the analytic Hessian of ``l_hat``.
    """
    from .objectives import CorrectedObjective

    obj = CorrectedObjective(IndexModel(spec, data), opts=opts,
                             hessian_mode=hessian)
    return obj.score(theta), obj.hessian(theta)
