"""Objective functions of theta: profiled, corrected and infeasible.

Each objective profiles the fixed effects on demand (warm-started along the
path of evaluated thetas) and exposes ``value``, ``score`` and ``hessian`` of
the per-observation average.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .correction import CenterProvider, correction_from_profile
from .exceptions import NoConvergence
from .model import IndexModel
from .profiler import Profiler, ProfileOptions

SCORE_STEP = 1e-5
HESSIAN_STEP = 1e-4


def fd_gradient(f, theta, rel_step=SCORE_STEP):
    """Central differences with ``h_j = rel_step * max(1, |theta_j|)``."""
    theta = np.asarray(theta, dtype=float)
    grad = np.empty(theta.size)
    for j in range(theta.size):
        h = rel_step * max(1.0, abs(theta[j]))
        up = theta.copy()
        dn = theta.copy()
        up[j] += h
        dn[j] -= h
        grad[j] = (f(up) - f(dn)) / (2.0 * h)
    return grad


def fd_jacobian(g, theta, rel_step=HESSIAN_STEP):
    theta = np.asarray(theta, dtype=float)
    cols = []
    for j in range(theta.size):
        h = rel_step * max(1.0, abs(theta[j]))
        up = theta.copy()
        dn = theta.copy()
        up[j] += h
        dn[j] -= h
        cols.append((np.asarray(g(up)) - np.asarray(g(dn))) / (2.0 * h))
    return np.column_stack(cols)


class Objective:
    kind = "raw"

    def __init__(self, model: IndexModel, opts: Optional[ProfileOptions] = None,
                 hessian_mode: str = "fd"):
        self.model = model
        self.opts = opts or ProfileOptions()
        self.profiler = Profiler(model, self.opts)
        self.hessian_mode = hessian_mode
        self.nobs = model.N * model.T
        self.n_evals = 0
        self.failures = 0
        self._cache = {}

    @property
    def dim(self):
        return self.model.p

    def _profile(self, theta):
        prof = self.profiler(theta)
        if not prof.converged:
            self.failures += 1
            raise NoConvergence("fixed-effect profiling failed", result=prof)
        return prof

    def _compute(self, theta):
        return self._profile(theta).loglik_hat

    def value(self, theta):
        theta = np.asarray(theta, dtype=float)
        key = theta.tobytes()
        if key in self._cache:
            return self._cache[key]
        self.n_evals += 1
        val = float(self._compute(theta))
        if len(self._cache) > 512:
            self._cache.clear()
        self._cache[key] = val
        return val

    def score(self, theta):
        return fd_gradient(self.value, theta)

    def raw_hessian(self, theta):
        theta = np.asarray(theta, dtype=float)
        prof = self._profile(theta)
        return self.profiler.hessian(theta, prof)

    def hessian(self, theta):
        if self.hessian_mode == "raw":
            return self.raw_hessian(theta)
        h = fd_jacobian(self.score, theta)
        return 0.5 * (h + h.T)


class RawObjective(Objective):
    """Profiled likelihood ``l_hat``; analytic score and Hessian."""

    kind = "raw"

    def score(self, theta):
        theta = np.asarray(theta, dtype=float)
        prof = self._profile(theta)
        return self.profiler.score(theta, prof)

    def hessian(self, theta):
        return self.raw_hessian(theta)


class CorrectedObjective(Objective):
    """``l_hat + b_hat/T + d_hat/N``; finite-difference derivatives."""

    kind = "corrected"

    def __init__(self, model, opts=None, tau: Optional[int] = None,
                 center: Optional[CenterProvider] = None, hessian_mode="fd"):
        super().__init__(model, opts, hessian_mode)
        self.tau = tau
        self.center = center

    def parts(self, theta):
        theta = np.asarray(theta, dtype=float)
        prof = self._profile(theta)
        ct = correction_from_profile(self.model, theta, prof, tau=self.tau,
                                     center=self.center)
        return prof, ct

    def _compute(self, theta):
        prof, ct = self.parts(theta)
        return prof.loglik_hat + ct.total(self.model.N, self.model.T)


class InfeasibleObjective(Objective):
    """Likelihood at the pseudo-true effects ``phi(theta)``.

    ``phi(theta)`` maximises the expected likelihood, obtained by replacing
    the outcome with its conditional mean ``mean_y`` (the true response
    probability for binary families).  The value is the realised average
    log-likelihood at ``(theta, phi(theta))``.
    """

    kind = "infeasible"

    def __init__(self, model, mean_y, opts=None, hessian_mode="fd"):
        super().__init__(model, opts, hessian_mode)
        self.mean_y = np.asarray(mean_y, dtype=float)
        self.profiler = Profiler(model, self.opts, y=self.mean_y, expected=True)

    def pseudo_true(self, theta):
        return self._profile(np.asarray(theta, dtype=float))

    def _compute(self, theta):
        prof = self._profile(theta)
        lt = self.model.terms(theta, prof.alpha_hat, prof.gamma_hat, order=0)
        return lt.val.mean()

    def raw_hessian(self, theta):
        h = fd_jacobian(self.score, theta)
        return 0.5 * (h + h.T)


def make_objective(kind: str, model: IndexModel, opts=None, tau=None,
                   center=None, mean_y=None, hessian_mode="fd") -> Objective:
    if kind == "raw":
        return RawObjective(model, opts)
    if kind == "corrected":
        return CorrectedObjective(model, opts, tau=tau, center=center,
                                  hessian_mode=hessian_mode)
    if kind == "infeasible":
        if mean_y is None:
            raise ValueError("infeasible objective needs the true conditional mean")
        return InfeasibleObjective(model, mean_y, opts, hessian_mode=hessian_mode)
    raise ValueError(f"unknown objective {kind!r}")
