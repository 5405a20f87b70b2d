"""Concentrating out the two-way fixed effects for a given theta.

For fixed ``theta`` the log-likelihood is concave in ``phi = (alpha, gamma)``
for every supported family and index form (the index is linear in ``phi``),
so a damped Newton iteration converges from a cold start.  The Newton system
has an arrow structure: diagonal ``alpha`` and ``gamma`` blocks plus a dense
``N x T`` cross block.  It is solved by eliminating the larger diagonal block
and factorising the dense Schur complement of the smaller one, bordered by
the identification constraints.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import EmptyPanel, NoConvergence, SingularHessian
from .model import IndexModel, LikTerms, ModelSpec, PanelData

logger = logging.getLogger(__name__)


@dataclass
class ProfileOptions:
    tol: float = 1e-10
    max_iter: int = 200
    lambda0: float = 1e-6
    max_halvings: int = 30
    raise_on_failure: bool = False


@dataclass
class ProfileResult:
    alpha_hat: np.ndarray
    gamma_hat: np.ndarray
    loglik_hat: float
    grad_norm: float
    iterations: int
    converged: bool
    flags: dict = field(default_factory=dict)
    terms: Optional[LikTerms] = field(default=None, repr=False)

    @property
    def phi(self):
        return np.concatenate([self.alpha_hat, self.gamma_hat])


@dataclass
class SanitizeReport:
    dropped_units: list = field(default_factory=list)
    dropped_periods: list = field(default_factory=list)
    reasons: dict = field(default_factory=dict)
    passes: int = 0

    @property
    def n_dropped(self):
        return len(self.dropped_units) + len(self.dropped_periods)


# -- identification constraints --------------------------------------------------

def fe_constraints(spec: ModelSpec, n: int, t: int):
    """Linear constraints ``Ea alpha + Eg gamma = e`` fixing the normalisation."""
    ident = spec.identification
    consts = spec.id_constants
    if ident == "none_needed":
        return np.zeros((0, n)), np.zeros((0, t)), np.zeros(0)
    if ident == "sum_equal":
        e = np.array(consts[:1] if consts else [0.0])
        return np.ones((1, n)), -np.ones((1, t)), e
    if ident == "sum_zero_both":
        ea = np.vstack([np.ones(n), np.zeros(n)])
        eg = np.vstack([np.zeros(t), np.ones(t)])
        e = np.array(consts[:2] if consts else [0.0, 0.0])
        return ea, eg, e
    # mean_half
    ea = np.vstack([np.full(n, 1.0 / n), np.zeros(n)])
    eg = np.vstack([np.zeros(t), np.full(t, 1.0 / t)])
    e = np.array(consts[:2] if consts else [0.5, 0.5])
    return ea, eg, e


def _project_feasible(alpha, gamma, ea, eg, e):
    if e.size == 0:
        return alpha, gamma
    E = np.hstack([ea, eg])
    phi = np.concatenate([alpha, gamma])
    resid = E @ phi - e
    phi = phi - E.T @ np.linalg.solve(E @ E.T, resid)
    return phi[:alpha.size], phi[alpha.size:]


def _project_gradient(ga, gg, ea, eg):
    if ea.shape[0] == 0:
        return ga, gg
    E = np.hstack([ea, eg])
    g = np.concatenate([ga, gg])
    g = g - E.T @ np.linalg.solve(E @ E.T, E @ g)
    return g[:ga.size], g[ga.size:]


def arrow_solve(da, dg, cross, ea, eg, ra, rg):
    """Solve the bordered arrow system.

    ::

        [diag(da)  cross     ea'] [x]   [ra]
        [cross'    diag(dg)  eg'] [y] = [rg]
        [ea        eg        0  ] [m]   [0 ]

    The larger diagonal block is eliminated so the dense factorisation is of
    order ``min(N, T) + k``.  ``ra``/``rg`` may carry several right-hand sides
    as columns.
    """
    if da.size < dg.size:
        y, x = arrow_solve(dg, da, cross.T, eg, ea, rg, ra)
        return x, y
    ra = np.asarray(ra, dtype=float)
    rg = np.asarray(rg, dtype=float)
    vec = ra.ndim == 1
    if vec:
        ra = ra[:, None]
        rg = rg[:, None]
    k = ea.shape[0]
    dinv = 1.0 / da
    dc = dinv[:, None] * cross
    schur = np.diag(dg) - cross.T @ dc
    rhs_y = rg - cross.T @ (dinv[:, None] * ra)
    if k:
        de = dinv[:, None] * ea.T
        border = eg.T - cross.T @ de
        corner = -ea @ de
        mat = np.block([[schur, border], [border.T, corner]])
        rhs = np.vstack([rhs_y, -ea @ (dinv[:, None] * ra)])
    else:
        mat, rhs = schur, rhs_y
    sol = np.linalg.solve(mat, rhs)
    y = sol[:dg.size]
    mu = sol[dg.size:]
    x = dinv[:, None] * (ra - cross @ y - (ea.T @ mu if k else 0.0))
    if vec:
        return x[:, 0], y[:, 0]
    return x, y


# -- sanitising --------------------------------------------------------------------

def _fe_loadings(data: PanelData, spec: ModelSpec):
    """Theta-free loadings of alpha_i and gamma_t, or ones when they depend on theta."""
    form = spec.index_form
    if form == "covariate_loaded_fe":
        return data.u, data.v
    if form == "shared_slope_fe":
        return data.u, data.u
    if form == "slope_shift_fe":
        s = data.x.sum(axis=2)
        return s, s
    ones = np.ones(data.shape)
    return ones, ones


def _separated(y, load, axis):
    """Rows/columns whose likelihood increases without bound along one effect.

    With loading ``w``, pushing the effect to +inf never lowers the
    likelihood when ``y = 1`` implies ``w >= 0`` and ``y = 0`` implies
    ``w <= 0`` in every cell (and symmetrically for -inf).  Constant
    outcomes under a unit loading are the familiar special case.
    """
    up = np.all(((y == 1) & (load >= 0)) | ((y == 0) & (load <= 0)), axis=axis)
    down = np.all(((y == 1) & (load <= 0)) | ((y == 0) & (load >= 0)), axis=axis)
    return up | down


def sanitize_panel(data: PanelData, spec: ModelSpec):
    """Drop units/periods whose fixed effect would diverge.

    Binary outcomes without variation inside a unit (or period) push the
    corresponding effect to infinity; so does an outcome pattern perfectly
    separated by a covariate loading.  Removal is iterated to a fixed point.
    Gaussian panels are returned unchanged.
    """
    report = SanitizeReport()
    if data.n_units < 2 or data.n_periods < 2:
        raise EmptyPanel("panel needs at least two units and two periods")
    if not spec.binary:
        return data, report
    keep_u = np.ones(data.n_units, dtype=bool)
    keep_t = np.ones(data.n_periods, dtype=bool)
    y = data.y
    la, lg = _fe_loadings(data, spec)

    def reason(sub, axis):
        const = sub.min(axis=axis) == sub.max(axis=axis)
        return np.where(const, "no outcome variation",
                        "outcome separated by the effect loading")

    while True:
        report.passes += 1
        changed = False
        for axis, keep, labels, load, kind in (
                (1, keep_u, data.unit_labels, la, "unit"),
                (0, keep_t, data.time_labels, lg, "period")):
            ix = np.ix_(keep_u, keep_t)
            sub = y[ix]
            if sub.size == 0:
                break
            bad = _separated(sub, load[ix], axis)
            if bad.any():
                why = reason(sub, axis)
                for j, k in zip(np.flatnonzero(keep)[bad], np.flatnonzero(bad)):
                    label = labels[j]
                    (report.dropped_units if kind == "unit"
                     else report.dropped_periods).append(label)
                    report.reasons[(kind, label)] = str(why[k])
                keep[np.flatnonzero(keep)[bad]] = False
                changed = True
        if not changed or not keep_u.any() or not keep_t.any():
            break
    if keep_u.sum() < 2 or keep_t.sum() < 2:
        raise EmptyPanel("no usable panel left after removing units/periods "
                         "without outcome variation")
    if report.n_dropped == 0:
        return data, report
    if report.dropped_units or report.dropped_periods:
        logger.info("sanitize: dropped %d units, %d periods",
                    len(report.dropped_units), len(report.dropped_periods))
    return data.subset(keep_u, keep_t), report


# -- Newton profiler -----------------------------------------------------------------

class Profiler:
    """Maximises the average log-likelihood over the fixed effects.

    Holds the last solution so successive calls along a theta path are
    warm-started.  ``y`` replaces the outcome (e.g. by true probabilities to
    obtain the expected likelihood); ``expected`` adds the gaussian variance
    term in that case.
    """

    def __init__(self, model: IndexModel, opts: Optional[ProfileOptions] = None,
                 y=None, expected: bool = False, warm_start: bool = True):
        self.model = model
        self.opts = opts or ProfileOptions()
        self.y = y
        self.expected = expected
        self.warm_start = warm_start
        self.N, self.T = model.N, model.T
        self.ea, self.eg, self.e = fe_constraints(model.spec, self.N, self.T)
        self._last = None
        self.n_calls = 0

    def cold_start(self):
        a = np.zeros(self.N)
        g = np.zeros(self.T)
        return _project_feasible(a, g, self.ea, self.eg, self.e)

    def _terms(self, theta, a, g):
        return self.model.terms(theta, a, g, order=2, y=self.y,
                                expected=self.expected)

    def __call__(self, theta, start=None) -> ProfileResult:
        self.n_calls += 1
        theta = np.asarray(theta, dtype=float)
        opts = self.opts
        if start is not None:
            a, g = start
            a, g = _project_feasible(np.array(a, float), np.array(g, float),
                                     self.ea, self.eg, self.e)
        elif self.warm_start and self._last is not None:
            a, g = self._last
        else:
            a, g = self.cold_start()
        nt = self.N * self.T
        m = self.model
        lt = self._terms(theta, a, g)
        f = lt.val.sum() / nt
        lam = opts.lambda0
        converged = False
        gnorm = np.inf
        it = 0
        for it in range(opts.max_iter + 1):
            ga, gg = m.fe_score(theta, lt)
            ga, gg = ga / nt, gg / nt
            pa, pg = _project_gradient(ga, gg, self.ea, self.eg)
            gnorm = max(np.abs(pa).max(initial=0.0), np.abs(pg).max(initial=0.0))
            if gnorm < opts.tol:
                converged = True
                break
            if it == opts.max_iter:
                break
            haa, hgg, hag = m.fe_hessian(theta, lt)
            haa, hgg, hag = haa / nt, hgg / nt, hag / nt
            if haa.max() >= -1e-12 or hgg.max() >= -1e-12:
                raise SingularHessian(
                    "fixed-effect Hessian has a non-negative diagonal entry "
                    "(flat direction); check identification or sanitize the panel")
            slope = None
            accepted = False
            while not accepted:
                da, dg = arrow_solve(haa - lam, hgg - lam, hag, self.ea, self.eg,
                                     -ga, -gg)
                slope = ga @ da + gg @ dg
                step = 1.0
                for _ in range(opts.max_halvings):
                    a_new = a + step * da
                    g_new = g + step * dg
                    lt_new = self._terms(theta, a_new, g_new)
                    f_new = lt_new.val.sum() / nt
                    if f_new >= f + 1e-4 * step * slope - 1e-15 * abs(f):
                        accepted = True
                        break
                    step *= 0.5
                if accepted:
                    if step == 1.0:
                        lam /= 10.0
                    break
                lam *= 10.0
                if lam > 1e10:
                    break
            if not accepted:
                break
            a, g, lt, f = a_new, g_new, lt_new, f_new
        if converged and gnorm > 1e-15:
            # one undamped Newton step; kept only if the gradient shrinks
            a, g, lt, f, gnorm = self._polish(theta, a, g, lt, f, ga, gg, gnorm)
        res = ProfileResult(
            alpha_hat=a, gamma_hat=g, loglik_hat=float(f), grad_norm=float(gnorm),
            iterations=it, converged=converged,
            flags={"clamp_hits": lt.clamp_hits, "lambda": lam}, terms=lt)
        if converged:
            self._last = (a.copy(), g.copy())
        else:
            logger.warning("profiler did not converge (grad %.3g)", gnorm)
            if opts.raise_on_failure:
                raise NoConvergence("fixed-effect profiling did not converge",
                                    result=res)
        return res

    def _polish(self, theta, a, g, lt, f, ga, gg, gnorm):
        m = self.model
        nt = self.N * self.T
        haa, hgg, hag = m.fe_hessian(theta, lt)
        da, dg = arrow_solve(haa / nt, hgg / nt, hag / nt, self.ea, self.eg, -ga, -gg)
        a_new, g_new = a + da, g + dg
        lt_new = self._terms(theta, a_new, g_new)
        na, ng = m.fe_score(theta, lt_new)
        pa, pg = _project_gradient(na / nt, ng / nt, self.ea, self.eg)
        gn = max(np.abs(pa).max(initial=0.0), np.abs(pg).max(initial=0.0))
        if gn < gnorm:
            return a_new, g_new, lt_new, lt_new.val.sum() / nt, gn
        return a, g, lt, f, gnorm

    # theta derivatives of the profiled objective ---------------------------------
    def score(self, theta, prof: ProfileResult):
        """Envelope-theorem gradient of the profiled average log-likelihood."""
        m = self.model
        return m.theta_score(theta, prof.alpha_hat, prof.gamma_hat,
                             prof.terms) / (self.N * self.T)

    def hessian(self, theta, prof: ProfileResult):
        """Analytic Hessian of the profiled average log-likelihood.

        ``H_tt - H_tphi H_phiphi^{-1} H_phit`` with the constrained inverse.
        """
        m = self.model
        nt = self.N * self.T
        lt = prof.terms
        a, g = prof.alpha_hat, prof.gamma_hat
        htt, hta, htg = m.theta_blocks(theta, a, g, lt)
        haa, hgg, hag = m.fe_hessian(theta, lt)
        xa, xg = arrow_solve(haa, hgg, hag, self.ea, self.eg, hta.T, htg.T)
        h = htt - hta @ xa - htg @ xg
        h = 0.5 * (h + h.T)
        return h / nt


def profile_fixed_effects(data: PanelData, spec: ModelSpec, theta,
                          opts: Optional[ProfileOptions] = None,
                          start=None) -> ProfileResult:
    """Constrained maximiser of the average log-likelihood over ``phi``."""
    prof = Profiler(IndexModel(spec, data), opts, warm_start=False)
    return prof(theta, start=start)


def profiled_value_and_score(data: PanelData, spec: ModelSpec, theta,
                             opts: Optional[ProfileOptions] = None):
    """``(l_hat(theta), grad l_hat(theta))`` via the envelope theorem."""
    prof = Profiler(IndexModel(spec, data), opts, warm_start=False)
    res = prof(theta)
    if not res.converged:
        raise NoConvergence("profiler did not converge", result=res)
    return res.loglik_hat, prof.score(theta, res)
