"""Likelihood families, linear-index forms and observation-level derivatives.

The observation log-likelihood is ``l_it = ell(Y_it, pi_it)`` where ``ell`` is
the family's log density written as a function of the linear index and
``pi_it(theta, alpha_i, gamma_t)`` is one of the supported index forms.  All
derivatives are obtained analytically by the chain rule through ``pi``.

Everything here is vectorised over the ``N x T`` rectangle; the per-cell
functions :func:`obs_loglik` and :func:`obs_derivs` are thin views used for
checking and for callers that want a single observation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, log_ndtr

from .exceptions import BadFamilyData, ConfigError, NonFiniteIndex

FAMILIES = ("probit", "logit", "gaussian")
INDEX_FORMS = (
    "additive_fe",
    "slope_shift_fe",
    "slope_scale_fe",
    "covariate_loaded_fe",
    "shared_slope_fe",
)
IDENTIFICATIONS = ("sum_zero_both", "sum_equal", "mean_half", "none_needed")

_LOG_2PI = np.log(2.0 * np.pi)
_LOG_SQRT_2PI = 0.5 * _LOG_2PI

DEFAULT_CLAMP = 35.0

_DEFAULT_IDENTIFICATION = {
    "additive_fe": "sum_equal",
    "slope_shift_fe": "sum_zero_both",
    "slope_scale_fe": "mean_half",
    "covariate_loaded_fe": "none_needed",
    "shared_slope_fe": "sum_zero_both",
}


@dataclass(frozen=True)
class ModelSpec:
    """Likelihood family, index form, identification and truncation lag.

    Parameters
    ----------
    family : {"probit", "logit", "gaussian"}
        ``gaussian`` has unit error variance (known).
    index_form : str
        ``additive_fe``:         pi = Z'theta + alpha_i + gamma_t
        ``slope_shift_fe``:      pi = Z'theta + (alpha_i + gamma_t) * sum_k X_k
        ``slope_scale_fe``:      pi = Z'theta * (alpha_i + gamma_t)
        ``covariate_loaded_fe``: pi = Z'theta + alpha_i U + gamma_t V
        ``shared_slope_fe``:     pi = Z'theta + (lambda + alpha_i + gamma_t) U,
        where ``Z`` stacks the lagged outcome (if ``lag_order``), the X
        block and, for ``shared_slope_fe``, ``U`` (whose coefficient is
        ``lambda``, the last entry of theta).
    lag_order : {0, 1}
        Whether ``Y_{it-1}`` is the first regressor.
    identification : str, optional
        Defaults to the natural normalisation of the index form.
    id_constants : tuple of float, optional
        Right-hand sides of the identification constraints.
    tau : int
        Truncation lag of the score autocovariance window.
    theta_dim : int, optional
        Checked against the data when given.
    strictly_exogenous : bool
        Forces ``tau = 0`` in the correction.
    clamp : float
        Binary links are evaluated at ``clip(pi, -clamp, clamp)``.
    """

    family: str = "logit"
    index_form: str = "additive_fe"
    lag_order: int = 0
    identification: Optional[str] = None
    id_constants: Optional[tuple] = None
    tau: int = 1
    theta_dim: Optional[int] = None
    strictly_exogenous: bool = False
    clamp: float = DEFAULT_CLAMP

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        if self.index_form not in INDEX_FORMS:
            raise ConfigError(f"unknown index form {self.index_form!r}")
        if self.lag_order not in (0, 1):
            raise ConfigError("lag_order must be 0 or 1")
        if self.identification is None:
            object.__setattr__(
                self, "identification", _DEFAULT_IDENTIFICATION[self.index_form])
        if self.identification not in IDENTIFICATIONS:
            raise ConfigError(f"unknown identification {self.identification!r}")
        if (self.identification == "none_needed") != (
                self.index_form == "covariate_loaded_fe"):
            raise ConfigError(
                "identification 'none_needed' is valid for (and only for) "
                "covariate_loaded_fe")
        if int(self.tau) < 0:
            raise ConfigError("tau must be >= 0")
        if self.theta_dim is not None and self.theta_dim < 1:
            raise ConfigError("theta_dim must be >= 1")
        if self.id_constants is not None:
            object.__setattr__(
                self, "id_constants", tuple(float(c) for c in self.id_constants))

    @property
    def binary(self) -> bool:
        return self.family != "gaussian"

    @property
    def effective_tau(self) -> int:
        return 0 if self.strictly_exogenous else int(self.tau)

    def with_tau(self, tau: int) -> "ModelSpec":
        return replace(self, tau=int(tau))


@dataclass
class PanelData:
    """Balanced ``N x T`` panel.

    ``x`` is ``(N, T, K)``; ``u`` and ``v`` are the optional fixed-effect
    loadings (``N x T``).  ``y_init`` holds ``Y_i0`` for dynamic models.
    """

    y: np.ndarray
    x: np.ndarray
    y_init: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    x_names: Optional[Sequence[str]] = None
    unit_labels: Optional[Sequence] = None
    time_labels: Optional[Sequence] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.y.ndim != 2:
            raise ConfigError("y must be an N x T matrix")
        n, t = self.y.shape
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 2:
            x = x[:, :, None]
        if x.shape[:2] != (n, t):
            raise ConfigError(f"x has shape {x.shape}, expected ({n}, {t}, K)")
        self.x = x
        for name in ("u", "v"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                if arr.shape != (n, t):
                    raise ConfigError(f"{name} must be {n} x {t}")
                setattr(self, name, arr)
        if self.y_init is not None:
            self.y_init = np.asarray(self.y_init, dtype=float).reshape(-1)
            if self.y_init.shape != (n,):
                raise ConfigError("y_init must have length N")
        if self.x_names is None:
            self.x_names = [f"x{k + 1}" for k in range(x.shape[2])]
        if self.unit_labels is None:
            self.unit_labels = list(range(n))
        if self.time_labels is None:
            self.time_labels = list(range(1, t + 1))
        for name in ("y", "x", "u", "v", "y_init"):
            arr = getattr(self, name)
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} contains missing or non-finite cells")

    @property
    def n_units(self) -> int:
        return self.y.shape[0]

    @property
    def n_periods(self) -> int:
        return self.y.shape[1]

    @property
    def shape(self):
        return self.y.shape

    @property
    def y_lag(self) -> Optional[np.ndarray]:
        if self.y_init is None:
            return None
        return np.column_stack([self.y_init, self.y[:, :-1]])

    def subset(self, units=None, periods=None) -> "PanelData":
        """Return the panel restricted to boolean/index masks.

        Dropping a period keeps the lag structure of the original panel: the
        lagged outcome of a surviving period still refers to the original
        previous period, so lags are materialised before slicing.
        """
        units = np.arange(self.n_units) if units is None else np.asarray(units)
        periods = (np.arange(self.n_periods) if periods is None
                   else np.asarray(periods))
        if units.dtype == bool:
            units = np.flatnonzero(units)
        if periods.dtype == bool:
            periods = np.flatnonzero(periods)
        ix = np.ix_(units, periods)
        meta = {}
        for key, val in self.meta.items():
            if isinstance(val, np.ndarray) and val.shape == self.y.shape:
                val = val[ix]
            meta[key] = val
        if self.y_init is not None:
            meta["y_lag"] = self.lagged_outcome()[ix]
        return PanelData(
            y=self.y[ix],
            x=self.x[units][:, periods],
            y_init=None if self.y_init is None else self.y_init[units],
            u=None if self.u is None else self.u[ix],
            v=None if self.v is None else self.v[ix],
            x_names=list(self.x_names),
            unit_labels=[self.unit_labels[i] for i in units],
            time_labels=[self.time_labels[t] for t in periods],
            meta=meta,
        )

    def lagged_outcome(self) -> np.ndarray:
        if "y_lag" in self.meta:
            return np.asarray(self.meta["y_lag"], dtype=float)
        lag = self.y_lag
        if lag is None:
            raise ConfigError("dynamic model requires y_init")
        return lag


def check_panel(spec: ModelSpec, data: PanelData) -> None:
    """Raise if ``data`` cannot carry ``spec``."""
    if spec.binary and not np.all((data.y == 0) | (data.y == 1)):
        raise BadFamilyData("binary families require y in {0, 1}")
    if spec.lag_order > 0:
        data.lagged_outcome()
    if spec.index_form == "covariate_loaded_fe":
        if data.u is None or data.v is None:
            raise ConfigError("covariate_loaded_fe requires both U and V")
        if np.array_equal(data.u, data.v):
            raise ConfigError("covariate_loaded_fe requires distinct U and V")
    if spec.index_form == "shared_slope_fe" and data.u is None:
        raise ConfigError("shared_slope_fe requires U")
    p = theta_dim(spec, data)
    if spec.theta_dim is not None and spec.theta_dim != p:
        raise ConfigError(f"theta_dim={spec.theta_dim} but data imply {p}")


def theta_dim(spec: ModelSpec, data: PanelData) -> int:
    p = spec.lag_order + data.x.shape[2]
    if spec.index_form == "shared_slope_fe":
        p += 1
    return p


def theta_names(spec: ModelSpec, data: PanelData) -> list:
    names = (["rho"] if spec.lag_order else []) + list(data.x_names)
    if spec.index_form == "shared_slope_fe":
        names.append("lambda")
    return names


# -- links ---------------------------------------------------------------------

def _inv_mills(z):
    # phi(z) / Phi(z), stable in both tails
    return np.exp(-0.5 * z * z - _LOG_SQRT_2PI - log_ndtr(z))


def link_terms(family: str, y, pi, order: int = 2, expected: bool = False):
    """Return ``(ell, d ell/d pi, d2 ell/d pi2)``; derivatives may be None.

    ``y`` may be a probability (expected likelihood for binary families) or
    a conditional mean (gaussian); all three quantities are linear in ``y``
    except for the gaussian variance term added when ``expected``.
    """
    if family == "logit":
        # log sigmoid(+-pi) = -softplus(-+pi), free of cancellation in the tails
        val = -y * np.logaddexp(0.0, -pi) - (1.0 - y) * np.logaddexp(0.0, pi)
        if order == 0:
            return val, None, None
        p, q = expit(pi), expit(-pi)
        d1 = y * q - (1.0 - y) * p
        d2 = -p * q if order > 1 else None
        return val, d1, d2
    if family == "probit":
        lp = log_ndtr(pi)
        lm = log_ndtr(-pi)
        val = y * lp + (1.0 - y) * lm
        if order == 0:
            return val, None, None
        mp = _inv_mills(pi)
        mm = _inv_mills(-pi)
        d1 = y * mp - (1.0 - y) * mm
        d2 = None
        if order > 1:
            d2 = -y * mp * (pi + mp) - (1.0 - y) * mm * (mm - pi)
        return val, d1, d2
    if family == "gaussian":
        r = y - pi
        val = -0.5 * _LOG_2PI - 0.5 * r * r
        if expected:
            val = val - 0.5
        if order == 0:
            return val, None, None
        d2 = -np.ones_like(r) if order > 1 else None
        return val, r, d2
    raise ConfigError(f"unknown family {family!r}")


def link_cdf(family: str, pi):
    """P(Y = 1 | pi) for binary families, the mean for gaussian."""
    if family == "logit":
        return expit(pi)
    if family == "probit":
        return np.exp(log_ndtr(pi))
    return pi


# -- vectorised index model ----------------------------------------------------

@dataclass
class LikTerms:
    """Link terms over the panel at one ``(theta, phi)``."""

    pi: np.ndarray
    val: np.ndarray
    d1: Optional[np.ndarray]
    d2: Optional[np.ndarray]
    clamp_hits: int


class IndexModel:
    """Precomputed regressors and loadings for one (spec, panel) pair."""

    def __init__(self, spec: ModelSpec, data: PanelData):
        check_panel(spec, data)
        self.spec = spec
        self.data = data
        self.N, self.T = data.shape
        blocks = []
        if spec.lag_order:
            blocks.append(data.lagged_outcome()[:, :, None])
        blocks.append(data.x)
        if spec.index_form == "shared_slope_fe":
            blocks.append(data.u[:, :, None])
        self.Z = np.concatenate(blocks, axis=2)
        self.p = self.Z.shape[2]
        form = spec.index_form
        if form == "additive_fe":
            self._a = self._g = None
        elif form == "slope_shift_fe":
            self._a = self._g = data.x.sum(axis=2)
        elif form == "covariate_loaded_fe":
            self._a, self._g = data.u, data.v
        elif form == "shared_slope_fe":
            self._a = self._g = data.u
        else:
            self._a = self._g = None
        self.y = data.y

    # loadings --------------------------------------------------------------
    def xb(self, theta):
        return self.Z @ np.asarray(theta, dtype=float)

    def loadings(self, theta):
        """``(d pi / d alpha_i, d pi / d gamma_t)`` as broadcastable arrays."""
        if self.spec.index_form == "slope_scale_fe":
            q = self.xb(theta)
            return q, q
        if self._a is None:
            return 1.0, 1.0
        return self._a, self._g

    def index(self, theta, alpha, gamma):
        theta = np.asarray(theta, dtype=float)
        alpha = np.asarray(alpha, dtype=float)
        gamma = np.asarray(gamma, dtype=float)
        q = self.xb(theta)
        if self.spec.index_form == "slope_scale_fe":
            return q * (alpha[:, None] + gamma[None, :])
        a, g = self.loadings(theta)
        return q + alpha[:, None] * a + gamma[None, :] * g

    def terms(self, theta, alpha, gamma, order=2, y=None, expected=False):
        pi = self.index(theta, alpha, gamma)
        if not np.all(np.isfinite(pi)):
            raise NonFiniteIndex("linear index is not finite")
        hits = 0
        pe = pi
        if self.spec.binary:
            c = self.spec.clamp
            over = np.abs(pi) > c
            hits = int(over.sum())
            if hits:
                pe = np.clip(pi, -c, c)
        yy = self.y if y is None else y
        val, d1, d2 = link_terms(self.spec.family, yy, pe, order, expected)
        return LikTerms(pi, val, d1, d2, hits)

    def dpi_dtheta(self, alpha, gamma):
        """``(N, T, p)`` array of d pi / d theta."""
        if self.spec.index_form == "slope_scale_fe":
            s = alpha[:, None] + gamma[None, :]
            return self.Z * s[:, :, None]
        return self.Z

    # derivative blocks -----------------------------------------------------
    def fe_score(self, theta, lt: LikTerms):
        a, g = self.loadings(theta)
        w = lt.d1
        return (w * a).sum(axis=1), (w * g).sum(axis=0)

    def fe_hessian(self, theta, lt: LikTerms):
        """Diagonal alpha/gamma blocks and the N x T cross block (sums)."""
        a, g = self.loadings(theta)
        w = lt.d2
        haa = (w * a * a)
        hgg = (w * g * g)
        hag = w * a * g
        haa = np.broadcast_to(haa, (self.N, self.T)).sum(axis=1)
        hgg = np.broadcast_to(hgg, (self.N, self.T)).sum(axis=0)
        return haa, hgg, np.broadcast_to(hag, (self.N, self.T))

    def theta_score(self, theta, alpha, gamma, lt: LikTerms):
        dz = self.dpi_dtheta(alpha, gamma)
        return np.einsum("it,itk->k", lt.d1, dz)

    def theta_blocks(self, theta, alpha, gamma, lt: LikTerms):
        """Second derivatives involving theta, summed over the panel.

        Returns ``(H_tt (p,p), H_ta (p,N), H_tg (p,T))``.
        """
        dz = self.dpi_dtheta(alpha, gamma)
        a, g = self.loadings(theta)
        w = lt.d2
        htt = np.einsum("it,itk,itl->kl", w, dz, dz)
        wa = np.broadcast_to(w * a, (self.N, self.T))
        wg = np.broadcast_to(w * g, (self.N, self.T))
        hta = np.einsum("it,itk->ki", wa, dz)
        htg = np.einsum("it,itk->kt", wg, dz)
        if self.spec.index_form == "slope_scale_fe":
            # d2 pi / d theta d alpha_i = Z_it
            hta = hta + np.einsum("it,itk->ki", lt.d1, self.Z)
            htg = htg + np.einsum("it,itk->kt", lt.d1, self.Z)
        return htt, hta, htg


# -- per-observation API -------------------------------------------------------

@dataclass
class DerivBundle:
    value: float
    grad_theta: np.ndarray
    grad_alpha: float
    grad_gamma: float
    d2_alpha: Optional[float] = None
    d2_gamma: Optional[float] = None
    d2_alpha_gamma: Optional[float] = None
    d2_theta_alpha: Optional[np.ndarray] = None
    d2_theta_gamma: Optional[np.ndarray] = None
    d2_theta: Optional[np.ndarray] = None
    d_pi: float = 0.0
    clamped: bool = False


def _cell(spec, data, i, t):
    n, tt = data.shape
    if not (0 <= i < n and 0 <= t < tt):
        raise ConfigError(f"cell ({i}, {t}) outside the {n} x {tt} panel")
    check_panel(spec, data)
    z = [data.lagged_outcome()[i, t]] if spec.lag_order else []
    z.extend(data.x[i, t])
    if spec.index_form == "shared_slope_fe":
        z.append(data.u[i, t])
    z = np.asarray(z, dtype=float)
    form = spec.index_form
    if form == "additive_fe":
        a = g = 1.0
    elif form == "slope_shift_fe":
        a = g = float(data.x[i, t].sum())
    elif form == "covariate_loaded_fe":
        a, g = float(data.u[i, t]), float(data.v[i, t])
    elif form == "shared_slope_fe":
        a = g = float(data.u[i, t])
    else:
        a = g = None
    return z, a, g


def obs_loglik(spec: ModelSpec, data: PanelData, i, t, theta, alpha_i, gamma_t):
    """Log density of ``Y_it`` at ``(theta, alpha_i, gamma_t)``."""
    return obs_derivs(spec, data, i, t, theta, alpha_i, gamma_t, order=0).value


def obs_derivs(spec: ModelSpec, data: PanelData, i, t, theta, alpha_i, gamma_t,
               order: int = 2) -> DerivBundle:
    """Analytic derivatives of ``l_it`` with respect to theta, alpha_i, gamma_t."""
    theta = np.asarray(theta, dtype=float)
    z, a, g = _cell(spec, data, i, t)
    if theta.shape != z.shape:
        raise ConfigError(f"theta must have length {z.size}")
    q = float(z @ theta)
    s = alpha_i + gamma_t
    if spec.index_form == "slope_scale_fe":
        pi = q * s
        a = g = q
        dpi_dt = z * s
    else:
        pi = q + alpha_i * a + gamma_t * g
        dpi_dt = z
    if not np.isfinite(pi):
        raise NonFiniteIndex("linear index is not finite")
    y = data.y[i, t]
    if spec.binary and y not in (0.0, 1.0):
        raise BadFamilyData("binary families require y in {0, 1}")
    clamped = False
    pe = pi
    if spec.binary and abs(pi) > spec.clamp:
        pe = float(np.clip(pi, -spec.clamp, spec.clamp))
        clamped = True
    val, d1, d2 = link_terms(spec.family, y, pe, max(order, 1))
    d1 = float(d1)
    out = DerivBundle(
        value=float(val),
        grad_theta=d1 * dpi_dt,
        grad_alpha=d1 * a,
        grad_gamma=d1 * g,
        d_pi=d1,
        clamped=clamped,
    )
    if order >= 2:
        d2 = float(d2)
        out.d2_alpha = d2 * a * a
        out.d2_gamma = d2 * g * g
        out.d2_alpha_gamma = d2 * a * g
        out.d2_theta = d2 * np.outer(dpi_dt, dpi_dt)
        out.d2_theta_alpha = d2 * dpi_dt * a
        out.d2_theta_gamma = d2 * dpi_dt * g
        if spec.index_form == "slope_scale_fe":
            out.d2_theta_alpha = out.d2_theta_alpha + d1 * z
            out.d2_theta_gamma = out.d2_theta_gamma + d1 * z
    return out
