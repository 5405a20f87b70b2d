"""scikit-learn style wrapper around :func:`panelcorr.inference.maximize`."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigError
from .inference import maximize
from .model import IndexModel, ModelSpec, PanelData, link_cdf
from .profiler import sanitize_panel


class TwoWayFEPanel(BaseEstimator):
    """Two-way fixed-effect panel model with optional likelihood correction.

    Parameters
    ----------
    family : {"logit", "probit", "gaussian"}
    index_form : str
        See :class:`panelcorr.model.ModelSpec`.
    lag_order : {0, 1}
    identification : str or None
    tau : int
        Truncation lag of the correction.
    objective : {"corrected", "raw"}
    sanitize : bool
        Drop units/periods whose effects diverge before fitting.

    Notes
    -----
    ``X`` is the ``(N, T, K)`` covariate panel and ``y`` the ``(N, T)``
    outcome.  ``u``, ``v`` and ``y_init`` are passed to :meth:`fit` as keyword
    arguments.  Predictions are in-sample: they reuse the fitted effects, so
    they are only defined for the panel that was fitted (after sanitising).
    """

    def __init__(self, family="logit", index_form="additive_fe", lag_order=0,
                 identification=None, tau=1, objective="corrected", sanitize=True):
        self.family = family
        self.index_form = index_form
        self.lag_order = lag_order
        self.identification = identification
        self.tau = tau
        self.objective = objective
        self.sanitize = sanitize

    def _spec(self):
        return ModelSpec(family=self.family, index_form=self.index_form,
                         lag_order=self.lag_order,
                         identification=self.identification, tau=self.tau)

    def _panel(self, X, y, u=None, v=None, y_init=None):
        X = check_array(X, allow_nd=True, ensure_2d=False, dtype=float)
        y = check_array(y, dtype=float)
        if X.ndim == 2:
            X = X[:, :, None]
        if X.ndim != 3 or X.shape[:2] != y.shape:
            raise ConfigError("X must be (N, T, K) with y of shape (N, T)")
        opt = {}
        for name, arr in (("u", u), ("v", v)):
            if arr is not None:
                opt[name] = check_array(arr, dtype=float)
        if y_init is not None:
            opt["y_init"] = check_array(np.asarray(y_init).reshape(-1, 1),
                                        dtype=float).ravel()
        return PanelData(y=y, x=X, **opt)

    def fit(self, X, y, u=None, v=None, y_init=None):
        if self.objective not in ("raw", "corrected"):
            raise ConfigError("objective must be 'raw' or 'corrected'")
        spec = self._spec()
        data = self._panel(X, y, u, v, y_init)
        if self.sanitize:
            data, self.sanitize_report_ = sanitize_panel(data, spec)
        else:
            self.sanitize_report_ = None
        self.result_ = maximize(data, spec, self.objective)
        self.coef_ = self.result_.theta_hat
        self.se_ = self.result_.se
        self.alpha_ = self.result_.profile.alpha_hat
        self.gamma_ = self.result_.profile.gamma_hat
        self.unit_labels_ = list(data.unit_labels)
        self.time_labels_ = list(data.time_labels)
        self.data_ = data
        self.spec_ = spec
        self.n_features_in_ = data.x.shape[2]
        return self

    def decision_function(self, X=None):
        """Fitted linear index on the fitted panel."""
        check_is_fitted(self, "coef_")
        model = IndexModel(self.spec_, self.data_)
        return model.index(self.coef_, self.alpha_, self.gamma_)

    def predict_proba(self, X=None):
        """``P(Y = 1)`` for binary families (``(N, T)``)."""
        if self.family == "gaussian":
            raise ConfigError("predict_proba is only defined for binary families")
        return link_cdf(self.family, self.decision_function(X))

    def predict(self, X=None):
        pi = self.decision_function(X)
        if self.family == "gaussian":
            return pi
        return (pi > 0).astype(float)

    def score(self, X=None, y=None):
        """Average log-likelihood of the fitted panel at the estimate."""
        check_is_fitted(self, "coef_")
        return float(self.result_.profile.terms.val.mean())
