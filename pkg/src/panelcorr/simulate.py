"""Simulation designs, infeasible likelihood and Monte Carlo experiments."""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ConfigError, NoConvergence, PanelCorrError
from .inference import _neg_inv, chi2_sf, maximize_objective
from .model import IndexModel, ModelSpec, PanelData, link_cdf
from .objectives import make_objective
from .profiler import Profiler, ProfileOptions, sanitize_panel

logger = logging.getLogger(__name__)

DESIGN_FORMS = {
    "ae": "additive_fe",          # alpha_i + gamma_t
    "ds": "covariate_loaded_fe",  # alpha_i U + gamma_t V
    "ls": "covariate_loaded_fe",  # alpha_i U + gamma_t
    "hs": "shared_slope_fe",      # (lambda + alpha_i + gamma_t) U
}

DEFAULT_DELTAS = tuple(round(-0.30 + 0.02 * k, 2) for k in range(31))


@dataclass(frozen=True)
class DgpDesign:
    """A simulation design.

    ``form`` is one of ``ae``, ``ds``, ``ls``, ``hs``.  The gaussian family
    with ``ae`` and ``dynamic`` is the pure panel AR(1) (no X).
    """

    family: str = "logit"
    form: str = "ds"
    dynamic: bool = True
    N: int = 56
    T: int = 14
    rho0: float = 0.5
    beta0: float = 1.0
    lambda0: float = 1.0
    effect_law: Optional[str] = None     # "normal" (sd 1/4) or "zeros"
    covariate_law: Optional[str] = None  # "ar" or "iid"

    def __post_init__(self):
        if self.family not in ("logit", "probit", "gaussian"):
            raise ConfigError(f"unknown family {self.family!r}")
        if self.form not in DESIGN_FORMS:
            raise ConfigError(f"unknown design form {self.form!r}")
        if self.N < 2 or self.T < 2:
            raise ConfigError("designs need N >= 2 and T >= 2")
        simple = self.form == "hs"
        if self.effect_law is None:
            object.__setattr__(self, "effect_law", "zeros" if simple else "normal")
        if self.covariate_law is None:
            object.__setattr__(self, "covariate_law", "iid" if simple else "ar")
        if self.effect_law not in ("normal", "zeros"):
            raise ConfigError("effect_law must be 'normal' or 'zeros'")
        if self.covariate_law not in ("ar", "iid"):
            raise ConfigError("covariate_law must be 'ar' or 'iid'")

    @classmethod
    def from_name(cls, name: str, **kw):
        """Parse ``family-form-dynamic|static``, e.g. ``logit-ds-dynamic``."""
        parts = name.lower().split("-")
        if len(parts) != 3 or parts[2] not in ("dynamic", "static"):
            raise ConfigError(f"design name {name!r} is not family-form-dynamic|static")
        return cls(family=parts[0], form=parts[1], dynamic=parts[2] == "dynamic", **kw)

    @property
    def name(self):
        return f"{self.family}-{self.form}-{'dynamic' if self.dynamic else 'static'}"

    @property
    def has_x(self):
        return not (self.family == "gaussian" and self.form == "ae" and self.dynamic)

    @property
    def theta0(self):
        th = []
        if self.dynamic:
            th.append(self.rho0)
        if self.has_x:
            th.append(self.beta0)
        if self.form == "hs":
            th.append(self.lambda0)
        return np.array(th)

    def spec(self, tau: int = 1) -> ModelSpec:
        return ModelSpec(family=self.family, index_form=DESIGN_FORMS[self.form],
                         lag_order=int(self.dynamic), tau=tau)


@dataclass
class Truth:
    design: DgpDesign
    theta0: np.ndarray
    alpha0: np.ndarray
    gamma0: np.ndarray
    gamma_init: float
    eps: np.ndarray
    index0: np.ndarray
    mean_y: np.ndarray


def _covariate(rng, design, alpha, gamma_all):
    n, t = design.N, design.T
    if design.covariate_law == "iid":
        return rng.normal(0.0, np.sqrt(0.5), size=(n, t + 1))
    w = np.empty((n, t + 1))
    w[:, 0] = rng.normal(size=n)
    nu = rng.normal(0.0, np.sqrt(0.5), size=(n, t))
    for s in range(1, t + 1):
        w[:, s] = w[:, s - 1] / 2 + alpha + gamma_all[s] + nu[:, s - 1]
    return w


def generate(design: DgpDesign, seed):
    """Simulate one panel.

    Returns ``(PanelData, Truth)``.  Column 0 of the simulated arrays is the
    initial period; the returned panel covers periods ``1..T``.
    """
    rng = np.random.default_rng(seed)
    n, t = design.N, design.T
    if design.effect_law == "normal":
        alpha = rng.normal(0.0, 0.25, size=n)
        gamma_all = rng.normal(0.0, 0.25, size=t + 1)
    else:
        alpha = np.zeros(n)
        gamma_all = np.zeros(t + 1)
    x = _covariate(rng, design, alpha, gamma_all) if design.has_x else None
    u = _covariate(rng, design, alpha, gamma_all) if design.form in ("ds", "ls", "hs") else None
    v = _covariate(rng, design, alpha, gamma_all) if design.form == "ds" else None
    if design.family == "logit":
        eps = rng.logistic(size=(n, t + 1))
    else:
        eps = rng.normal(size=(n, t + 1))

    if design.form == "ae":
        fe = alpha[:, None] + gamma_all[None, :]
    elif design.form == "ds":
        fe = alpha[:, None] * u + gamma_all[None, :] * v
    elif design.form == "ls":
        fe = alpha[:, None] * u + gamma_all[None, :]
    else:
        fe = (design.lambda0 + alpha[:, None] + gamma_all[None, :]) * u
    static = fe if x is None else fe + design.beta0 * x

    y = np.empty((n, t + 1))
    if design.family == "gaussian":
        y[:, 0] = 0.0 if design.dynamic else static[:, 0] + eps[:, 0]
    else:
        y[:, 0] = (static[:, 0] + eps[:, 0] > 0).astype(float)
    index0 = np.empty((n, t))
    for s in range(1, t + 1):
        pi = static[:, s] + (design.rho0 * y[:, s - 1] if design.dynamic else 0.0)
        index0[:, s - 1] = pi
        if design.family == "gaussian":
            y[:, s] = pi + eps[:, s]
        else:
            y[:, s] = (pi + eps[:, s] > 0).astype(float)
    mean_y = index0.copy() if design.family == "gaussian" else link_cdf(design.family, index0)

    xs = np.zeros((n, t, 0)) if x is None else x[:, 1:, None]
    data = PanelData(
        y=y[:, 1:], x=xs, y_init=y[:, 0] if design.dynamic else None,
        u=None if u is None else u[:, 1:],
        v=v[:, 1:] if v is not None else (np.ones((n, t)) if design.form == "ls" else None),
        x_names=["x"] if x is not None else [],
        meta={"mean_y": mean_y, "design": design.name})
    truth = Truth(design, design.theta0, alpha, gamma_all[1:], float(gamma_all[0]),
                  eps, index0, mean_y)
    return data, truth


def truth_center(model: IndexModel, mean_y):
    """Expected fixed-effect scores given the true conditional mean of Y."""
    mean_y = np.asarray(mean_y, dtype=float)

    def center(theta, alpha, gamma):
        lt = model.terms(theta, alpha, gamma, order=1, y=mean_y, expected=True)
        a, g = model.loadings(theta)
        shape = model.y.shape
        return (np.broadcast_to(lt.d1 * a, shape), np.broadcast_to(lt.d1 * g, shape))

    return center


def infeasible_loglik(truth: Truth, data: PanelData, theta,
                      opts: Optional[ProfileOptions] = None, spec=None):
    """``l(theta)`` and the pseudo-true effects ``phi(theta)``.

    ``phi(theta)`` maximises the average expected likelihood (outcome replaced
    by its true conditional mean); ``l`` is then the realised average
    log-likelihood there.  ``data.meta['mean_y']`` is used when present so
    sanitized panels stay aligned with the truth.
    """
    spec = spec or truth.design.spec()
    mean_y = data.meta.get("mean_y", truth.mean_y)
    model = IndexModel(spec, data)
    prof = Profiler(model, opts, y=mean_y, expected=True, warm_start=False)(theta)
    lt = model.terms(theta, prof.alpha_hat, prof.gamma_hat, order=0)
    return float(lt.val.mean()), prof


# -- Monte Carlo ---------------------------------------------------------------

@dataclass
class MCConfig:
    design: DgpDesign
    replications: int = 1000
    delta_grid: tuple = DEFAULT_DELTAS
    tau: int = 1
    kinds: tuple = ("LR",)
    objectives: tuple = ("infeasible", "raw", "corrected")
    master_seed: int = 0
    level: float = 0.05
    threads: int = 1
    center: bool = False
    hessian_mode: str = "fd"
    max_shrink: float = 0.2

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        self.delta_grid = tuple(float(d) for d in self.delta_grid)
        if not any(abs(d) < 1e-12 for d in self.delta_grid):
            raise ConfigError("delta grid must contain 0")
        self.kinds = tuple(k.upper() if k.upper() != "WALD" else "Wald"
                           for k in self.kinds)
        for k in self.kinds:
            if k not in ("LR", "LM", "Wald"):
                raise ConfigError(f"unknown test kind {k!r}")
        for o in self.objectives:
            if o not in ("infeasible", "raw", "corrected"):
                raise ConfigError(f"unknown objective {o!r}")

    def echo(self):
        d = asdict(self)
        d["design"] = asdict(self.design)
        d["design"]["name"] = self.design.name
        d["delta_grid"] = list(self.delta_grid)
        d["kinds"] = list(self.kinds)
        d["objectives"] = list(self.objectives)
        d.pop("threads")  # scheduling only; results do not depend on it
        return d


@dataclass
class MCReport:
    """Aggregated Monte Carlo output (plain Python containers only)."""

    config: dict
    rejection: list = field(default_factory=list)    # dict rows
    estimates: list = field(default_factory=list)    # dict rows
    replications: list = field(default_factory=list)  # dict rows
    n_used: int = 0
    n_excluded: int = 0
    exclusion_reasons: dict = field(default_factory=dict)

    def rate(self, objective, kind, delta=0.0):
        for row in self.rejection:
            if (row["objective"] == objective and row["kind"] == kind
                    and abs(row["delta"] - delta) < 1e-9):
                return row["rate"]
        raise KeyError((objective, kind, delta))

    def estimate(self, objective, parameter):
        for row in self.estimates:
            if row["objective"] == objective and row["parameter"] == parameter:
                return row
        raise KeyError((objective, parameter))

    def statistics(self, objective, kind, delta=0.0):
        """Per-replication statistics (kept replications only)."""
        key = f"{objective}:{kind}:{delta:.2f}"
        return np.array([r["stats"][key] for r in self.replications
                         if not r["excluded"] and key in r["stats"]])


def replication_seed(master_seed: int, rep: int):
    return np.random.SeedSequence([int(master_seed), int(rep)])


def _theta_names(design):
    names = []
    if design.dynamic:
        names.append("rho")
    if design.has_x:
        names.append("beta")
    if design.form == "hs":
        names.append("lambda")
    return names


def run_replication(config: MCConfig, rep: int) -> dict:
    """One replication; never raises for numerical failures."""
    design = config.design
    out = {"rep": rep, "excluded": False, "reason": "", "dropped_units": 0,
           "dropped_periods": 0, "estimates": {}, "stats": {}, "b_hat": None,
           "d_hat": None}
    data, truth = generate(design, replication_seed(config.master_seed, rep))
    spec = design.spec(config.tau)
    try:
        clean, report = sanitize_panel(data, spec)
    except PanelCorrError as exc:
        out.update(excluded=True, reason=f"sanitize: {exc}")
        return out
    out["dropped_units"] = len(report.dropped_units)
    out["dropped_periods"] = len(report.dropped_periods)
    shrink = 1.0 - clean.y.size / data.y.size
    if shrink > config.max_shrink:
        out.update(excluded=True, reason="panel shrinkage")
        return out
    model = IndexModel(spec, clean)
    theta0 = truth.theta0
    mean_y = clean.meta["mean_y"]
    center = truth_center(model, mean_y) if config.center else None
    need_h = any(k in config.kinds for k in ("Wald",))
    hinv = None
    try:
        for kind in config.objectives:
            obj = make_objective(kind, model, tau=config.tau, center=center,
                                 mean_y=mean_y, hessian_mode=config.hessian_mode)
            fit = maximize_objective(obj, theta0, hinv0=hinv,
                                     compute_hessian=need_h or kind == "raw")
            if not fit.converged:
                out.update(excluded=True, reason=f"{kind} fit did not converge")
                return out
            if kind == "raw":
                hinv = _neg_inv(fit.hessian_theta)
            if kind == "corrected":
                parts = obj.parts(fit.theta_hat)[1]
                out["b_hat"], out["d_hat"] = parts.b_hat, parts.d_hat
            out["estimates"][kind] = [float(v) for v in fit.theta_hat]
            nobs = obj.nobs
            for delta in config.delta_grid:
                th = theta0 + delta
                for k in config.kinds:
                    key = f"{kind}:{k}:{delta:.2f}"
                    try:
                        if k == "LR":
                            stat = -2.0 * nobs * (obj.value(th) - fit.loglik)
                        elif k == "LM":
                            g = obj.score(th)
                            stat = -nobs * g @ np.linalg.solve(obj.hessian(th), g)
                        else:
                            d = fit.theta_hat - th
                            stat = -nobs * d @ fit.hessian_theta @ d
                    except (PanelCorrError, np.linalg.LinAlgError):
                        stat = float("nan")
                    out["stats"][key] = float(max(stat, 0.0)) if np.isfinite(stat) else float("nan")
    except (PanelCorrError, np.linalg.LinAlgError, FloatingPointError) as exc:
        out.update(excluded=True, reason=f"{type(exc).__name__}: {exc}")
    return out


def _run_chunk(args):
    config, reps = args
    return [run_replication(config, r) for r in reps]


def _aggregate(config: MCConfig, reps: list) -> MCReport:
    from scipy.stats import chi2

    design = config.design
    kept = [r for r in reps if not r["excluded"]]
    reasons = {}
    for r in reps:
        if r["excluded"]:
            key = r["reason"].split(":")[0]
            reasons[key] = reasons.get(key, 0) + 1
    r_df = len(design.theta0)
    crit = float(chi2.ppf(1.0 - config.level, r_df))
    rejection = []
    for obj in config.objectives:
        for k in config.kinds:
            for delta in config.delta_grid:
                key = f"{obj}:{k}:{delta:.2f}"
                vals = np.array([r["stats"][key] for r in kept], dtype=float)
                vals = vals[np.isfinite(vals)]
                n = int(vals.size)
                rate = float(np.mean(vals > crit)) if n else float("nan")
                se = float(np.sqrt(rate * (1 - rate) / n)) if n else float("nan")
                rejection.append({"objective": obj, "kind": k, "delta": float(delta),
                                  "rate": rate, "mc_se": se, "n": n})
    estimates = []
    names = _theta_names(design)
    for obj in config.objectives:
        arr = np.array([r["estimates"][obj] for r in kept], dtype=float)
        for j, name in enumerate(names):
            true = float(design.theta0[j])
            if arr.size:
                col = arr[:, j]
                mean = float(col.mean())
                rmse = float(np.sqrt(np.mean((col - true) ** 2)))
            else:
                mean = rmse = float("nan")
            estimates.append({"objective": obj, "parameter": name, "true": true,
                              "mean": mean, "pct_bias": 100.0 * (mean - true) / true,
                              "rmse": rmse, "n": int(arr.shape[0])})
    return MCReport(config=config.echo(), rejection=rejection, estimates=estimates,
                    replications=reps, n_used=len(kept),
                    n_excluded=len(reps) - len(kept), exclusion_reasons=reasons)


def monte_carlo(config: MCConfig, progress=None) -> MCReport:
    """Run the experiment; results do not depend on ``config.threads``."""
    reps = list(range(config.replications))
    if config.threads <= 1:
        results = []
        for r in reps:
            results.append(run_replication(config, r))
            if progress is not None:
                progress(r + 1, config.replications)
    else:
        size = max(1, len(reps) // (4 * config.threads))
        chunks = [(config, reps[i:i + size]) for i in range(0, len(reps), size)]
        results = []
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            for part in pool.map(_run_chunk, chunks):
                results.extend(part)
    results.sort(key=lambda r: r["rep"])
    return _aggregate(config, results)


# -- report I/O ---------------------------------------------------------------

def _fmt(x):
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _parse(x):
    try:
        return int(x)
    except ValueError:
        pass
    try:
        return float(x)
    except ValueError:
        return x


_REJ_COLS = ["objective", "kind", "delta", "rate", "mc_se", "n"]
_EST_COLS = ["objective", "parameter", "true", "mean", "pct_bias", "rmse", "n"]


def _write_table(path, cols, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in cols])


def _read_table(path, cols, float_cols):
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        rows = []
        for row in rd:
            rows.append({c: (float(row[c]) if c in float_cols else _parse(row[c]))
                         for c in cols})
    return rows


def write_report(report: MCReport, outdir: str) -> dict:
    """Write ``rejection.csv``, ``estimates.csv``, ``replications.jsonl``, ``manifest.json``."""
    os.makedirs(outdir, exist_ok=True)
    paths = {k: os.path.join(outdir, f) for k, f in (
        ("rejection", "rejection.csv"), ("estimates", "estimates.csv"),
        ("replications", "replications.jsonl"), ("manifest", "manifest.json"))}
    _write_table(paths["rejection"], _REJ_COLS, report.rejection)
    _write_table(paths["estimates"], _EST_COLS, report.estimates)
    with open(paths["replications"], "w", encoding="utf-8") as fh:
        for r in report.replications:
            fh.write(json.dumps(r, sort_keys=True, allow_nan=True) + "\n")
    manifest = {"config": report.config, "n_used": report.n_used,
                "n_excluded": report.n_excluded,
                "exclusion_reasons": report.exclusion_reasons,
                "files": {k: os.path.basename(v) for k, v in paths.items()
                          if k != "manifest"}}
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def read_report(outdir: str) -> MCReport:
    with open(os.path.join(outdir, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    rejection = _read_table(os.path.join(outdir, "rejection.csv"), _REJ_COLS,
                            {"delta", "rate", "mc_se"})
    estimates = _read_table(os.path.join(outdir, "estimates.csv"), _EST_COLS,
                            {"true", "mean", "pct_bias", "rmse"})
    reps = []
    with open(os.path.join(outdir, "replications.jsonl"), encoding="utf-8") as fh:
        for line in fh:
            reps.append(json.loads(line))
    return MCReport(config=manifest["config"], rejection=rejection,
                    estimates=estimates, replications=reps,
                    n_used=manifest["n_used"], n_excluded=manifest["n_excluded"],
                    exclusion_reasons=manifest["exclusion_reasons"])


def report_to_dict(report: MCReport) -> dict:
    return asdict(report)
