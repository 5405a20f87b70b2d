"""Scaled Schur complements of the expected fixed-effect Hessian.

For a panel with one dimension held fixed, ``A = H_gg - H_ga H_aa^{-1} H_ag``
(``T x T``) and ``B = H_aa - H_ag H_gg^{-1} H_ga`` (``N x N``) are formed from
expected second derivatives at ``(theta, phi(theta))``.  The series
``||A^{-1}||_inf / T`` over a grid of ``T`` (or ``||B^{-1}||_inf / N`` over
``N``) should not trend; the check regresses first differences of its log on
a constant.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, stats

from .exceptions import ConfigError, SingularBlock
from .model import IndexModel
from .profiler import Profiler, ProfileOptions
from .simulate import DgpDesign, generate

DEFAULT_GRID = tuple(range(10, 201, 10))
MAX_DENSE = 1200


@dataclass
class SchurSeries:
    design: str
    which: str          # "A" (T grid, N fixed) or "B" (N grid, T fixed)
    delta: float
    fixed_size: int
    grid: list
    values: list
    log_diffs: list = field(default_factory=list)
    estimate: float = float("nan")
    p_value: float = float("nan")
    flags: dict = field(default_factory=dict)

    def accepted(self, level=0.05):
        return bool(np.isfinite(self.p_value) and self.p_value > level)


def expected_fe_hessian(model: IndexModel, theta, mean_y,
                        opts: Optional[ProfileOptions] = None):
    """Average-scaled expected Hessian blocks at the pseudo-true effects."""
    prof = Profiler(model, opts, y=mean_y, expected=True, warm_start=False)(theta)
    lt = model.terms(theta, prof.alpha_hat, prof.gamma_hat, order=2, y=mean_y,
                     expected=True)
    nt = model.N * model.T
    haa, hgg, hag = model.fe_hessian(theta, lt)
    return haa / nt, hgg / nt, hag / nt, prof


def _restricted_inverse(m, deflate):
    """Inverse of ``m``, restricted to the complement of ``1`` when ``deflate``."""
    if not deflate:
        return linalg.inv(m)
    k = m.shape[0]
    q = linalg.null_space(np.ones((1, k)))
    return q @ linalg.inv(q.T @ m @ q) @ q.T


def schur_complement(haa, hgg, hag, which="A"):
    """Dense Schur complement eliminating the other (diagonal) block."""
    if which == "A":
        if np.any(haa >= 0):
            raise SingularBlock("H_aa has a non-negative diagonal entry")
        return np.diag(hgg) - (hag.T / haa) @ hag
    if np.any(hgg >= 0):
        raise SingularBlock("H_gg has a non-negative diagonal entry")
    return np.diag(haa) - (hag / hgg) @ hag.T


def scaled_inverse_norm(s, size, deflate):
    return float(np.linalg.norm(_restricted_inverse(s, deflate), np.inf) / size)


def _series_point(design: DgpDesign, which, delta, size, fixed_size, seed, idx, opts):
    if which == "A":
        d = replace(design, N=fixed_size, T=size)
    else:
        d = replace(design, N=size, T=fixed_size)
    if max(d.N, d.T) > MAX_DENSE:
        raise ConfigError(f"dense size {max(d.N, d.T)} exceeds {MAX_DENSE}")
    data, truth = generate(d, np.random.SeedSequence([int(seed), int(idx)]))
    spec = d.spec()
    model = IndexModel(spec, data)
    theta = truth.theta0 + delta
    haa, hgg, hag, _ = expected_fe_hessian(model, theta, truth.mean_y, opts)
    s = schur_complement(haa, hgg, hag, which)
    deflate = spec.identification != "none_needed"
    return scaled_inverse_norm(s, size, deflate)


def first_difference_test(values):
    """Mean of ``diff(log values)`` and the two-sided t-test p-value."""
    v = np.asarray(values, dtype=float)
    diffs = np.diff(np.log(v))
    flags = {}
    if diffs.size == 0:
        return diffs, float("nan"), float("nan"), {"insufficient_grid": True}
    est = float(diffs.mean())
    if diffs.size < 2:
        flags["insufficient_df"] = True
        return diffs, est, float("nan"), flags
    if np.allclose(diffs, diffs[0], rtol=0, atol=1e-15):
        flags["zero_variance"] = True
        return diffs, est, float("nan"), flags
    p = float(stats.ttest_1samp(diffs, 0.0).pvalue)
    return diffs, est, p, flags


def schur_invariance_check(design: DgpDesign, delta: float = 0.0,
                           which: str = "A", grid: Sequence[int] = DEFAULT_GRID,
                           seed: int = 0, fixed_size: int = 100,
                           opts: Optional[ProfileOptions] = None,
                           threads: int = 1) -> SchurSeries:
    """Simulate one panel per grid point and test the scaled norm for drift."""
    grid = [int(g) for g in grid]
    if which not in ("A", "B"):
        raise ConfigError("which must be 'A' or 'B'")
    if len(grid) < 1 or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("grid must be strictly increasing")
    if grid[0] < 2:
        raise ConfigError("grid values must be >= 2")
    args = [(design, which, float(delta), g, fixed_size, seed, k, opts)
            for k, g in enumerate(grid)]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(_series_point_args, args))
    else:
        values = [_series_point(*a) for a in args]
    values = [float(v) for v in values]
    if not all(np.isfinite(v) and v > 0 for v in values):
        raise SingularBlock("scaled inverse norm is not positive and finite")
    diffs, est, p, flags = first_difference_test(values)
    return SchurSeries(design=design.name, which=which, delta=float(delta),
                       fixed_size=fixed_size, grid=grid, values=values,
                       log_diffs=[float(x) for x in diffs], estimate=est,
                       p_value=p, flags=flags)


def _series_point_args(a):
    return _series_point(*a)


def write_series(series: list, table_path: str, series_path: Optional[str] = None):
    """Summary table (Est., Sig.) and, optionally, the long-format series."""
    with open(table_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["design", "series", "delta", "fixed_size", "est", "sig",
                    "n_diffs", "flags"])
        for s in series:
            w.writerow([s.design, f"d{s.which}", format(s.delta, ".17g"),
                        s.fixed_size, format(s.estimate, ".17g"),
                        format(s.p_value, ".17g"), len(s.log_diffs),
                        ";".join(sorted(s.flags))])
    if series_path:
        with open(series_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["design", "series", "delta", "size", "scaled_norm"])
            for s in series:
                for g, v in zip(s.grid, s.values):
                    w.writerow([s.design, s.which, format(s.delta, ".17g"), g,
                                format(v, ".17g")])
