"""Plug-in estimators of TV, NDE, NIE and Exp-SE for a cluster assignment.

All estimators evaluate identification formulas on the discretised
frequency tables of :mod:`causalfair.tables`:

* TV      = P(c|x1) - P(c|x0)
* NDE     = sum_{z,w} [P(c|x1,z,w) - P(c|x0,z,w)] P(w|x0,z) P(z)
* NIE     = sum_{z,w} P(c|x0,z,w) [P(w|x1,z) - P(w|x0,z)] P(z)
* Exp-SE  = sum_z P(c|x1,z)[P(z|x1) - P(z)] - P(c|x0,z)[P(z|x0) - P(z)]

``nie_reverse`` (the x1 -> x0 order) is what makes
TV = NDE - NIE + Exp-SE an identity; reports carry it for the residual.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import tables as T
from .clustering import Assignment
from .data import Dataset
from .parallel import child_rng, pmap
from .transport import TransportPlan, _cell_key

METRICS = ("tv", "nde", "nie", "exp_se")
CI_LEVEL = 0.95


class HypothesisError(ValueError):
    """A bound was requested where its preconditions do not hold."""


@dataclass(frozen=True)
class EffectEstimate:
    point: float
    ci_low: float
    ci_high: float
    n_inner: int = 0
    n_outer: int = 0
    flagged_cells: int = 0
    degenerate: bool = False

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _tables(d: Dataset, a: Assignment, bins=None):
    if len(a) != d.n:
        raise ValueError("assignment length differs from dataset size")
    layout = T.build_layout(d, a.labels, a.K, bins)
    return layout, T.build_tables(layout)


def _check_k(a: Assignment, k: int):
    if not 1 <= k <= a.K:
        raise ValueError(f"cluster index {k} outside 1..{a.K}")


def _estimator(name: str, functional: Callable):
    def est(d: Dataset, a: Assignment, k: int, bins: int | None = None) -> EffectEstimate:
        _check_k(a, k)
        _, t = _tables(d, a, bins)
        v = float(functional(t)[k - 1])
        return EffectEstimate(v, v, v, flagged_cells=t.flagged)

    est.__name__ = f"estimate_{name}"
    est.__doc__ = f"Plug-in {name} for cluster ``k`` (1-based); no interval (see :func:`bootstrap`)."
    est.functional = functional
    return est


def estimate_tv(d: Dataset, a: Assignment, k: int, bins: int | None = None) -> EffectEstimate:
    """P(c_k | x1) - P(c_k | x0) by direct frequencies."""
    _check_k(a, k)
    x = d.x
    if not (x == 0).any() or not (x == 1).any():
        raise ValueError("total variation needs both protected groups non-empty")
    hit = a.labels == k
    v = float(hit[x == 1].mean() - hit[x == 0].mean())
    return EffectEstimate(v, v, v)


estimate_tv.functional = T.tv
estimate_nde = _estimator("nde", T.nde)
estimate_nie = _estimator("nie", T.nie)
estimate_nie_reverse = _estimator("nie_reverse", T.nie_reverse)
estimate_exp_se = _estimator("exp_se", T.exp_se)

ESTIMATORS = {"tv": estimate_tv, "nde": estimate_nde, "nie": estimate_nie, "exp_se": estimate_exp_se}


def _delta_w_for(layout, t, plan: TransportPlan | None) -> np.ndarray:
    if plan is None:
        return t.delta_w()
    measured = t.delta_w()
    out = np.empty(layout.nz)
    for i, key in enumerate(layout.z_keys):
        out[i] = plan.residual_delta_w.get(_cell_key(key), measured[i])
    return out


def nie_bound(d: Dataset, a: Assignment, k: int, plan: TransportPlan | None = None,
              bins: int | None = None) -> float:
    """sum_z P(z) * sup_w P(c_k | x0, z, w) * delta_w(z).

    ``delta_w`` comes from the plan's residuals (measured on the adapted data
    the plan produced); without a plan it is measured on ``d``.
    """
    _check_k(a, k)
    layout, t = _tables(d, a, bins)
    sup = np.zeros(layout.nz)
    np.maximum.at(sup, layout.zw_to_z, t.p_c_xzw[0, :, k - 1])
    return float(np.sum(t.p_z * sup * _delta_w_for(layout, t, plan)))


def exp_se_bound(d: Dataset, a: Assignment, k: int, plan: TransportPlan | None = None,
                 bins: int | None = None) -> float:
    """sup_z P(c_k | z) * delta_z for an assignment made without X.

    The supremum runs over the group-specific conditionals P(c_k | x, z),
    which coincide with P(c_k | z) when mediators are aligned and dominate
    it otherwise.
    """
    _check_k(a, k)
    if a.ftu is not True:
        raise HypothesisError("the Exp-SE bound only holds for assignments that do not use X")
    layout, t = _tables(d, a, bins)
    delta_z = t.delta_z() if plan is None else plan.residual_delta_z
    sup = float(np.max(t.p_c_xz[:, :, k - 1])) if layout.nz else 0.0
    return sup * float(delta_z)


def _percentile_interval(values: np.ndarray, level: float = CI_LEVEL):
    vals = values[np.isfinite(values)]
    if vals.size < 2:
        return None
    tail = 100 * (1 - level) / 2
    lo, hi = np.percentile(vals, [tail, 100 - tail])
    return float(lo), float(hi)


def _replicate_functionals(d: Dataset, a: Assignment, functionals, n_inner: int, n_outer: int, seed: int,
                           workers: int | None, bins: int | None) -> np.ndarray:
    """Array (n_outer * n_inner, len(functionals), K) of replicate values.

    Replicate (o, i) draws its resample with a generator keyed by
    (seed, o, i) as a multinomial over the (x, z, w, c) cells, which has the
    same distribution as resampling rows with the assignment held fixed.
    Every functional sees the same resample.
    """
    n = d.n
    layout = T.build_layout(d, a.labels, a.K, bins)
    N0 = layout.counts()
    p = N0.ravel() / n

    def one(o, i):
        rng = child_rng(seed, o, i)
        Nb = rng.multinomial(n, p).reshape(N0.shape).astype(float)
        with np.errstate(invalid="ignore", divide="ignore"):
            t = T.tables_from_counts(Nb, layout.zw_to_z, layout.nz)
        row = np.full((len(functionals), a.K), np.nan)
        for r, f in enumerate(functionals):
            try:
                with np.errstate(invalid="ignore", divide="ignore"):
                    row[r] = f(t)
            except ValueError:
                pass
        return row

    def outer(o):
        return [one(o, i) for i in range(n_inner)]

    blocks = pmap(outer, range(n_outer), workers)
    return np.asarray([r for b in blocks for r in b]).reshape(n_outer * n_inner, len(functionals), a.K)


def bootstrap_values(est, d: Dataset, a: Assignment, k: int, n_inner: int = 100, n_outer: int = 5,
                     seed: int = 0, workers: int | None = None, bins: int | None = None) -> np.ndarray:
    """Replicate estimates for cluster ``k`` in (outer, inner) order.

    Estimators without a table functional fall back to explicit row
    resampling under the same (seed, o, i) keys.
    """
    if n_inner < 1 or n_outer < 1:
        raise ValueError("n_inner and n_outer must be >= 1")
    _check_k(a, k)
    functional = getattr(est, "functional", None)
    if functional is not None:
        return _replicate_functionals(d, a, [functional], n_inner, n_outer, seed, workers, bins)[:, 0, k - 1]
    n = d.n

    def outer(o):
        vals = []
        for i in range(n_inner):
            idx = child_rng(seed, o, i).integers(0, n, size=n)
            try:
                vals.append(float(est(d.take(idx), Assignment(a.labels[idx], a.K, a.ftu), k).point))
            except ValueError:
                vals.append(math.nan)
        return vals

    return np.asarray([v for b in pmap(outer, range(n_outer), workers) for v in b])


def _interval(point: float, vals: np.ndarray, n_inner: int, n_outer: int, flagged: int) -> EffectEstimate:
    ci = _percentile_interval(vals)
    if ci is None:
        return EffectEstimate(point, point, point, n_inner, n_outer, flagged, True)
    lo, hi = ci
    return EffectEstimate(point, min(lo, point), max(hi, point), n_inner, n_outer, flagged)


def bootstrap(est, d: Dataset, a: Assignment, k: int, n_inner: int = 100, n_outer: int = 5,
              seed: int = 0, workers: int | None = None, bins: int | None = None) -> EffectEstimate:
    """Full-data point estimate with a 95% percentile interval over n_inner x n_outer replicates.

    The interval is widened to contain the point if needed. With fewer than
    two usable replicates the interval collapses onto the point and the
    estimate is flagged ``degenerate``.
    """
    base = est(d, a, k) if est is estimate_tv else est(d, a, k, bins)
    vals = bootstrap_values(est, d, a, k, n_inner, n_outer, seed, workers, bins)
    return _interval(base.point, vals, n_inner, n_outer, base.flagged_cells)


# --- reports --------------------------------------------------------------


@dataclass(frozen=True)
class ClusterReport:
    k: int
    tv: EffectEstimate
    nde: EffectEstimate
    nie: EffectEstimate
    exp_se: EffectEstimate
    nie_reverse: float
    nie_bound: float
    exp_se_bound: float | None
    decomposition_residual: float
    decomposition_residual_x0x1: float

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            **{m: getattr(self, m).as_dict() for m in METRICS},
            "nie_reverse": self.nie_reverse,
            "nie_bound": self.nie_bound,
            "exp_se_bound": self.exp_se_bound,
            "decomposition_residual": self.decomposition_residual,
            "decomposition_residual_x0x1": self.decomposition_residual_x0x1,
        }


@dataclass(frozen=True)
class EffectReport:
    clusters: Mapping[int, ClusterReport]
    K: int
    n: int
    flagged_cells: int
    covariates: str = "adapted"
    original_covariates: Mapping[str, list] = field(default_factory=dict)

    def __getitem__(self, k: int) -> ClusterReport:
        return self.clusters[k]

    def max_abs(self) -> float:
        return max(abs(getattr(c, m).point) for c in self.clusters.values() for m in METRICS)

    def as_dict(self) -> dict:
        return {
            "K": self.K,
            "n": self.n,
            "flagged_cells": self.flagged_cells,
            "covariates": self.covariates,
            "clusters": {str(k): c.as_dict() for k, c in self.clusters.items()},
            "original_covariates": dict(self.original_covariates),
        }

    def rows(self, method: str) -> list[tuple]:
        out = []
        for k, c in self.clusters.items():
            for m in METRICS:
                e = getattr(c, m)
                out.append((method, k, m, e.point, e.ci_low, e.ci_high))
        return out


def tidy_csv(rows) -> str:
    """method,cluster,metric,point,lo,hi with round-trip float formatting."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "cluster", "metric", "point", "lo", "hi"])
    for method, k, m, p, lo, hi in rows:
        w.writerow([method, k, m, repr(float(p)), repr(float(lo)), repr(float(hi))])
    return buf.getvalue()


def full_report(d_original: Dataset, d_adapted: Dataset, a: Assignment, plan: TransportPlan | None = None,
                K: int | None = None, n_inner: int = 100, n_outer: int = 5, seed: int = 0,
                workers: int | None = None, bins: int | None = None, with_intervals: bool = True) -> EffectReport:
    """All effects, bounds and the decomposition residual for every cluster.

    Effects are measured on ``d_adapted``: the covariates the cluster
    mechanism actually consumed (identical to ``d_original`` for methods
    without transport). Point estimates on ``d_original`` are attached
    under ``original_covariates`` for reference.
    """
    K = K or a.K
    layout, t = _tables(d_adapted, a, bins)
    vals = {name: f(t) for name, f in T.FUNCTIONALS.items()}
    if with_intervals:
        if n_inner < 1 or n_outer < 1:
            raise ValueError("n_inner and n_outer must be >= 1")
        reps = _replicate_functionals(d_adapted, a, [T.FUNCTIONALS[m] for m in METRICS],
                                      n_inner, n_outer, seed, workers, bins)
    clusters = {}
    for k in range(1, K + 1):
        ests = {}
        for r, m in enumerate(METRICS):
            v = float(vals[m][k - 1])
            if m == "tv":
                v = estimate_tv(d_adapted, a, k).point
            if with_intervals:
                ests[m] = _interval(v, reps[:, r, k - 1], n_inner, n_outer, 0 if m == "tv" else t.flagged)
            else:
                ests[m] = EffectEstimate(v, v, v, flagged_cells=0 if m == "tv" else t.flagged)
        try:
            se_bound = exp_se_bound(d_adapted, a, k, plan, bins)
        except HypothesisError:
            se_bound = None
        tv_, nde_, nie_, nr_, se_ = (float(vals[m][k - 1]) for m in ("tv", "nde", "nie", "nie_reverse", "exp_se"))
        clusters[k] = ClusterReport(
            k, ests["tv"], ests["nde"], ests["nie"], ests["exp_se"], nr_,
            nie_bound(d_adapted, a, k, plan, bins), se_bound,
            tv_ - (nde_ - nr_ + se_), tv_ - (nde_ - nie_ + se_),
        )
    original = {}
    if d_original is not None and d_original is not d_adapted:
        _, t0 = _tables(d_original, a, bins)
        original = {m: [float(v) for v in T.FUNCTIONALS[m](t0)] for m in METRICS}
    return EffectReport(clusters, K, d_adapted.n, t.flagged,
                        "adapted" if d_original is not d_adapted else "original", original)
