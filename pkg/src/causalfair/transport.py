"""Optimal-transport adaptation of confounders and mediators.

The confounder step moves ``Z | x1`` onto ``Z | x0`` column by column (or
leaves Z alone when the SE flag is off). The mediator step then transports
each W column, conditioned on the discretised Z cell: either the x1 group
onto the x0 group (NIE flag on), or each group onto its own pre-adaptation
conditional (NIE flag off). Continuous columns use the monotone quantile
coupling, which is the 1-D optimal map for any convex cost; categorical
columns use the coupling that moves the least mass under the 0/1 cost.

All randomness (which categorical rows move) is drawn from generators keyed
by ``(seed, column, cell, group)``, so refitting or reapplying a plan gives
bit-identical output.
"""

from __future__ import annotations

import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data import Dataset, EffectFlags, bin_codes, bin_labels, equal_frequency_edges
from .parallel import child_rng
from .tables import build_layout, build_tables

log = logging.getLogger(__name__)


class TransportError(ValueError):
    """Transport failure; ``stage`` is "confounders" or "mediators" when known."""

    stage: str | None = None


@dataclass(frozen=True)
class QuantileMap:
    """Piecewise-linear monotone map through ``(knots_x[i], knots_y[i])``.

    Values outside ``[knots_x[0], knots_x[-1]]`` are extended linearly with
    the slope of the nearest end segment.
    """

    knots_x: np.ndarray
    knots_y: np.ndarray

    def __call__(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        kx, ky = self.knots_x, self.knots_y
        if len(kx) == 1:
            return v - kx[0] + ky[0]
        out = np.interp(v, kx, ky)
        lo, hi = v < kx[0], v > kx[-1]
        if lo.any():
            slope = (ky[1] - ky[0]) / (kx[1] - kx[0])
            out[lo] = ky[0] + slope * (v[lo] - kx[0])
        if hi.any():
            slope = (ky[-1] - ky[-2]) / (kx[-1] - kx[-2])
            out[hi] = ky[-1] + slope * (v[hi] - kx[-1])
        return out

    def out_of_support(self, v) -> int:
        v = np.asarray(v, dtype=float)
        return int(np.sum((v < self.knots_x[0]) | (v > self.knots_x[-1])))

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.knots_x, self.knots_y))

    def to_dict(self) -> dict:
        return {"type": "quantile", "x": self.knots_x.tolist(), "y": self.knots_y.tolist()}


def fit_quantile_map(source, target) -> QuantileMap:
    """Match the p-th empirical quantile of ``source`` to that of ``target``.

    Order statistics are placed at p = i / (n - 1); tied source values sit
    at their mean rank; target quantiles interpolate linearly between order
    statistics.
    """
    s = np.sort(np.asarray(source, dtype=float))
    t = np.sort(np.asarray(target, dtype=float))
    if s.size == 0 or t.size == 0:
        raise TransportError("quantile map needs non-empty source and target samples")
    ux, first, counts = np.unique(s, return_index=True, return_counts=True)
    rank = first + (counts - 1) / 2.0
    if s.size > 1:
        pos = rank * (t.size - 1) / (s.size - 1)
    else:
        pos = np.full(1, (t.size - 1) / 2.0)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, t.size - 1)
    frac = pos - lo
    y = t[lo] + frac * (t[hi] - t[lo])
    y = np.where(frac == 0.0, t[lo], y)
    return QuantileMap(ux, np.maximum.accumulate(y))


@dataclass(frozen=True)
class CategoricalMap:
    """Row-stochastic transfer matrix ``transfer[a, b] = P(a -> b | a)`` over level codes."""

    transfer: np.ndarray
    moved: float

    @property
    def is_identity(self) -> bool:
        return bool(np.allclose(self.transfer, np.eye(len(self.transfer)), atol=0.0))

    def apply(self, codes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Reassign rows so each level's outflow matches the transfer counts.

        Counts per destination come from largest-remainder rounding of
        ``n_a * transfer[a]``; which rows move is a seeded permutation.
        """
        codes = np.asarray(codes, dtype=np.int64)
        out = codes.copy()
        m = len(self.transfer)
        for a in range(m):
            idx = np.flatnonzero(codes == a)
            if idx.size == 0 or self.transfer[a, a] == 1.0:
                continue
            quota = _largest_remainder(idx.size, self.transfer[a])
            perm = idx[rng.permutation(idx.size)]
            out[perm] = np.repeat(np.arange(m), quota)
        return out

    def to_dict(self, labels=None) -> dict:
        d = {"type": "categorical", "transfer": self.transfer.tolist(), "moved": self.moved}
        if labels is not None:
            d["levels"] = list(labels)
        return d


def _largest_remainder(n: int, probs: np.ndarray) -> np.ndarray:
    raw = n * np.asarray(probs, dtype=float)
    base = np.floor(raw + 1e-12).astype(np.int64)
    short = n - int(base.sum())
    if short > 0:
        order = np.lexsort((np.arange(len(raw)), -(raw - base)))
        base[order[:short]] += 1
    return base


def fit_categorical_map(source, target, seed: int | None = None) -> CategoricalMap:
    """Minimum-movement coupling between two level distributions.

    Mass shared by a level stays put; surplus levels send their excess to
    deficit levels in level order. Every such coupling has the same 0/1
    cost, so this one is optimal. ``seed`` is unused at fit time; row
    selection happens in :meth:`CategoricalMap.apply`.
    """
    p = np.asarray(source, dtype=float)
    q = np.asarray(target, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise TransportError("source and target must be distributions over the same levels")
    if p.sum() <= 0 or q.sum() <= 0:
        raise TransportError("empty level distribution")
    p, q = p / p.sum(), q / q.sum()
    keep = np.minimum(p, q)
    surplus = p - keep
    deficit = q - keep
    m = len(p)
    plan = np.diag(keep)
    i = j = 0
    while i < m and j < m:
        if surplus[i] <= 1e-15:
            i += 1
            continue
        if deficit[j] <= 1e-15:
            j += 1
            continue
        amt = min(surplus[i], deficit[j])
        plan[i, j] += amt
        surplus[i] -= amt
        deficit[j] -= amt
    transfer = np.eye(m)
    has = p > 0
    transfer[has] = plan[has] / p[has, None]
    return CategoricalMap(transfer, float(np.sum(np.maximum(p - q, 0.0))))


# --- plans ----------------------------------------------------------------


def _cell_key(key: tuple) -> str:
    return " | ".join(str(k) for k in key) if key else "all"


@dataclass(frozen=True)
class TransportPlan:
    flags: EffectFlags
    seed: int
    bins: int
    tau_z: Mapping[str, object]  # column -> QuantileMap | CategoricalMap (x1 rows only)
    z_edges: Mapping[str, np.ndarray]  # continuous Z columns -> bin edges on adapted Z
    tau_w: Mapping[str, Mapping[str, Mapping[str, object]]]  # column -> group -> cell -> map
    tau_w_fallback: Mapping[str, Mapping[str, object]]  # column -> group -> map
    residual_delta_z: float = 0.0
    residual_delta_w: Mapping[str, float] = field(default_factory=dict)
    flagged: Mapping[str, object] = field(default_factory=dict)
    levels: Mapping[str, tuple] = field(default_factory=dict)

    @property
    def tau_z_identity(self) -> bool:
        return not self.tau_z

    @property
    def groups(self) -> tuple[str, ...]:
        return ("x1",) if self.flags.nie else ("x0", "x1")

    def to_dict(self) -> dict:
        def enc(col, m):
            return m.to_dict(self.levels.get(col)) if isinstance(m, CategoricalMap) else m.to_dict()

        return {
            "flags": {"nde": self.flags.nde, "nie": self.flags.nie, "se": self.flags.se},
            "seed": self.seed,
            "bins": self.bins,
            "tau_z_identity": self.tau_z_identity,
            "tau_z": {c: enc(c, m) for c, m in self.tau_z.items()},
            "z_edges": {c: np.asarray(e).tolist() for c, e in self.z_edges.items()},
            "tau_w": {
                c: {g: {k: enc(c, m) for k, m in cells.items()} for g, cells in groups.items()}
                for c, groups in self.tau_w.items()
            },
            "tau_w_fallback": {c: {g: enc(c, m) for g, m in gm.items()} for c, gm in self.tau_w_fallback.items()},
            "residual_delta_z": self.residual_delta_z,
            "residual_delta_w": dict(self.residual_delta_w),
            "flagged": dict(self.flagged),
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def _map_z(d: Dataset, plan_tau_z, seed: int, counter: dict) -> dict:
    x1 = d.x == 1
    out = {}
    for j, col in enumerate(d.schema.confounders):
        m = plan_tau_z.get(col)
        if m is None:
            continue
        v = np.array(d.codes(col))
        if isinstance(m, QuantileMap):
            counter["out_of_support"] += m.out_of_support(v[x1])
            v = v.astype(float)
            v[x1] = m(v[x1])
        else:
            v[x1] = m.apply(v[x1], child_rng(seed, 0, j))
        out[col] = v
    return out


def _z_cells(d: Dataset, edges: Mapping[str, np.ndarray]):
    """Joint Z-cell key per row using fixed edges for continuous columns."""
    cols = d.schema.confounders
    if not cols:
        return np.array(["all"] * d.n, dtype=object)
    parts = []
    for col in cols:
        if d.schema.kind(col) == "continuous":
            e = edges[col]
            labels = np.asarray(bin_labels(e), dtype=object)
            parts.append(labels[bin_codes(d.codes(col), e)])
        else:
            parts.append(np.asarray(d.levels[col], dtype=object)[d.codes(col)])
    keys = parts[0].astype(str)
    for p in parts[1:]:
        keys = np.char.add(np.char.add(keys, " | "), p.astype(str))
    return keys.astype(object)


def _fit_map(kind: str, src_vals, tgt_vals, n_levels: int):
    if kind == "continuous":
        return fit_quantile_map(src_vals, tgt_vals)
    p = np.bincount(src_vals, minlength=n_levels)
    q = np.bincount(tgt_vals, minlength=n_levels)
    return fit_categorical_map(p, q)


def _apply_map(m, vals, rng):
    if isinstance(m, QuantileMap):
        return m(vals)
    return m.apply(vals, rng)


@contextmanager
def _stage(name: str):
    try:
        yield
    except TransportError as e:
        e.stage = e.stage or name
        raise
    except ValueError as e:
        err = TransportError(str(e))
        err.stage = name
        raise err from e


def fit_plan(d: Dataset, flags: EffectFlags, seed: int = 0, bins: int | None = None) -> TransportPlan:
    """Fit the confounder and mediator maps and record the residual distances."""
    s = d.schema
    bins = bins or s.bins
    if d.n == 0:
        raise TransportError("cannot fit a transport plan on an empty dataset")
    if np.all(d.x == 0) or np.all(d.x == 1):
        raise TransportError("both protected groups must be present")
    x = d.x
    counter = {"out_of_support": 0, "fallback_cells": [], "empty_z_with_se": False}

    with _stage("confounders"):
        tau_z = {}
        if flags.se:
            if not s.confounders:
                log.warning("SE flag set but the schema has no confounders; confounder map is the identity")
                counter["empty_z_with_se"] = True
            for col in s.confounders:
                if s.kind(col) == "continuous":
                    tau_z[col] = fit_quantile_map(d.codes(col)[x == 1], d.codes(col)[x == 0])
                else:
                    n_lv = len(d.levels[col])
                    tau_z[col] = _fit_map("categorical", d.codes(col)[x == 1], d.codes(col)[x == 0], n_lv)
        d_z = d.replace(**_map_z(d, tau_z, seed, counter)) if tau_z else d

    z_edges = {col: equal_frequency_edges(d_z.codes(col), bins)
               for col in s.confounders if s.kind(col) == "continuous"}
    cell_adapted = _z_cells(d_z, z_edges)
    cell_orig = _z_cells(d, z_edges)
    cells = sorted(set(cell_adapted.tolist()))

    if flags.nie:
        pairs = {"x1": (x == 1, x == 0)}
    else:
        pairs = {"x0": (x == 0, x == 0), "x1": (x == 1, x == 1)}

    with _stage("mediators"):
        tau_w, fallback = {}, {}
        for col in s.mediators:
            kind = s.kind(col)
            vals = d.codes(col)
            n_lv = len(d.levels[col]) if kind == "categorical" else 0
            tau_w[col], fallback[col] = {}, {}
            for g, (src_grp, tgt_grp) in pairs.items():
                fallback[col][g] = _fit_map(kind, vals[src_grp], vals[tgt_grp], n_lv)
                per_cell = {}
                for key in cells:
                    src = src_grp & (cell_adapted == key)
                    if not src.any():
                        continue
                    tgt = tgt_grp & (cell_orig == key)
                    if not tgt.any():
                        counter["fallback_cells"].append(f"{col}/{g}/{key}")
                        continue
                    per_cell[key] = _fit_map(kind, vals[src], vals[tgt], n_lv)
                tau_w[col][g] = per_cell

    levels = {c: d.levels[c] for c in s.mediators + s.confounders if s.kind(c) == "categorical"}
    plan = TransportPlan(flags, int(seed), int(bins), tau_z, z_edges, tau_w, fallback, levels=levels,
                         flagged=counter)
    if counter["fallback_cells"]:
        log.warning("%d mediator cell(s) had no target rows; used the unconditional map",
                    len(counter["fallback_cells"]))
    adapted = apply_plan(d, plan)
    dz, dw = residuals(adapted, bins)
    flagged = dict(plan.flagged)
    flagged["out_of_support"] = adapted.meta.get("out_of_support", 0)
    return TransportPlan(flags, plan.seed, plan.bins, tau_z, z_edges, tau_w, fallback, dz, dw, flagged, levels)


def residuals(d: Dataset, bins: int | None = None) -> tuple[float, dict[str, float]]:
    """(delta_z, {z-cell: delta_w}) measured on ``d`` with the shared tables."""
    layout = build_layout(d, bins=bins)
    t = build_tables(layout)
    dw = t.delta_w()
    return t.delta_z(), {_cell_key(k): float(v) for k, v in zip(layout.z_keys, dw)}


def apply_plan(d: Dataset, plan: TransportPlan) -> Dataset:
    """Adapted copy of ``d``: x1 confounders mapped, mediators mapped per Z cell.

    X itself is never altered; with the NIE flag on, x0 rows are unchanged.
    """
    s = d.schema
    counter = {"out_of_support": 0}
    d_z = d.replace(**_map_z(d, plan.tau_z, plan.seed, counter)) if plan.tau_z else d
    cell_adapted = _z_cells(d_z, plan.z_edges)
    x = d.x
    groups = {"x0": x == 0, "x1": x == 1}
    updates = {}
    cells = sorted(set(cell_adapted.tolist()))
    for j, col in enumerate(s.mediators):
        vals = np.array(d.codes(col))
        out = vals.astype(float) if s.kind(col) == "continuous" else vals.copy()
        for gi, g in enumerate(plan.groups):
            grp = groups[g]
            for ci, key in enumerate(cells):
                rows = grp & (cell_adapted == key)
                if not rows.any():
                    continue
                m = plan.tau_w[col][g].get(key) or plan.tau_w_fallback[col][g]
                if isinstance(m, QuantileMap):
                    counter["out_of_support"] += m.out_of_support(vals[rows])
                out[rows] = _apply_map(m, vals[rows], child_rng(plan.seed, 1 + j, gi, _stable_hash(key)))
        updates[col] = out
    if counter["out_of_support"]:
        log.warning("%d value(s) outside a quantile map's support were extrapolated", counter["out_of_support"])
    result = d_z.replace(**updates) if updates else d_z
    return Dataset(result.schema, result.columns, result.levels, result.order, result.dropped,
                   {"out_of_support": counter["out_of_support"]})


def _stable_hash(key: str) -> int:
    """Deterministic (process-independent) 32-bit hash of a cell key."""
    h = 2166136261
    for b in key.encode("utf-8"):
        h = ((h ^ b) * 16777619) & 0xFFFFFFFF
    return h
