"""k-prototypes clustering for mixed data, with an unawareness switch, and a fairlet baseline.

Cost of a row against a prototype is the squared Euclidean distance on
numeric columns plus ``gamma`` times the number of categorical mismatches.
Labels are 1-based. Distance ties always go to the lowest cluster index.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class Assignment:
    labels: np.ndarray
    K: int
    ftu: bool | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.size and (labels.min() < 1 or labels.max() > self.K):
            raise ClusteringError(f"labels must lie in 1..{self.K}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    def save(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("cluster\n")
            for v in self.labels:
                fh.write(f"{int(v)}\n")

    @classmethod
    def load(cls, path, K: int | None = None, ftu: bool | None = None) -> "Assignment":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or len(rows[0]) != 1:
            raise ClusteringError(f"{path}: expected a one-column CSV with a header")
        labels = np.asarray([int(r[0]) for r in rows[1:] if r], dtype=np.int64)
        return cls(labels, int(K or labels.max()), ftu)


def feature_columns(d: Dataset, ftu: bool) -> tuple[str, ...]:
    s = d.schema
    return tuple(
        c.name for c in s.columns
        if c.role in ("confounder", "mediator") or (c.role == "protected" and not ftu)
    )


def _split(d: Dataset, features: Sequence[str]):
    num = [f for f in features if d.schema.kind(f) == "continuous"]
    cat = [f for f in features if d.schema.kind(f) == "categorical"]
    X = np.column_stack([d.codes(f) for f in num]).astype(float) if num else np.zeros((d.n, 0))
    C = np.column_stack([d.codes(f) for f in cat]).astype(np.int64) if cat else np.zeros((d.n, 0), np.int64)
    return tuple(num), tuple(cat), X, C


def auto_gamma(X: np.ndarray) -> float:
    """Half the mean per-column variance of the numeric block (1.0 without numeric columns)."""
    if X.shape[1] == 0:
        return 1.0
    v = float(np.mean(np.var(X, axis=0)))
    return 0.5 * v if v > 0 else 1.0


def _distances(X, C, means, modes, gamma):
    D = np.zeros((X.shape[0], means.shape[0] if means.size else modes.shape[0]))
    if X.shape[1]:
        D += ((X[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    if C.shape[1] and gamma:
        D += gamma * (C[:, None, :] != modes[None, :, :]).sum(axis=2)
    return D


def _modes(C: np.ndarray) -> np.ndarray:
    out = np.empty(C.shape[1], dtype=np.int64)
    for j in range(C.shape[1]):
        out[j] = int(np.argmax(np.bincount(C[:, j])))
    return out


def _weighted_modes(C: np.ndarray, w: np.ndarray) -> np.ndarray:
    out = np.empty(C.shape[1], dtype=np.int64)
    for j in range(C.shape[1]):
        out[j] = int(np.argmax(np.bincount(C[:, j], weights=w)))
    return out


def farthest_point_init(X, C, K, gamma, seed) -> np.ndarray:
    """Seeded first row, then repeatedly the row farthest from the chosen set."""
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    best = _distances(X, C, X[chosen], C[chosen], gamma)[:, 0]
    for _ in range(1, K):
        cand = best.copy()
        cand[chosen] = -1.0
        nxt = int(np.argmax(cand))
        chosen.append(nxt)
        best = np.minimum(best, _distances(X, C, X[[nxt]], C[[nxt]], gamma)[:, 0])
    return np.asarray(chosen)


def _lloyd(X, C, K, gamma, init_idx, max_iter=100, weights=None):
    """Alternate nearest-prototype assignment and mean/mode updates.

    Returns (labels 0-based, means, modes, cost trace, iterations).
    """
    n = X.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    means = X[init_idx].copy()
    modes = C[init_idx].copy()
    D = _distances(X, C, means, modes, gamma)
    labels = np.argmin(D, axis=1)
    trace = [float(np.sum(w * D[np.arange(n), labels]))]
    it = 0
    for it in range(1, max_iter + 1):
        used = set()
        for k in range(K):
            members = labels == k
            if not members.any():
                continue
            if X.shape[1]:
                means[k] = np.average(X[members], axis=0, weights=w[members])
            if C.shape[1]:
                modes[k] = _weighted_modes(C[members], w[members])
        for k in range(K):
            if np.any(labels == k):
                continue
            # empty cluster: reseed from the row farthest from its prototype
            own = D[np.arange(n), labels].copy()
            own[list(used)] = -1.0
            far = int(np.argmax(own))
            used.add(far)
            labels[far] = k
            means[k] = X[far]
            modes[k] = C[far]
        D = _distances(X, C, means, modes, gamma)
        new = np.argmin(D, axis=1)
        trace.append(float(np.sum(w * D[np.arange(n), new])))
        if np.array_equal(new, labels):
            break
        labels = new
    labels = np.argmin(D, axis=1)
    return labels, means, modes, trace, it


@dataclass(frozen=True)
class ClusterModel:
    K: int
    numeric: tuple[str, ...]
    categorical: tuple[str, ...]
    means: np.ndarray
    modes: np.ndarray
    levels: Mapping[str, tuple[str, ...]]
    gamma: float
    feature_set: tuple[str, ...]
    seed: int
    ftu: bool
    cost: float = float("nan")
    cost_trace: tuple[float, ...] = ()
    n_iter: int = 0

    def _encode(self, values: Mapping[str, object]):
        n = len(np.atleast_1d(next(iter(values.values())))) if values else 1
        X = (np.column_stack([np.asarray(values[f], dtype=float).reshape(-1) for f in self.numeric])
             if self.numeric else np.zeros((n, 0)))
        cols = []
        for f in self.categorical:
            index = {lv: i for i, lv in enumerate(self.levels[f])}
            raw = np.atleast_1d(np.asarray(values[f], dtype=object))
            cols.append(np.fromiter((index.get(str(v), -1) for v in raw), dtype=np.int64, count=len(raw)))
        C = np.column_stack(cols) if cols else np.zeros((n, 0), np.int64)
        return X, C

    def assign_values(self, values: Mapping[str, object]) -> np.ndarray:
        """Labels (1..K) for column arrays keyed by feature name; extra keys ignored.

        Categorical entries are labels; unseen labels count as a mismatch.
        """
        missing = [f for f in self.feature_set if f not in values]
        if missing:
            raise ClusteringError(f"missing feature columns {missing}")
        X, C = self._encode(values)
        return np.argmin(_distances(X, C, self.means, self.modes, self.gamma), axis=1) + 1

    def assign(self, row: Mapping[str, object]) -> int:
        return int(self.assign_values({f: [row[f]] for f in self.feature_set if f in row})[0])

    def assign_dataset(self, d: Dataset) -> Assignment:
        return Assignment(self.assign_values({f: d.values(f) for f in self.feature_set}), self.K, self.ftu)

    def mechanism(self):
        """This model as a cluster mechanism ``f_C(env) -> labels`` (env holds labels)."""

        def f_C(env):
            return self.assign_values(env)

        f_C.K = self.K
        return f_C

    def prototypes(self) -> list[dict]:
        out = []
        for k in range(self.K):
            proto = {f: float(self.means[k, i]) for i, f in enumerate(self.numeric)}
            proto.update({f: self.levels[f][self.modes[k, i]] for i, f in enumerate(self.categorical)})
            out.append(proto)
        return out

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "gamma": self.gamma,
            "feature_set": list(self.feature_set),
            "seed": self.seed,
            "ftu": self.ftu,
            "cost": self.cost,
            "n_iter": self.n_iter,
            "prototypes": self.prototypes(),
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def kprototypes_fit(d: Dataset, K: int = 2, gamma: float | None = None, ftu: bool = False, seed: int = 0,
                    max_iter: int = 100, init: Sequence[int] | None = None):
    """Fit k-prototypes on the SFM columns (X dropped when ``ftu``).

    ``init`` overrides the seeded farthest-point initialisation with explicit
    row indices. Returns ``(ClusterModel, Assignment)``.
    """
    if K < 1:
        raise ClusteringError("K must be at least 1")
    if d.n == 0:
        raise ClusteringError("cannot cluster an empty dataset")
    if K > d.n:
        raise ClusteringError(f"K={K} exceeds the number of rows ({d.n})")
    features = feature_columns(d, ftu)
    num, cat, X, C = _split(d, features)
    if gamma is None:
        gamma = auto_gamma(X)
    if gamma < 0:
        raise ClusteringError("gamma must be non-negative")
    init_idx = np.asarray(init) if init is not None else farthest_point_init(X, C, K, gamma, seed)
    labels, means, modes, trace, it = _lloyd(X, C, K, gamma, init_idx, max_iter)
    model = ClusterModel(
        K=K, numeric=num, categorical=cat, means=means, modes=modes,
        levels={f: d.levels[f] for f in cat}, gamma=float(gamma), feature_set=features,
        seed=int(seed), ftu=bool(ftu), cost=trace[-1], cost_trace=tuple(trace), n_iter=it,
    )
    return model, Assignment(labels + 1, K, bool(ftu))


# --- balanced (fairlet) baseline ---------------------------------------


@dataclass(frozen=True)
class BalancedResult:
    model: ClusterModel
    assignment: Assignment
    fairlet_of: np.ndarray  # fairlet index per row
    n_fairlets: int
    leftovers: int
    label: str = "balanced (fairlet)"


def _pair_greedy(Xa, Ca, Xb, Cb, gamma, order):
    """Match each row of group a (in ``order``) to its nearest unmatched row of group b."""
    taken = np.zeros(Xb.shape[0], dtype=bool)
    match = np.full(Xa.shape[0], -1, dtype=np.int64)
    for i in order:
        if taken.all():
            break
        dist = _distances(Xb, Cb, Xa[[i]], Ca[[i]], gamma)[:, 0]
        dist[taken] = np.inf
        j = int(np.argmin(dist))
        match[i] = j
        taken[j] = True
    return match


def balanced_fit(d: Dataset, K: int = 2, seed: int = 0, gamma: float | None = None,
                 max_iter: int = 100) -> BalancedResult:
    """Fairlet-style balanced clustering.

    Each x1 row (in seeded random order) is paired with its nearest unmatched
    x0 row; unpaired rows join the fairlet with the nearest centroid. Fairlet
    centroids are clustered with k-prototypes and every member inherits its
    fairlet's label. Distances use Z and W only.
    """
    x = d.x
    i1, i0 = np.flatnonzero(x == 1), np.flatnonzero(x == 0)
    if i1.size == 0 or i0.size == 0:
        raise ClusteringError("balanced clustering needs both protected groups")
    features = feature_columns(d, ftu=True)
    num, cat, X, C = _split(d, features)
    if gamma is None:
        gamma = auto_gamma(X)
    rng = np.random.default_rng(seed)
    order = rng.permutation(i1.size)
    match = _pair_greedy(X[i1], C[i1], X[i0], C[i0], gamma, order)
    paired = match >= 0
    n_f = int(paired.sum())
    if n_f < K:
        raise ClusteringError(f"only {n_f} fairlets for K={K}")
    fairlet_of = np.full(d.n, -1, dtype=np.int64)
    fairlet_of[i1[paired]] = np.arange(n_f)
    fairlet_of[i0[match[paired]]] = np.arange(n_f)

    a, b = i1[paired], i0[match[paired]]
    cent_X = (X[a] + X[b]) / 2.0
    cent_C = np.where(C[a] <= C[b], C[a], C[b])  # mode of two values, lowest code on a tie
    left = np.flatnonzero(fairlet_of < 0)
    for start in range(0, left.size, 2048):
        chunk = left[start:start + 2048]
        D = _distances(X[chunk], C[chunk], cent_X, cent_C, gamma)
        fairlet_of[chunk] = np.argmin(D, axis=1)

    sizes = np.bincount(fairlet_of, minlength=n_f).astype(float)
    FX = np.zeros((n_f, X.shape[1]))
    for j in range(X.shape[1]):
        FX[:, j] = np.bincount(fairlet_of, weights=X[:, j], minlength=n_f) / sizes
    FC = np.zeros((n_f, C.shape[1]), dtype=np.int64)
    for j in range(C.shape[1]):
        m = int(C[:, j].max()) + 1
        counts = np.zeros((n_f, m))
        np.add.at(counts, (fairlet_of, C[:, j]), 1.0)
        FC[:, j] = np.argmax(counts, axis=1)

    init_idx = farthest_point_init(FX, FC, K, gamma, seed)
    flab, means, modes, trace, it = _lloyd(FX, FC, K, gamma, init_idx, max_iter, weights=sizes)
    labels = flab[fairlet_of] + 1
    model = ClusterModel(
        K=K, numeric=num, categorical=cat, means=means, modes=modes,
        levels={f: d.levels[f] for f in cat}, gamma=float(gamma), feature_set=features,
        seed=int(seed), ftu=False, cost=trace[-1], cost_trace=tuple(trace), n_iter=it,
    )
    return BalancedResult(model, Assignment(labels, K, False), fairlet_of, n_f, int(left.size))


def empirical_membership(d: Dataset, assignment: Assignment, columns: Sequence[str] | None = None):
    """Cluster mechanism returning the observed P(c | covariate cell) per row.

    Cells are exact value combinations of ``columns`` (default: X, Z and W).
    Unseen cells get the overall cluster frequencies.
    """
    s = d.schema
    columns = tuple(columns or (s.protected,) + s.confounders + s.mediators)
    K = assignment.K
    keys = list(zip(*(d.values(c).tolist() for c in columns)))
    table: dict[tuple, np.ndarray] = {}
    for key, lab in zip(keys, assignment.labels):
        table.setdefault(key, np.zeros(K))[lab - 1] += 1.0
    overall = np.bincount(assignment.labels - 1, minlength=K) / len(assignment.labels)
    table = {k: v / v.sum() for k, v in table.items()}
    kinds = [s.kind(c) for c in columns]

    def f_C(env):
        cols = []
        for c, kind in zip(columns, kinds):
            v = np.atleast_1d(np.asarray(env[c], dtype=object))
            cols.append([float(a) for a in v] if kind == "continuous" else [str(a) for a in v])
        return np.stack([table.get(k, overall) for k in zip(*cols)])

    f_C.K = K
    return f_C
