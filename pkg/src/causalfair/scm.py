"""Discrete structural causal models and exact counterfactual ground truth.

An :class:`ScmSpec` is declarative (JSON): finite exogenous distributions,
tables, and structural assignments written in the :mod:`causalfair.expr`
language, evaluated in listed order. Endogenous variables carry SFM roles
(one ``protected`` X, ``confounder`` Z's, ``mediator`` W's).

Ground truth is computed by enumerating every unit ``u`` of the exogenous
support weighted by ``P(u)``; it is independent of all estimators and is the
oracle the estimator tests are checked against. A cluster mechanism ``f_C``
is any callable mapping ``{name: int array}`` for X, Z and W to labels in
``1..K`` (or an ``(n, K)`` array of membership probabilities).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .data import Dataset, SfmSchema, ColumnSpec
from .expr import Expr
from .parallel import child_rng, pmap

ENUMERATION_CAP = 10**7
_ROLE_ORDER = {"protected": 0, "confounder": 1, "mediator": 2}


class ScmError(ValueError):
    pass


@dataclass(frozen=True)
class Exogenous:
    name: str
    support: tuple[int, ...]
    probs: tuple[float, ...]


@dataclass(frozen=True)
class Mechanism:
    name: str
    role: str
    support: tuple[int, ...]
    expr: Expr
    kind: str = "categorical"


@dataclass(frozen=True)
class Clustering:
    """A named cluster mechanism written as an expression over X, Z, W."""

    name: str
    K: int
    expr: Expr
    tables: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __call__(self, env: Mapping[str, np.ndarray]) -> np.ndarray:
        out = np.asarray(self.expr({**self.tables, **env})).astype(np.int64)
        n = len(next(iter(env.values())))
        return np.broadcast_to(out, (n,)).copy()


@dataclass(frozen=True)
class Unit:
    u: Mapping[str, int]


@dataclass(frozen=True)
class ScmSpec:
    name: str
    exogenous: tuple[Exogenous, ...]
    endogenous: tuple[Mechanism, ...]
    x0: int
    x1: int
    tables: Mapping[str, np.ndarray] = field(default_factory=dict)
    clusterings: tuple[Clustering, ...] = ()
    bins: int = 10

    def __post_init__(self):
        names = [e.name for e in self.exogenous] + [m.name for m in self.endogenous] + list(self.tables)
        if len(set(names)) != len(names):
            raise ScmError("exogenous, endogenous and table names must be unique")
        for e in self.exogenous:
            p = np.asarray(e.probs, dtype=float)
            if len(p) != len(e.support) or len(p) == 0:
                raise ScmError(f"{e.name}: support and probs differ in length")
            if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-9:
                raise ScmError(f"{e.name}: P(u) must be strictly positive and sum to 1")
        prot = [m for m in self.endogenous if m.role == "protected"]
        if len(prot) != 1:
            raise ScmError("exactly one protected (X) mechanism required")
        if self.x0 == self.x1 or {self.x0, self.x1} != set(prot[0].support):
            raise ScmError("x0/x1 must be the two support points of X")
        exo = {e.name for e in self.exogenous}
        seen: dict[str, str] = {}
        for m in self.endogenous:
            if m.role not in _ROLE_ORDER:
                raise ScmError(f"{m.name}: role must be protected, confounder or mediator")
            refs = m.expr.names - exo - set(self.tables)
            unknown = refs - set(seen)
            if unknown:
                raise ScmError(f"{m.name}: references {sorted(unknown)} before they are defined")
            for r in refs:
                parent = seen[r]
                if m.role == "protected":
                    raise ScmError(f"{m.name}: X may only depend on exogenous noise (got {r})")
                if m.role == "confounder" and parent != "confounder":
                    raise ScmError(f"{m.name}: confounders may not depend on X or W (got {r})")
            seen[m.name] = m.role
        endo = set(seen)
        for c in self.clusterings:
            if c.expr.names - endo - set(self.tables):
                raise ScmError(f"clustering {c.name}: unknown names {sorted(c.expr.names - endo)}")

    @property
    def protected(self) -> Mechanism:
        return next(m for m in self.endogenous if m.role == "protected")

    @property
    def confounders(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.endogenous if m.role == "confounder")

    @property
    def mediators(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.endogenous if m.role == "mediator")

    def mechanism(self, name: str) -> Mechanism:
        for m in self.endogenous:
            if m.name == name:
                return m
        raise ScmError(f"{name!r} is not an endogenous variable")

    def clustering(self, name: str) -> Clustering:
        for c in self.clusterings:
            if c.name == name:
                return c
        raise ScmError(f"no clustering named {name!r}")

    @property
    def support_size(self) -> int:
        return math.prod(len(e.support) for e in self.exogenous)

    def schema(self) -> SfmSchema:
        cols = [ColumnSpec(m.name, m.role, m.kind) for m in self.endogenous]
        return SfmSchema(tuple(cols), str(self.x0), str(self.x1), self.bins)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "exogenous": [
                {"name": e.name, "support": list(e.support), "probs": list(e.probs)} for e in self.exogenous
            ],
            "tables": {k: np.asarray(v).tolist() for k, v in self.tables.items()},
            "endogenous": [
                {"name": m.name, "role": m.role, "kind": m.kind, "support": list(m.support), "expr": m.expr.source}
                for m in self.endogenous
            ],
            "x0": self.x0,
            "x1": self.x1,
            "bins": self.bins,
            "clusterings": [{"name": c.name, "K": c.K, "expr": c.expr.source} for c in self.clusterings],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ScmSpec":
        try:
            exo = tuple(
                Exogenous(e["name"], tuple(int(s) for s in e["support"]), tuple(float(p) for p in e["probs"]))
                for e in doc["exogenous"]
            )
            endo = tuple(
                Mechanism(
                    m["name"], m["role"], tuple(int(s) for s in m["support"]), Expr(m["expr"]),
                    m.get("kind", "categorical"),
                )
                for m in doc["endogenous"]
            )
            tables = {k: np.asarray(v) for k, v in doc.get("tables", {}).items()}
            clus = tuple(Clustering(c["name"], int(c["K"]), Expr(c["expr"]), tables)
                         for c in doc.get("clusterings", []))
            return cls(doc.get("name", "scm"), exo, endo, int(doc["x0"]), int(doc["x1"]), tables, clus,
                       int(doc.get("bins", 10)))
        except KeyError as exc:
            raise ScmError(f"SCM document missing field {exc}") from None


def load_scm(path) -> ScmSpec:
    with open(path, encoding="utf-8") as fh:
        return ScmSpec.from_dict(json.load(fh))


# --- evaluation ---------------------------------------------------------


def evaluate(spec: ScmSpec, u: Mapping[str, np.ndarray], interventions: Mapping[str, object] | None = None):
    """Endogenous values of the submodel where intervened mechanisms become constants.

    ``interventions`` maps endogenous names to a scalar or a per-unit array.
    """
    interventions = dict(interventions or {})
    n = len(next(iter(u.values()))) if u else 1
    for name, val in interventions.items():
        m = spec.mechanism(name)
        if m.role == "protected" and not np.all(np.isin(np.asarray(val), (spec.x0, spec.x1))):
            raise ScmError(f"intervention {name}={val!r} is not a level of X")
    env: dict[str, object] = dict(spec.tables)
    env.update(u)
    out = {}
    for m in spec.endogenous:
        if m.name in interventions:
            val = np.broadcast_to(np.asarray(interventions[m.name]), (n,)).copy()
        else:
            val = np.broadcast_to(np.asarray(m.expr(env)), (n,)).copy()
            if m.kind == "categorical" and not np.all(np.isin(val, m.support)):
                bad = np.setdiff1d(val, m.support)
                raise ScmError(f"{m.name}: mechanism produced values {bad.tolist()} outside its support")
        val = val.astype(np.float64 if m.kind == "continuous" else np.int64)
        env[m.name] = val
        out[m.name] = val
    return out


def potential_response(spec: ScmSpec, unit: Unit, interventions: Mapping[str, object] | None = None):
    """Values of all endogenous variables for one unit under ``interventions``."""
    for e in spec.exogenous:
        if unit.u.get(e.name) not in e.support:
            raise ScmError(f"unit value for {e.name} outside its support")
    u = {k: np.asarray([v]) for k, v in unit.u.items()}
    iv = {k: np.asarray(v).reshape(-1)[:1] if np.ndim(v) else v for k, v in (interventions or {}).items()}
    return {k: v[0].item() for k, v in evaluate(spec, u, iv).items()}


def enumerate_units(spec: ScmSpec, cap: int = ENUMERATION_CAP):
    """All exogenous states as arrays plus their probabilities."""
    size = spec.support_size
    if size > cap:
        raise ScmError(
            f"exogenous support has {size} joint states (cap {cap}); use ground_truth_effects_mc"
        )
    grids = np.indices([len(e.support) for e in spec.exogenous]).reshape(len(spec.exogenous), -1)
    u = {e.name: np.asarray(e.support)[g] for e, g in zip(spec.exogenous, grids)}
    w = np.ones(size)
    for e, g in zip(spec.exogenous, grids):
        w = w * np.asarray(e.probs)[g]
    return u, w


def draw_units(spec: ScmSpec, n: int, rng: np.random.Generator):
    u = {}
    for e in spec.exogenous:
        u[e.name] = np.asarray(e.support)[rng.choice(len(e.support), size=n, p=np.asarray(e.probs))]
    return u


def sample(spec: ScmSpec, n: int, seed: int) -> Dataset:
    """``n`` i.i.d. rows: draw U, then evaluate the mechanisms."""
    if n < 0:
        raise ScmError("n must be non-negative")
    rng = np.random.default_rng(seed)
    vals = evaluate(spec, draw_units(spec, n, rng)) if n else {m.name: np.zeros(0) for m in spec.endogenous}
    schema = spec.schema()
    levels = {m.name: tuple(str(s) for s in m.support) for m in spec.endogenous if m.kind == "categorical"}
    out = {}
    for m in spec.endogenous:
        v = vals[m.name]
        out[m.name] = [str(int(a)) for a in v] if m.kind == "categorical" else np.asarray(v, dtype=float)
    return Dataset.from_values(schema, out, levels=levels)


# --- cluster mechanisms -------------------------------------------------


def membership(f_C: Callable, env: Mapping[str, np.ndarray], K: int | None = None) -> np.ndarray:
    """(n, K) membership matrix from hard labels (1..K) or probabilities."""
    out = np.asarray(f_C(env))
    K = K or getattr(f_C, "K", None)
    if out.ndim == 2:
        if K is not None and out.shape[1] != K:
            raise ScmError("membership matrix has the wrong number of clusters")
        return out.astype(float)
    labels = out.astype(np.int64)
    if K is None:
        raise ScmError("K must be given for a hard-label mechanism without a K attribute")
    if labels.size and (labels.min() < 1 or labels.max() > K):
        raise ScmError(f"cluster labels must lie in 1..{K}")
    m = np.zeros((labels.shape[0], K))
    m[np.arange(labels.shape[0]), labels - 1] = 1.0
    return m


def with_string_labels(fn: Callable, spec: ScmSpec) -> Callable:
    """Adapt a mechanism that expects dataset labels (strings) to SCM integer values."""

    def wrapped(env):
        conv = {}
        for m in spec.endogenous:
            v = env[m.name]
            conv[m.name] = np.asarray([str(int(a)) for a in v], dtype=object) if m.kind == "categorical" else v
        return fn(conv)

    wrapped.K = getattr(fn, "K", None)
    return wrapped


# --- ground truth -------------------------------------------------------


@dataclass(frozen=True)
class ClusterEffects:
    k: int
    tv: float
    nde_x0x1: float
    nie_x0x1: float
    nie_x1x0: float
    exp_se_x0x1: float
    p_given_x0: float
    p_given_x1: float
    p_do_x0: float
    p_do_x1: float
    p_x1_wx0: float
    p_x0_wx1: float
    se: float | None = None

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


@dataclass(frozen=True)
class GroundTruthEffects:
    clusters: Mapping[int, ClusterEffects]
    method: str = "enumeration"
    n: int | None = None

    def __getitem__(self, k: int) -> ClusterEffects:
        return self.clusters[k]

    def as_dict(self) -> dict:
        return {"method": self.method, "n": self.n, "clusters": {str(k): c.as_dict() for k, c in self.clusters.items()}}


def _counterfactual_envs(spec: ScmSpec, u):
    x = spec.protected.name
    med = spec.mediators
    fact = evaluate(spec, u)
    do0 = evaluate(spec, u, {x: spec.x0})
    do1 = evaluate(spec, u, {x: spec.x1})
    x1_w0 = evaluate(spec, u, {x: spec.x1, **{w: do0[w] for w in med}})
    x0_w1 = evaluate(spec, u, {x: spec.x0, **{w: do1[w] for w in med}})
    return fact, do0, do1, x1_w0, x0_w1


def _weighted_sums(spec, f_C, K, u, w):
    """Weighted sums of memberships under each counterfactual world."""
    fact, do0, do1, x1_w0, x0_w1 = _counterfactual_envs(spec, u)
    xs = fact[spec.protected.name]
    m_fact = membership(f_C, fact, K)
    w0, w1 = w * (xs == spec.x0), w * (xs == spec.x1)

    def per_cluster(weights, m):
        # correctly rounded sums: a mechanism that always returns k gives
        # numerators identical to the masses they are divided by
        return np.array([math.fsum(weights * m[:, j]) for j in range(K)])

    return {
        "mass_x0": math.fsum(w0),
        "mass_x1": math.fsum(w1),
        "given_x0": per_cluster(w0, m_fact),
        "given_x1": per_cluster(w1, m_fact),
        "do_x0": per_cluster(w, membership(f_C, do0, K)),
        "do_x1": per_cluster(w, membership(f_C, do1, K)),
        "x1_wx0": per_cluster(w, membership(f_C, x1_w0, K)),
        "x0_wx1": per_cluster(w, membership(f_C, x0_w1, K)),
        "total": math.fsum(w),
    }


def _assemble(sums, K, method, n=None) -> GroundTruthEffects:
    total = sums["total"]
    if sums["mass_x0"] <= 0 or sums["mass_x1"] <= 0:
        raise ScmError("one level of X has zero probability")
    clusters = {}
    for j in range(K):
        g0 = sums["given_x0"][j] / sums["mass_x0"]
        g1 = sums["given_x1"][j] / sums["mass_x1"]
        d0 = sums["do_x0"][j] / total
        d1 = sums["do_x1"][j] / total
        a = sums["x1_wx0"][j] / total
        b = sums["x0_wx1"][j] / total
        se = None
        if n is not None:
            se = math.sqrt(max(g0 * (1 - g0), g1 * (1 - g1), d0 * (1 - d0), d1 * (1 - d1)) / n)
        clusters[j + 1] = ClusterEffects(
            k=j + 1,
            tv=g1 - g0,
            nde_x0x1=a - d0,
            nie_x0x1=b - d0,
            nie_x1x0=a - d1,
            exp_se_x0x1=(g1 - d1) - (g0 - d0),
            p_given_x0=g0, p_given_x1=g1, p_do_x0=d0, p_do_x1=d1, p_x1_wx0=a, p_x0_wx1=b,
            se=se,
        )
    return GroundTruthEffects(clusters, method, n)


def _infer_K(f_C, K):
    K = K or getattr(f_C, "K", None)
    if K is None:
        raise ScmError("pass K or a mechanism with a K attribute")
    return int(K)


def ground_truth_effects(
    spec: ScmSpec, f_C: Callable, k: int | None = None, K: int | None = None, cap: int = ENUMERATION_CAP
) -> GroundTruthEffects:
    """Exact TV, NDE, both NIE orders and Exp-SE per cluster by enumerating U.

    ``nie_x0x1 = P(C_{x0, W_{x1}}) - P(C_{x0})`` and
    ``nie_x1x0 = P(C_{x1, W_{x0}}) - P(C_{x1})``.
    """
    K = _infer_K(f_C, K)
    u, w = enumerate_units(spec, cap)
    gt = _assemble(_weighted_sums(spec, f_C, K, u, w), K, "enumeration")
    if k is not None:
        return GroundTruthEffects({k: gt[k]}, gt.method)
    return gt


def ground_truth_effects_mc(
    spec: ScmSpec, f_C: Callable, n: int, seed: int, K: int | None = None,
    chunk: int = 100_000, workers: int | None = None,
) -> GroundTruthEffects:
    """Monte Carlo counterpart of :func:`ground_truth_effects` for large supports.

    Units are drawn in fixed-size chunks seeded by (seed, chunk), so the
    result does not depend on ``workers``.
    """
    K = _infer_K(f_C, K)
    sizes = [min(chunk, n - i) for i in range(0, n, chunk)]

    def run(item):
        i, size = item
        u = draw_units(spec, size, child_rng(seed, i))
        return _weighted_sums(spec, f_C, K, u, np.ones(size))

    parts = pmap(run, list(enumerate(sizes)), workers)
    sums = {}
    for key in parts[0]:
        vals = [p[key] for p in parts]
        if np.ndim(vals[0]):
            sums[key] = np.array([math.fsum(v[j] for v in vals) for j in range(K)])
        else:
            sums[key] = math.fsum(vals)
    return _assemble(sums, K, "monte_carlo", n)


@dataclass(frozen=True)
class DecompositionCheck:
    k: int
    lhs_tv: float
    nde: float
    nie_x0x1: float
    nie_x1x0: float
    exp_se: float
    residual_x0x1: float
    residual_x1x0: float
    tol: float = 1e-12

    @property
    def vanishing(self) -> tuple[str, ...]:
        """NIE orders under which TV = NDE - NIE + Exp-SE holds to ``tol``."""
        out = []
        if abs(self.residual_x0x1) <= self.tol:
            out.append("x0x1")
        if abs(self.residual_x1x0) <= self.tol:
            out.append("x1x0")
        return tuple(out)

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["vanishing"] = list(self.vanishing)
        return d


def decomposition_check(spec: ScmSpec, f_C: Callable, k: int | None = None, K: int | None = None,
                        tol: float = 1e-12) -> dict[int, DecompositionCheck]:
    gt = ground_truth_effects(spec, f_C, K=K)
    out = {}
    for j, e in gt.clusters.items():
        if k is not None and j != k:
            continue
        out[j] = DecompositionCheck(
            j, e.tv, e.nde_x0x1, e.nie_x0x1, e.nie_x1x0, e.exp_se_x0x1,
            e.tv - (e.nde_x0x1 - e.nie_x0x1 + e.exp_se_x0x1),
            e.tv - (e.nde_x0x1 - e.nie_x1x0 + e.exp_se_x0x1),
            tol,
        )
    return out


def ground_truth_document(spec: ScmSpec) -> dict:
    """Ground truth for every clustering the SCM declares (JSON-ready)."""
    doc = {"scm": spec.name, "support_size": spec.support_size, "clusterings": {}}
    for c in spec.clusterings:
        gt = ground_truth_effects(spec, c)
        dec = decomposition_check(spec, c)
        doc["clusterings"][c.name] = {
            "K": c.K,
            "expr": c.expr.source,
            "effects": gt.as_dict()["clusters"],
            "decomposition": {str(j): d.as_dict() for j, d in dec.items()},
        }
    return doc


# --- random specs for property tests ------------------------------------


def random_discrete_scm(seed: int, n_confounders: int | None = None, n_mediators: int | None = None,
                        K: int = 2) -> ScmSpec:
    """A random fully discrete SFM-conforming SCM with a shared X-Z confounder.

    Two clusterings are attached: ``free`` ignores X, ``with_x`` reads it.
    """
    rng = np.random.default_rng(seed)
    nz = int(rng.integers(0, 3)) if n_confounders is None else n_confounders
    nw = int(rng.integers(0, 3)) if n_mediators is None else n_mediators

    def probs(m):
        p = rng.uniform(0.2, 1.0, size=m)
        return (p / p.sum()).tolist()

    exo = [{"name": "u_c", "support": [0, 1], "probs": probs(2)},
           {"name": "u_x", "support": [0, 1, 2], "probs": probs(3)}]
    tables = {}
    endo = []
    tx = rng.integers(0, 2, size=(2, 3))
    while len(np.unique(tx)) < 2:
        tx = rng.integers(0, 2, size=(2, 3))
    tables["tx"] = tx.tolist()
    endo.append({"name": "X", "role": "protected", "support": [0, 1], "expr": "tx[u_c, u_x]"})
    zsizes = []
    for j in range(nz):
        m = int(rng.integers(2, 4))
        zsizes.append(m)
        exo.append({"name": f"u_z{j}", "support": [0, 1, 2], "probs": probs(3)})
        tables[f"tz{j}"] = rng.integers(0, m, size=(2, 3)).tolist()
        endo.append({"name": f"Z{j}", "role": "confounder", "support": list(range(m)),
                     "expr": f"tz{j}[u_c, u_z{j}]"})
    wsizes = []
    for j in range(nw):
        m = int(rng.integers(2, 4))
        exo.append({"name": f"u_w{j}", "support": [0, 1, 2], "probs": probs(3)})
        parents = ["X"] + [f"Z{i}" for i in range(nz)] + [f"W{i}" for i in range(j)]
        shape = [2] + zsizes + wsizes + [3]
        tables[f"tw{j}"] = rng.integers(0, m, size=shape).tolist()
        endo.append({"name": f"W{j}", "role": "mediator", "support": list(range(m)),
                     "expr": f"tw{j}[{', '.join(parents + [f'u_w{j}'])}]"})
        wsizes.append(m)
    zw = [f"Z{i}" for i in range(nz)] + [f"W{i}" for i in range(nw)]
    free_shape = zsizes + wsizes
    clus = []
    if free_shape:
        tables["cf"] = rng.integers(1, K + 1, size=free_shape).tolist()
        clus.append({"name": "free", "K": K, "expr": f"cf[{', '.join(zw)}]"})
    else:
        clus.append({"name": "free", "K": K, "expr": "1"})
    tables["cx"] = rng.integers(1, K + 1, size=[2] + free_shape).tolist()
    clus.append({"name": "with_x", "K": K, "expr": f"cx[{', '.join(['X'] + zw)}]"})
    return ScmSpec.from_dict({
        "name": f"random-{seed}", "exogenous": exo, "tables": tables, "endogenous": endo,
        "x0": 0, "x1": 1, "clusterings": clus,
    })


def iter_units(spec: ScmSpec):
    """Every unit of the exogenous support (small specs only)."""
    names = [e.name for e in spec.exogenous]
    for combo in itertools.product(*(e.support for e in spec.exogenous)):
        yield Unit(dict(zip(names, combo)))
