"""End-to-end runs: the causally fair clustering procedure and the five-method benchmark.

The procedure, with the step numbers used in error messages:

* steps 1-6: confounder transport. With the SE flag, x1 confounders are
  mapped onto the x0 marginals; otherwise they are left unchanged.
* steps 7-11: mediator transport within confounder cells. With the NIE
  flag, x1 mediators are mapped onto x0 conditionals; otherwise each group
  is mapped onto itself.
* steps 12-16: clustering. With the NDE flag, X is excluded from the
  features; otherwise it is included.
* steps 17-19: audit of the final assignment (effects, bounds, decomposition).
"""

from __future__ import annotations

import json
import logging
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import scm as scm_mod
from .clustering import Assignment, ClusterModel, balanced_fit, kprototypes_fit
from .data import Dataset, EffectFlags, SchemaError, export_dataset, load_dataset, load_schema, save_schema
from .metrics import EffectReport, full_report, tidy_csv
from .transport import TransportError, TransportPlan, apply_plan, fit_plan

log = logging.getLogger(__name__)

STEPS = {
    "confounders": ("transport", "1-6", "confounder transport"),
    "mediators": ("transport", "7-11", "mediator transport"),
    "clustering": ("clustering", "12-16", "clustering"),
    "audit": ("causal_metrics", "17-19", "audit"),
    "load": ("core_data", "input", "loading data"),
}

METHODS = {
    "unadjusted": EffectFlags(0, 0, 0),
    "ftu": EffectFlags(1, 0, 0),
    "balanced": None,
    "causal_nde_nie": EffectFlags(1, 1, 0),
    "causal_nde_nie_se": EffectFlags(1, 1, 1),
}


class ConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    """Failure inside a run, tagged with the module and procedure step."""

    def __init__(self, stage: str, cause: BaseException):
        module, step, what = STEPS[stage]
        self.module, self.step, self.cause = module, step, cause
        self.validation = isinstance(cause, (SchemaError, ConfigError, scm_mod.ScmError, FileNotFoundError))
        super().__init__(f"[{module}] step {step} ({what}): {cause}")


@contextmanager
def _stage(stage: str):
    try:
        yield
    except PipelineError:
        raise
    except TransportError as e:
        raise PipelineError(e.stage or "confounders", e) from e
    except (ValueError, OSError, KeyError) as e:
        raise PipelineError(stage, e) from e


@dataclass(frozen=True)
class RunConfig:
    dataset: str | None = None
    schema: str | None = None
    flags: EffectFlags = field(default_factory=lambda: EffectFlags(1, 1, 1))
    K: int = 2
    gamma: float | None = None
    seed: int = 0
    n_inner: int = 100
    n_outer: int = 5
    bins: int = 10
    output_dir: str | None = None

    def __post_init__(self):
        if isinstance(self.flags, str):
            object.__setattr__(self, "flags", EffectFlags.parse(self.flags))
        if self.K < 1:
            raise ConfigError("K must be at least 1")
        if self.n_inner < 1 or self.n_outer < 1:
            raise ConfigError("n_inner and n_outer must be at least 1")
        if self.bins < 1:
            raise ConfigError("bins must be at least 1")
        if self.gamma is not None and self.gamma < 0:
            raise ConfigError("gamma must be non-negative")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["flags"] = ",".join(str(v) for v in self.flags.as_tuple())
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        return cls(**obj)

    def save(self, path) -> None:
        _write_json(path, self.to_dict())


@dataclass(frozen=True)
class RunResult:
    assignment: Assignment
    plan: TransportPlan
    report: EffectReport
    model: ClusterModel
    adapted: Dataset


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def load_input(cfg: RunConfig) -> Dataset:
    if not cfg.dataset or not cfg.schema:
        raise PipelineError("load", ConfigError("both a dataset and a schema path are required"))
    with _stage("load"):
        schema = load_schema(cfg.schema)
        if cfg.bins != schema.bins:
            schema = replace(schema, bins=cfg.bins)
        return load_dataset(cfg.dataset, schema)


def adapt(d: Dataset, flags: EffectFlags, seed: int = 0, bins: int | None = None) -> tuple[TransportPlan, Dataset]:
    """Steps 1-11: fit and apply the transport plan."""
    with _stage("confounders"):
        plan = fit_plan(d, flags, seed=seed, bins=bins)
        return plan, apply_plan(d, plan)


def cluster(d_adapted: Dataset, flags: EffectFlags, K: int = 2, gamma: float | None = None,
            seed: int = 0) -> tuple[ClusterModel, Assignment]:
    """Steps 12-16: k-prototypes, without X when the NDE flag is set."""
    with _stage("clustering"):
        return kprototypes_fit(d_adapted, K=K, gamma=gamma, ftu=bool(flags.nde), seed=seed)


def fit_fair_clusters(d: Dataset, cfg: RunConfig, workers: int | None = None, with_intervals: bool = True) -> RunResult:
    """Run the full procedure on an in-memory dataset."""
    plan, adapted = adapt(d, cfg.flags, cfg.seed, cfg.bins)
    model, a = cluster(adapted, cfg.flags, cfg.K, cfg.gamma, cfg.seed)
    with _stage("audit"):
        report = full_report(d, adapted, a, plan, cfg.K, cfg.n_inner, cfg.n_outer, cfg.seed, workers,
                             cfg.bins, with_intervals)
    return RunResult(a, plan, report, model, adapted)


def run_algorithm1(cfg: RunConfig, d: Dataset | None = None, workers: int | None = None):
    """Load (unless ``d`` is given), run, and write outputs when ``cfg.output_dir`` is set.

    Returns ``(assignment, plan, report)``.
    """
    d = load_input(cfg) if d is None else d
    res = fit_fair_clusters(d, cfg, workers)
    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.json")
        res.plan.save(out / "plan.json")
        res.assignment.save(out / "assignment.csv")
        res.model.save(out / "model.json")
        _write_json(out / "report.json", res.report.as_dict())
        _write_text(out / "metrics.csv", tidy_csv(res.report.rows(method_name(cfg.flags))))
    return res.assignment, res.plan, res.report


def method_name(flags: EffectFlags) -> str:
    for name, f in METHODS.items():
        if f is not None and f.as_tuple() == flags.as_tuple():
            return name
    return "causal_" + "".join(str(v) for v in flags.as_tuple())


@dataclass(frozen=True)
class BenchmarkResult:
    reports: dict  # method -> EffectReport
    assignments: dict  # method -> Assignment
    skipped: tuple = ()

    def rows(self) -> list[tuple]:
        return [r for m, rep in self.reports.items() for r in rep.rows(m)]

    def csv(self) -> str:
        return tidy_csv(self.rows())

    def max_abs(self) -> dict:
        return {m: rep.max_abs() for m, rep in self.reports.items()}


def benchmark(d: Dataset, cfg: RunConfig, workers: int | None = None, with_intervals: bool = True) -> BenchmarkResult:
    """All five methods with the same seed, run one after another."""
    reports, assignments, skipped = {}, {}, []
    both_groups = bool((d.x == 0).any() and (d.x == 1).any())
    if not both_groups:
        log.warning("balanced baseline skipped: a protected group is empty")
    for method, flags in METHODS.items():
        if flags is None:
            if not both_groups:
                skipped.append(method)
                continue
            with _stage("clustering"):
                res = balanced_fit(d, K=cfg.K, seed=cfg.seed, gamma=cfg.gamma)
            plan, _ = adapt(d, EffectFlags(0, 0, 0), cfg.seed, cfg.bins)
            with _stage("audit"):
                rep = full_report(d, d, res.assignment, plan, cfg.K, cfg.n_inner, cfg.n_outer, cfg.seed,
                                  workers, cfg.bins, with_intervals)
            reports[method], assignments[method] = rep, res.assignment
            continue
        res = fit_fair_clusters(d, replace(cfg, flags=flags), workers, with_intervals)
        reports[method], assignments[method] = res.report, res.assignment
    return BenchmarkResult(reports, assignments, tuple(skipped))


def run_benchmark(cfg: RunConfig, d: Dataset | None = None, workers: int | None = None) -> BenchmarkResult:
    """Benchmark plus outputs: metrics.csv, report.json, config.json, one
    assignment CSV per method and a bar chart of the effects."""
    d = load_input(cfg) if d is None else d
    result = benchmark(d, cfg, workers)
    if cfg.output_dir:
        from .plotting import plot_benchmark

        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.json")
        _write_text(out / "metrics.csv", result.csv())
        _write_json(out / "report.json", {
            "methods": {m: r.as_dict() for m, r in result.reports.items()},
            "labels": {m: ("balanced (fairlet)" if m == "balanced" else m) for m in result.reports},
            "skipped": list(result.skipped),
        })
        for m, a in result.assignments.items():
            a.save(out / f"assignment_{m}.csv")
        plot_benchmark(result.rows(), out / "effects.png")
    return result


def run_simulate(spec_path, n: int, seed: int, output_dir) -> tuple[Path, Path]:
    """Sample ``n`` rows from an SCM spec and write data.csv, schema.json and ground_truth.json."""
    if n < 1:
        raise PipelineError("load", ConfigError("n must be at least 1"))
    with _stage("load"):
        spec = scm_mod.load_scm(spec_path)
        d = scm_mod.sample(spec, n, seed)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    data_path = out / "data.csv"
    export_dataset(d, data_path)
    save_schema(d.schema, out / "schema.json")
    doc = scm_mod.ground_truth_document(spec)
    doc.update({"n": int(n), "seed": int(seed)})
    truth_path = out / "ground_truth.json"
    _write_json(truth_path, doc)
    return data_path, truth_path
