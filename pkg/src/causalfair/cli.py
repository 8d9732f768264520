"""Command-line entry point: ``causalfair <subcommand>``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .clustering import Assignment
from .data import EffectFlags, SchemaError, export_dataset
from .metrics import full_report, tidy_csv
from .pipeline import (
    ConfigError, PipelineError, RunConfig, adapt, load_input, method_name, run_algorithm1, run_benchmark, run_simulate,
)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _run_options(p: argparse.ArgumentParser, flags: bool = True, clustering: bool = True, boot: bool = True):
    d = RunConfig()
    p.add_argument("--dataset", required=True, help="input CSV")
    p.add_argument("--schema", required=True, help="schema JSON assigning SFM roles")
    if flags:
        p.add_argument("--flags", default=str(d.flags), help="NDE,NIE,SE bits (default %(default)s)")
    if clustering:
        p.add_argument("--K", type=int, default=d.K)
        p.add_argument("--gamma", type=float, default=d.gamma, help="categorical weight (default: auto)")
    p.add_argument("--seed", type=int, default=d.seed)
    if boot:
        p.add_argument("--n-inner", type=int, default=d.n_inner)
        p.add_argument("--n-outer", type=int, default=d.n_outer)
    p.add_argument("--bins", type=int, default=d.bins)
    p.add_argument("--output-dir", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="causalfair", description="Causally fair clustering and causal fairness audits.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="sample a dataset and ground truth from an SCM spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", required=True)

    p = sub.add_parser("adapt", help="fit the transport plan and write the adapted data")
    _run_options(p, clustering=False, boot=False)

    p = sub.add_parser("cluster", help="run the full procedure: adapt, cluster, audit")
    _run_options(p)

    p = sub.add_parser("evaluate", help="audit an existing assignment CSV")
    _run_options(p, flags=False, clustering=False)
    p.add_argument("--assignment", required=True, help="one-column CSV of labels 1..K")
    p.add_argument("--K", type=int, default=None, help="number of clusters (default: max label)")
    p.add_argument("--ftu", action="store_true", help="the assignment was made without X")

    p = sub.add_parser("benchmark", help="compare the five methods")
    _run_options(p, flags=False)
    return parser


def _config(args, **extra) -> RunConfig:
    fields = {k: getattr(args, k) for k in ("dataset", "schema", "flags", "K", "gamma", "seed", "n_inner",
                                            "n_outer", "bins", "output_dir") if hasattr(args, k)}
    fields.update(extra)
    if isinstance(fields.get("flags"), str):
        fields["flags"] = EffectFlags.parse(fields["flags"])
    return RunConfig(**fields)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _dispatch(args) -> None:
    if args.command == "simulate":
        data, truth = run_simulate(args.spec, args.n, args.seed, args.output_dir)
        print(f"wrote {data} and {truth}")
        return
    if args.command == "adapt":
        cfg = _config(args)
        d = load_input(cfg)
        plan, adapted = adapt(d, cfg.flags, cfg.seed, cfg.bins)
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.json")
        plan.save(out / "plan.json")
        export_dataset(adapted, out / "adapted.csv")
        print(f"delta_z={plan.residual_delta_z:.6g}; wrote {out / 'plan.json'}")
        return
    if args.command == "cluster":
        cfg = _config(args)
        _, _, report = run_algorithm1(cfg)
        print(tidy_csv(report.rows(method_name(cfg.flags))), end="")
        return
    if args.command == "evaluate":
        cfg = _config(args, flags=EffectFlags(0, 0, 0), K=args.K or RunConfig().K)
        d = load_input(cfg)
        try:
            a = Assignment.load(args.assignment, args.K, True if args.ftu else None)
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read assignment: {e}") from e
        if len(a) != d.n:
            raise ConfigError(f"assignment has {len(a)} rows but the dataset has {d.n} after cleaning")
        plan, _ = adapt(d, cfg.flags, cfg.seed, cfg.bins)
        report = full_report(d, d, a, plan, a.K, cfg.n_inner, cfg.n_outer, cfg.seed, None, cfg.bins)
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        cfg = replace(cfg, K=a.K)
        cfg.save(out / "config.json")
        _write_json(out / "report.json", report.as_dict())
        text = tidy_csv(report.rows("evaluated"))
        (out / "metrics.csv").write_text(text, encoding="utf-8")
        print(text, end="")
        return
    if args.command == "benchmark":
        cfg = _config(args)
        result = run_benchmark(cfg)
        for m, v in result.max_abs().items():
            print(f"{m:>20s}  max|effect| = {v:.4f}")
        return
    raise ConfigError(f"unknown command {args.command}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _dispatch(args)
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID if e.validation else EXIT_RUNTIME
    except (ConfigError, SchemaError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001 - last-resort reporting for the CLI
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
