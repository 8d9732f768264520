"""Convert raw UCI Adult and ProPublica COMPAS files into CSV + schema pairs.

Usage:
    python3 scripts/prepare_benchmark_data.py --adult adult.data adult.test \
        --compas compas-scores-two-years.csv --output-dir data

Nothing is downloaded; point the script at local copies of the raw files.
"""

from __future__ import annotations

import argparse
import csv
import json
from pathlib import Path

ADULT_FIELDS = [
    "age", "workclass", "fnlwgt", "education", "education_num", "marital_status", "occupation",
    "relationship", "race", "sex", "capital_gain", "capital_loss", "hours_per_week", "native_country", "income",
]
WORKCLASS = {
    "Private": "private", "Self-emp-not-inc": "self_employed", "Self-emp-inc": "self_employed",
    "Federal-gov": "government", "Local-gov": "government", "State-gov": "government",
    "Without-pay": "other", "Never-worked": "other",
}
MARITAL = {
    "Married-civ-spouse": "married", "Married-AF-spouse": "married", "Married-spouse-absent": "married",
    "Never-married": "never_married", "Divorced": "separated", "Separated": "separated", "Widowed": "widowed",
}

ADULT_SCHEMA = {
    "x0": "Male", "x1": "Female", "bins": 10,
    "columns": [
        {"name": "sex", "role": "protected", "kind": "categorical"},
        {"name": "age", "role": "confounder", "kind": "continuous"},
        {"name": "native_country", "role": "confounder", "kind": "categorical"},
        {"name": "race", "role": "confounder", "kind": "categorical"},
        {"name": "marital_status", "role": "mediator", "kind": "categorical"},
        {"name": "education_num", "role": "mediator", "kind": "continuous"},
        {"name": "hours_per_week", "role": "mediator", "kind": "continuous"},
        {"name": "occupation", "role": "mediator", "kind": "categorical"},
        {"name": "workclass", "role": "mediator", "kind": "categorical"},
        {"name": "income", "role": "mediator", "kind": "categorical"},
    ],
}

COMPAS_SCHEMA = {
    "x0": "Caucasian", "x1": "African-American", "bins": 10,
    "columns": [
        {"name": "race", "role": "protected", "kind": "categorical"},
        {"name": "age", "role": "confounder", "kind": "continuous"},
        {"name": "sex", "role": "confounder", "kind": "categorical"},
        {"name": "juv_fel_count", "role": "mediator", "kind": "continuous"},
        {"name": "juv_misd_count", "role": "mediator", "kind": "continuous"},
        {"name": "juv_other_count", "role": "mediator", "kind": "continuous"},
        {"name": "priors_count", "role": "mediator", "kind": "continuous"},
        {"name": "c_charge_degree", "role": "mediator", "kind": "categorical"},
        {"name": "two_year_recid", "role": "mediator", "kind": "categorical"},
    ],
}


def _adult_rows(paths):
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                parts = [p.strip() for p in line.strip().rstrip(".").split(",")]
                if len(parts) != len(ADULT_FIELDS):
                    continue
                rec = dict(zip(ADULT_FIELDS, parts))
                if "?" in rec.values():
                    continue
                yield {
                    "sex": rec["sex"],
                    "age": rec["age"],
                    "native_country": "US" if rec["native_country"] == "United-States" else "non_US",
                    "race": rec["race"],
                    "marital_status": MARITAL[rec["marital_status"]],
                    "education_num": rec["education_num"],
                    "hours_per_week": rec["hours_per_week"],
                    "occupation": rec["occupation"],
                    "workclass": WORKCLASS[rec["workclass"]],
                    "income": "high" if rec["income"].startswith(">") else "low",
                }


def _compas_rows(path):
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            if rec["race"] not in ("African-American", "Caucasian"):
                continue
            yield {c["name"]: rec[c["name"]] for c in COMPAS_SCHEMA["columns"]}


def _write(rows, schema, out: Path, stem: str) -> int:
    names = [c["name"] for c in schema["columns"]]
    n = 0
    with open(out / f"{stem}.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=names, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
            n += 1
    (out / f"{stem}_schema.json").write_text(json.dumps(schema, indent=2) + "\n", encoding="utf-8")
    return n


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--adult", nargs="+", help="adult.data and optionally adult.test")
    p.add_argument("--compas", help="compas-scores-two-years.csv")
    p.add_argument("--output-dir", default="data")
    args = p.parse_args(argv)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.adult:
        print("adult rows:", _write(_adult_rows(args.adult), ADULT_SCHEMA, out, "adult"))
    if args.compas:
        print("compas rows:", _write(_compas_rows(args.compas), COMPAS_SCHEMA, out, "compas"))


if __name__ == "__main__":
    main()
