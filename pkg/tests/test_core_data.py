import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from causalfair.data import (
    ColumnSpec, Dataset, EffectFlags, SchemaError, SfmSchema, empirical_conditional, empirical_marginal,
    export_dataset, joint_cells, load_dataset, load_schema, save_schema,
)

SEX_SCHEMA = SfmSchema(
    (ColumnSpec("sex", "protected", "categorical"), ColumnSpec("age", "confounder", "continuous"),
     ColumnSpec("occupation", "mediator", "categorical")),
    "female", "male",
)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_counts_rows(tmp_path):
    p = write(tmp_path, "sex,age,occupation\nfemale,30,a\nmale,41.5,b\nmale,22,a\n")
    d = load_dataset(p, SEX_SCHEMA)
    assert d.n == 3
    assert d.levels["sex"] == ("female", "male")
    assert list(d.x) == [0, 1, 1]
    assert d.schema.confounders == ("age",) and d.schema.mediators == ("occupation",)


def test_three_protected_levels_rejected(tmp_path):
    p = write(tmp_path, "sex,age,occupation\nfemale,30,a\nmale,41,b\nother,22,a\n")
    with pytest.raises(SchemaError):
        load_dataset(p, SEX_SCHEMA)


def test_missing_column_rejected(tmp_path):
    p = write(tmp_path, "sex,age\nfemale,30\nmale,41\n")
    with pytest.raises(SchemaError, match="occupation"):
        load_dataset(p, SEX_SCHEMA)


def test_unassigned_column_rejected(tmp_path):
    p = write(tmp_path, "sex,age,occupation,zip\nfemale,30,a,1\nmale,41,b,2\n")
    with pytest.raises(SchemaError, match="zip"):
        load_dataset(p, SEX_SCHEMA)


def test_ignored_column_is_allowed(tmp_path):
    schema = SfmSchema(SEX_SCHEMA.columns + (ColumnSpec("zip", "ignored", "categorical"),), "female", "male")
    p = write(tmp_path, "sex,age,occupation,zip\nfemale,30,a,1\nmale,41,b,2\n")
    d = load_dataset(p, schema)
    assert d.n == 2 and "zip" not in schema.confounders + schema.mediators


def test_bad_rows_dropped_with_warning(tmp_path, caplog):
    p = write(tmp_path, "sex,age,occupation\nfemale,30,a\nmale,abc,b\nmale,,a\nfemale,inf,a\nmale,50,b\n")
    with caplog.at_level(logging.WARNING):
        d = load_dataset(p, SEX_SCHEMA)
    assert d.n == 2 and d.dropped == 3
    assert "unparseable" in caplog.text


def test_compas_style_roles(tmp_path):
    mediators = ["juv_fel_count", "juv_misd_count", "juv_other_count", "priors_count", "c_charge_degree",
                 "two_year_recid"]
    kinds = ["continuous"] * 4 + ["categorical"] * 2
    schema = SfmSchema(
        (ColumnSpec("race", "protected", "categorical"), ColumnSpec("age", "confounder", "continuous"))
        + tuple(ColumnSpec(m, "mediator", k) for m, k in zip(mediators, kinds)),
        "Caucasian", "African-American",
    )
    header = "race,age," + ",".join(mediators)
    rows = ["African-American,24,0,0,1,3,F,1", "Caucasian,45,0,0,0,1,M,0", "Caucasian,31,1,0,0,0,F,0"]
    d = load_dataset(write(tmp_path, header + "\n" + "\n".join(rows) + "\n"), schema)
    assert d.n == 3 and list(d.x) == [1, 0, 0]
    assert d.schema.mediators == tuple(mediators)


def test_schema_roundtrip(tmp_path):
    save_schema(SEX_SCHEMA, tmp_path / "s.json")
    assert load_schema(tmp_path / "s.json") == SEX_SCHEMA


@pytest.mark.parametrize("doc", [
    {"columns": [{"name": "a", "role": "confounder", "kind": "continuous"}], "x0": "0", "x1": "1"},
    {"columns": [{"name": "a", "role": "protected", "kind": "continuous"}], "x0": "0", "x1": "1"},
    {"columns": [{"name": "a", "role": "protected", "kind": "categorical"}], "x0": "0", "x1": "0"},
    {"columns": [{"name": "a", "role": "protected", "kind": "categorical"},
                 {"name": "a", "role": "mediator", "kind": "categorical"}], "x0": "0", "x1": "1"},
    {"columns": [{"name": "a", "role": "boss", "kind": "categorical"}], "x0": "0", "x1": "1"},
])
def test_invalid_schemas(doc):
    with pytest.raises(SchemaError):
        SfmSchema.from_dict(doc)


def test_role_partition_is_total_and_disjoint():
    s = SEX_SCHEMA
    parts = [(s.protected,), s.confounders, s.mediators,
             tuple(c.name for c in s.columns if c.role == "ignored")]
    flat = [n for p in parts for n in p]
    assert sorted(flat) == sorted(s.names) and len(flat) == len(set(flat))


def test_dataset_is_immutable():
    d = Dataset.from_values(SEX_SCHEMA, {"sex": ["female", "male"], "age": [1.0, 2.0], "occupation": ["a", "b"]})
    with pytest.raises(ValueError):
        d.codes("age")[0] = 5.0
    d2 = d.replace(age=np.array([3.0, 4.0]))
    assert list(d.codes("age")) == [1.0, 2.0] and list(d2.codes("age")) == [3.0, 4.0]


def test_flags_parse():
    assert EffectFlags.parse("1,1,0").as_tuple() == (1, 1, 0)
    assert EffectFlags.parse("011").as_tuple() == (0, 1, 1)
    with pytest.raises(ValueError):
        EffectFlags.parse("1,2,0")


def test_marginal_examples():
    d = Dataset.from_values(SEX_SCHEMA, {"sex": ["female", "male"] * 2, "age": [1.0] * 4,
                                         "occupation": ["a", "a", "b", "b"]})
    assert empirical_marginal(d, "occupation").as_dict() == {"a": 0.5, "b": 0.5}
    one = Dataset.from_values(SEX_SCHEMA, {"sex": ["female", "male"], "age": [1.0, 2.0],
                                           "occupation": ["a", "a"]})
    assert empirical_marginal(one, "occupation").as_dict() == {"a": 1.0}


def test_marginal_keeps_known_zero_levels():
    d = Dataset.from_values(SEX_SCHEMA, {"sex": ["female", "male"], "age": [1.0, 2.0], "occupation": ["a", "a"]},
                            levels={"occupation": ("a", "b")})
    assert empirical_marginal(d, "occupation").as_dict() == {"a": 1.0, "b": 0.0}


def test_marginal_empty_dataset_errors():
    d = Dataset.from_values(SEX_SCHEMA, {"sex": [], "age": [], "occupation": []},
                            levels={"sex": ("female", "male"), "occupation": ("a",)})
    with pytest.raises(ValueError):
        empirical_marginal(d, "occupation")


def test_continuous_equal_frequency_bins():
    rng = np.random.default_rng(3)
    d = Dataset.from_values(SEX_SCHEMA, {"sex": ["female", "male"] * 500, "age": rng.normal(40, 10, 1000),
                                         "occupation": ["a"] * 1000})
    t = empirical_marginal(d, "age", bins=10)
    assert len(t.probs) == 10
    assert np.all(np.abs(t.probs - 0.1) <= 1 / 1000 + 1e-12)


def test_conditional_exact_frequencies():
    x = ["0", "0", "0", "0", "1", "1"]
    z = ["1", "1", "1", "0", "1", "0"]
    w = ["a", "b", "b", "a", "a", "b"]
    schema = SfmSchema((ColumnSpec("X", "protected", "categorical"), ColumnSpec("Z", "confounder", "categorical"),
                        ColumnSpec("W", "mediator", "categorical")), "0", "1")
    d = Dataset.from_values(schema, {"X": x, "Z": z, "W": w})
    t = empirical_conditional(d, "W", [("X", "0"), ("Z", "1")], threshold=0)
    assert t.as_dict() == {"a": 1 / 3, "b": 2 / 3} and not t.smoothed


def test_conditional_empty_cell_uniform_and_flagged():
    schema = SfmSchema((ColumnSpec("X", "protected", "categorical"), ColumnSpec("Z", "confounder", "categorical"),
                        ColumnSpec("W", "mediator", "categorical")), "0", "1")
    d = Dataset.from_values(schema, {"X": ["0", "1", "1"], "Z": ["0", "1", "0"], "W": ["a", "b", "c"]})
    t = empirical_conditional(d, "W", [("X", "0"), ("Z", "1")])
    assert t.count == 0 and t.smoothed
    assert np.allclose(t.probs, 1 / 3)


def test_conditional_matches_oracle_on_reference(reference_spec):
    from causalfair.scm import enumerate_units, evaluate

    u, p = enumerate_units(reference_spec)
    v = evaluate(reference_spec, u)
    # oracle P(W=1 | X=0, Z=z)
    d = __import__("causalfair.scm", fromlist=["sample"]).sample(reference_spec, 50_000, 7)
    for z in (0, 1):
        sel = (v["X"] == 0) & (v["Z"] == z)
        truth = p[sel & (v["W"] == 1)].sum() / p[sel].sum()
        est = empirical_conditional(d, "W", [("X", "0"), ("Z", str(z))])["1"]
        assert abs(est - truth) <= 0.02


@given(st.lists(st.sampled_from("abcd"), min_size=1, max_size=60),
       st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=60))
def test_tables_sum_to_one(cats, nums):
    n = min(len(cats), len(nums))
    x = (["female", "male"] * n)[:n]
    levels = {"sex": ("female", "male")}
    d = Dataset.from_values(SEX_SCHEMA, {"sex": x, "age": nums[:n], "occupation": cats[:n]}, levels=levels)
    for col in ("age", "occupation"):
        assert abs(empirical_marginal(d, col).probs.sum() - 1) <= 1e-12
    t = empirical_conditional(d, "occupation", [("sex", "female")])
    assert abs(t.probs.sum() - 1) <= 1e-12


@given(st.lists(st.tuples(st.sampled_from(["female", "male"]), st.floats(-1e9, 1e9, allow_nan=False),
                          st.sampled_from(["a", "b,c", 'q"t', "é"])), min_size=1, max_size=40))
def test_export_load_roundtrip(tmp_path_factory, rows):
    rows = rows + [("female", 1.5, "a"), ("male", -2.25, "b,c")]
    sex, age, occ = zip(*rows)
    d = Dataset.from_values(SEX_SCHEMA, {"sex": sex, "age": age, "occupation": occ},
                            levels={"sex": ("female", "male")})
    p = tmp_path_factory.mktemp("rt") / "d.csv"
    export_dataset(d, p)
    back = load_dataset(p, SEX_SCHEMA)
    assert list(back.values("sex")) == list(d.values("sex"))
    assert list(back.values("occupation")) == list(d.values("occupation"))
    assert np.array_equal(back.codes("age"), d.codes("age"))


def test_joint_cells_without_columns():
    d = Dataset.from_values(SEX_SCHEMA, {"sex": ["female", "male"], "age": [1.0, 2.0], "occupation": ["a", "b"]})
    ids, keys = joint_cells(d, [])
    assert keys == [()] and list(ids) == [0, 0]
