import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from causalfair.data import ColumnSpec, Dataset, EffectFlags, SfmSchema
from causalfair.scm import sample
from causalfair.tables import build_layout, build_tables
from causalfair.transport import (
    TransportError, apply_plan, fit_categorical_map, fit_plan, fit_quantile_map, residuals,
)
from causalfair.transport import _cell_key

floats = st.floats(-1e6, 1e6, allow_nan=False)


def test_quantile_identity_on_support():
    v = np.array([3.0, -1.0, 2.5, 2.5, 7.0, 0.0])
    m = fit_quantile_map(v, v)
    assert np.array_equal(m(v), v) and m.is_identity


def test_quantile_equal_size_supports():
    m = fit_quantile_map([2, 4, 6], [1, 2, 3])
    assert list(m([2, 4, 6])) == [1, 2, 3]


def test_quantile_gaussian_closed_form():
    rng = np.random.default_rng(0)
    m = fit_quantile_map(rng.normal(1, 1, 10_000), rng.normal(0, 2, 10_000))
    grid = np.linspace(-2, 4, 601)
    sup_error = float(np.max(np.abs(m(grid) - 2 * (grid - 1))))
    assert sup_error <= 0.05, f"sup error {sup_error:.3f} on [-2, 4]"


def test_quantile_gaussian_converges_in_the_bulk():
    errs = []
    for n in (1_000, 10_000, 100_000):
        rng = np.random.default_rng(1)
        m = fit_quantile_map(rng.normal(1, 1, n), rng.normal(0, 2, n))
        grid = np.linspace(0, 2, 201)
        errs.append(np.max(np.abs(m(grid) - 2 * (grid - 1))))
    assert errs[0] > errs[1] > errs[2]


def test_quantile_empty_sample_errors():
    with pytest.raises(TransportError):
        fit_quantile_map([], [1.0])


def test_quantile_extrapolates_linearly():
    m = fit_quantile_map([0.0, 1.0, 2.0], [0.0, 2.0, 4.0])
    assert m([-1.0, 3.0]).tolist() == [-2.0, 6.0]
    assert m.out_of_support([-1.0, 0.5, 3.0]) == 2


@given(st.lists(floats, min_size=1, max_size=50), st.lists(floats, min_size=1, max_size=50),
       st.lists(floats, min_size=2, max_size=20))
def test_quantile_map_monotone(src, tgt, probe):
    m = fit_quantile_map(src, tgt)
    p = np.sort(np.asarray(probe))
    assert np.all(np.diff(m(p)) >= 0)


def test_categorical_identity():
    m = fit_categorical_map([0.2, 0.5, 0.3], [0.2, 0.5, 0.3])
    assert m.is_identity and m.moved == 0.0


def test_categorical_forced():
    m = fit_categorical_map([1.0, 0.0], [0.0, 1.0])
    out = m.apply(np.zeros(7, dtype=int), np.random.default_rng(0))
    assert out.tolist() == [1] * 7


def test_categorical_mass_accounting():
    m = fit_categorical_map([0.6, 0.4], [0.4, 0.6])
    assert m.moved == pytest.approx(0.2)
    assert m.transfer[0, 1] == pytest.approx(0.2 / 0.6) and m.transfer[1, 0] == 0.0
    n = 1000
    codes = np.array([0] * 600 + [1] * 400)
    out = m.apply(codes, np.random.default_rng(5))
    assert abs(np.mean(out == 1) - 0.6) <= 1 / n
    again = m.apply(codes, np.random.default_rng(5))
    assert np.array_equal(out, again)


@given(st.lists(st.integers(1, 30), min_size=2, max_size=5), st.data())
def test_categorical_matches_target_counts(src_counts, data):
    tgt_counts = data.draw(st.lists(st.integers(0, 30), min_size=len(src_counts), max_size=len(src_counts)))
    if sum(tgt_counts) == 0:
        tgt_counts[0] = 1
    m = fit_categorical_map(src_counts, tgt_counts)
    codes = np.repeat(np.arange(len(src_counts)), src_counts)
    out = m.apply(codes, np.random.default_rng(0))
    got = np.bincount(out, minlength=len(src_counts)) / len(codes)
    want = np.asarray(tgt_counts) / sum(tgt_counts)
    # per-level largest-remainder rounding: at most one row per source level off
    assert np.all(np.abs(got - want) <= len(src_counts) / len(codes) + 1e-12)


@pytest.fixture(scope="module")
def ref_data(reference_spec):
    return sample(reference_spec, 20_000, 7)


def test_plan_111_residual_bound(ref_data):
    plan = fit_plan(ref_data, EffectFlags(1, 1, 1), seed=7)
    adapted = apply_plan(ref_data, plan)
    layout = build_layout(adapted)
    zc = layout.zw_to_z
    n_z = np.bincount(zc, weights=np.bincount(layout.zw, minlength=layout.nzw), minlength=layout.nz)
    for i, key in enumerate(layout.z_keys):
        levels = 2
        assert plan.residual_delta_w[_cell_key(key)] <= 2 * levels / math.sqrt(n_z[i])


def test_plan_branches(ref_data):
    p100 = fit_plan(ref_data, EffectFlags(1, 0, 0))
    assert p100.tau_z_identity and p100.groups == ("x0", "x1")
    p111 = fit_plan(ref_data, EffectFlags(1, 1, 1))
    assert not p111.tau_z_identity and p111.groups == ("x1",)


def test_plan_on_aligned_mediators_is_near_identity(reference_spec):
    schema = SfmSchema((ColumnSpec("X", "protected", "categorical"), ColumnSpec("Z", "confounder", "continuous"),
                        ColumnSpec("W", "mediator", "continuous")), "0", "1")
    rng = np.random.default_rng(2)
    n = 20_000
    x = rng.integers(0, 2, n)
    z = rng.normal(size=n)
    w = z + rng.normal(size=n)  # same law for both groups given z
    d = Dataset.from_values(schema, {"X": x, "Z": z, "W": w})
    adapted = apply_plan(d, fit_plan(d, EffectFlags(1, 1, 0)))
    assert np.array_equal(adapted.codes("Z"), d.codes("Z"))
    assert np.mean(np.abs(adapted.codes("W") - w)) < 0.1


def test_identity_plan_passthrough(ref_data):
    plan = fit_plan(ref_data, EffectFlags(0, 0, 0))
    assert apply_plan(ref_data, plan).equals(ref_data)


def test_x0_rows_unchanged_and_x_untouched(ref_data):
    adapted = apply_plan(ref_data, fit_plan(ref_data, EffectFlags(1, 1, 1)))
    x0 = ref_data.x == 0
    assert np.array_equal(adapted.x, ref_data.x)
    for col in ("Z", "W"):
        assert np.array_equal(adapted.codes(col)[x0], ref_data.codes(col)[x0])


def test_stored_residuals_match_recomputed(ref_data):
    plan = fit_plan(ref_data, EffectFlags(1, 1, 1))
    adapted = apply_plan(ref_data, plan)
    dz, dw = residuals(adapted)
    assert dz == plan.residual_delta_z and dw == dict(plan.residual_delta_w)
    t = build_tables(build_layout(adapted))
    assert t.delta_z() == plan.residual_delta_z


def test_residuals_shrink_with_n(reference_spec):
    res = []
    for n in (2_000, 50_000):
        d = sample(reference_spec, n, 11)
        plan = fit_plan(d, EffectFlags(1, 1, 1))
        res.append(max(plan.residual_delta_w.values()) + plan.residual_delta_z)
    assert res[1] < res[0]


def test_idempotence(ref_data):
    plan = fit_plan(ref_data, EffectFlags(1, 1, 1))
    adapted = apply_plan(ref_data, plan)
    again = fit_plan(adapted, EffectFlags(1, 1, 1))
    slack = 2 / math.sqrt(ref_data.n)
    assert again.residual_delta_z <= plan.residual_delta_z + slack
    for key, v in again.residual_delta_w.items():
        assert v <= plan.residual_delta_w[key] + slack


def test_empty_target_cell_falls_back(caplog):
    schema = SfmSchema((ColumnSpec("X", "protected", "categorical"), ColumnSpec("Z", "confounder", "categorical"),
                        ColumnSpec("W", "mediator", "categorical")), "0", "1")
    d = Dataset.from_values(schema, {"X": ["0", "0", "1", "1", "1"], "Z": ["a", "a", "a", "b", "b"],
                                     "W": ["p", "q", "q", "p", "q"]})
    plan = fit_plan(d, EffectFlags(1, 1, 0))
    assert plan.flagged["fallback_cells"] == ["W/x1/b"]
    assert "unconditional" in caplog.text


def test_plan_needs_both_groups():
    schema = SfmSchema((ColumnSpec("X", "protected", "categorical"), ColumnSpec("W", "mediator", "continuous")),
                       "0", "1")
    d = Dataset.from_values(schema, {"X": ["0", "0"], "W": [1.0, 2.0]}, levels={"X": ("0", "1")})
    with pytest.raises(TransportError):
        fit_plan(d, EffectFlags(1, 1, 1))


def test_continuous_plan_monotone_per_column():
    schema = SfmSchema((ColumnSpec("X", "protected", "categorical"), ColumnSpec("Z", "confounder", "continuous"),
                        ColumnSpec("W", "mediator", "continuous")), "0", "1")
    rng = np.random.default_rng(4)
    n = 4000
    x = rng.integers(0, 2, n)
    z = rng.normal(x, 1)
    w = rng.normal(2 * x, 1)
    d = Dataset.from_values(schema, {"X": x, "Z": z, "W": w})
    adapted = apply_plan(d, fit_plan(d, EffectFlags(1, 1, 1)))
    x1 = x == 1
    order = np.argsort(z[x1])
    assert np.all(np.diff(adapted.codes("Z")[x1][order]) >= 0)


def test_plan_serialises(ref_data, tmp_path):
    plan = fit_plan(ref_data, EffectFlags(1, 1, 1), seed=3)
    plan.save(tmp_path / "plan.json")
    doc = json.loads((tmp_path / "plan.json").read_text())
    assert doc["flags"] == {"nde": True, "nie": True, "se": True} and doc["seed"] == 3
    assert set(doc["residual_delta_w"]) == set(plan.residual_delta_w)
