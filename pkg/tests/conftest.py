from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import causalfair
from causalfair.data import ColumnSpec, Dataset, SfmSchema
from causalfair.scm import load_scm

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIXTURES = Path(causalfair.__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def reference_spec():
    return load_scm(FIXTURES / "reference_scm.json")


@pytest.fixture(scope="session")
def confounded_spec():
    return load_scm(FIXTURES / "confounded_no_indirect_scm.json")


def discrete_schema(z=("Z",), w=("W",), x0="0", x1="1") -> SfmSchema:
    cols = [ColumnSpec("X", "protected", "categorical")]
    cols += [ColumnSpec(c, "confounder", "categorical") for c in z]
    cols += [ColumnSpec(c, "mediator", "categorical") for c in w]
    return SfmSchema(tuple(cols), x0, x1)


def discrete_dataset(x, z=None, w=None) -> Dataset:
    """Binary X with optional single Z and W columns of small integer labels."""
    zc = ("Z",) if z is not None else ()
    wc = ("W",) if w is not None else ()
    vals = {"X": [str(v) for v in x]}
    if z is not None:
        vals["Z"] = [str(v) for v in z]
    if w is not None:
        vals["W"] = [str(v) for v in w]
    return Dataset.from_values(discrete_schema(zc, wc), vals)


def full_grid(reps=6, seed=0):
    """Every (x, z, w) combination of binary columns, ``reps`` times, shuffled."""
    grid = np.array([(x, z, w) for x in (0, 1) for z in (0, 1) for w in (0, 1)] * reps)
    rng = np.random.default_rng(seed)
    return grid[rng.permutation(len(grid))]


def mechanism_labels(d: Dataset, f_C) -> np.ndarray:
    """Apply an SCM-level cluster mechanism (integer-valued env) to a sampled dataset."""
    env = {}
    for c in d.schema.columns:
        v = d.values(c.name)
        env[c.name] = np.asarray([int(a) for a in v]) if c.kind == "categorical" else np.asarray(v, dtype=float)
    return np.asarray(f_C(env), dtype=np.int64)


def by_name(spec, name):
    return next(c for c in spec.clusterings if c.name == name)
