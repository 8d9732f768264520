"""Causally fair clustering and clustering fairness audits under the standard fairness model."""

from .data import (
    ColumnSpec,
    Dataset,
    EffectFlags,
    SchemaError,
    SfmSchema,
    empirical_conditional,
    empirical_marginal,
    export_dataset,
    load_dataset,
    load_schema,
)

__version__ = "0.1.0"

__all__ = [
    "ColumnSpec",
    "Dataset",
    "EffectFlags",
    "SchemaError",
    "SfmSchema",
    "empirical_conditional",
    "empirical_marginal",
    "export_dataset",
    "load_dataset",
    "load_schema",
]
