"""cubehouse: an embedded dimensional data-warehouse engine.

Define a warehouse in the ``.dws`` schema language, load heterogeneous
delimited sources through the harmonizing ETL, and query the resulting
catalog with hierarchy-aware cube operations, over the Python API, the CLI,
or the HTTP service.
"""

from .model import (
    Aggregability,
    Attribute,
    ComplexFactGroup,
    Dimension,
    FactTable,
    GrainEntry,
    Hierarchy,
    Level,
    Measure,
    Schema,
    ValidationReport,
    ValueKind,
    Violation,
    add_fact_table,
    classify_fact_table,
    conformed_dimensions,
    hierarchy_path,
    validate_schema,
)
from .dsl import ParseDiagnostic, SourceText, parse_schema, serialize_schema

__all__ = [
    "Aggregability",
    "Attribute",
    "ComplexFactGroup",
    "Dimension",
    "FactTable",
    "GrainEntry",
    "Hierarchy",
    "Level",
    "Measure",
    "ParseDiagnostic",
    "Schema",
    "SourceText",
    "ValidationReport",
    "ValueKind",
    "Violation",
    "add_fact_table",
    "classify_fact_table",
    "conformed_dimensions",
    "hierarchy_path",
    "parse_schema",
    "serialize_schema",
]

__version__ = "0.1.0"
