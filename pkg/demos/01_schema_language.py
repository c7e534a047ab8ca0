"""Define a warehouse in the schema language, validate it, and inspect the
dimensional model: the conformed-dimension bus, star vs snowflake facts, and
hierarchy paths.

Run:  python demos/01_schema_language.py
"""

from pathlib import Path

from cubehouse import (
    classify_fact_table,
    conformed_dimensions,
    hierarchy_path,
    parse_schema,
    serialize_schema,
    validate_schema,
)

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "cubehouse" / "fixtures"

# --- Parse the shipped sports-medicine schema -----------------------------

text = (FIXTURES / "medical.dws").read_text(encoding="utf-8")
schema = parse_schema(text)
report = validate_schema(schema)
print(f"warehouse {schema.name!r} version {schema.version}")
print(f"valid: {report.ok}   composition: {report.metadata['composition']}")

# --- The bus: dimensions shared by several fact tables --------------------

print("\nconformed dimensions (the bus):")
for name in sorted(conformed_dimensions(schema)):
    print(f"  {name}")

# --- Star vs snowflake per fact table --------------------------------------

print("\nclassification:")
for fact in schema.fact_tables:
    print(f"  {fact.name:15s} {classify_fact_table(schema, fact.name)}")

# --- Hierarchies drive roll-up / drill-down --------------------------------

time = schema.dimension("time")
print("\ntime hierarchy (finest first):")
for level in hierarchy_path(time, "calendar"):
    print(f"  {level.name:8s} binds {', '.join(level.bound_attributes)}")

# --- Diagnostics carry positions -------------------------------------------

broken = text.replace("grain patient member", "grain patint member", 1)
diagnostics = parse_schema(broken)
print("\na dangling reference is reported with its source position:")
for d in diagnostics:
    print(f"  {d}")

# --- Canonical serialization round-trips ------------------------------------

assert parse_schema(serialize_schema(schema).text) == schema
print("\nserialize -> parse round-trips to an equal schema")
