"""Query the cube: group by hierarchy levels, roll up and drill down, slice
to one patient, and flag results against reference intervals.

Run:  python demos/03_cube_queries.py
"""

import tempfile
from pathlib import Path

from cubehouse.dsl import parse_schema
from cubehouse.etl import load_manifest
from cubehouse.olap import (
    Aggregate,
    CubeQuery,
    drill_down,
    execute,
    roll_up,
    slice_query,
)
from cubehouse.store import open_catalog

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "cubehouse" / "fixtures"

schema = parse_schema((FIXTURES / "medical.dws").read_text(encoding="utf-8"))
catalog = open_catalog(Path(tempfile.mkdtemp(prefix="cubehouse-demo-")) / "cat", "read-write")
load_manifest(FIXTURES / "sources.manifest", catalog, schema)


def show(result, title):
    print(f"\n{title}")
    for cell in result.cells:
        values = "  ".join(f"{k}={v}" for k, v in cell.values.items())
        flags = f"   flags: {cell.flags}" if cell.flags else ""
        print(f"  {' x '.join(cell.group):38s} {values}{flags}")
    print(f"  totals: {result.totals}")


# --- Average biological value per patient per month -------------------------

query = CubeQuery(
    fact_table="biological",
    group_by=(("patient", "member"), ("time", "month")),
    measures=(("value", Aggregate.AVG), ("value", Aggregate.COUNT)),
)
show(execute(query, catalog), "avg value by patient x month")

# --- Roll up time to year, drill back down ----------------------------------

coarser = roll_up(query, "time", schema)
show(execute(coarser, catalog), "rolled up to patient x year")
assert drill_down(coarser, "time", schema) == query

# --- Slice to one patient ----------------------------------------------------

sliced = slice_query(query, "patient", "member", "P001")
show(execute(sliced, catalog), "sliced to patient P001")

# --- Navigate the analysis classification (snowflake hierarchy) --------------

by_category = CubeQuery(
    fact_table="biological",
    group_by=(("medical-analysis", "category"),),
    measures=(("value", Aggregate.COUNT),),
)
show(execute(by_category, catalog), "result counts by analysis category")

# --- Normality flags from the reference intervals -----------------------------

flagged = CubeQuery(
    fact_table="biological",
    group_by=(("patient", "member"), ("medical-analysis", "analysis")),
    measures=(("value", Aggregate.AVG),),
    flag_normality=True,
)
show(execute(flagged, catalog), "per-patient averages with normality flags")
