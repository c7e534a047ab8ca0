"""Load heterogeneous lab spreadsheets into a catalog: three different labels
and two units for the same analysis, from two providers, unify into one
analysis member with canonical-unit values.  Batches are content-hashed, so
re-running a load is a detected no-op.

Run:  python demos/02_etl_harmonization.py
"""

import tempfile
from pathlib import Path

from cubehouse.dsl import parse_schema
from cubehouse.etl import load_manifest
from cubehouse.store import open_catalog

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "cubehouse" / "fixtures"

schema = parse_schema((FIXTURES / "medical.dws").read_text(encoding="utf-8"))
root = Path(tempfile.mkdtemp(prefix="cubehouse-demo-")) / "catalog"
catalog = open_catalog(root, "read-write")

# --- First load: every manifest section becomes one atomic batch -----------

print("loading", FIXTURES / "sources.manifest")
for report in load_manifest(FIXTURES / "sources.manifest", catalog, schema):
    created = ", ".join(f"{d}+{n}" for d, n in sorted(report.members_created.items())) or "-"
    print(f"  {report.target:17s} accepted={report.accepted:<3d} rejected={len(report.rejected)} members: {created}")

# --- Heterogeneity resolved -------------------------------------------------

snapshot = catalog.snapshot()
hemoglobin = [
    m for m in snapshot.members("medical-analysis").values() if m.attributes["code"] == "hemoglobin"
]
print(f"\n'Hémoglobine', 'HGB' and 'Hemoglobin' resolved to {len(hemoglobin)} member")

print("\nbiological rows are stored in the canonical unit (g/L):")
members = snapshot.members("medical-analysis")
for row in snapshot.scan_facts("biological"):
    if members[row.keys["medical-analysis"]].attributes["code"] == "hemoglobin":
        patient = snapshot.members("patient")[row.keys["patient"]].attributes["code"]
        print(f"  {patient}  {row.measures['value']:6.1f} g/L")

# --- Re-running the same manifest is idempotent -----------------------------

print("\nre-running the manifest:")
for report in load_manifest(FIXTURES / "sources.manifest", catalog):
    print(f"  {report.target:17s} duplicate={report.duplicate}")
print(f"\nfact count unchanged: biological={catalog.fact_count('biological')}")
print(f"catalog on disk at {root}")
