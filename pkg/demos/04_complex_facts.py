"""Complex facts: a cardio report is a conclusion plus numeric results plus
multimedia documents, tied together through shared dimensions and a
many-to-many document bridge.  One echocardiogram series can serve several
reports (for instance to follow a patient's evolution over time).

Run:  python demos/04_complex_facts.py
"""

import tempfile
from pathlib import Path

from cubehouse.dsl import parse_schema
from cubehouse.etl import link_document, load_document, load_manifest
from cubehouse.olap import assemble_complex_fact, export_attribute_value, write_attribute_value_csv
from cubehouse.store import open_catalog

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "cubehouse" / "fixtures"

schema = parse_schema((FIXTURES / "medical.dws").read_text(encoding="utf-8"))
root = Path(tempfile.mkdtemp(prefix="cubehouse-demo-")) / "cat"
catalog = open_catalog(root, "read-write")
load_manifest(FIXTURES / "sources.manifest", catalog, schema)

# --- Attach documents to the reports ----------------------------------------

reports = sorted(catalog.scan_facts("cardio-report"), key=lambda r: r.row_id)
r1, r2 = reports[0].row_id, reports[1].row_id

series_1 = load_document(b"<echocardiogram series bytes #1>", "image/png", {"kind": "echo"}, catalog)
series_2 = load_document(b"<echocardiogram series bytes #2>", "image/png", {"kind": "echo"}, catalog)
link_document(r1, series_1, catalog)
link_document(r1, series_2, catalog)
link_document(r2, series_1, catalog)  # shared across reports: many-to-many

# content addressing dedups identical payloads
again = load_document(b"<echocardiogram series bytes #1>", "image/png", {"kind": "echo"}, catalog)
assert again == series_1

# --- Assemble each complex fact ----------------------------------------------

for rid in (r1, r2):
    assembly = assemble_complex_fact("cardio", rid, catalog)
    print(f"report row {rid}: {assembly.report.measures['conclusion']!r}")
    for row in assembly.satellites["cardio-result"]:
        code = catalog.members("medical-analysis")[row.keys["medical-analysis"]].attributes["code"]
        print(f"  result   {code:18s} {row.measures['value']}")
    for doc in assembly.documents:
        print(f"  document #{doc.id} {doc.media_type} sha256={doc.checksum[:12]}…")
    print()

# --- Flat attribute-value view for downstream mining --------------------------

view = export_attribute_value(
    "biological", ["patient.code", "patient.sex", "time.day", "medical-analysis.code"], [], catalog
)
out = root.parent / "biological-attribute-value.csv"
write_attribute_value_csv(view, out)
print(f"attribute-value export: {len(view.rows)} rows -> {out}")
print("  header:", ",".join(view.header))
