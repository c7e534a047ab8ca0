"""Drive the HTTP API in process: load over the wire, query with parity to
the engine, navigate server-side, and fetch a document with checksum
verification.  (`cubehouse serve --catalog DIR --port N` runs the same app
over a socket.)

Run:  python demos/05_http_service.py
"""

import hashlib
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from cubehouse import olap
from cubehouse.dsl import parse_schema
from cubehouse.etl import link_document, load_document
from cubehouse.server import ServerConfig, create_app
from cubehouse.store import open_catalog

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "cubehouse" / "fixtures"

root = Path(tempfile.mkdtemp(prefix="cubehouse-demo-")) / "cat"
catalog = open_catalog(root, "read-write")
schema = parse_schema((FIXTURES / "medical.dws").read_text(encoding="utf-8"))
app = create_app(ServerConfig(catalog_root=root), catalog=catalog)
client = TestClient(app)

# --- Load through the API ------------------------------------------------------

response = client.post(
    "/load",
    json={"manifest": str(FIXTURES / "sources.manifest"), "schema": str(FIXTURES / "medical.dws")},
)
print("load:", response.status_code, "schema version header:", response.headers["x-schema-version"])

# --- Query over the wire == query in process -----------------------------------

query_doc = {
    "fact_table": "biological",
    "group_by": [{"dimension": "time", "level": "month"}],
    "measures": [{"measure": "value", "aggregate": "avg"}],
    "filters": [],
    "flag_normality": False,
}
wire = client.post("/query", json=query_doc).content
local = olap.canonical_json(
    olap.result_to_document(olap.execute(olap.query_from_document(query_doc), catalog))
)
print("wire == in-process bytes:", wire == local)

# --- Server-side navigation ------------------------------------------------------

step = client.post(
    "/navigate",
    json={
        "query": query_doc,
        "op": "drill_down",
        "args": {"dimension": "time", "slice_level": "month", "slice_value": "2004-03"},
    },
).json()["query"]
print("drill+slice ->", step["group_by"], step["filters"])
print("cells now:", len(client.post("/query", json=step).json()["cells"]))

# --- Documents with integrity header ----------------------------------------------

report = min(r.row_id for r in catalog.scan_facts("cardio-report"))
doc_id = load_document(b"<series bytes>", "image/png", {}, catalog)
link_document(report, doc_id, catalog)
blob = client.get(f"/documents/{doc_id}")
print(
    "document checksum verifies:",
    hashlib.sha256(blob.content).hexdigest() == blob.headers["x-content-checksum"],
)
assembly = client.get(f"/complex/cardio/{report}").json()
print("assembly:", len(assembly["satellites"]["cardio-result"]), "results,",
      len(assembly["documents"]), "documents")
