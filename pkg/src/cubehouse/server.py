"""HTTP service over a catalog: schema, members, cube queries, navigation,
attribute-value export, complex-fact assemblies, documents, and loads.

All JSON responses are canonical (sorted keys, compact separators) so that a
query answered over the wire is byte-equal to the in-process engine's
serialization.  Every response carries the snapshot's schema version in the
``X-Schema-Version`` header.  The documented error codes live in
docs/http-api.md; bodies are ``{"code", "message", "location"?}``.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

from fastapi import Body, FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse

from . import dsl, etl, olap
from .model import (
    InvalidSchema,
    ModelError,
    UnknownDimension,
    UnknownFactTable,
    UnknownGroup,
    navigation_path,
)
from .store import (
    Catalog,
    CatalogError,
    DanglingId,
    DuplicateBatch,
    FactRow,
    ReadOnlyCatalog,
    open_catalog,
)
from .values import canonical_text


@dataclass(frozen=True, slots=True)
class ServerConfig:
    catalog_root: Path
    host: str = "127.0.0.1"
    port: int = 8765
    read_only: bool = False

    def __post_init__(self) -> None:
        if not (1 <= self.port <= 65535):
            raise ValueError(f"port {self.port} outside 1-65535")


@dataclass(frozen=True, slots=True)
class ApiError(Exception):
    code: str
    message: str
    status: int = 400
    location: str | None = None

    def body(self) -> dict:
        doc: dict = {"code": self.code, "message": self.message}
        if self.location is not None:
            doc["location"] = self.location
        return doc


def _canonical_response(doc: object, status: int = 200) -> Response:
    return Response(
        content=olap.canonical_json(doc), media_type="application/json", status_code=status
    )


def _row_document(row: FactRow) -> dict:
    return {
        "table": row.table,
        "row_id": row.row_id,
        "keys": dict(row.keys),
        "measures": {k: olap.json_value(v) for k, v in row.measures.items()},
        "batch_id": row.batch_id,
    }


def _translate(exc: Exception) -> ApiError:
    if isinstance(exc, ApiError):
        return exc
    if isinstance(exc, olap.AlreadyCoarsest):
        return ApiError("already_coarsest", str(exc), 409)
    if isinstance(exc, olap.AlreadyFinest):
        return ApiError("already_finest", str(exc), 409)
    if isinstance(exc, olap.MixedAnalyses):
        return ApiError("mixed_analyses", str(exc), 400)
    if isinstance(exc, olap.QueryError):
        return ApiError("invalid_query", str(exc), 400)
    if isinstance(exc, (UnknownFactTable, UnknownDimension, UnknownGroup)):
        return ApiError("not_found", str(exc), 404)
    if isinstance(exc, DanglingId):
        return ApiError("not_found", str(exc), 404)
    if isinstance(exc, DuplicateBatch):
        return ApiError("duplicate_batch", str(exc), 409)
    if isinstance(exc, ReadOnlyCatalog):
        return ApiError("read_only", str(exc), 403)
    if isinstance(exc, InvalidSchema):
        return ApiError("invalid_schema", str(exc), 400)
    if isinstance(exc, etl.EtlError):
        return ApiError("load_failed", str(exc), 400)
    if isinstance(exc, (CatalogError, ModelError, OSError)):
        return ApiError("io_error", str(exc), 500)
    raise exc


def create_app(config: ServerConfig, catalog: Catalog | None = None) -> FastAPI:
    """Build the service; opens the catalog unless one is injected."""
    if catalog is None:
        catalog = open_catalog(config.catalog_root, "read" if config.read_only else "read-write")
    app = FastAPI(title="cubehouse", docs_url=None, redoc_url=None)
    app.state.catalog = catalog
    app.state.config = config
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    def current() -> Catalog:
        return app.state.catalog

    @app.middleware("http")
    async def schema_version_and_errors(request: Request, call_next):
        try:
            response = await call_next(request)
        except Exception as exc:  # _translate re-raises anything unmapped
            api = _translate(exc)
            response = JSONResponse(status_code=api.status, content=api.body())
        response.headers["X-Schema-Version"] = str(current().schema_version)
        return response

    @app.get("/schema")
    def get_schema() -> Response:
        catalog = current()
        if catalog.schema is None:
            raise ApiError("no_schema", "catalog has no schema installed", 404)
        return _canonical_response(
            {
                "name": catalog.schema.name,
                "version": catalog.schema.version,
                "text": dsl.serialize_schema(catalog.schema).text,
            }
        )

    @app.get("/dimensions/{name}/members")
    def get_members(name: str, level: str | None = None, filter: str | None = None) -> Response:
        snapshot = current().snapshot()
        schema = snapshot.schema
        if schema is None:
            raise ApiError("no_schema", "catalog has no schema installed", 404)
        dim = schema.dimension(name)
        if level is not None:
            bound = olap.level_attributes(schema, name, level)
            values = sorted(
                {olap.header_text(m.attributes, bound) for m in snapshot.members(name).values()}
            )
            if filter:
                values = [v for v in values if filter in v]
            return _canonical_response({"dimension": name, "level": level, "values": values})
        members = []
        for key in sorted(snapshot.members(name)):
            member = snapshot.members(name)[key]
            natural = olap.header_text(member.attributes, dim.natural_key)
            if filter and filter not in natural:
                continue
            members.append(
                {
                    "key": key,
                    "natural_key": natural,
                    "attributes": {
                        k: olap.json_value(v) for k, v in member.attributes.items()
                    },
                }
            )
        return _canonical_response({"dimension": name, "members": members})

    @app.post("/query")
    def post_query(payload: dict = Body(...)) -> Response:
        query = olap.query_from_document(payload)
        result = olap.execute(query, current())
        return _canonical_response(olap.result_to_document(result))

    @app.post("/navigate")
    def post_navigate(payload: dict = Body(...)) -> Response:
        catalog = current()
        schema = catalog.schema
        if schema is None:
            raise ApiError("no_schema", "catalog has no schema installed", 404)
        try:
            query = olap.query_from_document(payload["query"])
            op = payload["op"]
            args = payload.get("args", {})
        except (KeyError, TypeError) as exc:
            raise ApiError("bad_request", f"malformed navigate document: {exc}", 400) from exc
        if op == "roll_up":
            query = olap.roll_up(query, args["dimension"], schema)
        elif op == "drill_down":
            query = olap.drill_down(query, args["dimension"], schema)
            if "slice_level" in args:
                query = olap.slice_query(
                    query, args["dimension"], args["slice_level"], args["slice_value"]
                )
        elif op == "slice":
            query = olap.slice_query(query, args["dimension"], args["level"], args["value"])
        elif op == "dice":
            removals = {
                (f["dimension"], f["level"], f["op"], json.dumps(f["value"], sort_keys=True))
                for f in args.get("remove", [])
            }
            if removals:
                kept = tuple(
                    f
                    for f in query.filters
                    if (f.dimension, f.level, f.op.value, json.dumps(f.value, sort_keys=True))
                    not in removals
                )
                query = olap.CubeQuery(
                    fact_table=query.fact_table,
                    group_by=query.group_by,
                    measures=query.measures,
                    filters=kept,
                    flag_normality=query.flag_normality,
                )
            filters = [
                olap.Filter(f["dimension"], f["level"], olap.FilterOp(f["op"]), f["value"])
                for f in args.get("filters", [])
            ]
            query = olap.dice(query, filters)
        else:
            raise ApiError("bad_request", f"unknown navigation op {op!r}", 400)
        olap.validate_query(query, schema)
        return _canonical_response({"query": olap.query_to_document(query)})

    @app.get("/facts/{table}/navigation")
    def get_navigation(table: str) -> Response:
        catalog = current()
        schema = catalog.schema
        if schema is None:
            raise ApiError("no_schema", "catalog has no schema installed", 404)
        fact = schema.fact_table(table)
        paths = {
            dimension: list(navigation_path(schema, table, dimension))
            for dimension in fact.grain_dimensions()
        }
        measures = [
            {"measure": m.name, "kind": m.kind.value, "aggregability": m.aggregability.value}
            for m in fact.measures
        ]
        return _canonical_response({"fact_table": table, "paths": paths, "measures": measures})

    @app.get("/facts/{table}/attribute-value")
    def get_attribute_value(
        table: str, attributes: str | None = None, filter: str | None = None
    ) -> StreamingResponse:
        selected = [a.strip() for a in attributes.split(",") if a.strip()] if attributes else None
        filters = []
        if filter:
            try:
                filters = [
                    olap.Filter(f["dimension"], f["level"], olap.FilterOp(f["op"]), f["value"])
                    for f in json.loads(filter)
                ]
            except (ValueError, KeyError, TypeError) as exc:
                raise ApiError("bad_request", f"malformed filter parameter: {exc}", 400) from exc
        view = olap.export_attribute_value(table, selected, filters, current())
        buffer = io.StringIO()
        olap.write_attribute_value_csv(view, buffer)
        buffer.seek(0)
        return StreamingResponse(buffer, media_type="text/csv; charset=utf-8")

    @app.get("/complex/{group}/{report_id}")
    def get_assembly(group: str, report_id: int) -> Response:
        assembly = olap.assemble_complex_fact(group, report_id, current())
        return _canonical_response(
            {
                "group": assembly.group,
                "report": _row_document(assembly.report),
                "satellites": {
                    table: [_row_document(r) for r in rows]
                    for table, rows in assembly.satellites.items()
                },
                "documents": [
                    {
                        "id": d.id,
                        "media_type": d.media_type,
                        "checksum": d.checksum,
                        "attrs": dict(d.attrs),
                    }
                    for d in assembly.documents
                ],
            }
        )

    @app.get("/documents/{doc_id}")
    def get_document(doc_id: int) -> Response:
        snapshot = current().snapshot()
        doc = snapshot.document(doc_id)
        payload = snapshot.document_payload(doc_id)
        return Response(
            content=payload,
            media_type=doc.media_type,
            headers={"X-Content-Checksum": doc.checksum},
        )

    @app.post("/load")
    def post_load(payload: dict = Body(...)) -> Response:
        catalog = current()
        if app.state.config.read_only or catalog.mode != "read-write":
            raise ApiError("read_only", "service is read-only", 403)
        manifest = payload.get("manifest")
        if not manifest:
            raise ApiError("bad_request", "missing 'manifest' path", 400)
        schema = None
        if payload.get("schema"):
            source = dsl.SourceText(
                Path(payload["schema"]).read_text(encoding="utf-8"), payload["schema"]
            )
            parsed = dsl.parse_schema(source)
            if isinstance(parsed, list):
                raise ApiError(
                    "invalid_schema",
                    "; ".join(str(d) for d in parsed),
                    400,
                    location=payload["schema"],
                )
            schema = parsed
        reports = etl.load_manifest(Path(manifest), catalog, schema)
        return _canonical_response(
            {
                "reports": [
                    {
                        "batch_id": r.batch_id,
                        "source": r.source,
                        "target": r.target,
                        "accepted": r.accepted,
                        "rejected": [
                            {
                                "uri": rej.provenance.uri,
                                "line": rej.provenance.line,
                                "reason": rej.reason,
                            }
                            for rej in r.rejected
                        ],
                        "members_created": r.members_created,
                        "members_updated": r.members_updated,
                        "duplicate": r.duplicate,
                    }
                    for r in reports
                ]
            }
        )

    return app


def serve(config: ServerConfig) -> None:
    """Run the service until interrupted."""
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
