"""Command-line front door: validate schemas, load manifests, run queries,
export attribute-value views, and serve the HTTP API.

Exit codes: 0 success, 1 validation/query error, 2 I/O error, 3 usage error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import dsl, etl, olap
from .etl import EtlError, LoadReport
from .model import InvalidSchema, ModelError, Schema
from .server import ServerConfig, serve as run_server
from .store import CatalogError, open_catalog

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2
EXIT_USAGE = 3


def _read_schema(path: Path) -> Schema | int:
    """Parse a .dws file; on failure print diagnostics and return exit 1."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        click.echo(f"error: cannot read {path}: {exc}", err=True)
        return EXIT_IO
    parsed = dsl.parse_schema(dsl.SourceText(text, str(path)))
    if isinstance(parsed, list):
        for diagnostic in parsed:
            click.echo(f"{path}:{diagnostic}", err=True)
        return EXIT_INVALID
    return parsed


@click.group()
def cli() -> None:
    """Embedded dimensional warehouse: schema, load, query, export, serve."""


@cli.group()
def schema() -> None:
    """Schema-language commands."""


@schema.command("check")
@click.argument("file", type=click.Path(path_type=Path))
def schema_check(file: Path) -> int:
    """Validate a schema file; diagnostics go to standard error."""
    parsed = _read_schema(file)
    if isinstance(parsed, int):
        return parsed
    from .model import validate_schema

    report = validate_schema(parsed)
    click.echo(
        f"ok: warehouse {parsed.name!r} version {parsed.version} "
        f"({len(parsed.dimensions)} dimensions, {len(parsed.fact_tables)} facts, "
        f"composition {report.metadata.get('composition')})"
    )
    return EXIT_OK


def _echo_report(report: LoadReport) -> None:
    if report.duplicate:
        click.echo(f"{report.target}: duplicate batch {report.batch_id[:12]}..., counts unchanged")
        return
    created = ", ".join(f"{d}+{n}" for d, n in sorted(report.members_created.items())) or "none"
    click.echo(
        f"{report.target}: accepted {report.accepted}, rejected {len(report.rejected)}, "
        f"members created: {created}"
    )
    for rejection in report.rejected:
        click.echo(
            f"  rejected {rejection.provenance.uri}:{rejection.provenance.line}: {rejection.reason}",
            err=True,
        )


@cli.command("load")
@click.option("--schema", "schema_file", type=click.Path(path_type=Path), required=True)
@click.option("--catalog", "catalog_dir", type=click.Path(path_type=Path), required=True)
@click.option("--manifest", "manifest_file", type=click.Path(path_type=Path), required=True)
def load(schema_file: Path, catalog_dir: Path, manifest_file: Path) -> int:
    """Load every source of a manifest into the catalog, batch by batch."""
    parsed = _read_schema(schema_file)
    if isinstance(parsed, int):
        return parsed
    try:
        catalog = open_catalog(catalog_dir, "read-write")
        reports = etl.load_manifest(manifest_file, catalog, parsed)
    except EtlError as exc:
        if isinstance(exc.__cause__, OSError):
            click.echo(f"error: {exc}", err=True)
            return EXIT_IO
        click.echo(f"error: {exc}", err=True)
        return EXIT_INVALID
    except (InvalidSchema, ModelError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_INVALID
    except (CatalogError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_IO
    for report in reports:
        _echo_report(report)
    return EXIT_OK


@cli.command("query")
@click.option("--catalog", "catalog_dir", type=click.Path(path_type=Path), required=True)
@click.option("--query", "query_file", type=click.Path(path_type=Path), required=True)
@click.option("--out", "out_file", type=click.Path(path_type=Path), required=True,
              help="output file; '-' writes to standard output")
def query(catalog_dir: Path, query_file: Path, out_file: Path) -> int:
    """Execute a cube-query document (JSON) and write the canonical result."""
    try:
        doc = json.loads(query_file.read_text(encoding="utf-8"))
        catalog = open_catalog(catalog_dir, "read")
    except (OSError, CatalogError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_IO
    except ValueError as exc:
        click.echo(f"error: {query_file} is not valid JSON: {exc}", err=True)
        return EXIT_INVALID
    try:
        cube_query = olap.query_from_document(doc)
        result = olap.execute(cube_query, catalog)
    except (olap.QueryError, ModelError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_INVALID
    payload = olap.canonical_json(olap.result_to_document(result))
    if str(out_file) == "-":
        click.echo(payload.decode("utf-8"))
    else:
        try:
            out_file.write_bytes(payload + b"\n")
        except OSError as exc:
            click.echo(f"error: cannot write {out_file}: {exc}", err=True)
            return EXIT_IO
    return EXIT_OK


@cli.command("export-av")
@click.option("--catalog", "catalog_dir", type=click.Path(path_type=Path), required=True)
@click.option("--fact", "fact_table", required=True)
@click.option("--out", "out_file", type=click.Path(path_type=Path), required=True)
@click.option("--attributes", default=None, help="comma list of dimension.attribute selections")
@click.option("--filter", "filter_json", default=None, help="JSON list of filter documents")
def export_av(
    catalog_dir: Path, fact_table: str, out_file: Path, attributes: str | None, filter_json: str | None
) -> int:
    """Export a flat attribute-value view for downstream mining tools."""
    try:
        catalog = open_catalog(catalog_dir, "read")
    except (OSError, CatalogError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_IO
    selected = [a.strip() for a in attributes.split(",") if a.strip()] if attributes else None
    filters = []
    if filter_json:
        try:
            filters = [
                olap.Filter(f["dimension"], f["level"], olap.FilterOp(f["op"]), f["value"])
                for f in json.loads(filter_json)
            ]
        except (ValueError, KeyError, TypeError) as exc:
            click.echo(f"error: malformed --filter: {exc}", err=True)
            return EXIT_USAGE
    try:
        view = olap.export_attribute_value(fact_table, selected, filters, catalog)
    except (olap.QueryError, ModelError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_INVALID
    try:
        if str(out_file) == "-":
            olap.write_attribute_value_csv(view, sys.stdout)
        else:
            olap.write_attribute_value_csv(view, out_file)
    except OSError as exc:
        click.echo(f"error: cannot write {out_file}: {exc}", err=True)
        return EXIT_IO
    click.echo(f"exported {len(view.rows)} rows", err=True)
    return EXIT_OK


@cli.command("serve")
@click.option("--catalog", "catalog_dir", type=click.Path(path_type=Path), required=True)
@click.option("--port", type=int, default=8765, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--read-only", is_flag=True, default=False)
def serve(catalog_dir: Path, port: int, host: str, read_only: bool) -> int:
    """Serve the HTTP API over the catalog."""
    try:
        config = ServerConfig(catalog_root=catalog_dir, host=host, port=port, read_only=read_only)
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE
    try:
        run_server(config)
    except (OSError, CatalogError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_IO
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        result = cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        return 130
    return result if isinstance(result, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
