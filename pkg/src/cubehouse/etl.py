"""Extract heterogeneous delimited sources, harmonize them through the
mapping metadata, resolve dimension members to surrogate keys, and load fact
rows and documents with row-level provenance.

Sources are described by sections of a plain-text key=value manifest
(``sources.manifest``).  A section either seeds a dimension or loads a fact
table; fact sections may route a (label, value, unit) triple through synonym
and unit harmonization, or map measure columns directly::

    [metadata]
    synonyms = metadata/synonyms.csv
    units = metadata/units.csv
    canonical_units = metadata/canonical_units.csv
    intervals = metadata/intervals.csv

    [roster]
    kind = dimension
    uri = sources/patients.csv
    dimension = patient
    map.key.code = code
    map.attr.sex = sex

    [lab-a]
    uri = sources/lab-a.csv
    delimiter = ,
    target = biological
    provider = lab-a
    const.data-provider.kind = laboratory
    map.key.patient.code = athlete
    map.timestamp = sampled_at
    map.session = session
    map.label = analysis
    map.value = result
    map.unit = unit

Batches are identified by a content hash of (uri, file bytes, target), so
re-running a load is detected and refused rather than silently doubling the
warehouse.  Bad records are rejected row by row with their provenance; a
batch installs atomically.
"""

from __future__ import annotations

import configparser
import csv
import datetime as dt
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

from .mapping import (
    MappingError,
    MappingRules,
    ReferenceInterval,
    convert_unit,
    normalize_label,
)
from .model import Schema, ValueKind
from .store import Catalog, DocumentLink, DuplicateBatch, Staging
from .values import Value, ValueKindError, parse_typed

MANIFEST_METADATA_SECTION = "metadata"


class EtlError(Exception):
    """Descriptor or source-level failure that aborts a load up front."""


@dataclass(frozen=True, slots=True)
class Provenance:
    uri: str
    line: int  # 1-based physical line


@dataclass(frozen=True, slots=True)
class RawRecord:
    fields: tuple[str, ...]
    provenance: Provenance


@dataclass(frozen=True, slots=True)
class Rejection:
    provenance: Provenance
    reason: str


@dataclass(frozen=True, slots=True)
class SourceDescriptor:
    """One manifest section: where the file is, how it is delimited, and how
    its columns map onto warehouse roles."""

    name: str
    uri: Path
    kind: str = "facts"  # "facts" | "dimension"
    delimiter: str = ","
    quote: str = '"'
    header: bool = True
    target_fact: str | None = None
    dimension: str | None = None
    provider: str | None = None
    provider_dimension: str = "data-provider"
    time_dimension: str = "time"
    analysis_dimension: str = "medical-analysis"
    value_measure: str | None = None
    key_map: dict[tuple[str, str], str] = field(default_factory=dict)
    attr_map: dict[tuple[str, str], str] = field(default_factory=dict)
    const_map: dict[tuple[str, str], str] = field(default_factory=dict)
    measure_map: dict[str, str] = field(default_factory=dict)
    timestamp_col: str | None = None
    session_col: str | None = None
    label_col: str | None = None
    value_col: str | None = None
    unit_col: str | None = None


# ---------------------------------------------------------------------------
# Manifest parsing


def parse_manifest(path: Path) -> tuple[dict[str, Path], list[SourceDescriptor]]:
    """Parse a sources manifest; relative paths resolve against its directory.

    Returns (metadata files by conventional name, source descriptors in
    declaration order).
    """
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    try:
        content = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise EtlError(f"cannot read manifest {path}: {exc}") from exc
    parser.read_string(content, source=str(path))
    base = path.parent

    metadata: dict[str, Path] = {}
    sources: list[SourceDescriptor] = []
    for section in parser.sections():
        items = dict(parser.items(section))
        if section == MANIFEST_METADATA_SECTION:
            for key, rel in items.items():
                metadata[f"{key}.csv"] = base / rel
            continue
        sources.append(_parse_source_section(section, items, base))
    return metadata, sources


def _parse_source_section(name: str, items: dict[str, str], base: Path) -> SourceDescriptor:
    def pop(key: str, default: str | None = None) -> str | None:
        return items.pop(key, default)

    uri = pop("uri")
    if uri is None:
        raise EtlError(f"section [{name}]: missing uri")
    kind = pop("kind", "facts") or "facts"
    descriptor = dict(
        name=name,
        uri=base / uri,
        kind=kind,
        delimiter=pop("delimiter", ",") or ",",
        quote=pop("quote", '"') or '"',
        header=(pop("header", "true") or "true").lower() in ("true", "yes", "1"),
        target_fact=pop("target"),
        dimension=pop("dimension"),
        provider=pop("provider"),
        provider_dimension=pop("provider_dimension", "data-provider"),
        time_dimension=pop("time_dimension", "time"),
        analysis_dimension=pop("analysis_dimension", "medical-analysis"),
        value_measure=pop("value_measure"),
        timestamp_col=pop("map.timestamp"),
        session_col=pop("map.session"),
        label_col=pop("map.label"),
        value_col=pop("map.value"),
        unit_col=pop("map.unit"),
    )
    key_map: dict[tuple[str, str], str] = {}
    attr_map: dict[tuple[str, str], str] = {}
    const_map: dict[tuple[str, str], str] = {}
    measure_map: dict[str, str] = {}
    for key, value in items.items():
        parts = key.split(".")
        if parts[0] == "map" and parts[1] == "key":
            if kind == "dimension":
                if len(parts) != 3:
                    raise EtlError(f"section [{name}]: bad key {key!r}")
                key_map[("", parts[2])] = value
            else:
                if len(parts) != 4:
                    raise EtlError(f"section [{name}]: bad key {key!r}")
                key_map[(parts[2], parts[3])] = value
        elif parts[0] == "map" and parts[1] == "attr":
            if kind == "dimension":
                if len(parts) != 3:
                    raise EtlError(f"section [{name}]: bad key {key!r}")
                attr_map[("", parts[2])] = value
            else:
                if len(parts) != 4:
                    raise EtlError(f"section [{name}]: bad key {key!r}")
                attr_map[(parts[2], parts[3])] = value
        elif parts[0] == "map" and parts[1] == "measure" and len(parts) == 3:
            measure_map[parts[2]] = value
        elif parts[0] == "const" and len(parts) == 3:
            const_map[(parts[1], parts[2])] = value
        else:
            raise EtlError(f"section [{name}]: unknown key {key!r}")
    return SourceDescriptor(
        key_map=key_map, attr_map=attr_map, const_map=const_map, measure_map=measure_map, **descriptor
    )


# ---------------------------------------------------------------------------
# Extraction


def extract_rows(src: SourceDescriptor) -> Iterator[RawRecord | Rejection]:
    """Stream raw records with provenance; ragged rows come back as
    rejections instead of aborting the stream.  Memory stays bounded."""
    try:
        handle = src.uri.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise EtlError(f"cannot read source {src.uri}: {exc}") from exc
    with handle:
        reader = csv.reader(handle, delimiter=src.delimiter, quotechar=src.quote)
        expected: int | None = None
        for row in reader:
            line = reader.line_num
            if src.header and line == 1:
                expected = len(row)
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if expected is not None and len(row) != expected:
                yield Rejection(
                    Provenance(str(src.uri), line),
                    f"ragged row: expected {expected} fields, found {len(row)}",
                )
                continue
            yield RawRecord(tuple(row), Provenance(str(src.uri), line))


class _RecordReject(Exception):
    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


class _ColumnLookup:
    """Resolve column references (names for headed files, 0-based indexes
    otherwise) against one record."""

    def __init__(self, src: SourceDescriptor) -> None:
        self.src = src
        self.by_name: dict[str, int] | None = None
        if src.header:
            with src.uri.open(newline="", encoding="utf-8") as handle:
                reader = csv.reader(handle, delimiter=src.delimiter, quotechar=src.quote)
                header = next(reader, [])
            self.by_name = {name.strip(): i for i, name in enumerate(header)}

    def index(self, ref: str) -> int:
        if self.by_name is not None:
            if ref not in self.by_name:
                raise EtlError(f"{self.src.uri.name}: no column {ref!r} in header")
            return self.by_name[ref]
        try:
            return int(ref)
        except ValueError as exc:
            raise EtlError(
                f"{self.src.uri.name}: headerless sources need integer column refs, got {ref!r}"
            ) from exc

    def get(self, record: RawRecord, ref: str) -> str:
        i = self.index(ref)
        if i >= len(record.fields):
            raise _RecordReject(f"missing column {ref!r}")
        return record.fields[i]


# ---------------------------------------------------------------------------
# Loading


@dataclass(frozen=True, slots=True)
class LoadReport:
    batch_id: str
    source: str
    target: str
    accepted: int
    rejected: tuple[Rejection, ...]
    members_created: dict[str, int]
    members_updated: dict[str, int]
    duplicate: bool = False

    @property
    def records_read(self) -> int:
        return self.accepted + len(self.rejected)


def compute_batch_id(uri: Path, content: bytes, target: str) -> str:
    digest = hashlib.sha256()
    digest.update(str(uri.name).encode("utf-8"))
    digest.update(b"\x00")
    digest.update(content)
    digest.update(b"\x00")
    digest.update(target.encode("utf-8"))
    return digest.hexdigest()


def resolve_dimension_member(
    dimension: str,
    natural_key: Mapping[str, Value],
    attrs: Mapping[str, Value] | None,
    target: Catalog | Staging,
) -> int:
    """Resolve (or create) a member and return its dense surrogate key.

    Against a Catalog this installs immediately; against a Staging it joins
    the surrounding batch.
    """
    if isinstance(target, Staging):
        return target.resolve_member(dimension, natural_key, attrs)
    staging = target.begin_batch()
    key = staging.resolve_member(dimension, natural_key, attrs)
    target.install_batch(staging)
    return key


def _derived_time_attrs(ts: dt.datetime, session: str | None) -> dict[str, Value]:
    return {
        "timestamp": ts,
        "day": ts.date(),
        "month": f"{ts.year:04d}-{ts.month:02d}",
        "year": ts.year,
        "session": session or "unspecified",
    }


def _single_numeric_measure(schema: Schema, table: str) -> str:
    fact = schema.fact_table(table)
    numeric = [m.name for m in fact.measures if m.kind.numeric]
    if len(numeric) != 1:
        raise EtlError(
            f"fact {table!r} needs value_measure: it has {len(numeric)} numeric measures"
        )
    return numeric[0]


def _check_descriptor(src: SourceDescriptor, schema: Schema) -> None:
    """Fail fast when the column map cannot cover the target's natural keys."""
    if src.kind == "dimension":
        if src.dimension is None:
            raise EtlError(f"section [{src.name}]: dimension sources need 'dimension ='")
        decl = schema.dimension(src.dimension)
        mapped = {attr for (_, attr) in src.key_map}
        missing = [p for p in decl.natural_key if p not in mapped]
        if missing:
            raise EtlError(
                f"section [{src.name}]: natural key parts {missing} of {src.dimension!r} unmapped"
            )
        return
    if src.target_fact is None:
        raise EtlError(f"section [{src.name}]: fact sources need 'target ='")
    fact = schema.fact_table(src.target_fact)
    for dim_name in fact.grain_dimensions():
        if dim_name == src.provider_dimension and src.provider is not None:
            continue
        if dim_name == src.time_dimension and src.timestamp_col is not None:
            continue
        if dim_name == src.analysis_dimension and src.label_col is not None:
            continue
        decl = schema.dimension(dim_name)
        covered = {attr for (d, attr) in src.key_map if d == dim_name}
        covered |= {attr for (d, attr) in src.const_map if d == dim_name}
        missing = [p for p in decl.natural_key if p not in covered]
        if missing:
            raise EtlError(
                f"section [{src.name}]: natural key parts {missing} of dimension "
                f"{dim_name!r} are not covered by the column map"
            )


def _typed_cell(text: str, dimension_attr: tuple[str, ValueKind]) -> Value:
    name, kind = dimension_attr
    try:
        return parse_typed(text, kind)
    except ValueKindError as exc:
        raise _RecordReject(f"bad value for {name!r}: {exc}") from exc


def load_facts(
    src: SourceDescriptor,
    rules: MappingRules,
    intervals: tuple[ReferenceInterval, ...],
    catalog: Catalog,
) -> LoadReport:
    """Load one delimited source as a single atomic batch.

    Every record either becomes a fact row (or dimension member, for
    dimension sources) or a rejection carrying its provenance; re-running the
    identical batch raises DuplicateBatch.
    """
    del intervals  # flagging happens at query time; kept for call-site symmetry
    schema = catalog.schema
    if schema is None:
        raise EtlError("catalog has no schema installed")
    _check_descriptor(src, schema)
    try:
        content = src.uri.read_bytes()
    except OSError as exc:
        raise EtlError(f"cannot read source {src.uri}: {exc}") from exc
    target = src.target_fact or src.dimension or ""
    batch_id = compute_batch_id(src.uri, content, target)
    if batch_id in catalog.batches:
        raise DuplicateBatch(batch_id)

    lookup = _ColumnLookup(src)
    staging = catalog.begin_batch()
    accepted = 0
    rejected: list[Rejection] = []

    for item in extract_rows(src):
        if isinstance(item, Rejection):
            rejected.append(item)
            continue
        try:
            if src.kind == "dimension":
                _load_dimension_record(src, schema, lookup, item, staging)
            else:
                _load_fact_record(src, schema, rules, lookup, item, staging)
            accepted += 1
        except _RecordReject as exc:
            rejected.append(Rejection(item.provenance, exc.reason))

    catalog.install_batch(staging, batch_id=batch_id)
    return LoadReport(
        batch_id=batch_id,
        source=str(src.uri),
        target=target,
        accepted=accepted,
        rejected=tuple(rejected),
        members_created=dict(staging.members_created),
        members_updated=dict(staging.members_updated),
    )


def _load_dimension_record(
    src: SourceDescriptor,
    schema: Schema,
    lookup: _ColumnLookup,
    record: RawRecord,
    staging: Staging,
) -> None:
    assert src.dimension is not None
    decl = schema.dimension(src.dimension)
    natural_key: dict[str, Value] = {}
    attrs: dict[str, Value] = {}
    for (_, attr_name), col in src.key_map.items():
        attr = decl.attribute(attr_name)
        if attr is None:
            raise EtlError(f"{src.name}: {src.dimension!r} has no attribute {attr_name!r}")
        natural_key[attr_name] = _typed_cell(lookup.get(record, col), (attr_name, attr.kind))
    for (_, attr_name), col in src.attr_map.items():
        attr = decl.attribute(attr_name)
        if attr is None:
            raise EtlError(f"{src.name}: {src.dimension!r} has no attribute {attr_name!r}")
        attrs[attr_name] = _typed_cell(lookup.get(record, col), (attr_name, attr.kind))
    for (dim_name, attr_name), text in src.const_map.items():
        if dim_name == src.dimension:
            attr = decl.attribute(attr_name)
            if attr is not None:
                attrs[attr_name] = parse_typed(text, attr.kind)
    staging.resolve_member(src.dimension, natural_key, attrs)


def _member_inputs_for(
    src: SourceDescriptor,
    schema: Schema,
    dim_name: str,
    lookup: _ColumnLookup,
    record: RawRecord,
    rules: MappingRules,
) -> tuple[dict[str, Value], dict[str, Value]]:
    """Natural key and attributes for one grain dimension of one record."""
    decl = schema.dimension(dim_name)

    if dim_name == src.provider_dimension and src.provider is not None:
        if len(decl.natural_key) != 1:
            raise EtlError(f"provider dimension {dim_name!r} must have a single-part natural key")
        return {decl.natural_key[0]: src.provider}, _consts_for(src, schema, dim_name)

    if dim_name == src.time_dimension and src.timestamp_col is not None:
        text = lookup.get(record, src.timestamp_col)
        try:
            ts = dt.datetime.fromisoformat(text.strip())
        except ValueError as exc:
            raise _RecordReject(f"unparseable timestamp {text!r}") from exc
        session = None
        if src.session_col is not None:
            session = lookup.get(record, src.session_col).strip() or None
        derived = _derived_time_attrs(ts, session)
        declared = {a.name for a in decl.attributes}
        attrs = {k: v for k, v in derived.items() if k in declared}
        missing = [p for p in decl.natural_key if p not in attrs]
        if missing:
            raise EtlError(
                f"time dimension {dim_name!r} natural key parts {missing} are not derivable"
            )
        natural_key = {p: attrs[p] for p in decl.natural_key}
        return natural_key, attrs

    if dim_name == src.analysis_dimension and src.label_col is not None:
        raw = lookup.get(record, src.label_col)
        try:
            code = normalize_label(raw, rules)
        except MappingError as exc:
            raise _RecordReject(str(exc)) from exc
        if len(decl.natural_key) != 1:
            raise EtlError(f"analysis dimension {dim_name!r} must have a single-part natural key")
        return {decl.natural_key[0]: code}, _consts_for(src, schema, dim_name)

    natural_key: dict[str, Value] = {}
    attrs = _consts_for(src, schema, dim_name)
    for (d, attr_name), col in src.key_map.items():
        if d != dim_name:
            continue
        attr = decl.attribute(attr_name)
        if attr is None:
            raise EtlError(f"{src.name}: {dim_name!r} has no attribute {attr_name!r}")
        text = lookup.get(record, col)
        if not text.strip():
            raise _RecordReject(f"incomplete natural key: empty {dim_name}.{attr_name}")
        natural_key[attr_name] = _typed_cell(text, (attr_name, attr.kind))
    for (d, attr_name), col in src.attr_map.items():
        if d != dim_name:
            continue
        attr = decl.attribute(attr_name)
        if attr is None:
            raise EtlError(f"{src.name}: {dim_name!r} has no attribute {attr_name!r}")
        attrs[attr_name] = _typed_cell(lookup.get(record, col), (attr_name, attr.kind))
    return natural_key, attrs


def _consts_for(src: SourceDescriptor, schema: Schema, dim_name: str) -> dict[str, Value]:
    decl = schema.dimension(dim_name)
    out: dict[str, Value] = {}
    for (d, attr_name), text in src.const_map.items():
        if d == dim_name:
            attr = decl.attribute(attr_name)
            if attr is None:
                raise EtlError(f"{src.name}: {dim_name!r} has no attribute {attr_name!r}")
            out[attr_name] = parse_typed(text, attr.kind)
    return out


def _load_fact_record(
    src: SourceDescriptor,
    schema: Schema,
    rules: MappingRules,
    lookup: _ColumnLookup,
    record: RawRecord,
    staging: Staging,
) -> None:
    assert src.target_fact is not None
    fact = schema.fact_table(src.target_fact)

    keys: dict[str, int] = {}
    analysis_code: str | None = None
    for dim_name in fact.grain_dimensions():
        natural_key, attrs = _member_inputs_for(src, schema, dim_name, lookup, record, rules)
        keys[dim_name] = staging.resolve_member(dim_name, natural_key, attrs)
        if dim_name == src.analysis_dimension and src.label_col is not None:
            code = natural_key[schema.dimension(dim_name).natural_key[0]]
            analysis_code = str(code)

    measures: dict[str, Value] = {}
    if src.value_col is not None:
        if analysis_code is None:
            raise EtlError(
                f"section [{src.name}]: map.value needs map.label for unit harmonization"
            )
        text = lookup.get(record, src.value_col)
        try:
            raw_value = float(text)
        except ValueError as exc:
            raise _RecordReject(f"unparseable number {text!r}") from exc
        unit = rules.canonical_units.get(analysis_code, "")
        if src.unit_col is not None:
            unit = lookup.get(record, src.unit_col).strip()
        try:
            value = convert_unit(raw_value, unit, analysis_code, rules)
        except MappingError as exc:
            raise _RecordReject(str(exc)) from exc
        target_measure = src.value_measure or _single_numeric_measure(schema, fact.name)
        measures[target_measure] = value

    for measure_name, col in src.measure_map.items():
        decl = fact.measure(measure_name)
        if decl is None:
            raise EtlError(f"section [{src.name}]: {fact.name!r} has no measure {measure_name!r}")
        text = lookup.get(record, col)
        try:
            measures[measure_name] = parse_typed(text, decl.kind)
        except ValueKindError as exc:
            raise _RecordReject(f"bad measure {measure_name!r}: {exc}") from exc

    if not measures:
        raise EtlError(f"section [{src.name}]: no measure mapping for fact {fact.name!r}")
    staging.add_fact(fact.name, keys, measures)


# ---------------------------------------------------------------------------
# Documents


def load_document(
    payload: bytes,
    media_type: str,
    attrs: Mapping[str, str] | None,
    catalog: Catalog,
) -> int:
    """Store a document blob and return its id; identical payloads dedup."""
    staging = catalog.begin_batch()
    doc_id = staging.add_document(payload, media_type, attrs)
    if not staging.empty:
        catalog.install_batch(staging)
    return doc_id


def link_document(report_fact_id: int, document_id: int, catalog: Catalog) -> DocumentLink:
    """Bridge a report fact row to a document; duplicate links are no-ops."""
    staging = catalog.begin_batch()
    link = staging.add_link(report_fact_id, document_id)
    if not staging.empty:
        catalog.install_batch(staging)
    return link


# ---------------------------------------------------------------------------
# Whole-manifest orchestration


def load_manifest(
    manifest_path: Path,
    catalog: Catalog,
    schema: Schema | None = None,
) -> list[LoadReport]:
    """Run every section of a sources manifest against the catalog.

    Installs the schema when the catalog is fresh, copies harmonization
    metadata in, then loads each source in declaration order.  Re-run
    sections surface as reports marked ``duplicate`` with counts unchanged.
    """
    metadata_files, sources = parse_manifest(manifest_path)
    if catalog.schema is None:
        if schema is None:
            raise EtlError("catalog has no schema; pass one to install")
        catalog.install_schema(schema)
    elif schema is not None and schema != catalog.schema:
        raise EtlError(
            "catalog already holds a different schema "
            f"(version {catalog.schema_version}); refusing to load against it"
        )
    if metadata_files:
        catalog.install_metadata(metadata_files)
    rules, intervals = catalog.load_metadata()

    reports: list[LoadReport] = []
    for src in sources:
        try:
            reports.append(load_facts(src, rules, intervals, catalog))
        except DuplicateBatch as exc:
            reports.append(
                LoadReport(
                    batch_id=exc.batch_id,
                    source=str(src.uri),
                    target=src.target_fact or src.dimension or "",
                    accepted=0,
                    rejected=(),
                    members_created={},
                    members_updated={},
                    duplicate=True,
                )
            )
    return reports
