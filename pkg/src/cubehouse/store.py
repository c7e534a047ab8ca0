"""Persistent catalog: dimension members, fact rows, documents, links, and
schema versions, with snapshot reads and atomic batch installation.

Layout under the catalog root (all formats carry a leading version byte; the
bit-exact record layout is documented in docs/storage-format.md)::

    manifest          current snapshot descriptor (+ manifest.prev fallback)
    dims/<name>.seg   append-only dimension member segments
    facts/<name>.seg  append-only fact row segments
    blobs/<checksum>  content-addressed document payloads
    metadata/         optional harmonization tables (CSV)

Crash safety comes from append-only segments plus write-new-then-rename
manifest publication: the manifest records the committed byte length of each
segment, so bytes beyond it (a torn install) are invisible after reopen.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence

from filelock import FileLock

from . import dsl
from .mapping import MappingRules, ReferenceInterval, load_metadata_dir
from .model import Dimension, Schema, UnknownFactTable, ValueKind, validate_schema
from .values import Value, canonical_text, coerce

FORMAT_VERSION = 1
_MANIFEST = "manifest"
_MANIFEST_PREV = "manifest.prev"
_LOCK = ".lock"

_FIELD_NULL = 0
_FIELD_INT = 1
_FIELD_FLOAT = 2
_FIELD_TEXT = 3
_FIELD_DATE = 4
_FIELD_TIMESTAMP = 5

_EPOCH_DATE = dt.date(1970, 1, 1)
_EPOCH_TS = dt.datetime(1970, 1, 1)


class CatalogError(Exception):
    """Base class for catalog failures."""


class CorruptCatalog(CatalogError):
    pass


class UnsupportedFormat(CatalogError):
    pass


class ReadOnlyCatalog(CatalogError):
    pass


class DuplicateBatch(CatalogError):
    def __init__(self, batch_id: str) -> None:
        super().__init__(f"batch {batch_id!r} already installed")
        self.batch_id = batch_id


class StaleSnapshot(CatalogError):
    """The staging's base snapshot is no longer the catalog's current state."""


class DanglingId(CatalogError):
    pass


# ---------------------------------------------------------------------------
# Stored records


@dataclass(frozen=True, slots=True)
class DimensionMember:
    dimension: str
    key: int  # dense surrogate, 1-based per dimension
    attributes: dict[str, Value]

    def natural_key(self, declaration: Dimension) -> tuple[Value, ...]:
        return tuple(self.attributes.get(part) for part in declaration.natural_key)


@dataclass(frozen=True, slots=True)
class FactRow:
    table: str
    row_id: int  # dense, global across fact tables
    keys: dict[str, int]  # dimension name -> member surrogate
    measures: dict[str, Value]
    batch_id: str


@dataclass(frozen=True, slots=True)
class Document:
    id: int
    media_type: str
    checksum: str  # sha256 hex of the payload bytes
    attrs: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True, slots=True)
class DocumentLink:
    report_fact_id: int
    document_id: int


def natural_key_of(declaration: Dimension, attributes: Mapping[str, Value]) -> tuple[str, ...]:
    """Canonical-text natural key tuple; the member-identity used everywhere."""
    return tuple(canonical_text(attributes.get(part)) for part in declaration.natural_key)


# ---------------------------------------------------------------------------
# Binary record encoding


def _encode_value(out: bytearray, value: Value) -> None:
    if value is None:
        out.append(_FIELD_NULL)
    elif isinstance(value, bool):
        raise CatalogError("boolean values are not storable")
    elif isinstance(value, int):
        out.append(_FIELD_INT)
        out += struct.pack("<q", value)
    elif isinstance(value, float):
        out.append(_FIELD_FLOAT)
        out += struct.pack("<d", value)
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out.append(_FIELD_TEXT)
        out += struct.pack("<I", len(raw))
        out += raw
    elif isinstance(value, dt.datetime):
        micros = round((value - _EPOCH_TS).total_seconds() * 1_000_000)
        out.append(_FIELD_TIMESTAMP)
        out += struct.pack("<q", micros)
    elif isinstance(value, dt.date):
        out.append(_FIELD_DATE)
        out += struct.pack("<q", (value - _EPOCH_DATE).days)
    else:
        raise CatalogError(f"unstorable value {value!r}")


def encode_record(values: Sequence[Value]) -> bytes:
    payload = bytearray(struct.pack("<H", len(values)))
    for v in values:
        _encode_value(payload, v)
    return struct.pack("<I", len(payload)) + bytes(payload)


def _decode_value(buf: bytes, pos: int) -> tuple[Value, int]:
    tag = buf[pos]
    pos += 1
    if tag == _FIELD_NULL:
        return None, pos
    if tag == _FIELD_INT:
        return struct.unpack_from("<q", buf, pos)[0], pos + 8
    if tag == _FIELD_FLOAT:
        return struct.unpack_from("<d", buf, pos)[0], pos + 8
    if tag == _FIELD_TEXT:
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        return buf[pos : pos + n].decode("utf-8"), pos + n
    if tag == _FIELD_DATE:
        days = struct.unpack_from("<q", buf, pos)[0]
        return _EPOCH_DATE + dt.timedelta(days=days), pos + 8
    if tag == _FIELD_TIMESTAMP:
        micros = struct.unpack_from("<q", buf, pos)[0]
        return _EPOCH_TS + dt.timedelta(microseconds=micros), pos + 8
    raise CorruptCatalog(f"unknown field tag {tag}")


def decode_records(data: bytes) -> Iterator[list[Value]]:
    """Decode consecutive records from segment bytes (version byte stripped)."""
    pos = 0
    total = len(data)
    while pos < total:
        if pos + 4 > total:
            raise CorruptCatalog("truncated record header inside committed region")
        (length,) = struct.unpack_from("<I", data, pos)
        pos += 4
        end = pos + length
        if end > total:
            raise CorruptCatalog("truncated record inside committed region")
        (count,) = struct.unpack_from("<H", data, pos)
        fpos = pos + 2
        fields: list[Value] = []
        for _ in range(count):
            value, fpos = _decode_value(data, fpos)
            fields.append(value)
        if fpos != end:
            raise CorruptCatalog("record length mismatch")
        yield fields
        pos = end


# ---------------------------------------------------------------------------
# Manifest


@dataclass(frozen=True, slots=True)
class Manifest:
    generation: int
    schema_text: str | None
    segments: dict[str, int]  # relative path -> committed byte length
    batches: tuple[str, ...]
    documents: tuple[Document, ...]
    links: tuple[DocumentLink, ...]
    next_fact_row_id: int

    def to_json(self) -> bytes:
        payload = {
            "generation": self.generation,
            "schema_text": self.schema_text,
            "segments": dict(sorted(self.segments.items())),
            "batches": list(self.batches),
            "documents": [
                {"id": d.id, "media_type": d.media_type, "checksum": d.checksum, "attrs": d.attrs}
                for d in self.documents
            ],
            "links": [[l.report_fact_id, l.document_id] for l in self.links],
            "next_fact_row_id": self.next_fact_row_id,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")

    @staticmethod
    def from_json(raw: bytes) -> "Manifest":
        payload = json.loads(raw.decode("utf-8"))
        return Manifest(
            generation=payload["generation"],
            schema_text=payload["schema_text"],
            segments=dict(payload["segments"]),
            batches=tuple(payload["batches"]),
            documents=tuple(
                Document(d["id"], d["media_type"], d["checksum"], dict(d["attrs"]))
                for d in payload["documents"]
            ),
            links=tuple(DocumentLink(a, b) for a, b in payload["links"]),
            next_fact_row_id=payload["next_fact_row_id"],
        )


def _manifest_bytes(manifest: Manifest) -> bytes:
    body = manifest.to_json()
    digest = hashlib.sha256(body).digest()
    return bytes([FORMAT_VERSION]) + struct.pack("<I", len(body)) + body + digest


def _read_manifest_file(path: Path) -> Manifest | None:
    """Parse a manifest file; None when torn/corrupt (checksum mismatch)."""
    try:
        data = path.read_bytes()
    except OSError:
        return None
    if len(data) < 1 + 4 + 32:
        return None
    if data[0] > FORMAT_VERSION:
        raise UnsupportedFormat(f"on-disk format {data[0]} is newer than supported {FORMAT_VERSION}")
    (length,) = struct.unpack_from("<I", data, 1)
    body = data[5 : 5 + length]
    digest = data[5 + length : 5 + length + 32]
    if len(body) != length or len(digest) != 32:
        return None
    if hashlib.sha256(body).digest() != digest:
        return None
    try:
        return Manifest.from_json(body)
    except (ValueError, KeyError):
        return None


def _fsync_dir(path: Path) -> None:
    fd = os.open(path, os.O_RDONLY)
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


# ---------------------------------------------------------------------------
# Snapshot


class Snapshot:
    """Immutable view of one committed catalog state.

    Readers holding a snapshot never observe later installs: reads are capped
    at the segment byte lengths its manifest recorded.
    """

    def __init__(self, root: Path, manifest: Manifest) -> None:
        self.root = root
        self.manifest = manifest
        self.schema: Schema | None = None
        if manifest.schema_text is not None:
            parsed = dsl.parse_schema(manifest.schema_text)
            if not isinstance(parsed, Schema):
                raise CorruptCatalog("stored schema text no longer parses")
            self.schema = parsed
        self._members: dict[str, dict[int, DimensionMember]] = {}
        self._natural_index: dict[str, dict[tuple[str, ...], int]] = {}
        self._load_members()

    # -- loading ---------------------------------------------------------

    def _segment_bytes(self, rel: str) -> bytes:
        committed = self.manifest.segments.get(rel, 0)
        if committed == 0:
            return b""
        path = self.root / rel
        with path.open("rb") as handle:
            data = handle.read(committed)
        if len(data) < committed:
            raise CorruptCatalog(f"segment {rel} shorter than manifest length")
        if data[0] > FORMAT_VERSION:
            raise UnsupportedFormat(f"segment {rel} format {data[0]} newer than supported")
        return data[1:]

    def _load_members(self) -> None:
        if self.schema is None:
            return
        for dim in self.schema.dimensions:
            rel = f"dims/{dim.name}.seg"
            members: dict[int, DimensionMember] = {}
            for fields in decode_records(self._segment_bytes(rel)):
                key = fields[0]
                assert isinstance(key, int)
                attrs = dict(zip(dim.attribute_names(), fields[1:]))
                members[key] = DimensionMember(dim.name, key, attrs)  # later record wins
            self._members[dim.name] = members
            self._natural_index[dim.name] = {
                natural_key_of(dim, m.attributes): m.key for m in members.values()
            }

    # -- reads -----------------------------------------------------------

    @property
    def schema_version(self) -> int:
        return self.schema.version if self.schema is not None else 0

    def members(self, dimension: str) -> dict[int, DimensionMember]:
        if self.schema is None or not self.schema.has_dimension(dimension):
            from .model import UnknownDimension

            raise UnknownDimension(dimension)
        return self._members.get(dimension, {})

    def member_key_for(self, dimension: str, natural_key: tuple[str, ...]) -> int | None:
        return self._natural_index.get(dimension, {}).get(natural_key)

    def member_count(self, dimension: str) -> int:
        return len(self.members(dimension))

    def scan_facts(
        self,
        table: str,
        predicate: Callable[[FactRow], bool] | None = None,
    ) -> Iterator[FactRow]:
        """Stream fact rows in storage order; deterministic for a snapshot."""
        if self.schema is None or not self.schema.has_fact_table(table):
            raise UnknownFactTable(table)
        fact = self.schema.fact_table(table)
        grain_dims = [g.dimension for g in fact.grain]
        measure_names = [m.name for m in fact.measures]
        for fields in decode_records(self._segment_bytes(f"facts/{table}.seg")):
            row_id = fields[0]
            assert isinstance(row_id, int)
            keys = {d: fields[1 + i] for i, d in enumerate(grain_dims)}
            base = 1 + len(grain_dims)
            measures = {m: fields[base + i] for i, m in enumerate(measure_names)}
            batch_id = fields[base + len(measure_names)]
            row = FactRow(table, row_id, keys, measures, str(batch_id))  # type: ignore[arg-type]
            if predicate is None or predicate(row):
                yield row

    def fact_count(self, table: str) -> int:
        return sum(1 for _ in self.scan_facts(table))

    @property
    def documents(self) -> tuple[Document, ...]:
        return self.manifest.documents

    def document(self, doc_id: int) -> Document:
        for d in self.manifest.documents:
            if d.id == doc_id:
                return d
        raise DanglingId(f"unknown document id {doc_id}")

    def document_payload(self, doc_id: int) -> bytes:
        doc = self.document(doc_id)
        return (self.root / "blobs" / doc.checksum).read_bytes()

    @property
    def links(self) -> tuple[DocumentLink, ...]:
        return self.manifest.links

    def documents_for_report(self, report_fact_id: int) -> list[Document]:
        return [self.document(l.document_id) for l in self.links if l.report_fact_id == report_fact_id]

    def verify_integrity(self) -> None:
        """Full-scan referential and density assertions; raises on violation."""
        if self.schema is None:
            return
        for dim in self.schema.dimensions:
            keys = sorted(self.members(dim.name))
            if keys != list(range(1, len(keys) + 1)):
                raise CorruptCatalog(f"dimension {dim.name!r} surrogate keys not dense")
        max_row = 0
        for fact in self.schema.fact_tables:
            for row in self.scan_facts(fact.name):
                max_row = max(max_row, row.row_id)
                for d, k in row.keys.items():
                    if k not in self.members(d):
                        raise CorruptCatalog(
                            f"fact {fact.name!r} row {row.row_id} references missing {d!r} member {k}"
                        )
        doc_ids = {d.id for d in self.documents}
        for link in self.links:
            if link.document_id not in doc_ids:
                raise CorruptCatalog(f"link references missing document {link.document_id}")
            if not (1 <= link.report_fact_id <= max_row):
                raise CorruptCatalog(f"link references missing fact row {link.report_fact_id}")


# ---------------------------------------------------------------------------
# Staging


class Staging:
    """Accumulates one batch against a base snapshot.

    Surrogate keys stay dense: new members extend 1..count; re-resolved
    members overwrite attributes in place (type-1) and are counted.
    """

    def __init__(self, base: Snapshot, schema: Schema | None = None) -> None:
        self.base = base
        self.schema = schema or base.schema
        self.new_members: dict[str, dict[int, DimensionMember]] = {}
        self.updated_members: dict[str, dict[int, DimensionMember]] = {}
        self._staged_index: dict[str, dict[tuple[str, ...], int]] = {}
        self.fact_rows: dict[str, list[tuple[int, dict[str, int], dict[str, Value]]]] = {}
        self.new_documents: list[tuple[Document, bytes]] = []
        self.new_links: list[DocumentLink] = []
        self.members_created: dict[str, int] = {}
        self.members_updated: dict[str, int] = {}
        self._next_row_id = base.manifest.next_fact_row_id

    def _dimension(self, name: str) -> Dimension:
        if self.schema is None:
            raise CatalogError("no schema installed")
        return self.schema.dimension(name)

    def resolve_member(
        self,
        dimension: str,
        natural_key: Mapping[str, Value],
        attrs: Mapping[str, Value] | None = None,
    ) -> int:
        """Return the member's surrogate key, creating or updating as needed.

        Existing members keep their key; differing provided attributes
        overwrite (type-1) and count as an update.
        """
        decl = self._dimension(dimension)
        merged: dict[str, Value] = dict(natural_key)
        if attrs:
            merged.update(attrs)
        for part in decl.natural_key:
            if merged.get(part) in (None, ""):
                raise CatalogError(
                    f"incomplete natural key for {dimension!r}: missing {part!r}"
                )
        typed: dict[str, Value] = {}
        for attr in decl.attributes:
            if attr.name in merged:
                typed[attr.name] = coerce(merged[attr.name], attr.kind)
        nk = natural_key_of(decl, typed)

        staged = self._staged_index.setdefault(dimension, {})
        if nk in staged:
            key = staged[nk]
            pool = self.new_members[dimension] if key in self.new_members.get(dimension, {}) else self.updated_members[dimension]
            current = pool[key]
            changed = {k: v for k, v in typed.items() if current.attributes.get(k) != v}
            if changed:
                pool[key] = DimensionMember(dimension, key, {**current.attributes, **changed})
            return key

        existing_key = self.base.member_key_for(dimension, nk)
        if existing_key is not None:
            current = self.base.members(dimension)[existing_key]
            changed = {k: v for k, v in typed.items() if current.attributes.get(k) != v}
            if changed:
                self.updated_members.setdefault(dimension, {})[existing_key] = DimensionMember(
                    dimension, existing_key, {**current.attributes, **changed}
                )
                self._staged_index[dimension][nk] = existing_key
                self.members_updated[dimension] = self.members_updated.get(dimension, 0) + 1
            return existing_key

        key = self.base.member_count(dimension) + len(self.new_members.get(dimension, {})) + 1
        self.new_members.setdefault(dimension, {})[key] = DimensionMember(dimension, key, typed)
        self._staged_index[dimension][nk] = key
        self.members_created[dimension] = self.members_created.get(dimension, 0) + 1
        return key

    def add_fact(self, table: str, keys: Mapping[str, int], measures: Mapping[str, Value]) -> int:
        """Stage one fact row; returns its (global, dense) row id."""
        if self.schema is None:
            raise CatalogError("no schema installed")
        fact = self.schema.fact_table(table)
        grain_dims = set(fact.grain_dimensions())
        if set(keys) != grain_dims:
            raise CatalogError(
                f"fact {table!r} expects keys for {sorted(grain_dims)}, got {sorted(keys)}"
            )
        typed: dict[str, Value] = {}
        for m in fact.measures:
            typed[m.name] = coerce(measures.get(m.name), m.kind)
        row_id = self._next_row_id
        self._next_row_id += 1
        self.fact_rows.setdefault(table, []).append((row_id, dict(keys), typed))
        return row_id

    def add_document(self, payload: bytes, media_type: str, attrs: Mapping[str, str] | None = None) -> int:
        """Stage a document blob; identical payload+media type dedups to the
        existing id (content addressing)."""
        if not payload:
            raise CatalogError("empty document payload")
        checksum = hashlib.sha256(payload).hexdigest()
        for doc in self.base.documents:
            if doc.checksum == checksum and doc.media_type == media_type:
                return doc.id
        for doc, _ in self.new_documents:
            if doc.checksum == checksum and doc.media_type == media_type:
                return doc.id
        doc_id = len(self.base.documents) + len(self.new_documents) + 1
        self.new_documents.append(
            (Document(doc_id, media_type, checksum, dict(attrs or {})), payload)
        )
        return doc_id

    def add_link(self, report_fact_id: int, document_id: int) -> DocumentLink:
        """Stage a report-to-document bridge row; duplicates are no-ops."""
        max_doc = len(self.base.documents) + len(self.new_documents)
        if not (1 <= document_id <= max_doc):
            raise DanglingId(f"unknown document id {document_id}")
        if not (1 <= report_fact_id < self._next_row_id):
            raise DanglingId(f"unknown fact row id {report_fact_id}")
        link = DocumentLink(report_fact_id, document_id)
        if link in self.base.links or link in self.new_links:
            return link
        self.new_links.append(link)
        return link

    @property
    def empty(self) -> bool:
        return not (
            self.new_members
            or self.updated_members
            or self.fact_rows
            or self.new_documents
            or self.new_links
        )


# ---------------------------------------------------------------------------
# Catalog handle


class Catalog:
    """Open handle onto a catalog directory.

    The handle tracks the current snapshot; ``snapshot()`` pins a stable view
    for readers.  Installation is the single mutation point: it appends to
    segments, then atomically publishes a new manifest, and serializes
    against other writers through a file lock.
    """

    def __init__(self, root: Path, mode: str, snapshot: Snapshot) -> None:
        self.root = root
        self.mode = mode
        self.current = snapshot

    # -- convenience pass-throughs over the current snapshot -------------

    @property
    def schema(self) -> Schema | None:
        return self.current.schema

    @property
    def schema_version(self) -> int:
        return self.current.schema_version

    def snapshot(self) -> Snapshot:
        return self.current

    def members(self, dimension: str) -> dict[int, DimensionMember]:
        return self.current.members(dimension)

    def member_count(self, dimension: str) -> int:
        return self.current.member_count(dimension)

    def scan_facts(
        self, table: str, predicate: Callable[[FactRow], bool] | None = None
    ) -> Iterator[FactRow]:
        return self.current.scan_facts(table, predicate)

    def fact_count(self, table: str) -> int:
        return self.current.fact_count(table)

    @property
    def batches(self) -> tuple[str, ...]:
        return self.current.manifest.batches

    def begin_batch(self, schema: Schema | None = None) -> Staging:
        return Staging(self.current, schema)

    # -- metadata (harmonization tables, outside snapshot control) -------

    @property
    def metadata_dir(self) -> Path:
        return self.root / "metadata"

    def load_metadata(self) -> tuple[MappingRules, tuple[ReferenceInterval, ...]]:
        if (self.metadata_dir / "canonical_units.csv").exists():
            return load_metadata_dir(self.metadata_dir)
        return MappingRules(), ()

    def install_metadata(self, files: Mapping[str, Path]) -> None:
        """Copy harmonization CSVs (name -> source path) into the catalog."""
        if self.mode != "read-write":
            raise ReadOnlyCatalog("catalog opened read-only")
        self.metadata_dir.mkdir(exist_ok=True)
        for name, src in files.items():
            (self.metadata_dir / name).write_bytes(Path(src).read_bytes())

    # -- installation -----------------------------------------------------

    def install_batch(
        self,
        staging: Staging,
        batch_id: str | None = None,
        new_schema: Schema | None = None,
    ) -> Snapshot:
        """Install a staged batch all-or-nothing and return the new snapshot.

        The manifest is written last: a crash before publication leaves the
        catalog at the prior snapshot.  Duplicate batch ids are refused.
        """
        if self.mode != "read-write":
            raise ReadOnlyCatalog("catalog opened read-only")
        if batch_id is not None and batch_id in self.current.manifest.batches:
            raise DuplicateBatch(batch_id)

        schema = new_schema or staging.schema
        if schema is None:
            raise CatalogError("cannot install a batch without a schema")
        if new_schema is not None:
            report = validate_schema(new_schema)
            if not report.ok:
                from .model import InvalidSchema

                raise InvalidSchema(report.violations)
            old = self.current.schema
            if old is not None and new_schema != old and new_schema.version != old.version + 1:
                raise CatalogError(
                    f"schema version must advance by 1 (catalog at {old.version}, "
                    f"offered {new_schema.version})"
                )

        lock = FileLock(str(self.root / _LOCK))
        with lock.acquire(timeout=30):
            if staging.base is not self.current:
                raise StaleSnapshot("staging was built against an older snapshot")
            on_disk = _read_manifest_file(self.root / _MANIFEST)
            if on_disk is not None and on_disk.generation != self.current.manifest.generation:
                raise StaleSnapshot("catalog advanced on disk since this handle opened")

            segments = dict(self.current.manifest.segments)

            for dim_name in sorted(set(staging.new_members) | set(staging.updated_members)):
                records = bytearray()
                for key in sorted(staging.new_members.get(dim_name, {})):
                    records += self._member_record(schema, staging.new_members[dim_name][key])
                for key in sorted(staging.updated_members.get(dim_name, {})):
                    records += self._member_record(schema, staging.updated_members[dim_name][key])
                rel = f"dims/{dim_name}.seg"
                segments[rel] = self._append_segment(rel, segments.get(rel, 0), bytes(records))

            for table in sorted(staging.fact_rows):
                fact = schema.fact_table(table)
                grain_dims = [g.dimension for g in fact.grain]
                records = bytearray()
                for row_id, keys, measures in staging.fact_rows[table]:
                    fields: list[Value] = [row_id]
                    fields += [keys[d] for d in grain_dims]
                    fields += [measures[m.name] for m in fact.measures]
                    fields.append(batch_id or "")
                    records += encode_record(fields)
                rel = f"facts/{table}.seg"
                segments[rel] = self._append_segment(rel, segments.get(rel, 0), bytes(records))

            for doc, payload in staging.new_documents:
                blob = self.root / "blobs" / doc.checksum
                if not blob.exists():
                    tmp = blob.with_suffix(".tmp")
                    tmp.write_bytes(payload)
                    os.replace(tmp, blob)

            manifest = Manifest(
                generation=self.current.manifest.generation + 1,
                schema_text=dsl.serialize_schema(schema).text,
                segments=segments,
                batches=self.current.manifest.batches + ((batch_id,) if batch_id else ()),
                documents=self.current.manifest.documents
                + tuple(d for d, _ in staging.new_documents),
                links=self.current.manifest.links + tuple(staging.new_links),
                next_fact_row_id=staging._next_row_id,
            )
            self._publish_manifest(manifest)

        snapshot = Snapshot(self.root, manifest)
        self.current = snapshot
        return snapshot

    def _member_record(self, schema: Schema, member: DimensionMember) -> bytes:
        decl = schema.dimension(member.dimension)
        fields: list[Value] = [member.key]
        fields += [member.attributes.get(a.name) for a in decl.attributes]
        return encode_record(fields)

    def _append_segment(self, rel: str, committed: int, records: bytes) -> int:
        """Write records at the committed offset (clobbering any torn tail)
        and return the new committed length."""
        path = self.root / rel
        path.parent.mkdir(exist_ok=True)
        if committed == 0:
            with path.open("wb") as handle:
                handle.write(bytes([FORMAT_VERSION]))
                handle.write(records)
                handle.flush()
                os.fsync(handle.fileno())
            return 1 + len(records)
        with path.open("r+b") as handle:
            handle.seek(committed)
            handle.write(records)
            handle.truncate()
            handle.flush()
            os.fsync(handle.fileno())
        return committed + len(records)

    def _publish_manifest(self, manifest: Manifest) -> None:
        """Atomically swap in the new manifest, keeping the old as fallback."""
        current = self.root / _MANIFEST
        prev = self.root / _MANIFEST_PREV
        if current.exists():
            tmp_prev = self.root / (_MANIFEST_PREV + ".tmp")
            tmp_prev.write_bytes(current.read_bytes())
            os.replace(tmp_prev, prev)
        tmp = self.root / (_MANIFEST + ".tmp")
        with tmp.open("wb") as handle:
            handle.write(_manifest_bytes(manifest))
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, current)
        _fsync_dir(self.root)

    def install_schema(self, schema: Schema) -> Snapshot:
        """Install or advance the stored schema without loading any data."""
        return self.install_batch(self.begin_batch(schema), batch_id=None, new_schema=schema)


def open_catalog(root: Path | str, mode: str = "read") -> Catalog:
    """Open (or, in read-write mode, initialize) a catalog directory.

    A torn current manifest falls back to the last intact predecessor; a
    catalog with neither is refused.
    """
    if mode not in ("read", "read-write"):
        raise CatalogError(f"unknown open mode {mode!r}")
    root = Path(root)
    manifest_path = root / _MANIFEST
    if not manifest_path.exists():
        if mode == "read":
            raise CatalogError(f"no catalog at {root}")
        root.mkdir(parents=True, exist_ok=True)
        (root / "dims").mkdir(exist_ok=True)
        (root / "facts").mkdir(exist_ok=True)
        (root / "blobs").mkdir(exist_ok=True)
        manifest = Manifest(
            generation=1,
            schema_text=None,
            segments={},
            batches=(),
            documents=(),
            links=(),
            next_fact_row_id=1,
        )
        tmp = root / (_MANIFEST + ".tmp")
        tmp.write_bytes(_manifest_bytes(manifest))
        os.replace(tmp, manifest_path)
        _fsync_dir(root)
        return Catalog(root, mode, Snapshot(root, manifest))

    manifest = _read_manifest_file(manifest_path)
    if manifest is None:
        manifest = _read_manifest_file(root / _MANIFEST_PREV)
        if manifest is None:
            raise CorruptCatalog(f"manifest at {root} is corrupt with no intact predecessor")
    (root / "dims").mkdir(exist_ok=True)
    (root / "facts").mkdir(exist_ok=True)
    (root / "blobs").mkdir(exist_ok=True)
    return Catalog(root, mode, Snapshot(root, manifest))


def scan_facts(
    catalog: Catalog | Snapshot,
    table: str,
    predicate: Callable[[FactRow], bool] | None = None,
) -> Iterator[FactRow]:
    """Module-level convenience over Catalog/Snapshot.scan_facts."""
    return catalog.scan_facts(table, predicate)
