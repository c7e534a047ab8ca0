"""Cube queries over the catalog: hierarchy-aware group-by with roll-up /
drill-down / slice / dice navigation, normality flagging, attribute-value
export, and complex-fact assembly.

Aggregation is a single-pass hash group-by over ``scan_facts``; there is no
materialized cube.  Group headers are the canonical text of the attribute
values bound by each (dimension, level) pair, and cells come back in
deterministic lexicographic header order.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import IO, Mapping, Sequence

from .mapping import NormalityFlag, ReferenceInterval, flag_normality
from .model import MEMBER_LEVEL, Aggregability, Schema, ValueKind, navigation_path
from .store import Catalog, Document, FactRow, Snapshot
from .values import Value, ValueKindError, canonical_text, parse_typed

HEADER_SEPARATOR = "/"  # joins multi-attribute level values into one header


class QueryError(Exception):
    """The query does not fit the schema (unknown level, bad aggregate...)."""


class AlreadyCoarsest(QueryError):
    pass


class AlreadyFinest(QueryError):
    pass


class MixedAnalyses(QueryError):
    """A cell to be flagged spans more than one analysis code."""


class Aggregate(str, Enum):
    SUM = "sum"
    AVG = "avg"
    MIN = "min"
    MAX = "max"
    COUNT = "count"


class FilterOp(str, Enum):
    EQ = "eq"
    NE = "ne"
    LT = "lt"
    LE = "le"
    GT = "gt"
    GE = "ge"
    IN = "in"

    @property
    def ordered(self) -> bool:
        return self in (FilterOp.LT, FilterOp.LE, FilterOp.GT, FilterOp.GE)


@dataclass(frozen=True, slots=True)
class Filter:
    dimension: str
    level: str
    op: FilterOp
    value: object  # literal, or list of literals for "in"


@dataclass(frozen=True, slots=True)
class CubeQuery:
    fact_table: str
    group_by: tuple[tuple[str, str], ...] = ()  # (dimension, level), distinct dims
    measures: tuple[tuple[str, Aggregate], ...] = ()
    filters: tuple[Filter, ...] = ()
    flag_normality: bool = False


@dataclass(frozen=True, slots=True)
class Axis:
    dimension: str
    level: str
    values: tuple[str, ...]  # distinct headers, sorted


@dataclass(frozen=True, slots=True)
class Cell:
    group: tuple[str, ...]
    values: dict[str, Value]  # "measure_aggregate" -> aggregate
    flags: dict[str, str] | None = None


@dataclass(frozen=True, slots=True)
class CubeResult:
    fact_table: str
    group_by: tuple[tuple[str, str], ...]
    axes: tuple[Axis, ...]
    cells: tuple[Cell, ...]
    totals: dict[str, Value]
    # per-cell row evidence for flagging: (analysis member keys, patient member keys)
    cell_meta: tuple[tuple[frozenset[int], frozenset[int]], ...] = field(
        default=(), repr=False, compare=False
    )


def _snapshot(catalog: Catalog | Snapshot) -> Snapshot:
    return catalog.snapshot() if isinstance(catalog, Catalog) else catalog


def measure_key(measure: str, aggregate: Aggregate) -> str:
    return f"{measure}_{aggregate.value}"


# ---------------------------------------------------------------------------
# Validation


def level_attributes(schema: Schema, dimension: str, level: str) -> tuple[str, ...]:
    dim = schema.dimension(dimension)
    if level == MEMBER_LEVEL:
        return dim.natural_key
    found = dim.find_level(level)
    if found is None:
        raise QueryError(f"dimension {dimension!r} has no level {level!r}")
    return found[1].bound_attributes


def validate_query(query: CubeQuery, schema: Schema) -> None:
    """Reject queries that do not fit the schema; sums on non-additive
    measures are refused here, never silently computed."""
    if not schema.has_fact_table(query.fact_table):
        raise QueryError(f"unknown fact table {query.fact_table!r}")
    fact = schema.fact_table(query.fact_table)
    grain_dims = set(fact.grain_dimensions())

    seen: set[str] = set()
    for dimension, level in query.group_by:
        if dimension in seen:
            raise QueryError(f"dimension {dimension!r} appears twice in group_by")
        seen.add(dimension)
        if dimension not in grain_dims:
            raise QueryError(f"dimension {dimension!r} is not in the grain of {fact.name!r}")
        level_attributes(schema, dimension, level)

    if not query.measures:
        raise QueryError("query requests no measures")
    for name, aggregate in query.measures:
        measure = fact.measure(name)
        if measure is None:
            raise QueryError(f"fact {fact.name!r} has no measure {name!r}")
        if aggregate in (Aggregate.SUM, Aggregate.AVG):
            if not measure.kind.numeric:
                raise QueryError(f"{aggregate.value} needs a numeric measure, {name!r} is {measure.kind.value}")
            if measure.aggregability is Aggregability.NON_ADDITIVE:
                raise QueryError(f"{aggregate.value} on non-additive measure {name!r} is refused")
        elif aggregate in (Aggregate.MIN, Aggregate.MAX):
            if measure.kind is ValueKind.DOCUMENT_REF:
                raise QueryError(f"{aggregate.value} is undefined for document references")

    for f in query.filters:
        if f.dimension not in grain_dims:
            raise QueryError(f"filter dimension {f.dimension!r} is not in the grain of {fact.name!r}")
        attrs = level_attributes(schema, f.dimension, f.level)
        if f.op.ordered and len(attrs) != 1:
            raise QueryError(
                f"ordered comparison needs a single-attribute level, {f.level!r} binds {len(attrs)}"
            )
        _coerce_filter_literals(schema, f)  # raises on junk literals


def _coerce_literal(schema: Schema, dimension: str, attrs: tuple[str, ...], literal: object) -> object:
    """Typed literal for single-attribute levels, composite text otherwise."""
    if len(attrs) != 1:
        return str(literal)
    attr = schema.dimension(dimension).attribute(attrs[0])
    assert attr is not None
    if isinstance(literal, str):
        try:
            return parse_typed(literal, attr.kind)
        except ValueKindError as exc:
            raise QueryError(f"literal {literal!r} does not parse as {attr.kind.value}") from exc
    if attr.kind is ValueKind.DECIMAL and isinstance(literal, (int, float)):
        return float(literal)
    if attr.kind is ValueKind.INTEGER and isinstance(literal, int):
        return literal
    if isinstance(literal, (int, float)) and attr.kind in (ValueKind.TEXT,):
        raise QueryError(f"literal {literal!r} does not fit text attribute {attrs[0]!r}")
    return literal


def _coerce_filter_literals(schema: Schema, f: Filter) -> list[object]:
    attrs = level_attributes(schema, f.dimension, f.level)
    raw = f.value if f.op is FilterOp.IN else [f.value]
    if f.op is FilterOp.IN and not isinstance(raw, (list, tuple)):
        raise QueryError("in-set filter needs a list literal")
    return [_coerce_literal(schema, f.dimension, attrs, lit) for lit in raw]


# ---------------------------------------------------------------------------
# Execution


def header_text(
    member_attrs: Mapping[str, Value], bound: tuple[str, ...]
) -> str:
    return HEADER_SEPARATOR.join(canonical_text(member_attrs.get(a)) for a in bound)


def _member_passes(
    schema: Schema, snapshot: Snapshot, f: Filter, literals: list[object], member_key: int
) -> bool:
    attrs = level_attributes(schema, f.dimension, f.level)
    member = snapshot.members(f.dimension)[member_key]
    if len(attrs) == 1:
        actual: object = member.attributes.get(attrs[0])
    else:
        actual = header_text(member.attributes, attrs)
    if f.op is FilterOp.IN:
        return actual in literals
    literal = literals[0]
    if f.op is FilterOp.EQ:
        return actual == literal
    if f.op is FilterOp.NE:
        return actual != literal
    if actual is None:
        return False
    try:
        if f.op is FilterOp.LT:
            return actual < literal  # type: ignore[operator]
        if f.op is FilterOp.LE:
            return actual <= literal  # type: ignore[operator]
        if f.op is FilterOp.GT:
            return actual > literal  # type: ignore[operator]
        return actual >= literal  # type: ignore[operator]
    except TypeError as exc:
        raise QueryError(f"cannot compare {actual!r} with {literal!r}") from exc


class _Accumulator:
    """Running aggregates for one group (or the grand total)."""

    __slots__ = ("rows", "sums", "counts", "mins", "maxs")

    def __init__(self, measure_names: Sequence[str]) -> None:
        self.rows = 0
        self.sums: dict[str, int | float] = {m: 0 for m in measure_names}
        self.counts: dict[str, int] = {m: 0 for m in measure_names}
        self.mins: dict[str, Value] = {m: None for m in measure_names}
        self.maxs: dict[str, Value] = {m: None for m in measure_names}

    def add(self, measures: Mapping[str, Value], tracked: Sequence[str]) -> None:
        self.rows += 1
        for name in tracked:
            value = measures.get(name)
            if value is None:
                continue
            self.counts[name] += 1
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                self.sums[name] += value
            if self.mins[name] is None or value < self.mins[name]:  # type: ignore[operator]
                self.mins[name] = value
            if self.maxs[name] is None or value > self.maxs[name]:  # type: ignore[operator]
                self.maxs[name] = value

    def value(self, measure: str, aggregate: Aggregate) -> Value:
        if aggregate is Aggregate.COUNT:
            return self.rows
        if aggregate is Aggregate.SUM:
            return self.sums[measure]
        if aggregate is Aggregate.MIN:
            return self.mins[measure]
        if aggregate is Aggregate.MAX:
            return self.maxs[measure]
        if self.counts[measure] == 0:
            return None
        return self.sums[measure] / self.counts[measure]


def execute(
    query: CubeQuery,
    catalog: Catalog | Snapshot,
    intervals: Sequence[ReferenceInterval] | None = None,
) -> CubeResult:
    """Run a cube query against the catalog snapshot.

    Cells materialize only non-empty groups; averages divide row-level sums
    by row-level counts (totals likewise come from rows, never from cells).
    When the query asks for normality flags they are attached via
    ``flag_cells`` using the catalog's harmonization metadata unless
    ``intervals`` overrides it.
    """
    snapshot = _snapshot(catalog)
    schema = snapshot.schema
    if schema is None:
        raise QueryError("catalog has no schema")
    validate_query(query, schema)
    fact = schema.fact_table(query.fact_table)

    allowed: dict[str, set[int]] = {}
    for f in query.filters:
        literals = _coerce_filter_literals(schema, f)
        keys = {
            k
            for k in snapshot.members(f.dimension)
            if _member_passes(schema, snapshot, f, literals, k)
        }
        allowed[f.dimension] = allowed[f.dimension] & keys if f.dimension in allowed else keys

    header_maps: list[dict[int, str]] = []
    for dimension, level in query.group_by:
        bound = level_attributes(schema, dimension, level)
        header_maps.append(
            {k: header_text(m.attributes, bound) for k, m in snapshot.members(dimension).items()}
        )

    tracked = sorted({name for name, _ in query.measures})
    groups: dict[tuple[str, ...], _Accumulator] = {}
    meta: dict[tuple[str, ...], tuple[set[int], set[int]]] = {}
    totals = _Accumulator(tracked)
    analysis_dim = "medical-analysis" if "medical-analysis" in fact.grain_dimensions() else None
    patient_dim = "patient" if "patient" in fact.grain_dimensions() else None

    for row in snapshot.scan_facts(query.fact_table):
        if any(row.keys[d] not in keys for d, keys in allowed.items()):
            continue
        group = tuple(
            header_maps[i][row.keys[dimension]]
            for i, (dimension, _) in enumerate(query.group_by)
        )
        acc = groups.get(group)
        if acc is None:
            acc = groups[group] = _Accumulator(tracked)
            meta[group] = (set(), set())
        acc.add(row.measures, tracked)
        totals.add(row.measures, tracked)
        codes, patients = meta[group]
        if analysis_dim and len(codes) < 2:
            codes.add(row.keys[analysis_dim])
        if patient_dim and len(patients) < 2:
            patients.add(row.keys[patient_dim])

    cells: list[Cell] = []
    cell_meta: list[tuple[frozenset[int], frozenset[int]]] = []
    for group in sorted(groups):
        acc = groups[group]
        values = {measure_key(m, a): acc.value(m, a) for m, a in query.measures}
        cells.append(Cell(group=group, values=values))
        codes, patients = meta[group]
        cell_meta.append((frozenset(codes), frozenset(patients)))

    axes = tuple(
        Axis(dimension, level, tuple(sorted({cell.group[i] for cell in cells})))
        for i, (dimension, level) in enumerate(query.group_by)
    )
    total_values = {measure_key(m, a): totals.value(m, a) for m, a in query.measures}
    result = CubeResult(
        fact_table=query.fact_table,
        group_by=query.group_by,
        axes=axes,
        cells=tuple(cells),
        totals=total_values,
        cell_meta=tuple(cell_meta),
    )
    if query.flag_normality:
        if intervals is None:
            _, intervals = (
                catalog.load_metadata() if isinstance(catalog, Catalog) else (None, ())
            )
        result = flag_cells(result, query, intervals, snapshot)
    return result


# ---------------------------------------------------------------------------
# Navigation


def roll_up(query: CubeQuery, dimension: str, schema: Schema) -> CubeQuery:
    """Step one group-by dimension one level coarser along its hierarchy."""
    path = list(navigation_path(schema, query.fact_table, dimension))
    for i, (d, level) in enumerate(query.group_by):
        if d != dimension:
            continue
        if level not in path:
            raise QueryError(f"level {level!r} is not on the navigation path of {dimension!r}")
        at = path.index(level)
        if at + 1 >= len(path):
            raise AlreadyCoarsest(f"{dimension!r} is already at its coarsest level {level!r}")
        new_group = list(query.group_by)
        new_group[i] = (dimension, path[at + 1])
        return replace(query, group_by=tuple(new_group))
    raise QueryError(f"dimension {dimension!r} is not in the query's group_by")


def drill_down(query: CubeQuery, dimension: str, schema: Schema) -> CubeQuery:
    """Mirror of roll_up toward finer levels; the fact grain is the floor."""
    path = list(navigation_path(schema, query.fact_table, dimension))
    for i, (d, level) in enumerate(query.group_by):
        if d != dimension:
            continue
        if level not in path:
            raise QueryError(f"level {level!r} is not on the navigation path of {dimension!r}")
        at = path.index(level)
        if at == 0:
            raise AlreadyFinest(f"{dimension!r} is already at the grain level {level!r}")
        new_group = list(query.group_by)
        new_group[i] = (dimension, path[at - 1])
        return replace(query, group_by=tuple(new_group))
    raise QueryError(f"dimension {dimension!r} is not in the query's group_by")


def slice_query(query: CubeQuery, dimension: str, level: str, value: object) -> CubeQuery:
    """Pin one level to one value; group_by is unchanged."""
    return replace(
        query, filters=query.filters + (Filter(dimension, level, FilterOp.EQ, value),)
    )


def dice(query: CubeQuery, filters: Sequence[Filter]) -> CubeQuery:
    """Append filters conjunctively; an empty list is the identity."""
    return replace(query, filters=query.filters + tuple(filters))


# ---------------------------------------------------------------------------
# Normality flagging


_FLAGGABLE = (Aggregate.AVG, Aggregate.MIN, Aggregate.MAX)


def flag_cells(
    result: CubeResult,
    query: CubeQuery,
    intervals: Sequence[ReferenceInterval],
    catalog: Catalog | Snapshot,
    analysis_dimension: str = "medical-analysis",
    patient_dimension: str = "patient",
) -> CubeResult:
    """Attach a normality flag to every avg/min/max aggregate of every cell.

    Each cell must cover exactly one analysis code (else MixedAnalyses); when
    a cell belongs to exactly one patient, that patient's attributes give the
    context for interval selection.
    """
    snapshot = _snapshot(catalog)
    schema = snapshot.schema
    assert schema is not None
    flagged_aggs = [(m, a) for m, a in query.measures if a in _FLAGGABLE]
    if not flagged_aggs:
        raise QueryError("flagging needs an avg, min, or max aggregate; sums are refused")
    if not result.cell_meta or len(result.cell_meta) != len(result.cells):
        raise QueryError("result carries no row evidence; flag within execute()")
    analysis_decl = schema.dimension(analysis_dimension)
    code_attr = analysis_decl.natural_key[0]

    new_cells: list[Cell] = []
    for cell, (codes, patients) in zip(result.cells, result.cell_meta):
        if len(codes) > 1:
            raise MixedAnalyses(
                f"cell {cell.group!r} spans {len(codes)} analysis codes; flags are undefined"
            )
        flags: dict[str, str] = {}
        if codes:
            (analysis_key,) = codes
            code = canonical_text(
                snapshot.members(analysis_dimension)[analysis_key].attributes.get(code_attr)
            )
            patient_attrs: Mapping[str, Value] = {}
            if len(patients) == 1:
                (patient_key,) = patients
                patient_attrs = snapshot.members(patient_dimension)[patient_key].attributes
            for measure, aggregate in flagged_aggs:
                value = cell.values[measure_key(measure, aggregate)]
                if isinstance(value, (int, float)) and not isinstance(value, bool):
                    flag = flag_normality(float(value), code, patient_attrs, intervals)
                else:
                    flag = NormalityFlag.NO_INTERVAL
                flags[measure_key(measure, aggregate)] = flag.value
        new_cells.append(replace(cell, flags=flags or None))
    return replace(result, cells=tuple(new_cells))


# ---------------------------------------------------------------------------
# Attribute-value export


@dataclass(frozen=True, slots=True)
class AttributeValueView:
    header: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]  # canonical text, one row per fact


def export_attribute_value(
    fact_table: str,
    attributes: Sequence[str] | None,
    filters: Sequence[Filter],
    catalog: Catalog | Snapshot,
) -> AttributeValueView:
    """Flat one-row-per-fact view with dimension attributes denormalized.

    ``attributes`` selects "dimension.attribute" columns (default: every
    attribute of every grain dimension); all measures are always appended.
    Row order is the storage order of the snapshot.
    """
    snapshot = _snapshot(catalog)
    schema = snapshot.schema
    if schema is None:
        raise QueryError("catalog has no schema")
    if not schema.has_fact_table(fact_table):
        raise QueryError(f"unknown fact table {fact_table!r}")
    fact = schema.fact_table(fact_table)
    grain_dims = list(fact.grain_dimensions())

    selected: list[tuple[str, str]] = []
    if attributes is None:
        for dimension in grain_dims:
            for attr in schema.dimension(dimension).attributes:
                selected.append((dimension, attr.name))
    else:
        for item in attributes:
            dimension, _, attr_name = item.partition(".")
            if dimension not in grain_dims:
                raise QueryError(f"dimension {dimension!r} is not in the grain of {fact_table!r}")
            if schema.dimension(dimension).attribute(attr_name) is None:
                raise QueryError(f"unknown attribute {item!r}")
            selected.append((dimension, attr_name))

    allowed: dict[str, set[int]] = {}
    for f in query_filters_valid(filters, fact_table, schema):
        literals = _coerce_filter_literals(schema, f)
        keys = {
            k
            for k in snapshot.members(f.dimension)
            if _member_passes(schema, snapshot, f, literals, k)
        }
        allowed[f.dimension] = allowed[f.dimension] & keys if f.dimension in allowed else keys

    header = tuple(f"{d}.{a}" for d, a in selected) + tuple(m.name for m in fact.measures)
    rows: list[tuple[str, ...]] = []
    members = {d: snapshot.members(d) for d in grain_dims}
    for row in snapshot.scan_facts(fact_table):
        if any(row.keys[d] not in keys for d, keys in allowed.items()):
            continue
        cells = [
            canonical_text(members[d][row.keys[d]].attributes.get(a)) for d, a in selected
        ]
        cells += [canonical_text(row.measures.get(m.name)) for m in fact.measures]
        rows.append(tuple(cells))
    return AttributeValueView(header=header, rows=tuple(rows))


def query_filters_valid(
    filters: Sequence[Filter], fact_table: str, schema: Schema
) -> Sequence[Filter]:
    fact = schema.fact_table(fact_table)
    grain_dims = set(fact.grain_dimensions())
    for f in filters:
        if f.dimension not in grain_dims:
            raise QueryError(f"filter dimension {f.dimension!r} is not in the grain of {fact_table!r}")
        level_attributes(schema, f.dimension, f.level)
    return filters


def write_attribute_value_csv(
    view: AttributeValueView, out: IO[str] | Path, delimiter: str = ",", quote: str = '"'
) -> None:
    """Write the view as delimited UTF-8 (same quoting rules as ETL sources)."""
    if isinstance(out, Path):
        with out.open("w", newline="", encoding="utf-8") as handle:
            write_attribute_value_csv(view, handle, delimiter, quote)
        return
    writer = csv.writer(out, delimiter=delimiter, quotechar=quote)
    writer.writerow(view.header)
    writer.writerows(view.rows)


# ---------------------------------------------------------------------------
# Complex-fact assembly


@dataclass(frozen=True, slots=True)
class Assembly:
    group: str
    report: FactRow
    satellites: dict[str, tuple[FactRow, ...]]  # satellite table -> matching rows
    documents: tuple[Document, ...]


def assemble_complex_fact(
    group_name: str, central_fact_id: int, catalog: Catalog | Snapshot
) -> Assembly:
    """Gather one complex fact: the report row, every satellite row whose
    shared-dimension surrogate keys match it, and all bridged documents."""
    snapshot = _snapshot(catalog)
    schema = snapshot.schema
    if schema is None:
        raise QueryError("catalog has no schema")
    group = schema.complex_group(group_name)

    report: FactRow | None = None
    for row in snapshot.scan_facts(group.central_fact):
        if row.row_id == central_fact_id:
            report = row
            break
    if report is None:
        raise QueryError(
            f"no row {central_fact_id} in central fact {group.central_fact!r} of group {group_name!r}"
        )

    shared = group.matching_dimensions(schema)

    satellites: dict[str, tuple[FactRow, ...]] = {}
    for satellite in group.satellite_facts:
        matches = tuple(
            row
            for row in snapshot.scan_facts(satellite)
            if all(row.keys[d] == report.keys[d] for d in shared)
        )
        satellites[satellite] = matches

    documents = tuple(snapshot.documents_for_report(central_fact_id))
    return Assembly(group=group_name, report=report, satellites=satellites, documents=documents)


# ---------------------------------------------------------------------------
# Wire documents (shared by the HTTP service, the CLI, and scripted clients)


def query_to_document(query: CubeQuery) -> dict:
    return {
        "fact_table": query.fact_table,
        "group_by": [{"dimension": d, "level": l} for d, l in query.group_by],
        "measures": [{"measure": m, "aggregate": a.value} for m, a in query.measures],
        "filters": [
            {"dimension": f.dimension, "level": f.level, "op": f.op.value, "value": f.value}
            for f in query.filters
        ],
        "flag_normality": query.flag_normality,
    }


def query_from_document(doc: Mapping) -> CubeQuery:
    try:
        return CubeQuery(
            fact_table=doc["fact_table"],
            group_by=tuple((g["dimension"], g["level"]) for g in doc.get("group_by", [])),
            measures=tuple(
                (m["measure"], Aggregate(m["aggregate"])) for m in doc.get("measures", [])
            ),
            filters=tuple(
                Filter(f["dimension"], f["level"], FilterOp(f["op"]), f["value"])
                for f in doc.get("filters", [])
            ),
            flag_normality=bool(doc.get("flag_normality", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise QueryError(f"malformed query document: {exc}") from exc


def json_value(value: Value) -> object:
    if value is None or isinstance(value, (int, float, str)):
        return value
    return canonical_text(value)


def result_to_document(result: CubeResult) -> dict:
    doc: dict = {
        "fact_table": result.fact_table,
        "group_by": [[d, l] for d, l in result.group_by],
        "axes": [
            {"dimension": a.dimension, "level": a.level, "values": list(a.values)}
            for a in result.axes
        ],
        "cells": [],
        "totals": {k: json_value(v) for k, v in result.totals.items()},
    }
    for cell in result.cells:
        cell_doc: dict = {
            "group": list(cell.group),
            "values": {k: json_value(v) for k, v in cell.values.items()},
        }
        if cell.flags is not None:
            cell_doc["flags"] = dict(cell.flags)
        doc["cells"].append(cell_doc)
    return doc


def canonical_json(doc: object) -> bytes:
    """Byte-deterministic JSON: sorted keys, no whitespace, UTF-8."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode(
        "utf-8"
    )
