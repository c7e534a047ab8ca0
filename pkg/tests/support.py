"""Shared test machinery: an independent naive group-by oracle, random query
and schema generators, the seeded many-fact catalog, and a single-token
corruptor for parser-diagnostic checks.

The oracle deliberately reimplements header materialization, filtering, and
aggregation from the schema down (dict-of-lists, then sum/min/max/len), so
engine results are checked against a second, separately written path.
"""

from __future__ import annotations

import datetime as dt
import math
import random
from pathlib import Path

from cubehouse.dsl import parse_schema
from cubehouse.model import (
    MEMBER_LEVEL,
    Aggregability,
    Attribute,
    Dimension,
    FactTable,
    GrainEntry,
    Hierarchy,
    Level,
    Measure,
    Schema,
    ValueKind,
    add_fact_table,
    validate_schema,
)
from cubehouse.olap import Aggregate, CubeQuery, CubeResult, Filter, FilterOp
from cubehouse.store import Catalog, Snapshot, open_catalog

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "cubehouse" / "fixtures"

REL_TOL = 1e-9


def medical_schema() -> Schema:
    parsed = parse_schema(FIXTURES.joinpath("medical.dws").read_text(encoding="utf-8"))
    assert isinstance(parsed, Schema), parsed
    return parsed


# ---------------------------------------------------------------------------
# Independent oracle


def _oracle_text(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, dt.datetime):
        return value.isoformat(sep="T")
    if isinstance(value, dt.date):
        return value.isoformat()
    return str(value)


def _oracle_bound_attrs(schema: Schema, dimension: str, level: str) -> tuple[str, ...]:
    dim = schema.dimension(dimension)
    if level == MEMBER_LEVEL:
        return dim.natural_key
    for hierarchy in dim.hierarchies:
        for lv in hierarchy.levels:
            if lv.name == level:
                return lv.bound_attributes
    raise AssertionError(f"oracle: no level {level} in {dimension}")


def _oracle_literal(schema: Schema, dimension: str, attrs: tuple[str, ...], literal):
    if len(attrs) != 1:
        return str(literal)
    kind = schema.dimension(dimension).attribute(attrs[0]).kind
    if isinstance(literal, str):
        if kind is ValueKind.INTEGER:
            return int(literal)
        if kind is ValueKind.DECIMAL:
            return float(literal)
        if kind is ValueKind.DATE:
            return dt.date.fromisoformat(literal)
        if kind is ValueKind.TIMESTAMP:
            return dt.datetime.fromisoformat(literal)
        return literal
    if kind is ValueKind.DECIMAL and isinstance(literal, (int, float)):
        return float(literal)
    return literal


def _oracle_filter_pass(schema: Schema, snapshot: Snapshot, f: Filter, member_key: int) -> bool:
    attrs = _oracle_bound_attrs(schema, f.dimension, f.level)
    member = snapshot.members(f.dimension)[member_key]
    if len(attrs) == 1:
        actual = member.attributes.get(attrs[0])
    else:
        actual = "/".join(_oracle_text(member.attributes.get(a)) for a in attrs)
    if f.op is FilterOp.IN:
        literals = [_oracle_literal(schema, f.dimension, attrs, lit) for lit in f.value]
        return actual in literals
    literal = _oracle_literal(schema, f.dimension, attrs, f.value)
    if f.op is FilterOp.EQ:
        return actual == literal
    if f.op is FilterOp.NE:
        return actual != literal
    if actual is None:
        return False
    return {
        FilterOp.LT: actual < literal,
        FilterOp.LE: actual <= literal,
        FilterOp.GT: actual > literal,
        FilterOp.GE: actual >= literal,
    }[f.op]


def oracle_execute(query: CubeQuery, catalog: Catalog | Snapshot) -> dict:
    """Naive full-scan group-by: returns {"groups": {key: {agg_key: value}},
    "totals": {...}} computed from first principles."""
    snapshot = catalog.snapshot() if isinstance(catalog, Catalog) else catalog
    schema = snapshot.schema
    assert schema is not None

    grouped: dict[tuple[str, ...], list[dict]] = {}
    all_rows: list[dict] = []
    for row in snapshot.scan_facts(query.fact_table):
        if not all(
            _oracle_filter_pass(schema, snapshot, f, row.keys[f.dimension])
            for f in query.filters
        ):
            continue
        key_parts = []
        for dimension, level in query.group_by:
            attrs = _oracle_bound_attrs(schema, dimension, level)
            member = snapshot.members(dimension)[row.keys[dimension]]
            key_parts.append("/".join(_oracle_text(member.attributes.get(a)) for a in attrs))
        grouped.setdefault(tuple(key_parts), []).append(row.measures)
        all_rows.append(row.measures)

    def aggregate_of(rows: list[dict], measure: str, agg: Aggregate):
        if agg is Aggregate.COUNT:
            return len(rows)
        values = [r[measure] for r in rows if r.get(measure) is not None]
        if agg is Aggregate.SUM:
            return sum(values) if values else 0
        if not values:
            return None
        if agg is Aggregate.MIN:
            return min(values)
        if agg is Aggregate.MAX:
            return max(values)
        return sum(values) / len(values)

    groups_out = {
        key: {
            f"{measure}_{agg.value}": aggregate_of(rows, measure, agg)
            for measure, agg in query.measures
        }
        for key, rows in grouped.items()
    }
    totals_out = {
        f"{measure}_{agg.value}": aggregate_of(all_rows, measure, agg)
        for measure, agg in query.measures
    }
    return {"groups": groups_out, "totals": totals_out}


def values_match(expected, actual, *, exact: bool) -> bool:
    if expected is None or actual is None:
        return expected is None and actual is None
    if isinstance(expected, str) or isinstance(actual, str):
        return expected == actual
    if exact:
        return expected == actual
    return math.isclose(expected, actual, rel_tol=REL_TOL, abs_tol=1e-12)


def assert_engine_matches_oracle(query: CubeQuery, result: CubeResult, oracle: dict) -> None:
    """Exact for count/min/max and integer sums, 1e-9 relative otherwise."""
    engine_groups = {cell.group: cell.values for cell in result.cells}
    assert set(engine_groups) == set(oracle["groups"]), (
        f"group keys differ: engine {sorted(engine_groups)} oracle {sorted(oracle['groups'])}"
    )
    for key, expected_values in oracle["groups"].items():
        for agg_key, expected in expected_values.items():
            actual = engine_groups[key][agg_key]
            exact = _is_exact(agg_key, expected)
            assert values_match(expected, actual, exact=exact), (
                f"{agg_key} at {key}: oracle {expected!r} engine {actual!r}"
            )
    for agg_key, expected in oracle["totals"].items():
        actual = result.totals[agg_key]
        assert values_match(expected, actual, exact=_is_exact(agg_key, expected)), (
            f"totals {agg_key}: oracle {expected!r} engine {actual!r}"
        )
    for i, axis in enumerate(result.axes):
        assert list(axis.values) == sorted({key[i] for key in oracle["groups"]})
    assert list(result.cells) == sorted(result.cells, key=lambda c: c.group)


def _is_exact(agg_key: str, expected) -> bool:
    if agg_key.endswith(("_count", "_min", "_max")):
        return True
    if agg_key.endswith("_sum") and isinstance(expected, int):
        return True
    return False


# ---------------------------------------------------------------------------
# Seeded catalog (many facts, deterministic)


PSYCHOLOGY_FACT = FactTable(
    name="psychology",
    grain=(
        GrainEntry("patient", MEMBER_LEVEL),
        GrainEntry("data-provider", MEMBER_LEVEL),
        GrainEntry("time", "session"),
        GrainEntry("medical-analysis", MEMBER_LEVEL),
    ),
    measures=(
        Measure("score", ValueKind.INTEGER, Aggregability.ADDITIVE),
        Measure("note", ValueKind.TEXT, Aggregability.NON_ADDITIVE),
    ),
)

_NOTES = ("calm", "tired", "focused", "restless", "steady")
_SESSIONS = ("before-training", "after-training")


def build_seeded_catalog(
    root: Path, patients: int = 10, days: int = 90, seed: int = 20040315
) -> tuple[Catalog, Schema]:
    """A catalog with >= 1000 biological facts plus an integer-measure
    psychology fact, spanning patients x days x twice-daily sessions."""
    rng = random.Random(seed)
    schema = add_fact_table(medical_schema(), PSYCHOLOGY_FACT)
    catalog = open_catalog(root, "read-write")
    catalog.install_schema(schema)

    staging = catalog.begin_batch()
    analyses = {
        "hemoglobin": ("Hemoglobin", "hemogram", "hematology", (115.0, 180.0)),
        "retic-count": ("Reticulocyte count", "reticulocyte-numbering", "hematology", (20.0, 110.0)),
        "glucose": ("Glucose", "biochemistry-panel", "biochemistry", (3.0, 7.5)),
        "mood-questionnaire": ("Mood questionnaire", "psychometry", "psychology", (1, 20)),
        "stress-questionnaire": ("Stress questionnaire", "psychometry", "psychology", (1, 20)),
    }
    analysis_keys = {}
    for code, (label, exam, category, _) in analyses.items():
        analysis_keys[code] = staging.resolve_member(
            "medical-analysis",
            {"code": code},
            {"label": label, "examination": exam, "category": category},
        )
    provider_keys = {
        name: staging.resolve_member("data-provider", {"code": name}, {"kind": kind})
        for name, kind in (("lab-a", "laboratory"), ("lab-b", "laboratory"), ("mind-lab", "clinic"))
    }
    patient_keys = {}
    for i in range(1, patients + 1):
        code = f"P{i:03d}"
        patient_keys[code] = staging.resolve_member(
            "patient",
            {"code": code},
            {"birth-year": 1980 + (i % 12), "sex": "M" if i % 2 else "F", "sport": "cycling"},
        )

    start = dt.date(2004, 1, 5)
    time_keys: dict[tuple[dt.date, str], int] = {}

    def time_key(day: dt.date, session: str) -> int:
        if (day, session) not in time_keys:
            time_keys[(day, session)] = staging.resolve_member(
                "time",
                {"day": day, "session": session},
                {"month": f"{day.year:04d}-{day.month:02d}", "year": day.year},
            )
        return time_keys[(day, session)]

    bio_rows = 0
    psy_rows = 0
    for code, pkey in patient_keys.items():
        lab = provider_keys["lab-a"] if pkey % 2 else provider_keys["lab-b"]
        for offset in range(days):
            day = start + dt.timedelta(days=offset)
            for session in _SESSIONS:
                if rng.random() < 0.7:
                    lo, hi = analyses["hemoglobin"][3]
                    staging.add_fact(
                        "biological",
                        {
                            "patient": pkey,
                            "data-provider": lab,
                            "time": time_key(day, session),
                            "medical-analysis": analysis_keys["hemoglobin"],
                        },
                        {"value": round(rng.uniform(lo, hi), 1)},
                    )
                    bio_rows += 1
            if offset % 3 == 0:
                lo, hi = analyses["retic-count"][3]
                staging.add_fact(
                    "biological",
                    {
                        "patient": pkey,
                        "data-provider": lab,
                        "time": time_key(day, "before-training"),
                        "medical-analysis": analysis_keys["retic-count"],
                    },
                    {"value": round(rng.uniform(lo, hi), 1)},
                )
                bio_rows += 1
            if offset % 5 == 0:
                lo, hi = analyses["glucose"][3]
                staging.add_fact(
                    "biological",
                    {
                        "patient": pkey,
                        "data-provider": lab,
                        "time": time_key(day, "after-training"),
                        "medical-analysis": analysis_keys["glucose"],
                    },
                    {"value": round(rng.uniform(lo, hi), 2)},
                )
                bio_rows += 1
            if rng.random() < 0.5:
                which = rng.choice(("mood-questionnaire", "stress-questionnaire"))
                staging.add_fact(
                    "psychology",
                    {
                        "patient": pkey,
                        "data-provider": provider_keys["mind-lab"],
                        "time": time_key(day, "before-training"),
                        "medical-analysis": analysis_keys[which],
                    },
                    {"score": rng.randint(1, 20), "note": rng.choice(_NOTES)},
                )
                psy_rows += 1

    catalog.install_batch(staging, batch_id=f"seed-{seed}-{patients}x{days}")
    assert bio_rows >= 1000, bio_rows
    assert psy_rows >= 300, psy_rows
    return catalog, schema


# ---------------------------------------------------------------------------
# Random query generation


def _candidate_levels(schema: Schema, fact: FactTable, dimension: str) -> list[str]:
    dim = schema.dimension(dimension)
    levels = [MEMBER_LEVEL]
    for hierarchy in dim.hierarchies:
        levels.extend(lv.name for lv in hierarchy.levels)
    return levels


def random_query(
    rng: random.Random,
    schema: Schema,
    catalog: Catalog | Snapshot,
    facts: tuple[str, ...] = ("biological", "psychology"),
) -> CubeQuery:
    """A valid random CubeQuery over the given fact tables."""
    snapshot = catalog.snapshot() if isinstance(catalog, Catalog) else catalog
    fact_name = rng.choice(list(facts))
    fact = schema.fact_table(fact_name)
    grain_dims = list(fact.grain_dimensions())

    group_dims = rng.sample(grain_dims, k=rng.randint(1, min(3, len(grain_dims))))
    group_by = tuple((d, rng.choice(_candidate_levels(schema, fact, d))) for d in group_dims)

    measures: list[tuple[str, Aggregate]] = []
    for measure in fact.measures:
        for aggregate in Aggregate:
            if aggregate in (Aggregate.SUM, Aggregate.AVG) and (
                not measure.kind.numeric or measure.aggregability is Aggregability.NON_ADDITIVE
            ):
                continue
            if rng.random() < 0.45:
                measures.append((measure.name, aggregate))
    if not measures:
        measures = [(fact.measures[0].name, Aggregate.COUNT)]

    filters: list[Filter] = []
    for _ in range(rng.randint(0, 2)):
        dimension = rng.choice(grain_dims)
        level = rng.choice(_candidate_levels(schema, fact, dimension))
        attrs = _oracle_bound_attrs(schema, dimension, level)
        members = list(snapshot.members(dimension).values())
        if not members:
            continue
        member = rng.choice(members)
        header = "/".join(_oracle_text(member.attributes.get(a)) for a in attrs)
        ordered_ok = len(attrs) == 1
        op = rng.choice(
            [FilterOp.EQ, FilterOp.NE, FilterOp.IN]
            + ([FilterOp.LT, FilterOp.LE, FilterOp.GT, FilterOp.GE] if ordered_ok else [])
        )
        value: object = header
        if op is FilterOp.IN:
            others = rng.sample(members, k=min(2, len(members)))
            value = sorted(
                {header}
                | {"/".join(_oracle_text(m.attributes.get(a)) for a in attrs) for m in others}
            )
        filters.append(Filter(dimension, level, op, value))

    return CubeQuery(
        fact_table=fact_name,
        group_by=group_by,
        measures=tuple(dict.fromkeys(measures)),
        filters=tuple(filters),
    )


# ---------------------------------------------------------------------------
# Roll-up coherence checking


def check_rollup_coherence(query: CubeQuery, catalog: Catalog | Snapshot, schema: Schema) -> int:
    """Re-aggregate execute(drill_down(q)) upward and compare with execute(q)
    for every dimension where drilling is defined; returns checks performed.

    sum/count/min/max re-aggregate directly; avg is rederived from carried
    sums and counts added to the drilled query.
    """
    from cubehouse.olap import AlreadyFinest, QueryError, drill_down, execute

    snapshot = catalog.snapshot() if isinstance(catalog, Catalog) else catalog
    checks = 0
    for position, (dimension, level) in enumerate(query.group_by):
        try:
            drilled = drill_down(query, dimension, schema)
        except (AlreadyFinest, QueryError):
            continue
        finer_level = drilled.group_by[position][1]
        fine_attrs = _oracle_bound_attrs(schema, dimension, finer_level)
        coarse_attrs = _oracle_bound_attrs(schema, dimension, level)
        mapping: dict[str, str] = {}
        for member in snapshot.members(dimension).values():
            fine = "/".join(_oracle_text(member.attributes.get(a)) for a in fine_attrs)
            coarse = "/".join(_oracle_text(member.attributes.get(a)) for a in coarse_attrs)
            assert mapping.setdefault(fine, coarse) == coarse, (
                f"{dimension}: finer header {fine!r} maps to two coarser headers"
            )

        augmented = list(drilled.measures)
        for measure, agg in query.measures:
            if agg is Aggregate.AVG:
                for extra in ((measure, Aggregate.SUM), (measure, Aggregate.COUNT)):
                    if extra not in augmented:
                        augmented.append(extra)
        drilled = CubeQuery(
            fact_table=drilled.fact_table,
            group_by=drilled.group_by,
            measures=tuple(augmented),
            filters=drilled.filters,
        )

        coarse_result = execute(query, catalog)
        fine_result = execute(drilled, catalog)

        rolled: dict[tuple[str, ...], dict[str, object]] = {}
        for cell in fine_result.cells:
            key = list(cell.group)
            key[position] = mapping[cell.group[position]]
            key = tuple(key)
            acc = rolled.setdefault(key, {})
            for measure, agg in drilled.measures:
                agg_key = f"{measure}_{agg.value}"
                value = cell.values[agg_key]
                if agg in (Aggregate.SUM, Aggregate.COUNT):
                    acc[agg_key] = acc.get(agg_key, 0) + value
                elif agg is Aggregate.MIN:
                    acc[agg_key] = value if agg_key not in acc else min(acc[agg_key], value)
                elif agg is Aggregate.MAX:
                    acc[agg_key] = value if agg_key not in acc else max(acc[agg_key], value)
        for key, acc in rolled.items():
            for measure, agg in query.measures:
                if agg is Aggregate.AVG:
                    count = acc[f"{measure}_count"]
                    acc[f"{measure}_avg"] = (acc[f"{measure}_sum"] / count) if count else None

        coarse_cells = {cell.group: cell.values for cell in coarse_result.cells}
        assert set(rolled) == set(coarse_cells), (
            f"coherence group mismatch on {dimension}: {sorted(rolled)} vs {sorted(coarse_cells)}"
        )
        for key, expected_values in coarse_cells.items():
            for measure, agg in query.measures:
                agg_key = f"{measure}_{agg.value}"
                expected = expected_values[agg_key]
                actual = rolled[key].get(agg_key)
                exact = _is_exact(agg_key, expected)
                assert values_match(expected, actual, exact=exact), (
                    f"coherence {agg_key} at {key}: coarse {expected!r} re-aggregated {actual!r}"
                )
        checks += 1
    return checks


# ---------------------------------------------------------------------------
# Random schema generation (for DSL round-trips)


_WORDS = (
    "alpha", "bravo", "chart", "delta", "ember", "flint", "grove", "helix",
    "ionic", "joule", "karst", "lumen", "micro", "nadir", "ocean", "prism",
)


def random_schema(rng: random.Random) -> Schema:
    """A structurally valid random schema; asserts its own validity."""
    used: set[str] = set()

    def fresh(prefix: str) -> str:
        while True:
            name = f"{rng.choice(_WORDS)}-{prefix}{rng.randint(0, 999)}"
            if name not in used:
                used.add(name)
                return name

    dimensions: list[Dimension] = []
    for _ in range(rng.randint(1, 4)):
        attrs = [
            Attribute(f"a{j}-{rng.choice(_WORDS)}", rng.choice(list(ValueKind)[:-1]))
            for j in range(rng.randint(1, 5))
        ]
        natural = tuple(a.name for a in rng.sample(attrs, k=rng.randint(1, min(2, len(attrs)))))
        hierarchies = []
        for h in range(rng.randint(0, 2)):
            n_levels = rng.randint(2, 4)
            levels = tuple(
                Level(
                    f"l{h}{j}-{rng.choice(_WORDS)}",
                    tuple(a.name for a in rng.sample(attrs, k=rng.randint(1, min(2, len(attrs))))),
                )
                for j in range(n_levels)
            )
            hierarchies.append(Hierarchy(fresh("hier"), levels))
        outriggers = frozenset(
            a.name for a in attrs if rng.random() < 0.2
        )
        dimensions.append(
            Dimension(
                name=fresh("dim"),
                natural_key=natural,
                attributes=tuple(attrs),
                hierarchies=tuple(hierarchies),
                outriggers=outriggers,
            )
        )

    facts: list[FactTable] = []
    for _ in range(rng.randint(1, 3)):
        k = rng.randint(1, len(dimensions))
        chosen = rng.sample(dimensions, k=k)
        if dimensions[0] not in chosen:
            chosen[0] = dimensions[0]  # guarantee one dimension shared by every fact
        grain = []
        for dim in chosen:
            levels = [MEMBER_LEVEL] + [lv.name for h in dim.hierarchies for lv in h.levels]
            grain.append(GrainEntry(dim.name, rng.choice(levels)))
        measures = tuple(
            Measure(
                fresh("m"),
                rng.choice([ValueKind.DECIMAL, ValueKind.INTEGER, ValueKind.TEXT, ValueKind.DOCUMENT_REF]),
                rng.choice(list(Aggregability)),
            )
            for _ in range(rng.randint(1, 3))
        )
        facts.append(FactTable(name=fresh("fact"), grain=tuple(grain), measures=measures))

    groups = []
    if len(facts) >= 2 and rng.random() < 0.5:
        central, *rest = rng.sample(facts, k=rng.randint(2, len(facts)))
        groups.append(
            __import__("cubehouse.model", fromlist=["ComplexFactGroup"]).ComplexFactGroup(
                name=fresh("grp"),
                central_fact=central.name,
                satellite_facts=tuple(f.name for f in rest),
                shared_dimensions=(dimensions[0].name,) if rng.random() < 0.5 else (),
            )
        )

    schema = Schema(
        name=fresh("house"),
        dimensions=tuple(dimensions),
        fact_tables=tuple(facts),
        complex_groups=tuple(groups),
        version=rng.randint(1, 9),
    )
    report = validate_schema(schema)
    assert report.ok, report.violations
    return schema


# ---------------------------------------------------------------------------
# Single-token corruption


def corrupt_one_token(text: str, rng: random.Random) -> tuple[str, int]:
    """Replace one random token with an illegal character run; returns the
    corrupted text and the 1-based line of the corruption."""
    from cubehouse.dsl import _lex

    tokens, diagnostics = _lex(text)
    assert not diagnostics
    tokens = [t for t in tokens if t.value]
    token = rng.choice(tokens)
    lines = text.split("\n")
    offset = sum(len(line) + 1 for line in lines[: token.line - 1]) + token.column - 1
    corrupted = text[:offset] + "@@@" + text[offset + len(token.value) :]
    return corrupted, token.line
