"""In-memory dimensional model: dimensions, hierarchies, fact tables, and
complex-fact groups, plus the structural validation rules that tie them
together.

A warehouse is a bus of conformed dimensions shared by several fact tables.
Schemas are immutable values; mutation operations (``add_fact_table``) return
a new schema with the version bumped by one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

#: Pseudo-level naming the dimension member itself.  Every dimension has it
#: implicitly: grain entries, group-bys, and filters may target it even when
#: the dimension declares no hierarchy.
MEMBER_LEVEL = "member"


class ValueKind(str, Enum):
    TEXT = "text"
    INTEGER = "integer"
    DECIMAL = "decimal"
    DATE = "date"
    TIMESTAMP = "timestamp"
    DOCUMENT_REF = "document-ref"

    @property
    def numeric(self) -> bool:
        return self in (ValueKind.INTEGER, ValueKind.DECIMAL)


#: Value kinds a dimension attribute may carry (measures additionally allow
#: document references).
ATTRIBUTE_KINDS = (
    ValueKind.TEXT,
    ValueKind.INTEGER,
    ValueKind.DECIMAL,
    ValueKind.DATE,
    ValueKind.TIMESTAMP,
)


class Aggregability(str, Enum):
    ADDITIVE = "additive"
    SEMI_ADDITIVE = "semi-additive"
    NON_ADDITIVE = "non-additive"


def default_aggregability(kind: ValueKind) -> Aggregability:
    """Numeric measures default to additive, everything else to non-additive."""
    if kind.numeric:
        return Aggregability.ADDITIVE
    return Aggregability.NON_ADDITIVE


@dataclass(frozen=True, slots=True)
class Attribute:
    name: str
    kind: ValueKind


@dataclass(frozen=True, slots=True)
class Level:
    """One step of a hierarchy; binds the dimension attributes whose values
    identify a group at this granularity."""

    name: str
    bound_attributes: tuple[str, ...]


@dataclass(frozen=True, slots=True)
class Hierarchy:
    name: str
    levels: tuple[Level, ...]  # finest first

    def level_names(self) -> tuple[str, ...]:
        return tuple(lv.name for lv in self.levels)

    def level(self, name: str) -> Level:
        for lv in self.levels:
            if lv.name == name:
                return lv
        raise UnknownHierarchyLevel(self.name, name)


@dataclass(frozen=True, slots=True)
class Dimension:
    name: str
    natural_key: tuple[str, ...]
    attributes: tuple[Attribute, ...]
    hierarchies: tuple[Hierarchy, ...] = ()  # canonical: sorted by name
    outriggers: frozenset[str] = frozenset()  # attributes normalized into outrigger tables

    def __post_init__(self) -> None:
        object.__setattr__(self, "hierarchies", tuple(sorted(self.hierarchies, key=lambda h: h.name)))
        object.__setattr__(self, "outriggers", frozenset(self.outriggers))

    def attribute(self, name: str) -> Attribute | None:
        for attr in self.attributes:
            if attr.name == name:
                return attr
        return None

    def attribute_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def hierarchy(self, name: str) -> Hierarchy:
        for h in self.hierarchies:
            if h.name == name:
                return h
        raise UnknownHierarchy(self.name, name)

    def find_level(self, level: str) -> tuple[Hierarchy, Level] | None:
        """First declared hierarchy carrying ``level``, or None.

        ``member`` is not a declared level; callers handle it explicitly.
        """
        for h in self.hierarchies:
            for lv in h.levels:
                if lv.name == level:
                    return h, lv
        return None

    def level_bound_attributes(self, level: str) -> tuple[str, ...]:
        """Attributes whose values materialize ``level`` headers; the member
        pseudo-level binds the natural key."""
        if level == MEMBER_LEVEL:
            return self.natural_key
        found = self.find_level(level)
        if found is None:
            raise UnknownHierarchyLevel(self.name, level)
        return found[1].bound_attributes


@dataclass(frozen=True, slots=True)
class GrainEntry:
    dimension: str
    level: str  # declared hierarchy level or MEMBER_LEVEL


@dataclass(frozen=True, slots=True)
class Measure:
    name: str
    kind: ValueKind
    aggregability: Aggregability


@dataclass(frozen=True, slots=True)
class FactTable:
    name: str
    grain: tuple[GrainEntry, ...]  # canonical: sorted by dimension name
    measures: tuple[Measure, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "grain", tuple(sorted(self.grain, key=lambda g: g.dimension)))

    def grain_dimensions(self) -> tuple[str, ...]:
        return tuple(g.dimension for g in self.grain)

    def grain_level(self, dimension: str) -> str:
        for g in self.grain:
            if g.dimension == dimension:
                return g.level
        raise UnknownDimension(dimension)

    def measure(self, name: str) -> Measure | None:
        for m in self.measures:
            if m.name == name:
                return m
        return None


@dataclass(frozen=True, slots=True)
class ComplexFactGroup:
    """Interrelated fact tables forming one fact: a central report, satellite
    result tables matched through the group's shared dimensions, and a
    many-to-many document bridge hanging off the central table.

    ``shared_dimensions`` names the dimensions that identify one occurrence
    across all members (every member's grain must include them); empty means
    "the intersection of the member grains"."""

    name: str
    central_fact: str
    satellite_facts: tuple[str, ...]  # canonical: sorted
    shared_dimensions: tuple[str, ...] = ()  # canonical: sorted
    document_bridge: tuple[str, str] = ("", "many-to-many")

    def __post_init__(self) -> None:
        object.__setattr__(self, "satellite_facts", tuple(sorted(self.satellite_facts)))
        object.__setattr__(self, "shared_dimensions", tuple(sorted(self.shared_dimensions)))
        if self.document_bridge[0] == "":
            object.__setattr__(self, "document_bridge", (self.central_fact, "many-to-many"))

    def member_facts(self) -> tuple[str, ...]:
        return (self.central_fact, *self.satellite_facts)

    def matching_dimensions(self, schema: "Schema") -> set[str]:
        """Dimensions satellite rows must share with the report row."""
        if self.shared_dimensions:
            return set(self.shared_dimensions)
        grains = [set(schema.fact_table(f).grain_dimensions()) for f in self.member_facts()]
        return set.intersection(*grains) if grains else set()


@dataclass(frozen=True, slots=True)
class Schema:
    """A whole warehouse schema.  Declaration lists are canonicalized to
    name order so that structural equality ignores declaration order."""

    name: str
    dimensions: tuple[Dimension, ...] = ()
    fact_tables: tuple[FactTable, ...] = ()
    complex_groups: tuple[ComplexFactGroup, ...] = ()
    version: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "dimensions", tuple(sorted(self.dimensions, key=lambda d: d.name)))
        object.__setattr__(self, "fact_tables", tuple(sorted(self.fact_tables, key=lambda f: f.name)))
        object.__setattr__(
            self, "complex_groups", tuple(sorted(self.complex_groups, key=lambda g: g.name))
        )

    def dimension(self, name: str) -> Dimension:
        for d in self.dimensions:
            if d.name == name:
                return d
        raise UnknownDimension(name)

    def has_dimension(self, name: str) -> bool:
        return any(d.name == name for d in self.dimensions)

    def fact_table(self, name: str) -> FactTable:
        for f in self.fact_tables:
            if f.name == name:
                return f
        raise UnknownFactTable(name)

    def has_fact_table(self, name: str) -> bool:
        return any(f.name == name for f in self.fact_tables)

    def complex_group(self, name: str) -> ComplexFactGroup:
        for g in self.complex_groups:
            if g.name == name:
                return g
        raise UnknownGroup(name)


# ---------------------------------------------------------------------------
# Errors


class ModelError(Exception):
    """Base class for dimensional-model errors."""


class UnknownDimension(ModelError):
    def __init__(self, name: str) -> None:
        super().__init__(f"unknown dimension: {name!r}")
        self.name = name


class UnknownFactTable(ModelError):
    def __init__(self, name: str) -> None:
        super().__init__(f"unknown fact table: {name!r}")
        self.name = name


class UnknownGroup(ModelError):
    def __init__(self, name: str) -> None:
        super().__init__(f"unknown complex-fact group: {name!r}")
        self.name = name


class UnknownHierarchy(ModelError):
    def __init__(self, dimension: str, name: str) -> None:
        super().__init__(f"dimension {dimension!r} has no hierarchy {name!r}")
        self.dimension = dimension
        self.name = name


class UnknownHierarchyLevel(ModelError):
    def __init__(self, owner: str, level: str) -> None:
        super().__init__(f"no level {level!r} in {owner!r}")
        self.owner = owner
        self.level = level


class InvalidSchema(ModelError):
    """Raised when an operation that requires a valid schema is handed one
    that fails validation; carries the violations."""

    def __init__(self, violations: Sequence[Violation]) -> None:
        lines = "; ".join(f"{v.location}: {v.message}" for v in violations)
        super().__init__(f"schema is invalid: {lines}")
        self.violations = tuple(violations)


class SchemaChangeError(ModelError):
    """A schema mutation was refused (duplicate name, dangling reference)."""


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True, slots=True)
class Violation:
    location: str  # e.g. "fact biological/grain patint"
    rule: str  # stable rule identifier
    message: str


@dataclass(frozen=True, slots=True)
class ValidationReport:
    violations: tuple[Violation, ...]
    metadata: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_schema(schema: Schema) -> ValidationReport:
    """Check every structural invariant; violations are data, not failures.

    The report is deterministic: violations sorted by (location, rule).
    ``metadata["composition"]`` reports the overall shape: "constellation"
    when fact tables share dimensions, otherwise "isolated".
    """
    out: list[Violation] = []

    def bad(location: str, rule: str, message: str) -> None:
        out.append(Violation(location, rule, message))

    seen_names: dict[str, str] = {}
    for kind, names in (
        ("dimension", [d.name for d in schema.dimensions]),
        ("fact", [f.name for f in schema.fact_tables]),
        ("group", [g.name for g in schema.complex_groups]),
    ):
        for name in names:
            if name in seen_names:
                bad(
                    f"{kind} {name}",
                    "duplicate-name",
                    f"name {name!r} already declared as {seen_names[name]}",
                )
            else:
                seen_names[name] = kind

    for dim in schema.dimensions:
        loc = f"dimension {dim.name}"
        attr_names = dim.attribute_names()
        dup_attrs = _duplicates(attr_names)
        for a in dup_attrs:
            bad(f"{loc}/attribute {a}", "duplicate-attribute", f"attribute {a!r} declared twice")
        if not dim.natural_key:
            bad(loc, "missing-natural-key", "dimension declares no natural key")
        for part in dim.natural_key:
            if part not in attr_names:
                bad(
                    f"{loc}/naturalkey {part}",
                    "natural-key-not-attribute",
                    f"natural key part {part!r} is not a declared attribute",
                )
        for o in sorted(dim.outriggers):
            if o not in attr_names:
                bad(
                    f"{loc}/outrigger {o}",
                    "outrigger-not-attribute",
                    f"outrigger {o!r} is not a declared attribute",
                )
        hier_names = [h.name for h in dim.hierarchies]
        for h in _duplicates(hier_names):
            bad(f"{loc}/hierarchy {h}", "duplicate-hierarchy", f"hierarchy {h!r} declared twice")
        for hier in dim.hierarchies:
            hloc = f"{loc}/hierarchy {hier.name}"
            if len(hier.levels) < 2:
                bad(hloc, "hierarchy-too-few-levels", "hierarchy needs at least 2 levels")
            lvl_names = [lv.name for lv in hier.levels]
            for l in _duplicates(lvl_names):
                bad(f"{hloc}/level {l}", "duplicate-level", f"level {l!r} repeated")
            for lv in hier.levels:
                lloc = f"{hloc}/level {lv.name}"
                if lv.name == MEMBER_LEVEL:
                    bad(lloc, "reserved-level-name", f"level name {MEMBER_LEVEL!r} is reserved")
                if not lv.bound_attributes:
                    bad(lloc, "level-unbound", "level binds no attribute")
                for a in lv.bound_attributes:
                    if a not in attr_names:
                        bad(
                            lloc,
                            "level-unknown-attribute",
                            f"level binds undeclared attribute {a!r}",
                        )

    if not schema.fact_tables:
        bad(f"schema {schema.name}", "no-fact-tables", "no fact tables")

    for fact in schema.fact_tables:
        loc = f"fact {fact.name}"
        grain_dims = [g.dimension for g in fact.grain]
        for d in _duplicates(grain_dims):
            bad(f"{loc}/grain {d}", "grain-duplicate-dimension", f"dimension {d!r} repeated in grain")
        if not fact.grain:
            bad(loc, "empty-grain", "fact declares no grain")
        for g in fact.grain:
            gloc = f"{loc}/grain {g.dimension}"
            if not schema.has_dimension(g.dimension):
                bad(gloc, "dangling-dimension", f"grain references undeclared dimension {g.dimension!r}")
                continue
            dim = schema.dimension(g.dimension)
            if g.level != MEMBER_LEVEL and dim.find_level(g.level) is None:
                bad(
                    gloc,
                    "grain-unknown-level",
                    f"dimension {g.dimension!r} has no level {g.level!r}",
                )
        if not fact.measures:
            bad(loc, "no-measures", "fact declares no measures")
        for m in _duplicates([m.name for m in fact.measures]):
            bad(f"{loc}/measure {m}", "duplicate-measure", f"measure {m!r} declared twice")

    for group in schema.complex_groups:
        loc = f"group {group.name}"
        if group.central_fact in group.satellite_facts:
            bad(loc, "group-central-is-satellite", "central fact listed as satellite")
        member_grains: list[set[str]] = []
        for fname in group.member_facts():
            if not schema.has_fact_table(fname):
                bad(f"{loc}/{fname}", "group-unknown-fact", f"group references undeclared fact {fname!r}")
            else:
                member_grains.append(set(schema.fact_table(fname).grain_dimensions()))
        if group.document_bridge[0] != group.central_fact:
            bad(loc, "bridge-not-central", "document bridge must hang off the central fact")
        for d in group.shared_dimensions:
            if not schema.has_dimension(d):
                bad(f"{loc}/shared {d}", "group-unknown-dimension", f"shared dimension {d!r} undeclared")
        if member_grains:
            intersection = set.intersection(*member_grains)
            if not intersection:
                bad(loc, "group-no-shared-dimensions", "group members share no dimensions")
            for d in group.shared_dimensions:
                if schema.has_dimension(d) and d not in intersection:
                    bad(
                        f"{loc}/shared {d}",
                        "group-shared-not-in-grain",
                        f"shared dimension {d!r} missing from some member's grain",
                    )

    out.sort(key=lambda v: (v.location, v.rule))
    metadata = {"composition": "constellation" if _shares_dimensions(schema) else "isolated"}
    return ValidationReport(tuple(out), metadata)


def _duplicates(names: Iterable[str]) -> list[str]:
    seen: set[str] = set()
    dups: list[str] = []
    for n in names:
        if n in seen and n not in dups:
            dups.append(n)
        seen.add(n)
    return dups


def _shares_dimensions(schema: Schema) -> bool:
    counts: dict[str, int] = {}
    for fact in schema.fact_tables:
        for d in set(fact.grain_dimensions()):
            counts[d] = counts.get(d, 0) + 1
    return any(c >= 2 for c in counts.values())


# ---------------------------------------------------------------------------
# Operations


def conformed_dimensions(schema: Schema) -> set[str]:
    """The warehouse bus: dimensions referenced by at least two fact tables."""
    report = validate_schema(schema)
    if not report.ok:
        raise InvalidSchema(report.violations)
    counts: dict[str, int] = {}
    for fact in schema.fact_tables:
        for d in set(fact.grain_dimensions()):
            counts[d] = counts.get(d, 0) + 1
    return {d for d, c in counts.items() if c >= 2}


def classify_fact_table(schema: Schema, fact: str) -> str:
    """"star" or "snowflake".

    A fact is a snowflake when some grain entry sits on a hierarchy whose
    coarser levels bind outrigger attributes: the dimension is then
    physically normalized above that grain.  Grain entries at the member
    pseudo-level use the dimension table flat, so they never snowflake.
    """
    table = schema.fact_table(fact)
    for entry in table.grain:
        if entry.level == MEMBER_LEVEL:
            continue
        dim = schema.dimension(entry.dimension)
        found = dim.find_level(entry.level)
        if found is None:
            continue
        hierarchy, _ = found
        names = hierarchy.level_names()
        start = names.index(entry.level)
        for lv in hierarchy.levels[start + 1 :]:
            if any(a in dim.outriggers for a in lv.bound_attributes):
                return "snowflake"
    return "star"


def hierarchy_path(dimension: Dimension, hierarchy: str) -> tuple[Level, ...]:
    """Declared levels of a hierarchy, finest first; raises on unknown name."""
    return dimension.hierarchy(hierarchy).levels


def add_fact_table(
    schema: Schema,
    fact: FactTable,
    new_dimensions: Sequence[Dimension] = (),
) -> Schema:
    """Return a new schema version with ``fact`` (and any private dimensions
    declared in the same change-set) added.  Existing declarations are
    untouched; the version increments by exactly 1."""
    if schema.has_fact_table(fact.name) or any(
        fact.name == g.name for g in schema.complex_groups
    ):
        raise SchemaChangeError(f"duplicate name: {fact.name!r} already declared")
    for dim in new_dimensions:
        if schema.has_dimension(dim.name):
            raise SchemaChangeError(f"duplicate name: dimension {dim.name!r} already declared")
    names_after = {d.name for d in schema.dimensions} | {d.name for d in new_dimensions}
    for entry in fact.grain:
        if entry.dimension not in names_after:
            raise SchemaChangeError(
                f"dangling dimension reference: {entry.dimension!r} in fact {fact.name!r}"
            )
    candidate = replace(
        schema,
        dimensions=schema.dimensions + tuple(new_dimensions),
        fact_tables=schema.fact_tables + (fact,),
        version=schema.version + 1,
    )
    report = validate_schema(candidate)
    if not report.ok:
        raise SchemaChangeError(
            "change rejected: " + "; ".join(f"{v.location}: {v.message}" for v in report.violations)
        )
    return candidate


def navigation_path(schema: Schema, fact: str, dimension: str) -> tuple[str, ...]:
    """Levels navigable for ``dimension`` in queries over ``fact``, finest
    first, floored at the fact's grain.

    A member-level grain prefixes the member pseudo-level and continues into
    the first declared hierarchy (if any); a hierarchy-level grain walks the
    owning hierarchy upward from the grain level.
    """
    table = schema.fact_table(fact)
    dim = schema.dimension(dimension)
    grain_level = table.grain_level(dimension)
    if grain_level == MEMBER_LEVEL:
        path: tuple[str, ...] = (MEMBER_LEVEL,)
        if dim.hierarchies:
            path += dim.hierarchies[0].level_names()
        return path
    found = dim.find_level(grain_level)
    if found is None:
        raise UnknownHierarchyLevel(dimension, grain_level)
    hierarchy, _ = found
    names = hierarchy.level_names()
    return names[names.index(grain_level) :]
