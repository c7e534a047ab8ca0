from __future__ import annotations

import random

import pytest

from cubehouse.model import (
    MEMBER_LEVEL,
    Aggregability,
    Attribute,
    ComplexFactGroup,
    Dimension,
    FactTable,
    GrainEntry,
    Hierarchy,
    InvalidSchema,
    Level,
    Measure,
    Schema,
    SchemaChangeError,
    UnknownFactTable,
    UnknownHierarchy,
    ValueKind,
    add_fact_table,
    classify_fact_table,
    conformed_dimensions,
    hierarchy_path,
    navigation_path,
    validate_schema,
)

from .support import random_schema


def _dim(name: str) -> Dimension:
    return Dimension(name=name, natural_key=("code",), attributes=(Attribute("code", ValueKind.TEXT),))


def _fact(name: str, *dims: str) -> FactTable:
    return FactTable(
        name=name,
        grain=tuple(GrainEntry(d, MEMBER_LEVEL) for d in dims),
        measures=(Measure("value", ValueKind.DECIMAL, Aggregability.ADDITIVE),),
    )


class TestValidation:
    def test_fixture_schema_is_clean(self, schema):
        report = validate_schema(schema)
        assert report.ok
        assert report.violations == ()
        assert report.metadata["composition"] == "constellation"

    def test_no_fact_tables_is_one_violation(self):
        report = validate_schema(Schema(name="empty", dimensions=(_dim("d"),)))
        assert [v.rule for v in report.violations] == ["no-fact-tables"]

    def test_dangling_dimension_reference_is_named(self):
        schema = Schema(name="bad", dimensions=(_dim("patient"),), fact_tables=(_fact("f", "patint"),))
        report = validate_schema(schema)
        dangling = [v for v in report.violations if v.rule == "dangling-dimension"]
        assert len(dangling) == 1
        assert "patint" in dangling[0].message
        assert dangling[0].location == "fact f/grain patint"

    def test_report_is_ordered_by_location(self):
        schema = Schema(
            name="bad",
            dimensions=(_dim("a"),),
            fact_tables=(_fact("z", "missing-one"), _fact("b", "missing-two")),
        )
        report = validate_schema(schema)
        locations = [v.location for v in report.violations]
        assert locations == sorted(locations)

    def test_duplicate_names_across_kinds(self):
        schema = Schema(name="dup", dimensions=(_dim("x"),), fact_tables=(_fact("x", "x"),))
        assert any(v.rule == "duplicate-name" for v in validate_schema(schema).violations)

    def test_hierarchy_needs_two_levels(self):
        dim = Dimension(
            name="d",
            natural_key=("code",),
            attributes=(Attribute("code", ValueKind.TEXT),),
            hierarchies=(Hierarchy("h", (Level("only", ("code",)),)),),
        )
        report = validate_schema(Schema(name="s", dimensions=(dim,), fact_tables=(_fact("f", "d"),)))
        assert any(v.rule == "hierarchy-too-few-levels" for v in report.violations)

    def test_level_must_bind_declared_attribute(self):
        dim = Dimension(
            name="d",
            natural_key=("code",),
            attributes=(Attribute("code", ValueKind.TEXT),),
            hierarchies=(Hierarchy("h", (Level("a", ("code",)), Level("b", ("ghost",)))),),
        )
        report = validate_schema(Schema(name="s", dimensions=(dim,), fact_tables=(_fact("f", "d"),)))
        assert any(v.rule == "level-unknown-attribute" for v in report.violations)

    def test_group_shared_dimension_must_be_in_every_grain(self, schema):
        group = ComplexFactGroup(
            name="bad-group",
            central_fact="cardio-report",
            satellite_facts=("biological",),
            shared_dimensions=("cardiologist",),
        )
        candidate = Schema(
            name=schema.name,
            dimensions=schema.dimensions,
            fact_tables=schema.fact_tables,
            complex_groups=schema.complex_groups + (group,),
            version=schema.version,
        )
        report = validate_schema(candidate)
        assert any(v.rule == "group-shared-not-in-grain" for v in report.violations)


class TestConformedDimensions:
    def test_fixture_bus_is_the_four_shared_dimensions(self, schema):
        assert conformed_dimensions(schema) == {"patient", "data-provider", "time", "medical-analysis"}

    def test_single_fact_table_shares_nothing(self):
        schema = Schema(name="solo", dimensions=(_dim("d"),), fact_tables=(_fact("f", "d"),))
        assert conformed_dimensions(schema) == set()

    def test_two_facts_sharing_only_time(self):
        schema = Schema(
            name="pair",
            dimensions=(_dim("time"), _dim("a"), _dim("b")),
            fact_tables=(_fact("f1", "time", "a"), _fact("f2", "time", "b")),
        )
        assert conformed_dimensions(schema) == {"time"}

    def test_invalid_schema_is_refused_with_violations(self):
        bad = Schema(name="bad", dimensions=(_dim("d"),))
        with pytest.raises(InvalidSchema) as excinfo:
            conformed_dimensions(bad)
        assert excinfo.value.violations

    def test_every_bus_member_appears_in_two_or_more_grains(self, schema):
        bus = conformed_dimensions(schema)
        for name in bus:
            count = sum(1 for f in schema.fact_tables if name in f.grain_dimensions())
            assert count >= 2


class TestClassification:
    def test_biometrical_is_star(self, schema):
        assert classify_fact_table(schema, "biometrical") == "star"

    def test_biological_is_snowflake(self, schema):
        assert classify_fact_table(schema, "biological") == "snowflake"

    def test_single_flat_dimension_is_star(self):
        schema = Schema(name="s", dimensions=(_dim("d"),), fact_tables=(_fact("f", "d"),))
        assert classify_fact_table(schema, "f") == "star"

    def test_unknown_fact_table(self, schema):
        with pytest.raises(UnknownFactTable):
            classify_fact_table(schema, "nope")


class TestHierarchyPath:
    def test_fixture_time_path(self, schema):
        path = hierarchy_path(schema.dimension("time"), "calendar")
        assert [lv.name for lv in path] == ["session", "day", "month", "year"]

    def test_declared_order_is_preserved(self):
        dim = Dimension(
            name="d",
            natural_key=("a",),
            attributes=(Attribute("a", ValueKind.TEXT), Attribute("b", ValueKind.TEXT)),
            hierarchies=(Hierarchy("h", (Level("fine", ("a",)), Level("coarse", ("b",)))),),
        )
        assert [lv.name for lv in hierarchy_path(dim, "h")] == ["fine", "coarse"]

    def test_unknown_hierarchy(self, schema):
        with pytest.raises(UnknownHierarchy):
            hierarchy_path(schema.dimension("time"), "fiscal")

    def test_navigation_path_floors_at_grain(self, schema):
        assert navigation_path(schema, "biological", "time") == ("session", "day", "month", "year")
        assert navigation_path(schema, "biological", "medical-analysis") == (
            "analysis",
            "examination",
            "category",
        )
        assert navigation_path(schema, "biometrical", "medical-analysis") == (
            MEMBER_LEVEL,
            "analysis",
            "examination",
            "category",
        )
        assert navigation_path(schema, "biological", "patient") == (MEMBER_LEVEL,)


class TestAddFactTable:
    def _psych(self) -> FactTable:
        return FactTable(
            name="psychology",
            grain=(
                GrainEntry("patient", MEMBER_LEVEL),
                GrainEntry("time", "session"),
                GrainEntry("data-provider", MEMBER_LEVEL),
                GrainEntry("medical-analysis", MEMBER_LEVEL),
            ),
            measures=(Measure("score", ValueKind.INTEGER, Aggregability.ADDITIVE),),
        )

    def test_add_over_conformed_dimensions(self, schema):
        grown = add_fact_table(schema, self._psych())
        assert grown.version == schema.version + 1
        assert grown.has_fact_table("psychology")
        assert conformed_dimensions(grown) == conformed_dimensions(schema)

    def test_existing_declarations_untouched(self, schema):
        grown = add_fact_table(schema, self._psych())
        for fact in schema.fact_tables:
            assert grown.fact_table(fact.name) == fact

    def test_duplicate_name_is_refused(self, schema):
        with pytest.raises(SchemaChangeError, match="duplicate"):
            add_fact_table(schema, _fact("biological", "patient"))

    def test_dangling_reference_is_refused(self, schema):
        with pytest.raises(SchemaChangeError, match="dangling"):
            add_fact_table(schema, _fact("new-fact", "no-such-dimension"))

    def test_private_dimension_in_same_change_set(self, schema):
        private = _dim("questionnaire")
        fact = FactTable(
            name="survey",
            grain=(GrainEntry("patient", MEMBER_LEVEL), GrainEntry("questionnaire", MEMBER_LEVEL)),
            measures=(Measure("score", ValueKind.INTEGER, Aggregability.ADDITIVE),),
        )
        grown = add_fact_table(schema, fact, new_dimensions=[private])
        assert grown.has_dimension("questionnaire")
        assert validate_schema(grown).ok

    def test_classification_of_existing_facts_never_changes(self, schema):
        before = {f.name: classify_fact_table(schema, f.name) for f in schema.fact_tables}
        grown = add_fact_table(schema, self._psych())
        for name, classification in before.items():
            assert classify_fact_table(grown, name) == classification

    def test_random_schemas_keep_classifications_after_add(self):
        rng = random.Random(7)
        for _ in range(25):
            schema = random_schema(rng)
            fact = FactTable(
                name="added-later",
                grain=(GrainEntry(schema.dimensions[0].name, MEMBER_LEVEL),),
                measures=(Measure("m", ValueKind.DECIMAL, Aggregability.ADDITIVE),),
            )
            before = {f.name: classify_fact_table(schema, f.name) for f in schema.fact_tables}
            grown = add_fact_table(schema, fact)
            after = {name: classify_fact_table(grown, name) for name in before}
            assert before == after


class TestComplexGroups:
    def test_fixture_group_intersection_contains_the_bus(self, schema):
        group = schema.complex_group("cardio")
        grains = [set(schema.fact_table(f).grain_dimensions()) for f in group.member_facts()]
        intersection = set.intersection(*grains)
        assert {"patient", "data-provider", "time", "medical-analysis"} <= intersection

    def test_matching_dimensions_default_to_intersection(self, schema):
        group = ComplexFactGroup(name="g", central_fact="cardio-report", satellite_facts=("cardio-result",))
        assert group.matching_dimensions(schema) == {
            "patient",
            "data-provider",
            "time",
            "medical-analysis",
        }

    def test_fixture_group_declares_occurrence_dimensions(self, schema):
        group = schema.complex_group("cardio")
        assert group.matching_dimensions(schema) == {"patient", "data-provider", "time"}
        assert group.document_bridge == ("cardio-report", "many-to-many")
