from __future__ import annotations

import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cubehouse.mapping import (
    MappingRuleError,
    MappingRules,
    NormalityFlag,
    ReferenceInterval,
    UnconvertibleUnit,
    UnmappedLabel,
    convert_unit,
    flag_normality,
    fold_label,
    load_intervals,
    load_metadata_dir,
    normalize_label,
    parse_context,
    select_interval,
)

from .support import FIXTURES

METADATA = FIXTURES / "metadata"


@pytest.fixture(scope="module")
def rules() -> MappingRules:
    rules, _ = load_metadata_dir(METADATA)
    return rules


@pytest.fixture(scope="module")
def intervals():
    _, intervals = load_metadata_dir(METADATA)
    return intervals


class TestNormalizeLabel:
    def test_accented_synonym(self, rules):
        assert normalize_label("Réticulocytes", rules) == "retic-count"

    def test_case_fold_and_whitespace_collapse(self, rules):
        assert normalize_label("  HGB  ", rules) == "hemoglobin"
        assert normalize_label("pulse   RATE", rules) == "pulse-rate"

    def test_unknown_label_carries_raw_text(self, rules):
        with pytest.raises(UnmappedLabel) as excinfo:
            normalize_label("???", rules)
        assert excinfo.value.raw == "???"

    def test_canonical_codes_normalize_to_themselves(self, rules):
        for code in rules.canonical_units:
            assert normalize_label(code, rules) == code
            assert normalize_label(normalize_label(code, rules), rules) == code

    def test_fold_label(self):
        assert fold_label(" HEMOGRAM ") == "hemogram"
        assert fold_label("a \t b") == "a b"


class TestConvertUnit:
    def test_declared_factor(self, rules):
        assert convert_unit(1.2, "g/dL", "hemoglobin", rules) == pytest.approx(12.0)

    def test_identity_when_unit_is_canonical(self, rules):
        assert convert_unit(37.5, "g/L", "hemoglobin", rules) == 37.5

    def test_missing_pair(self, rules):
        with pytest.raises(UnconvertibleUnit):
            convert_unit(1.0, "mmol/L", "hemoglobin", rules)

    def test_affine_offset_applies(self):
        rules = MappingRules(
            synonyms={"temp": "temperature"},
            unit_conversions={("degF", "degC"): (5 / 9, -160 / 9)},
            canonical_units={"temperature": "degC"},
        )
        assert convert_unit(98.6, "degF", "temperature", rules) == pytest.approx(37.0)

    def test_round_trip_through_declared_inverse(self, rules):
        for (a, b), (factor, offset) in rules.unit_conversions.items():
            inverse = rules.unit_conversions.get((b, a))
            if inverse is None:
                continue
            value = 123.456
            there = value * factor + offset
            back = there * inverse[0] + inverse[1]
            assert math.isclose(back, value, rel_tol=1e-9)

    def test_inconsistent_inverse_is_rejected(self):
        with pytest.raises(MappingRuleError, match="inverse"):
            MappingRules(
                synonyms={},
                unit_conversions={("a", "b"): (2.0, 0.0), ("b", "a"): (0.4, 0.0)},
                canonical_units={},
            )

    def test_identity_pair_must_be_one_zero(self):
        with pytest.raises(MappingRuleError, match="identity"):
            MappingRules(unit_conversions={("u", "u"): (2.0, 0.0)})

    def test_synonym_target_must_have_canonical_unit(self):
        with pytest.raises(MappingRuleError, match="canonical unit"):
            MappingRules(synonyms={"x": "ghost-code"})


class TestFlagNormality:
    def _interval(self, lower, upper, context=""):
        return ReferenceInterval("hemoglobin", lower, upper, parse_context(context))

    def test_value_at_lower_bound_is_normal(self):
        intervals = [self._interval(130, 170)]
        assert flag_normality(130.0, "hemoglobin", {}, intervals) is NormalityFlag.NORMAL
        assert flag_normality(170.0, "hemoglobin", {}, intervals) is NormalityFlag.NORMAL

    def test_above_and_below(self):
        intervals = [self._interval(130, 170)]
        assert flag_normality(171.0, "hemoglobin", {}, intervals) is NormalityFlag.ABOVE
        assert flag_normality(129.9, "hemoglobin", {}, intervals) is NormalityFlag.BELOW

    def test_no_interval_for_unknown_code(self, intervals):
        assert flag_normality(1.0, "weight", {"sex": "M"}, intervals) is NormalityFlag.NO_INTERVAL

    def test_context_match_beats_context_free(self, intervals):
        # 128 g/L: below the male range, inside the context-free fallback
        assert flag_normality(128.0, "hemoglobin", {"sex": "M"}, intervals) is NormalityFlag.BELOW
        assert flag_normality(128.0, "hemoglobin", {"sex": "F"}, intervals) is NormalityFlag.NORMAL
        # no sex attribute: only the context-free interval matches
        assert flag_normality(128.0, "hemoglobin", {}, intervals) is NormalityFlag.NORMAL

    def test_equally_specific_overlap_is_ambiguous(self):
        intervals = [self._interval(100, 150, "sex=M"), self._interval(120, 180, "sport=cycling")]
        attrs = {"sex": "M", "sport": "cycling"}
        selected, ambiguous = select_interval("hemoglobin", attrs, intervals)
        assert selected is None and ambiguous
        assert flag_normality(140.0, "hemoglobin", attrs, intervals) is NormalityFlag.NO_INTERVAL

    def test_ambiguity_matches_exhaustive_enumeration(self):
        # Oracle: enumerate every subset of matching intervals by specificity;
        # selection is defined iff the top-specificity stratum is a singleton.
        intervals = [
            self._interval(0, 10),
            self._interval(5, 15, "sex=M"),
            self._interval(8, 20, "sex=M and sport=cycling"),
            self._interval(9, 21, "sex=M and birth-year>=1980"),
        ]
        for attrs in (
            {},
            {"sex": "M"},
            {"sex": "M", "sport": "cycling"},
            {"sex": "M", "birth-year": 1984},
            {"sex": "M", "sport": "cycling", "birth-year": 1984},
        ):
            matching = [iv for iv in intervals if iv.matches(attrs)]
            expected_ambiguous = False
            expected = None
            if matching:
                best = max(iv.specificity for iv in matching)
                top = [iv for iv in matching if iv.specificity == best]
                expected_ambiguous = len(top) > 1
                expected = None if expected_ambiguous else top[0]
            actual, ambiguous = select_interval("hemoglobin", attrs, intervals)
            assert ambiguous == expected_ambiguous, attrs
            assert actual == expected, attrs

    def test_numeric_context_comparison(self):
        intervals = [self._interval(100, 150, "birth-year>=1985")]
        assert flag_normality(120.0, "hemoglobin", {"birth-year": 1990}, intervals) is NormalityFlag.NORMAL
        assert flag_normality(120.0, "hemoglobin", {"birth-year": 1980}, intervals) is NormalityFlag.NO_INTERVAL

    def test_lower_above_upper_is_rejected(self):
        with pytest.raises(MappingRuleError):
            ReferenceInterval("x", 10.0, 5.0)

    @given(st.lists(st.floats(min_value=-500, max_value=500, allow_nan=False), min_size=2, max_size=40))
    @settings(max_examples=100, deadline=None)
    def test_flags_are_monotone_in_value(self, values):
        intervals = [self._interval(100, 150)]
        order = {NormalityFlag.BELOW: 0, NormalityFlag.NORMAL: 1, NormalityFlag.ABOVE: 2}
        flags = [
            order[flag_normality(v, "hemoglobin", {}, intervals)] for v in sorted(values)
        ]
        assert flags == sorted(flags)


class TestLoaders:
    def test_fixture_metadata_loads(self, rules, intervals):
        assert rules.canonical_units["hemoglobin"] == "g/L"
        assert rules.nomenclature["hemoglobin"] == "SLBC-0101"
        assert any(iv.code == "hemoglobin" and iv.context for iv in intervals)

    def test_header_mismatch_is_rejected(self, tmp_path):
        bad = tmp_path / "intervals.csv"
        bad.write_text("code,min,max,ctx\nx,1,2,\n")
        with pytest.raises(MappingRuleError, match="header"):
            load_intervals(bad)

    def test_bad_number_is_rejected(self, tmp_path):
        bad = tmp_path / "intervals.csv"
        bad.write_text("code,lower,upper,context_expr\nx,low,2,\n")
        with pytest.raises(MappingRuleError):
            load_intervals(bad)

    def test_malformed_context_is_rejected(self):
        with pytest.raises(MappingRuleError, match="context"):
            parse_context("sex ~ F")
