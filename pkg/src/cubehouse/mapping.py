"""Harmonization metadata: label synonyms, affine unit conversions,
nomenclature codes, and reference intervals with normality flagging.

Source spreadsheets name the same analysis many ways and report values in
different units; these tables resolve both during ETL.  Reference intervals
drive the below/normal/above flag at query time and may be scoped by a
context predicate over patient attributes (``sex=F``, ``birth-year>=1985``).
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

logger = logging.getLogger(__name__)

_INVERSE_TOLERANCE = 1e-9

SYNONYMS_FILE = "synonyms.csv"
UNITS_FILE = "units.csv"
CANONICAL_UNITS_FILE = "canonical_units.csv"
INTERVALS_FILE = "intervals.csv"


class MappingError(Exception):
    """Base class for harmonization failures."""


class UnmappedLabel(MappingError):
    """No synonym entry for a raw label; the ETL routes the row to rejection."""

    def __init__(self, raw: str) -> None:
        super().__init__(f"unmapped label: {raw!r}")
        self.raw = raw


class UnconvertibleUnit(MappingError):
    def __init__(self, from_unit: str, to_unit: str, code: str) -> None:
        super().__init__(f"no conversion from {from_unit!r} to {to_unit!r} for {code!r}")
        self.from_unit = from_unit
        self.to_unit = to_unit
        self.code = code


class MappingRuleError(MappingError):
    """A mapping table violates its own consistency rules."""


def fold_label(raw: str) -> str:
    """Case-fold and collapse runs of whitespace; the synonym-table key form."""
    return re.sub(r"\s+", " ", raw.strip()).casefold()


@dataclass(frozen=True, slots=True)
class MappingRules:
    """Immutable harmonization tables, validated on construction.

    synonyms:        folded raw label -> canonical analysis code
    unit_conversions:(from_unit, to_unit) -> (factor, offset), value*factor+offset
    canonical_units: analysis code -> unit every stored value is expressed in
    nomenclature:    analysis code -> external nomenclature code
    """

    synonyms: Mapping[str, str] = field(default_factory=dict)
    unit_conversions: Mapping[tuple[str, str], tuple[float, float]] = field(default_factory=dict)
    canonical_units: Mapping[str, str] = field(default_factory=dict)
    nomenclature: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for raw, code in self.synonyms.items():
            if code not in self.canonical_units:
                raise MappingRuleError(
                    f"synonym {raw!r} targets {code!r}, which has no canonical unit"
                )
        for (a, b), (factor, offset) in self.unit_conversions.items():
            if a == b and (factor, offset) != (1.0, 0.0):
                raise MappingRuleError(f"identity conversion ({a!r},{b!r}) must be factor 1 offset 0")
            if factor == 0:
                continue
            inverse = self.unit_conversions.get((b, a))
            if inverse is None:
                continue
            inv_factor, inv_offset = inverse
            if (
                abs(inv_factor - 1.0 / factor) > _INVERSE_TOLERANCE * max(1.0, abs(inv_factor))
                or abs(inv_offset - (-offset / factor))
                > _INVERSE_TOLERANCE * max(1.0, abs(inv_offset))
            ):
                raise MappingRuleError(
                    f"conversions ({a!r},{b!r}) and ({b!r},{a!r}) are not mutual inverses"
                )


def normalize_label(raw: str, rules: MappingRules) -> str:
    """Resolve a raw source label to its canonical analysis code."""
    code = rules.synonyms.get(fold_label(raw))
    if code is None:
        raise UnmappedLabel(raw)
    return code


def convert_unit(value: float, from_unit: str, code: str, rules: MappingRules) -> float:
    """Convert ``value`` from ``from_unit`` into the canonical unit of ``code``."""
    canonical = rules.canonical_units.get(code)
    if canonical is None:
        raise UnconvertibleUnit(from_unit, "?", code)
    if from_unit == canonical:
        return value
    pair = rules.unit_conversions.get((from_unit, canonical))
    if pair is None:
        raise UnconvertibleUnit(from_unit, canonical, code)
    factor, offset = pair
    return value * factor + offset


# ---------------------------------------------------------------------------
# Reference intervals


class NormalityFlag(str, Enum):
    BELOW = "below"
    NORMAL = "normal"
    ABOVE = "above"
    NO_INTERVAL = "no-interval"


_CONTEXT_OPS = ("<=", ">=", "!=", "=", "<", ">")


@dataclass(frozen=True, slots=True)
class ContextTerm:
    attribute: str
    op: str
    literal: str

    def matches(self, attrs: Mapping[str, object]) -> bool:
        if self.attribute not in attrs:
            return False
        actual = attrs[self.attribute]
        literal: object = self.literal
        if isinstance(actual, (int, float)) and not isinstance(actual, bool):
            try:
                literal = float(self.literal)
            except ValueError:
                return False
            actual = float(actual)
        else:
            actual = str(actual)
        if self.op == "=":
            return actual == literal
        if self.op == "!=":
            return actual != literal
        if self.op == "<":
            return actual < literal  # type: ignore[operator]
        if self.op == "<=":
            return actual <= literal  # type: ignore[operator]
        if self.op == ">":
            return actual > literal  # type: ignore[operator]
        return actual >= literal  # type: ignore[operator]


def parse_context(expr: str) -> tuple[ContextTerm, ...]:
    """Parse ``attr=value and attr>=value ...``; empty text means no context."""
    expr = expr.strip()
    if not expr:
        return ()
    terms: list[ContextTerm] = []
    for part in expr.split(" and "):
        part = part.strip()
        for op in _CONTEXT_OPS:
            if op in part:
                attr, literal = part.split(op, 1)
                terms.append(ContextTerm(attr.strip(), op, literal.strip()))
                break
        else:
            raise MappingRuleError(f"malformed context term {part!r}")
    return tuple(terms)


@dataclass(frozen=True, slots=True)
class ReferenceInterval:
    """Inclusive normality range for one analysis, in canonical units."""

    code: str
    lower: float
    upper: float
    context: tuple[ContextTerm, ...] = ()

    def __post_init__(self) -> None:
        if self.lower > self.upper:
            raise MappingRuleError(
                f"interval for {self.code!r} has lower {self.lower} > upper {self.upper}"
            )

    @property
    def specificity(self) -> int:
        return len(self.context)

    def matches(self, attrs: Mapping[str, object]) -> bool:
        return all(term.matches(attrs) for term in self.context)


def select_interval(
    code: str,
    patient_attrs: Mapping[str, object],
    intervals: Sequence[ReferenceInterval],
) -> tuple[ReferenceInterval | None, bool]:
    """Most specific matching interval for ``code`` and the given patient.

    Returns (interval, ambiguous): a context match beats a context-free one;
    several equally specific matches are ambiguous and select nothing.
    """
    matching = [iv for iv in intervals if iv.code == code and iv.matches(patient_attrs)]
    if not matching:
        return None, False
    best = max(iv.specificity for iv in matching)
    top = [iv for iv in matching if iv.specificity == best]
    if len(top) > 1:
        return None, True
    return top[0], False


def flag_normality(
    value: float,
    code: str,
    patient_attrs: Mapping[str, object],
    intervals: Sequence[ReferenceInterval],
) -> NormalityFlag:
    """Flag a canonical-unit value against the applicable reference interval.

    Bounds are inclusive; no applicable interval (or an ambiguous tie between
    equally specific ones) yields ``no-interval``.
    """
    interval, ambiguous = select_interval(code, patient_attrs, intervals)
    if ambiguous:
        logger.warning(
            "ambiguous reference intervals for %r: several equally specific matches", code
        )
    if interval is None:
        return NormalityFlag.NO_INTERVAL
    if value < interval.lower:
        return NormalityFlag.BELOW
    if value > interval.upper:
        return NormalityFlag.ABOVE
    return NormalityFlag.NORMAL


# ---------------------------------------------------------------------------
# Delimited-file loaders


def _read_table(path: Path, expected_header: Sequence[str]) -> list[list[str]]:
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if not rows or [c.strip() for c in rows[0]] != list(expected_header):
        raise MappingRuleError(
            f"{path.name}: expected header {','.join(expected_header)!r}"
        )
    for row in rows[1:]:
        if len(row) < len(expected_header):
            raise MappingRuleError(f"{path.name}: short row {row!r}")
    return rows[1:]


def load_mapping_rules(
    synonyms_path: Path, units_path: Path, canonical_units_path: Path
) -> MappingRules:
    """Build MappingRules from the three delimited tables.

    Every canonical code also maps to itself as a synonym, so already-clean
    sources normalize unchanged.
    """
    canonical_units: dict[str, str] = {}
    nomenclature: dict[str, str] = {}
    for code, unit, nomencl in _read_table(
        canonical_units_path, ("code", "unit", "nomenclature_code")
    ):
        canonical_units[code.strip()] = unit.strip()
        if nomencl.strip():
            nomenclature[code.strip()] = nomencl.strip()

    synonyms: dict[str, str] = {fold_label(code): code for code in canonical_units}
    for raw_label, code in _read_table(synonyms_path, ("raw_label", "code")):
        synonyms[fold_label(raw_label)] = code.strip()

    conversions: dict[tuple[str, str], tuple[float, float]] = {}
    for from_unit, to_unit, factor, offset in _read_table(
        units_path, ("from_unit", "to_unit", "factor", "offset")
    ):
        try:
            conversions[(from_unit.strip(), to_unit.strip())] = (float(factor), float(offset))
        except ValueError as exc:
            raise MappingRuleError(f"units.csv: bad number in row for {from_unit!r}") from exc

    return MappingRules(
        synonyms=synonyms,
        unit_conversions=conversions,
        canonical_units=canonical_units,
        nomenclature=nomenclature,
    )


def load_intervals(path: Path) -> tuple[ReferenceInterval, ...]:
    intervals: list[ReferenceInterval] = []
    for code, lower, upper, context_expr in _read_table(
        path, ("code", "lower", "upper", "context_expr")
    ):
        try:
            intervals.append(
                ReferenceInterval(
                    code=code.strip(),
                    lower=float(lower),
                    upper=float(upper),
                    context=parse_context(context_expr),
                )
            )
        except ValueError as exc:
            raise MappingRuleError(f"{path.name}: bad bound in row for {code!r}") from exc
    return tuple(intervals)


def load_metadata_dir(directory: Path) -> tuple[MappingRules, tuple[ReferenceInterval, ...]]:
    """Load the four conventionally named tables from one directory."""
    rules = load_mapping_rules(
        directory / SYNONYMS_FILE,
        directory / UNITS_FILE,
        directory / CANONICAL_UNITS_FILE,
    )
    intervals_path = directory / INTERVALS_FILE
    intervals = load_intervals(intervals_path) if intervals_path.exists() else ()
    return rules, intervals
