"""Textual schema-definition language: lexer, LL(1) recursive-descent parser,
and the canonical serializer.

One ``.dws`` file holds one schema.  The grammar is block-structured::

    warehouse NAME [version N]

    dimension NAME {
      naturalkey ATTR...
      attribute NAME KIND          # kind: text integer decimal date timestamp
      outrigger ATTR...            # attributes normalized into outrigger tables
      hierarchy NAME {
        level NAME ATTR...         # finest level first
      }
    }

    fact NAME {
      grain DIMENSION LEVEL        # LEVEL: a hierarchy level or "member"
      measure NAME KIND [AGG]      # agg: additive semi-additive non-additive
    }

    group NAME {
      central FACT
      satellite FACT...
      shared DIMENSION...      # occurrence-matching dimensions (default: grain intersection)
    }

Identifiers are lower-case words with hyphens; ``#`` starts a comment.
Parsing never raises on malformed input: it returns diagnostics with 1-based
line/column positions instead.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from .model import (
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
    ValueKind,
    default_aggregability,
    validate_schema,
)

FILE_EXTENSION = ".dws"

_KEYWORDS = frozenset(
    {
        "warehouse",
        "version",
        "dimension",
        "attribute",
        "naturalkey",
        "outrigger",
        "hierarchy",
        "level",
        "fact",
        "grain",
        "measure",
        "group",
        "central",
        "satellite",
        "shared",
    }
)

_IDENT_RE = re.compile(r"^[a-z][a-z0-9]*(-[a-z0-9]+)*$")

_ATTRIBUTE_KINDS = {k.value: k for k in ValueKind if k is not ValueKind.DOCUMENT_REF}
_MEASURE_KINDS = {
    k.value: k
    for k in (ValueKind.DECIMAL, ValueKind.INTEGER, ValueKind.TEXT, ValueKind.DOCUMENT_REF)
}
_AGGREGABILITIES = {a.value: a for a in Aggregability}

_MAX_DIAGNOSTICS = 100


@dataclass(frozen=True, slots=True)
class SourceText:
    text: str
    origin: str = "<inline>"


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True, slots=True)
class ParseDiagnostic:
    severity: Severity
    line: int  # 1-based
    column: int  # 1-based
    message: str

    def __str__(self) -> str:  # "3:7: error: syntax error: ..."
        return f"{self.line}:{self.column}: {self.severity.value}: {self.message}"


# ---------------------------------------------------------------------------
# Lexer


class _T(Enum):
    KEYWORD = "keyword"
    IDENT = "ident"
    INT = "int"
    LBRACE = "lbrace"
    RBRACE = "rbrace"
    EOF = "eof"


@dataclass(frozen=True, slots=True)
class _Token:
    kind: _T
    value: str
    line: int
    column: int

    def describe(self) -> str:
        if self.kind is _T.EOF:
            return "end of input"
        return repr(self.value)


def _lex(text: str) -> tuple[list[_Token], list[ParseDiagnostic]]:
    tokens: list[_Token] = []
    diagnostics: list[ParseDiagnostic] = []
    line, col = 1, 1
    i, n = 0, len(text)

    def err(message: str, at_line: int, at_col: int) -> None:
        if len(diagnostics) < _MAX_DIAGNOSTICS:
            diagnostics.append(ParseDiagnostic(Severity.ERROR, at_line, at_col, message))

    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
        elif ch in " \t\r":
            i += 1
            col += 1
        elif ch == "#":
            while i < n and text[i] != "\n":
                i += 1
        elif ch == "{":
            tokens.append(_Token(_T.LBRACE, "{", line, col))
            i += 1
            col += 1
        elif ch == "}":
            tokens.append(_Token(_T.RBRACE, "}", line, col))
            i += 1
            col += 1
        elif ch.isascii() and (ch.islower() or ch.isdigit()):
            start, start_col = i, col
            while i < n and text[i].isascii() and (text[i].islower() or text[i].isdigit() or text[i] == "-"):
                i += 1
                col += 1
            word = text[start:i]
            if word.isdigit():
                tokens.append(_Token(_T.INT, word, line, start_col))
            elif word in _KEYWORDS:
                tokens.append(_Token(_T.KEYWORD, word, line, start_col))
            elif _IDENT_RE.match(word):
                tokens.append(_Token(_T.IDENT, word, line, start_col))
            else:
                err(f"lexical error: malformed identifier {word!r}", line, start_col)
        else:
            err(f"lexical error: unexpected character {ch!r}", line, col)
            i += 1
            col += 1
    tokens.append(_Token(_T.EOF, "", line, col))
    return tokens, diagnostics


# ---------------------------------------------------------------------------
# Parser


class _SyntaxError(Exception):
    def __init__(self, diagnostic: ParseDiagnostic) -> None:
        super().__init__(diagnostic.message)
        self.diagnostic = diagnostic


class _Parser:
    """Single-token-lookahead parser; one syntax diagnostic, then stop."""

    def __init__(self, tokens: list[_Token]) -> None:
        self.tokens = tokens
        self.pos = 0
        self.positions: dict[str, tuple[int, int]] = {}

    @property
    def cur(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.cur
        if tok.kind is not _T.EOF:
            self.pos += 1
        return tok

    def fail(self, message: str, tok: _Token | None = None) -> _SyntaxError:
        tok = tok or self.cur
        return _SyntaxError(
            ParseDiagnostic(Severity.ERROR, tok.line, tok.column, f"syntax error: {message}")
        )

    def at_keyword(self, *words: str) -> bool:
        return self.cur.kind is _T.KEYWORD and self.cur.value in words

    def expect_keyword(self, word: str) -> _Token:
        if not self.at_keyword(word):
            raise self.fail(f"expected {word!r}, found {self.cur.describe()}")
        return self.advance()

    def expect_ident(self, what: str) -> _Token:
        if self.cur.kind is not _T.IDENT:
            raise self.fail(f"expected {what}, found {self.cur.describe()}")
        return self.advance()

    def expect_lbrace(self) -> _Token:
        if self.cur.kind is not _T.LBRACE:
            raise self.fail(f"expected '{{', found {self.cur.describe()}")
        return self.advance()

    def expect_rbrace(self, opener: _Token, block: str) -> None:
        if self.cur.kind is _T.EOF:
            # Report the unclosed block where it was opened.
            raise self.fail(f"unclosed {block} block; expected '}}'", opener)
        if self.cur.kind is not _T.RBRACE:
            raise self.fail(f"expected '}}', found {self.cur.describe()}")
        self.advance()

    def ident_list(self, what: str) -> list[str]:
        names = [self.expect_ident(what).value]
        while self.cur.kind is _T.IDENT:
            names.append(self.advance().value)
        return names

    def note(self, location: str, tok: _Token) -> None:
        self.positions[location] = (tok.line, tok.column)

    # --- grammar productions -------------------------------------------

    def parse_schema(self) -> Schema:
        header = self.expect_keyword("warehouse")
        name = self.expect_ident("warehouse name").value
        version = 1
        if self.at_keyword("version"):
            self.advance()
            if self.cur.kind is not _T.INT:
                raise self.fail(f"expected version number, found {self.cur.describe()}")
            version = int(self.advance().value)
        self.note(f"schema {name}", header)

        dimensions: list[Dimension] = []
        facts: list[FactTable] = []
        groups: list[ComplexFactGroup] = []
        while self.cur.kind is not _T.EOF:
            if self.at_keyword("dimension"):
                dimensions.append(self.parse_dimension())
            elif self.at_keyword("fact"):
                facts.append(self.parse_fact())
            elif self.at_keyword("group"):
                groups.append(self.parse_group())
            else:
                raise self.fail(
                    f"expected 'dimension', 'fact' or 'group', found {self.cur.describe()}"
                )
        return Schema(
            name=name,
            dimensions=tuple(dimensions),
            fact_tables=tuple(facts),
            complex_groups=tuple(groups),
            version=version,
        )

    def parse_dimension(self) -> Dimension:
        kw = self.expect_keyword("dimension")
        name = self.expect_ident("dimension name").value
        self.note(f"dimension {name}", kw)
        opener = self.expect_lbrace()

        natural_key: list[str] = []
        attributes: list[Attribute] = []
        hierarchies: list[Hierarchy] = []
        outriggers: list[str] = []
        while True:
            if self.at_keyword("naturalkey"):
                tok = self.advance()
                parts = self.ident_list("natural key attribute")
                natural_key.extend(parts)
                for p in parts:
                    self.note(f"dimension {name}/naturalkey {p}", tok)
            elif self.at_keyword("attribute"):
                tok = self.advance()
                attr_name = self.expect_ident("attribute name").value
                kind_tok = self.expect_ident("attribute kind")
                kind = _ATTRIBUTE_KINDS.get(kind_tok.value)
                if kind is None:
                    raise self.fail(
                        f"unknown attribute kind {kind_tok.value!r} "
                        f"(expected one of {', '.join(sorted(_ATTRIBUTE_KINDS))})",
                        kind_tok,
                    )
                attributes.append(Attribute(attr_name, kind))
                self.note(f"dimension {name}/attribute {attr_name}", tok)
            elif self.at_keyword("outrigger"):
                tok = self.advance()
                marks = self.ident_list("outrigger attribute")
                outriggers.extend(marks)
                for m in marks:
                    self.note(f"dimension {name}/outrigger {m}", tok)
            elif self.at_keyword("hierarchy"):
                hierarchies.append(self.parse_hierarchy(name))
            else:
                break
        self.expect_rbrace(opener, f"dimension {name!r}")
        return Dimension(
            name=name,
            natural_key=tuple(natural_key),
            attributes=tuple(attributes),
            hierarchies=tuple(hierarchies),
            outriggers=frozenset(outriggers),
        )

    def parse_hierarchy(self, dim_name: str) -> Hierarchy:
        kw = self.expect_keyword("hierarchy")
        name = self.expect_ident("hierarchy name").value
        self.note(f"dimension {dim_name}/hierarchy {name}", kw)
        opener = self.expect_lbrace()
        levels: list[Level] = []
        while self.at_keyword("level"):
            tok = self.advance()
            level_name = self.expect_ident("level name").value
            bound = self.ident_list("bound attribute")
            levels.append(Level(level_name, tuple(bound)))
            self.note(f"dimension {dim_name}/hierarchy {name}/level {level_name}", tok)
        self.expect_rbrace(opener, f"hierarchy {name!r}")
        return Hierarchy(name, tuple(levels))

    def parse_fact(self) -> FactTable:
        kw = self.expect_keyword("fact")
        name = self.expect_ident("fact name").value
        self.note(f"fact {name}", kw)
        opener = self.expect_lbrace()
        grain: list[GrainEntry] = []
        measures: list[Measure] = []
        while True:
            if self.at_keyword("grain"):
                tok = self.advance()
                dim = self.expect_ident("grain dimension").value
                level = self.expect_ident("grain level").value
                grain.append(GrainEntry(dim, level))
                self.note(f"fact {name}/grain {dim}", tok)
            elif self.at_keyword("measure"):
                tok = self.advance()
                measure_name = self.expect_ident("measure name").value
                kind_tok = self.expect_ident("measure kind")
                kind = _MEASURE_KINDS.get(kind_tok.value)
                if kind is None:
                    raise self.fail(
                        f"unknown measure kind {kind_tok.value!r} "
                        f"(expected one of {', '.join(sorted(_MEASURE_KINDS))})",
                        kind_tok,
                    )
                agg = default_aggregability(kind)
                if self.cur.kind is _T.IDENT and self.cur.value in _AGGREGABILITIES:
                    agg = _AGGREGABILITIES[self.advance().value]
                measures.append(Measure(measure_name, kind, agg))
                self.note(f"fact {name}/measure {measure_name}", tok)
            else:
                break
        self.expect_rbrace(opener, f"fact {name!r}")
        return FactTable(name=name, grain=tuple(grain), measures=tuple(measures))

    def parse_group(self) -> ComplexFactGroup:
        kw = self.expect_keyword("group")
        name = self.expect_ident("group name").value
        self.note(f"group {name}", kw)
        opener = self.expect_lbrace()
        central = ""
        satellites: list[str] = []
        shared: list[str] = []
        while True:
            if self.at_keyword("central"):
                tok = self.advance()
                central = self.expect_ident("central fact name").value
                self.note(f"group {name}/{central}", tok)
            elif self.at_keyword("satellite"):
                tok = self.advance()
                names = self.ident_list("satellite fact name")
                satellites.extend(names)
                for s in names:
                    self.note(f"group {name}/{s}", tok)
            elif self.at_keyword("shared"):
                tok = self.advance()
                dims = self.ident_list("shared dimension name")
                shared.extend(dims)
                for d in dims:
                    self.note(f"group {name}/shared {d}", tok)
            else:
                break
        if not central:
            raise self.fail(f"group {name!r} declares no central fact", kw)
        self.expect_rbrace(opener, f"group {name!r}")
        return ComplexFactGroup(
            name=name,
            central_fact=central,
            satellite_facts=tuple(satellites),
            shared_dimensions=tuple(shared),
        )


_PREFIX_BY_RULE = {
    "duplicate-name": "duplicate declaration",
    "duplicate-attribute": "duplicate declaration",
    "duplicate-hierarchy": "duplicate declaration",
    "duplicate-level": "duplicate declaration",
    "duplicate-measure": "duplicate declaration",
    "dangling-dimension": "dangling reference",
    "natural-key-not-attribute": "dangling reference",
    "outrigger-not-attribute": "dangling reference",
    "level-unknown-attribute": "dangling reference",
    "grain-unknown-level": "dangling reference",
    "group-unknown-fact": "dangling reference",
    "group-unknown-dimension": "dangling reference",
}


def parse_schema(src: SourceText | str) -> Schema | list[ParseDiagnostic]:
    """Parse DSL text into a validated schema.

    Returns the schema on success; on any failure returns at least one error
    diagnostic with a 1-based source position.  Never raises on malformed
    input and always terminates.
    """
    if isinstance(src, str):
        src = SourceText(src)
    tokens, diagnostics = _lex(src.text)
    if diagnostics:
        return diagnostics

    parser = _Parser(tokens)
    try:
        schema = parser.parse_schema()
    except _SyntaxError as exc:
        return [exc.diagnostic]

    report = validate_schema(schema)
    if report.ok:
        return schema
    out: list[ParseDiagnostic] = []
    for violation in report.violations:
        prefix = _PREFIX_BY_RULE.get(violation.rule, "invalid declaration")
        line, column = parser.positions.get(violation.location, (1, 1))
        out.append(
            ParseDiagnostic(
                Severity.ERROR,
                line,
                column,
                f"{prefix}: {violation.message} (at {violation.location})",
            )
        )
    return out


# ---------------------------------------------------------------------------
# Serializer


def serialize_schema(schema: Schema) -> SourceText:
    """Canonical text form: dimensions, then facts, then groups, alphabetical
    within each kind, 2-space indentation, one declaration per line.

    Byte-deterministic for a given schema; ``parse_schema`` of the output
    yields a structurally equal schema.  Invalid schemas are refused.
    """
    report = validate_schema(schema)
    if not report.ok:
        raise InvalidSchema(report.violations)

    lines: list[str] = [f"warehouse {schema.name} version {schema.version}"]
    for dim in schema.dimensions:  # already name-sorted
        lines.append("")
        lines.append(f"dimension {dim.name} {{")
        lines.append(f"  naturalkey {' '.join(dim.natural_key)}")
        for attr in dim.attributes:
            lines.append(f"  attribute {attr.name} {attr.kind.value}")
        for mark in sorted(dim.outriggers):
            lines.append(f"  outrigger {mark}")
        for hier in dim.hierarchies:
            lines.append(f"  hierarchy {hier.name} {{")
            for lv in hier.levels:
                lines.append(f"    level {lv.name} {' '.join(lv.bound_attributes)}")
            lines.append("  }")
        lines.append("}")
    for fact in schema.fact_tables:
        lines.append("")
        lines.append(f"fact {fact.name} {{")
        for entry in fact.grain:
            lines.append(f"  grain {entry.dimension} {entry.level}")
        for m in fact.measures:
            lines.append(f"  measure {m.name} {m.kind.value} {m.aggregability.value}")
        lines.append("}")
    for group in schema.complex_groups:
        lines.append("")
        lines.append(f"group {group.name} {{")
        lines.append(f"  central {group.central_fact}")
        for sat in group.satellite_facts:
            lines.append(f"  satellite {sat}")
        if group.shared_dimensions:
            lines.append(f"  shared {' '.join(group.shared_dimensions)}")
        lines.append("}")
    return SourceText("\n".join(lines) + "\n", origin="<serialized>")
