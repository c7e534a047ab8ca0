from __future__ import annotations

import pytest

from cubehouse.etl import link_document, load_document, load_manifest
from cubehouse.model import Schema
from cubehouse.store import Catalog, open_catalog

from .support import FIXTURES, build_seeded_catalog, medical_schema as _medical_schema


@pytest.fixture(scope="session")
def schema() -> Schema:
    return _medical_schema()


@pytest.fixture(scope="session")
def loaded_catalog(tmp_path_factory, schema) -> Catalog:
    """Fixture manifest fully loaded, cardio reports linked to documents.

    Session-scoped and shared: tests that mutate build their own catalog.
    """
    root = tmp_path_factory.mktemp("fixture-catalog") / "cat"
    catalog = open_catalog(root, "read-write")
    load_manifest(FIXTURES / "sources.manifest", catalog, schema)
    reports = sorted(catalog.scan_facts("cardio-report"), key=lambda r: r.row_id)
    d1 = load_document(b"echo-series-1 (synthetic bytes)", "image/png", {"kind": "echocardiogram"}, catalog)
    d2 = load_document(b"echo-series-2 (synthetic bytes)", "image/png", {"kind": "echocardiogram"}, catalog)
    link_document(reports[0].row_id, d1, catalog)
    link_document(reports[0].row_id, d2, catalog)
    link_document(reports[1].row_id, d1, catalog)
    return catalog


@pytest.fixture(scope="session")
def seeded(tmp_path_factory):
    """(catalog, schema) with >=1000 biological facts over 10 patients x 90
    days at twice-daily sessions, plus the integer-measure psychology fact."""
    root = tmp_path_factory.mktemp("seeded-catalog") / "cat"
    return build_seeded_catalog(root)
