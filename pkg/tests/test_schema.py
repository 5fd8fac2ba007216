"""Catalog shape, tenant key qualification, and row shape validation."""

import pytest

from eduwarehouse.errors import ValidationError
from eduwarehouse.schema import (
    RESERVED_ROLLUP_TEXT,
    TenantKey,
    builtin_schema,
    qualify_key,
    render_schema_reference,
    validate_row_shape,
)

DIMENSIONS = [
    "Universities", "Students", "Teachers", "Courses",
    "Departments", "Programs", "Times", "Regtypes",
]
FACTS = ["StudentPerformance", "TeachingQuality", "StudentCounts"]


def test_catalog_tables():
    schema = builtin_schema()
    assert sorted(schema.tables) == sorted(DIMENSIONS + FACTS)
    for name in DIMENSIONS:
        assert schema.tables[name].table_class == "dimension", name
    for name in FACTS:
        assert schema.tables[name].table_class == "fact", name


def test_snowflake_chain():
    # Courses is the one normalized dimension: it references Departments
    courses = builtin_schema().tables["Courses"]
    refs = [a for a in courses.attributes if a.referenced_table]
    assert [r.referenced_table for r in refs] == ["Departments"]


def test_qualify_key():
    assert qualify_key(TenantKey("university1"), "student1") == "university1_student1"


def test_tenant_key_rejects_bad_values():
    with pytest.raises(ValidationError):
        TenantKey("")
    with pytest.raises(ValidationError):
        TenantKey("has_separator")
    with pytest.raises(ValidationError):
        TenantKey("has,comma")


def test_dual_key_storage_layout():
    # every reference column is stored twice: raw value then qualified key
    perf = builtin_schema().tables["StudentPerformance"]
    cols = perf.storage_columns
    assert cols[0] == "university_key"
    for raw, qualified in [("course_code", "course_key"), ("time_code", "time_key"),
                           ("regtype_code", "regtype_key"), ("student_id", "student_key")]:
        assert cols.index(raw) + 1 == cols.index(qualified), (raw, qualified)


def test_upload_header_excludes_tenant_key():
    for name in DIMENSIONS + FACTS:
        table = builtin_schema().tables[name]
        assert "university_key" not in table.upload_columns, name


def test_validate_row_shape_accepts_valid_row():
    perf = builtin_schema().tables["StudentPerformance"]
    row = ["s1", "CS101", "2016-17-SPR", "FT", "78.5", "90", "A"]
    assert validate_row_shape(perf, row) is None


def test_validate_row_shape_arity():
    perf = builtin_schema().tables["StudentPerformance"]
    err = validate_row_shape(perf, ["s1", "CS101"])
    assert err is not None and err.reason.startswith("arity:")


@pytest.mark.parametrize("bad", ["abc", "nan", "inf", "-inf", "1e999", ""])
def test_validate_row_shape_numeric(bad):
    perf = builtin_schema().tables["StudentPerformance"]
    row = ["s1", "CS101", "2016-17-SPR", "FT", bad, "90", "A"]
    err = validate_row_shape(perf, row)
    assert err is not None and err.reason == "not-numeric:marks"


def test_validate_row_shape_integer_column():
    counts = builtin_schema().tables["StudentCounts"]
    assert validate_row_shape(counts, ["DEP01", "PRG01", "2016-17-SPR", "120"]) is None
    err = validate_row_shape(counts, ["DEP01", "PRG01", "2016-17-SPR", "120.5"])
    assert err is not None and err.reason == "not-numeric:head_count"


def test_validate_row_shape_reserved_rollup_text():
    # "ALL" is reserved for rolled-up cube cells, so key and code fields
    # may never carry it as data
    assert RESERVED_ROLLUP_TEXT == "ALL"
    perf = builtin_schema().tables["StudentPerformance"]
    err = validate_row_shape(perf, ["s1", "ALL", "2016-17-SPR", "FT", "78", "90", "A"])
    assert err is not None and err.reason == "reserved-value:course_code"
    # free-text name fields may contain it
    dept = builtin_schema().tables["Departments"]
    assert validate_row_shape(dept, ["DEP01", "ALL"]) is None


def test_schema_reference_covers_every_table():
    text = render_schema_reference(builtin_schema())
    for name in DIMENSIONS + FACTS:
        assert name in text, name
        assert builtin_schema().tables[name].upload_header in text, name
