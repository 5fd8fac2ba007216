"""Multi-tenant snowflake schema catalog for the academic data mart.

The shipped catalog has eight dimension tables and three fact tables covering
student performance, teaching quality, and student head counts.  Multi-tenancy
works by prefixing every dimension key and reference with the owning tenant's
university key ("university1" + "student1" -> "university1_student1"); every
fact table additionally carries the tenant key as its own column so OLAP
queries can filter a tenant's rows without string surgery.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ValidationError

# Joins tenant prefix to raw keys.  TenantKey forbids it so qualified keys
# split unambiguously at the first separator.
KEY_SEPARATOR = "_"

TENANT_KEY = "tenant-key"
DIMENSION_KEY = "dimension-key"
NATURAL_KEY = "natural-key"
REFERENCE = "reference"
CODE = "code"
MEASURE = "measure"
DESCRIPTIVE = "descriptive"

ATTRIBUTE_KINDS = frozenset(
    {TENANT_KEY, DIMENSION_KEY, NATURAL_KEY, REFERENCE, CODE, MEASURE, DESCRIPTIVE}
)

TEXT = "text"
INTEGER = "integer"
DECIMAL = "decimal"

VALUE_CLASSES = frozenset({TEXT, INTEGER, DECIMAL})

DIMENSION = "dimension"
FACT = "fact"


@dataclass(frozen=True)
class TenantKey:
    """University key of a registered tenant. Separator-free and non-empty."""

    value: str

    def __post_init__(self) -> None:
        if not self.value:
            raise ValidationError("tenant key must be non-empty")
        if KEY_SEPARATOR in self.value:
            raise ValidationError(
                f"tenant key {self.value!r} must not contain {KEY_SEPARATOR!r}"
            )
        if "," in self.value or "\n" in self.value or "\r" in self.value:
            raise ValidationError(
                f"tenant key {self.value!r} must not contain separators or newlines"
            )


def qualify_key(tenant: TenantKey, raw_key: str) -> str:
    """Prefix a tenant-provided key with the tenant's university key."""
    if not raw_key:
        raise ValidationError("raw key must be non-empty")
    return tenant.value + KEY_SEPARATOR + raw_key


@dataclass(frozen=True)
class AttributeDef:
    """One logical attribute of a table.

    A ``reference`` attribute names the dimension it points at and the column
    name used for the tenant-provided raw value (``raw_name``); storage keeps
    both the raw value and the qualified key side by side.
    """

    name: str
    kind: str
    value_class: str = TEXT
    referenced_table: str | None = None
    raw_name: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ATTRIBUTE_KINDS:
            raise ValidationError(f"unknown attribute kind {self.kind!r}")
        if self.value_class not in VALUE_CLASSES:
            raise ValidationError(f"unknown value class {self.value_class!r}")
        if self.kind == REFERENCE and (self.referenced_table is None or self.raw_name is None):
            raise ValidationError(
                f"reference attribute {self.name!r} needs referenced_table and raw_name"
            )


@dataclass(frozen=True)
class TableDef:
    """A dimension or fact table: logical attributes plus row identity.

    ``natural_key`` lists the storage columns that identify a logical row; the
    store's keep-latest deduplication uses it.  For dimensions this is the
    qualified dimension key (tenant-scoped by construction), for facts the
    tenant key plus every reference key.
    """

    name: str
    table_class: str
    attributes: tuple[AttributeDef, ...]
    natural_key: tuple[str, ...]

    def attribute(self, name: str) -> AttributeDef:
        for attr in self.attributes:
            if attr.name == name:
                return attr
        raise KeyError(name)

    def attrs_of_kind(self, kind: str) -> tuple[AttributeDef, ...]:
        return tuple(a for a in self.attributes if a.kind == kind)

    @property
    def storage_columns(self) -> tuple[str, ...]:
        """Column layout of stored segment rows (references store raw + key)."""
        cols: list[str] = []
        for attr in self.attributes:
            if attr.kind == REFERENCE:
                cols.append(attr.raw_name)  # type: ignore[arg-type]
            cols.append(attr.name)
        return tuple(cols)

    @property
    def upload_columns(self) -> tuple[str, ...]:
        """Canonical CSV upload header: what tenants actually provide."""
        cols: list[str] = []
        for attr in self.attributes:
            if attr.kind in (TENANT_KEY, DIMENSION_KEY):
                continue  # generated during transform
            cols.append(attr.raw_name if attr.kind == REFERENCE else attr.name)
        return tuple(cols)

    @property
    def upload_header(self) -> str:
        return ",".join(self.upload_columns)

    def storage_index(self, column: str) -> int:
        return self.storage_columns.index(column)


@dataclass(frozen=True)
class ShapeError:
    """Why a CSV row failed structural validation."""

    reason: str
    field_index: int | None = None
    field_name: str | None = None


def _parses(value: str, value_class: str) -> bool:
    if value_class == TEXT:
        return True
    try:
        if value_class == INTEGER:
            int(value)
        else:
            parsed = float(value)
            if parsed != parsed or parsed in (float("inf"), float("-inf")):
                return False
    except ValueError:
        return False
    return True


RESERVED_ROLLUP_TEXT = "ALL"


def validate_row_shape(table: TableDef, raw_fields: list[str]) -> ShapeError | None:
    """Check one upload row against the table's canonical format.

    Returns None when the row conforms: field count matches the upload header
    and every field parses under its attribute's value class.  Numeric fields
    (measures, integer codes) must be non-empty; text fields may be empty,
    which encodes an absent value.  Key and code fields must not be the
    literal "ALL", which report rendering reserves for rolled-up cells.
    """
    columns = table.upload_columns
    if len(raw_fields) != len(columns):
        return ShapeError(reason=f"arity: expected {len(columns)} fields, found {len(raw_fields)}")
    idx = 0
    for attr in table.attributes:
        if attr.kind in (TENANT_KEY, DIMENSION_KEY):
            continue
        if attr.value_class != TEXT and not _parses(raw_fields[idx], attr.value_class):
            return ShapeError(
                reason=f"not-numeric:{columns[idx]}", field_index=idx, field_name=columns[idx]
            )
        if (
            attr.kind in (NATURAL_KEY, REFERENCE, CODE)
            and raw_fields[idx] == RESERVED_ROLLUP_TEXT
        ):
            return ShapeError(
                reason=f"reserved-value:{columns[idx]}", field_index=idx, field_name=columns[idx]
            )
        idx += 1
    return None


@dataclass(frozen=True)
class WarehouseSchema:
    """Immutable catalog of dimension and fact tables."""

    tables: dict[str, TableDef] = field(default_factory=dict)
    version: int = 1

    def dimensions(self) -> tuple[TableDef, ...]:
        return tuple(t for t in self.tables.values() if t.table_class == DIMENSION)

    def facts(self) -> tuple[TableDef, ...]:
        return tuple(t for t in self.tables.values() if t.table_class == FACT)

    def validate(self) -> None:
        """Raise ValidationError unless the structural invariants hold."""
        for table in self.tables.values():
            for attr in table.attrs_of_kind(REFERENCE):
                target = self.tables.get(attr.referenced_table or "")
                if target is None or target.table_class != DIMENSION:
                    raise ValidationError(
                        f"{table.name}.{attr.name} references missing dimension "
                        f"{attr.referenced_table!r}"
                    )
            for col in table.natural_key:
                if col not in table.storage_columns:
                    raise ValidationError(f"{table.name}: natural key column {col!r} unknown")
            if table.table_class == DIMENSION:
                if len(table.attrs_of_kind(DIMENSION_KEY)) != 1:
                    raise ValidationError(f"{table.name}: dimensions need exactly one dimension key")
                if len(table.attrs_of_kind(NATURAL_KEY)) != 1:
                    raise ValidationError(f"{table.name}: dimensions need exactly one natural key")
                if table.attrs_of_kind(TENANT_KEY):
                    raise ValidationError(f"{table.name}: dimensions carry no tenant key column")
            else:
                if len(table.attrs_of_kind(TENANT_KEY)) != 1:
                    raise ValidationError(f"{table.name}: facts need exactly one tenant key")
                if not table.attrs_of_kind(REFERENCE) or not table.attrs_of_kind(MEASURE):
                    raise ValidationError(
                        f"{table.name}: facts need at least one reference and one measure"
                    )
        self._check_acyclic()

    def _check_acyclic(self) -> None:
        # Dimension-to-dimension edges only; facts may not be referenced at all.
        edges = {
            t.name: [a.referenced_table for a in t.attrs_of_kind(REFERENCE)]
            for t in self.tables.values()
        }
        state: dict[str, int] = {}

        def visit(node: str) -> None:
            if state.get(node) == 1:
                raise ValidationError(f"reference cycle through {node}")
            if state.get(node) == 2:
                return
            state[node] = 1
            for nxt in edges.get(node, []):
                if nxt is not None:
                    visit(nxt)
            state[node] = 2

        for name in edges:
            visit(name)


def _dim(name: str, key: str, natural: str, *extra: AttributeDef) -> TableDef:
    attrs = (
        AttributeDef(key, DIMENSION_KEY),
        AttributeDef(natural, NATURAL_KEY),
        *extra,
    )
    return TableDef(name, DIMENSION, attrs, natural_key=(key,))


def _ref(name: str, table: str, raw: str) -> AttributeDef:
    return AttributeDef(name, REFERENCE, referenced_table=table, raw_name=raw)


def builtin_schema() -> WarehouseSchema:
    """The fixed shipped catalog: 8 dimensions, 3 facts, Courses->Departments
    as the single snowflaked chain."""
    tables = [
        _dim("Universities", "university_dim_key", "university_code",
             AttributeDef("university_name", DESCRIPTIVE)),
        _dim("Students", "student_key", "student_id",
             AttributeDef("student_name", DESCRIPTIVE)),
        _dim("Teachers", "teacher_key", "teacher_id",
             AttributeDef("teacher_name", DESCRIPTIVE)),
        _dim("Courses", "course_key", "course_code",
             AttributeDef("course_name", DESCRIPTIVE),
             _ref("department_key", "Departments", "department_code")),
        _dim("Departments", "department_key", "department_code",
             AttributeDef("department_name", DESCRIPTIVE)),
        _dim("Programs", "program_key", "program_code",
             AttributeDef("program_name", DESCRIPTIVE)),
        _dim("Times", "time_key", "time_code",
             AttributeDef("year", CODE, INTEGER),
             AttributeDef("term", CODE)),
        _dim("Regtypes", "regtype_key", "regtype_code",
             AttributeDef("regtype_name", DESCRIPTIVE)),
        TableDef(
            "StudentPerformance", FACT,
            (
                AttributeDef("university_key", TENANT_KEY),
                _ref("student_key", "Students", "student_id"),
                _ref("course_key", "Courses", "course_code"),
                _ref("time_key", "Times", "time_code"),
                _ref("regtype_key", "Regtypes", "regtype_code"),
                AttributeDef("marks", MEASURE, DECIMAL),
                AttributeDef("percent_attended", MEASURE, DECIMAL),
                AttributeDef("grade", CODE),
            ),
            natural_key=("university_key", "student_key", "course_key", "time_key", "regtype_key"),
        ),
        TableDef(
            "TeachingQuality", FACT,
            (
                AttributeDef("university_key", TENANT_KEY),
                _ref("teacher_key", "Teachers", "teacher_id"),
                _ref("course_key", "Courses", "course_code"),
                _ref("time_key", "Times", "time_code"),
                AttributeDef("rating", MEASURE, DECIMAL),
            ),
            natural_key=("university_key", "teacher_key", "course_key", "time_key"),
        ),
        TableDef(
            "StudentCounts", FACT,
            (
                AttributeDef("university_key", TENANT_KEY),
                _ref("department_key", "Departments", "department_code"),
                _ref("program_key", "Programs", "program_code"),
                _ref("time_key", "Times", "time_code"),
                AttributeDef("head_count", MEASURE, INTEGER),
            ),
            natural_key=("university_key", "department_key", "program_key", "time_key"),
        ),
    ]
    schema = WarehouseSchema(tables={t.name: t for t in tables}, version=1)
    schema.validate()
    assert len(schema.dimensions()) == 8 and len(schema.facts()) == 3
    return schema


def render_schema_reference(schema: WarehouseSchema) -> str:
    """Human-readable reference: attributes, upload header, and row identity
    for every table in the catalog."""
    lines = ["# Warehouse schema reference", ""]
    for table in schema.tables.values():
        lines.append(f"## {table.name} ({table.table_class})")
        lines.append("")
        lines.append("| attribute | kind | value class | references |")
        lines.append("|---|---|---|---|")
        for attr in table.attributes:
            ref = attr.referenced_table or ""
            lines.append(f"| {attr.name} | {attr.kind} | {attr.value_class} | {ref} |")
        lines.append("")
        lines.append(f"Upload CSV header: `{table.upload_header}`")
        lines.append("")
        lines.append(f"Row identity (keep-latest dedupe): `{', '.join(table.natural_key)}`")
        lines.append("")
    return "\n".join(lines)
