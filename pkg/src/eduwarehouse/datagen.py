"""Deterministic synthetic uploads for benchmarks, demos, and fixtures.

All generation is seeded: identical arguments produce identical bytes, so
benchmark inputs are reproducible.  Fact rows reference a dimension universe
small enough that cube groups stay well populated; the universe can be
scaled up when a benchmark needs cubes of a given row count.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError
from .schema import TenantKey, WarehouseSchema, builtin_schema

TERMS = ("SPR", "AUT", "SUM")
GRADES = ("HD", "D", "C", "P", "F")

FACT_TABLES = ("StudentPerformance", "TeachingQuality", "StudentCounts")


def _derive_seed(*parts) -> int:
    key = ":".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


def _time_code(year: int, term: str) -> str:
    return f"{year}-{str(year + 1)[2:]}-{term}"


@dataclass(frozen=True)
class DimensionUniverse:
    """The value pools fact generators draw from."""

    courses: tuple[str, ...]
    departments: tuple[str, ...]
    programs: tuple[str, ...]
    times: tuple[tuple[str, int, str], ...]  # (time_code, year, term)
    regtypes: tuple[str, ...]
    n_students: int
    n_teachers: int

    @classmethod
    def default(cls) -> "DimensionUniverse":
        """Fixed small universe: every cube group sees many fact rows."""
        return cls.scaled(n_courses=40, n_years=4, n_regtypes=4,
                          n_departments=8, n_programs=6,
                          n_students=2000, n_teachers=100)

    @classmethod
    def scaled(
        cls,
        n_courses: int,
        n_years: int,
        n_regtypes: int,
        n_departments: int = 8,
        n_programs: int = 6,
        n_students: int = 2000,
        n_teachers: int = 100,
    ) -> "DimensionUniverse":
        if min(n_courses, n_years, n_regtypes, n_departments, n_programs) < 1:
            raise ValidationError("universe pools must be nonempty")
        times = tuple(
            (_time_code(year, term), year, term)
            for year in range(2014, 2014 + n_years)
            for term in TERMS
        )
        return cls(
            courses=tuple(f"C{i:04d}" for i in range(n_courses)),
            departments=tuple(f"DEP{i:02d}" for i in range(n_departments)),
            programs=tuple(f"PRG{i:02d}" for i in range(n_programs)),
            times=times,
            regtypes=tuple(f"R{i}" for i in range(n_regtypes)),
            n_students=n_students,
            n_teachers=n_teachers,
        )

    def dimension_upload(self, table: str, schema: WarehouseSchema | None = None) -> str:
        """Full CSV upload text (header included) for one dimension table."""
        schema = schema or builtin_schema()
        header = schema.tables[table].upload_header
        if table == "Courses":
            rows = [
                f"{code},Course {code},{self.departments[i % len(self.departments)]}"
                for i, code in enumerate(self.courses)
            ]
        elif table == "Departments":
            rows = [f"{code},Department {code}" for code in self.departments]
        elif table == "Programs":
            rows = [f"{code},Program {code}" for code in self.programs]
        elif table == "Times":
            rows = [f"{code},{year},{term}" for code, year, term in self.times]
        elif table == "Regtypes":
            rows = [f"{code},Regtype {code}" for code in self.regtypes]
        elif table == "Students":
            rows = [f"s{i},Student {i}" for i in range(self.n_students)]
        elif table == "Teachers":
            rows = [f"t{i},Teacher {i}" for i in range(self.n_teachers)]
        elif table == "Universities":
            raise ValidationError("Universities rows are tenant-specific; write them directly")
        else:
            raise ValidationError(f"not a dimension table: {table!r}")
        return "\n".join([header, *rows]) + "\n"


def _row_maker(table: str, universe: DimensionUniverse):
    courses, times, regtypes = universe.courses, universe.times, universe.regtypes
    if table == "StudentPerformance":
        def make(rng: random.Random) -> str:
            return (
                f"s{rng.randrange(universe.n_students)},{rng.choice(courses)},"
                f"{rng.choice(times)[0]},{rng.choice(regtypes)},"
                f"{rng.uniform(0, 100):.2f},{rng.uniform(40, 100):.2f},{rng.choice(GRADES)}"
            )
    elif table == "TeachingQuality":
        def make(rng: random.Random) -> str:
            return (
                f"t{rng.randrange(universe.n_teachers)},{rng.choice(courses)},"
                f"{rng.choice(times)[0]},{rng.uniform(1, 5):.2f}"
            )
    elif table == "StudentCounts":
        def make(rng: random.Random) -> str:
            return (
                f"{rng.choice(universe.departments)},{rng.choice(universe.programs)},"
                f"{rng.choice(times)[0]},{rng.randint(5, 500)}"
            )
    else:
        raise ValidationError(f"not a generated fact table: {table!r}")
    return make


def gen_dataset(
    path: Path | str,
    size: int,
    table: str,
    tenant: TenantKey,
    seed: int,
    universe: DimensionUniverse | None = None,
) -> Path:
    """Write a shape-valid fact upload of approximately ``size`` bytes.

    The file ends at the last whole row that fits, so its length lands
    within one row of the request.  Same arguments, same bytes.
    """
    universe = universe or DimensionUniverse.default()
    schema = builtin_schema()
    header = schema.tables[table].upload_header
    if size < len(header) + 1:
        raise ValidationError(f"size {size} smaller than the header line")
    make = _row_maker(table, universe)
    rng = random.Random(_derive_seed(seed, table, tenant.value, size))
    out = Path(path)
    written = 0
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(header + "\n")
        written = len(header) + 1
        while True:
            line = make(rng)
            if written + len(line) + 1 > size:
                break
            fh.write(line)
            fh.write("\n")
            written += len(line) + 1
    return out


def gen_dataset_rows(
    path: Path | str,
    n_rows: int,
    table: str,
    tenant: TenantKey,
    seed: int,
    universe: DimensionUniverse | None = None,
) -> Path:
    """Row-count variant of gen_dataset, for benchmarks that target cube
    row counts rather than byte sizes."""
    universe = universe or DimensionUniverse.default()
    header = builtin_schema().tables[table].upload_header
    make = _row_maker(table, universe)
    rng = random.Random(_derive_seed(seed, table, tenant.value, "rows", n_rows))
    out = Path(path)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(header + "\n")
        for _ in range(n_rows):
            fh.write(make(rng))
            fh.write("\n")
    return out
