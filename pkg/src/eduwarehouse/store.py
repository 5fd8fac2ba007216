"""Directory-per-table segment store with atomic, constant-time batch commit.

Layout: ``<warehouse_root>/<table>/<batch_id>.seg``.  A segment is an
immutable, headerless CSV file (UTF-8, LF); committing one is a hard-link +
unlink of the staged file, so its cost does not depend on row count.
Duplicates are tolerated at rest and discarded at read time: with dedupe on,
the record from the highest batch id wins per natural key.
"""

from __future__ import annotations

import fcntl
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .errors import StorageError, ValidationError
from .schema import WarehouseSchema

logger = logging.getLogger(__name__)

SEGMENT_SUFFIX = ".seg"
STAGING_DIR = ".staging"
_LOCK_FILE = ".commit.lock"


class Segment:
    """One committed, immutable batch of rows for a table.

    ``row_count`` is known at commit time; segments rediscovered from disk
    count their rows lazily on first access, keeping directory listings
    free of per-row work.
    """

    __slots__ = ("table", "batch_id", "path", "_row_count")

    def __init__(self, table: str, batch_id: int, path: Path, row_count: int | None = None):
        self.table = table
        self.batch_id = batch_id
        self.path = path
        self._row_count = row_count

    @property
    def row_count(self) -> int:
        if self._row_count is None:
            self._row_count = count_rows(self.path)
        return self._row_count

    def __repr__(self) -> str:
        return f"Segment({self.table!r}, batch_id={self.batch_id})"


@dataclass(frozen=True)
class TableState:
    table: str
    segments: tuple[Segment, ...]

    @property
    def row_count(self) -> int:
        return sum(s.row_count for s in self.segments)


def count_rows(path: Path) -> int:
    """Count data rows (newline-terminated or trailing partial) in a file."""
    rows = 0
    last = b""
    with open(path, "rb") as fh:
        while chunk := fh.read(1 << 20):
            rows += chunk.count(b"\n")
            last = chunk
    if last and not last.endswith(b"\n"):
        rows += 1
    return rows


class SegmentStore:
    """File-backed table storage bound to a warehouse root and a schema."""

    def __init__(self, root: Path | str, schema: WarehouseSchema):
        self.root = Path(root)
        self.schema = schema
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / STAGING_DIR).mkdir(exist_ok=True)

    def table_dir(self, table: str) -> Path:
        path = self.root / table
        path.mkdir(exist_ok=True)
        return path

    def staging_path(self, name: str) -> Path:
        return self.root / STAGING_DIR / name

    @contextmanager
    def _commit_lock(self, table: str):
        lock_path = self.table_dir(table) / _LOCK_FILE
        with open(lock_path, "w") as fh:
            fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
            try:
                yield
            finally:
                fcntl.flock(fh.fileno(), fcntl.LOCK_UN)

    def segments(self, table: str) -> list[Segment]:
        seg_dir = self.root / table
        if not seg_dir.is_dir():
            return []
        found = [
            Segment(table, int(entry.stem), entry)
            for entry in seg_dir.iterdir()
            if entry.suffix == SEGMENT_SUFFIX
        ]
        return sorted(found, key=lambda s: s.batch_id)

    def table_state(self, table: str) -> TableState:
        return TableState(table, tuple(self.segments(table)))

    def next_batch_id(self, table: str) -> int:
        seg_dir = self.root / table
        if not seg_dir.is_dir():
            return 1
        ids = [int(e.stem) for e in seg_dir.iterdir() if e.suffix == SEGMENT_SUFFIX]
        return max(ids, default=0) + 1

    def commit_batch(self, table: str, staged_file: Path | str, row_count: int | None = None) -> Segment:
        """Atomically publish a staged file as the table's next segment.

        The staged file is hard-linked to ``<batch_id>.seg`` and then removed,
        a constant-time operation regardless of size.  ``row_count`` is
        caller-supplied metadata (the ETL pipeline knows it); when omitted the
        rows are counted here, which costs one pass over the file.  On any
        failure the table directory is unchanged and the staged file is kept
        for diagnosis.
        """
        staged = Path(staged_file)
        if not staged.is_file():
            raise StorageError(f"staged file {staged} does not exist")
        if row_count is None:
            row_count = count_rows(staged)
        with self._commit_lock(table):
            batch_id = self.next_batch_id(table)
            seg_dir = self.table_dir(table)
            while True:
                dest = seg_dir / f"{batch_id:06d}{SEGMENT_SUFFIX}"
                try:
                    os.link(staged, dest)
                    break
                except FileExistsError:
                    batch_id += 1
                except OSError as exc:
                    raise StorageError(
                        f"commit of {table} batch {batch_id} failed: {exc}; "
                        f"staged file kept at {staged}"
                    ) from exc
            os.unlink(staged)
        logger.debug("committed %s batch %d (%d rows)", table, batch_id, row_count)
        return Segment(table, batch_id, dest, row_count)

    def drop_batch(self, table: str, batch_id: int) -> None:
        path = self.root / table / f"{batch_id:06d}{SEGMENT_SUFFIX}"
        if not path.is_file():
            raise StorageError(f"{table} has no batch {batch_id}")
        path.unlink()

    def _natural_key_indexes(self, table: str) -> tuple[int, ...]:
        table_def = self.schema.tables.get(table)
        if table_def is None:
            raise ValidationError(
                f"table {table!r} is not in the catalog; scan it with dedupe off"
            )
        cols = table_def.storage_columns
        return tuple(cols.index(c) for c in table_def.natural_key)

    def scan(self, table: str, dedupe: bool = True) -> Iterator[list[str]]:
        """Stream stored rows as storage-ordered field lists.

        With dedupe on, rows sharing a natural key collapse to the one from
        the highest batch id.  Stream order is unspecified but deterministic
        for a fixed set of segments.
        """
        segments = self.segments(table)
        if not dedupe:
            for seg in segments:
                yield from self.read_segment(seg)
            return
        key_idx = self._natural_key_indexes(table)
        seen: set[tuple[str, ...]] = set()
        for seg in reversed(segments):
            for fields in self.read_segment(seg):
                key = tuple(fields[i] for i in key_idx)
                if key in seen:
                    continue
                seen.add(key)
                yield fields

    @staticmethod
    def read_segment(seg: Segment) -> Iterator[list[str]]:
        """Stream one segment's rows as field lists, no dedupe."""
        try:
            with open(seg.path, "r", encoding="utf-8", newline="") as fh:
                for line in fh:
                    yield line.rstrip("\n").split(",")
        except OSError as exc:
            raise StorageError(f"segment {seg.path} unreadable: {exc}") from exc
