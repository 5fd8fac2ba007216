"""Parallel CSV ingestion: extract, transform, load, and the split planner.

An upload is partitioned into record-aligned byte ranges; independent workers
parse, validate and tenant-qualify each range and write per-split intermediate
files.  The load step concatenates them into one staged file and commits it,
or aborts the whole batch with a line-numbered error report if any split saw
any error.

Timing model: the pipeline emulates a cluster that has one node per split.
Each worker measures its own busy time (queue wait excluded).  Two phases are
parallel: extract/transform over the splits, then the stitch that copies each
part into the staged file (on a cluster every part lands in its own byte
range concurrently; a distributed filesystem merge is metadata-only).
``effective_time`` is planning + the longest extract busy time + the longest
stitch busy time + the serial coordinator tail (renumbering, commit), i.e.
the wall clock the run would have with every split on its own node; on a
machine with that many free cores it coincides with the physical wall clock,
which is also reported as ``wall_time``.  ``cumulative_time`` is the sum of
all worker busy times across both phases.
"""

from __future__ import annotations

import logging
import os
import time
import uuid
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from operator import itemgetter
from pathlib import Path

from .errors import ValidationError
from .schema import (
    CODE,
    DIMENSION_KEY,
    NATURAL_KEY,
    REFERENCE,
    RESERVED_ROLLUP_TEXT,
    TENANT_KEY,
    TEXT,
    INTEGER,
    KEY_SEPARATOR,
    TableDef,
    TenantKey,
)
from .store import Segment, SegmentStore

logger = logging.getLogger(__name__)

CASE1 = "case1"
CASE2 = "case2"
MODES = (CASE1, CASE2)

_CHUNK = 1 << 16


@dataclass(frozen=True)
class SplitConfig:
    """Split sizing parameters, all in bytes."""

    s_min: int
    s_max: int
    s_b: int

    def __post_init__(self) -> None:
        if min(self.s_min, self.s_max, self.s_b) <= 0:
            raise ValidationError("split sizes must be strictly positive")
        if self.s_min > self.s_max:
            raise ValidationError("s_min must not exceed s_max")


def split_size(cfg: SplitConfig) -> int:
    """Effective split size: max(s_min, min(s_max, s_b))."""
    return max(cfg.s_min, min(cfg.s_max, cfg.s_b))


def mapper_count(s_ip: int, s_split: int) -> int:
    """Workers needed for an input of s_ip bytes: ceil(s_ip / s_split)."""
    if s_ip <= 0 or s_split <= 0:
        raise ValidationError("sizes must be positive")
    return -(-s_ip // s_split)


@dataclass(frozen=True)
class SplitRange:
    """One record-aligned byte range of an input file."""

    path: str
    offset: int
    length: int
    index: int


@dataclass(frozen=True)
class SplitPlan:
    path: str
    s_ip: int
    s_split: int
    splits: tuple[SplitRange, ...]

    @property
    def n_m(self) -> int:
        return len(self.splits)


def _align_forward(fh, nominal: int, size: int) -> int:
    """Smallest position >= nominal that sits immediately after a LF."""
    fh.seek(nominal - 1)
    if fh.read(1) == b"\n":
        return nominal
    pos = nominal
    while pos < size:
        chunk = fh.read(_CHUNK)
        if not chunk:
            break
        hit = chunk.find(b"\n")
        if hit >= 0:
            return pos + hit + 1
        pos += len(chunk)
    return size


def plan_splits(file: Path | str, cfg: SplitConfig, mode: str) -> SplitPlan:
    """Partition a file into record-aligned splits.

    case1 fixes the split size at half the input so two workers handle any
    file; case2 uses the configured split size, so the worker count grows
    with the input.  Nominal boundaries move forward to the next line start;
    a boundary swallowed by a long record merges its split into the previous
    one (logged, not an error).
    """
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}")
    path = str(file)
    s_ip = os.path.getsize(path)
    if s_ip == 0:
        raise ValidationError(f"input file {path} is empty")
    s_split = (s_ip + 1) // 2 if mode == CASE1 else split_size(cfg)
    boundaries = [0]
    with open(path, "rb") as fh:
        for nominal in range(s_split, s_ip, s_split):
            aligned = _align_forward(fh, nominal, s_ip)
            if boundaries[-1] < aligned < s_ip:
                boundaries.append(aligned)
    boundaries.append(s_ip)
    splits = tuple(
        SplitRange(path, start, end - start, i)
        for i, (start, end) in enumerate(zip(boundaries, boundaries[1:]))
    )
    expected = mapper_count(s_ip, s_split)
    if len(splits) != expected:
        logger.info(
            "%s: %d split(s) instead of %d (boundaries moved past record ends)",
            path, len(splits), expected,
        )
    return SplitPlan(path, s_ip, s_split, splits)


@dataclass(slots=True)
class Record:
    """One parsed CSV row; line_number is 1-based within the source file."""

    line_number: int
    fields: list[str]


@dataclass(frozen=True)
class EtlError:
    line_number: int
    tenant_key_value: str | None
    reason: str


@dataclass(frozen=True)
class EtlErrorReport:
    """All rejected lines of a batch, sorted by line number."""

    entries: tuple[EtlError, ...]

    def to_csv(self) -> str:
        lines = ["line_number,tenant_key_value,reason"]
        for e in self.entries:
            lines.append(f"{e.line_number},{e.tenant_key_value or ''},{e.reason}")
        return "\n".join(lines) + "\n"


@dataclass
class ExtractResult:
    """Parsed rows and errors of one split.

    Line numbers count from the split's first line; for the first split that
    is the global file numbering (header = line 1).  The pipeline offsets
    later splits by the preceding splits' line counts when merging.
    """

    records: list[Record]
    errors: list[EtlError]
    line_count: int


@lru_cache(maxsize=None)
def _shape_plan(table: TableDef):
    """Per-table compiled checks: arity, numeric fields, key indexes, and
    text key/code fields that must not carry the reserved roll-up text."""
    columns = table.upload_columns
    numeric = []
    keys = []
    reserved = []
    idx = 0
    for attr in table.attributes:
        if attr.kind in (TENANT_KEY, DIMENSION_KEY):
            continue
        if attr.value_class != TEXT:
            numeric.append((idx, attr.value_class == INTEGER, columns[idx]))
        elif attr.kind in (NATURAL_KEY, REFERENCE, CODE):
            reserved.append((idx, columns[idx]))
        if attr.kind in (NATURAL_KEY, REFERENCE):
            keys.append(idx)
        idx += 1
    return len(columns), tuple(numeric), tuple(keys), tuple(reserved)


# Transform instructions: how each storage column is produced from an upload
# row.  "copy" passes the field through, "qualify" prefixes it with the
# tenant key, "tenant" emits the tenant key itself.
_COPY, _QUALIFY, _TENANT = 0, 1, 2


@lru_cache(maxsize=None)
def _transform_plan(table: TableDef):
    """(ops, key checks) mapping upload fields to storage columns."""
    upload_idx = {c: i for i, c in enumerate(table.upload_columns)}
    ops: list[tuple[int, int]] = []
    key_checks: list[tuple[int, str]] = []
    natural = table.attrs_of_kind(NATURAL_KEY)
    for attr in table.attributes:
        if attr.kind == TENANT_KEY:
            ops.append((_TENANT, 0))
        elif attr.kind == DIMENSION_KEY:
            ops.append((_QUALIFY, upload_idx[natural[0].name]))
        elif attr.kind == NATURAL_KEY:
            ops.append((_COPY, upload_idx[attr.name]))
            key_checks.append((upload_idx[attr.name], attr.name))
        elif attr.kind == REFERENCE:
            raw = attr.raw_name or ""
            ops.append((_COPY, upload_idx[raw]))
            ops.append((_QUALIFY, upload_idx[raw]))
            key_checks.append((upload_idx[raw], raw))
        else:
            ops.append((_COPY, upload_idx[attr.name]))
    return tuple(ops), tuple(key_checks)


def _key_context(fields: list[str], key_idxs) -> str | None:
    for i in key_idxs:
        if i < len(fields) and fields[i]:
            return fields[i]
    return None


def _split_lines(split: SplitRange) -> tuple[list[str], EtlError | None]:
    with open(split.path, "rb") as fh:
        fh.seek(split.offset)
        data = fh.read(split.length)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        line = data.count(b"\n", 0, exc.start) + 1
        return [], EtlError(line, None, "encoding: not valid UTF-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines, None


def extract(split: SplitRange, table: TableDef, tenant: TenantKey) -> ExtractResult:
    """Parse and shape-validate one split independently of all others.

    The first split must begin with the table's canonical upload header; a
    mismatch is a whole-batch structural error.  Valid lines become records,
    invalid ones become report entries; both carry split-local line numbers
    (see ExtractResult).
    """
    arity, numeric, key_idxs, reserved = _shape_plan(table)
    lines, bad_encoding = _split_lines(split)
    if bad_encoding is not None:
        return ExtractResult([], [bad_encoding], len(lines))
    records: list[Record] = []
    errors: list[EtlError] = []
    start = 0
    if split.index == 0:
        if not lines:
            return ExtractResult([], [EtlError(1, None, "header-mismatch: empty upload")], 0)
        header = lines[0][:-1] if lines[0].endswith("\r") else lines[0]
        if header != table.upload_header:
            return ExtractResult(
                [],
                [EtlError(1, None, f"header-mismatch: expected {table.upload_header!r}")],
                len(lines),
            )
        start = 1
    line_no = start
    for raw in lines[start:]:
        line_no += 1
        fields = raw[:-1].split(",") if raw.endswith("\r") else raw.split(",")
        if len(fields) != arity:
            errors.append(
                EtlError(line_no, None, f"arity: expected {arity} fields, found {len(fields)}")
            )
            continue
        ok = True
        for idx, is_int, name in numeric:
            value = fields[idx]
            try:
                parsed = int(value) if is_int else float(value)
            except ValueError:
                ok = False
            else:
                if not is_int and parsed - parsed != 0.0:  # rejects nan and inf
                    ok = False
            if not ok:
                errors.append(
                    EtlError(line_no, _key_context(fields, key_idxs), f"not-numeric:{name}")
                )
                break
        if ok:
            for idx, name in reserved:
                if fields[idx] == RESERVED_ROLLUP_TEXT:
                    ok = False
                    errors.append(
                        EtlError(line_no, _key_context(fields, key_idxs), f"reserved-value:{name}")
                    )
                    break
        if ok:
            records.append(Record(line_no, fields))
    return ExtractResult(records, errors, line_no)


def transform(
    records: list[Record], table: TableDef, tenant: TenantKey
) -> tuple[list[Record], list[EtlError]]:
    """Qualify keys and references with the tenant prefix (dual-key storage).

    Every natural-key and reference attribute gains a qualified companion
    computed as tenant + separator + raw value, with the raw value retained
    beside it; the fact's tenant-key column is set from the session tenant.
    Measures and codes pass through untouched.  Rows with an empty key field
    become error entries instead of output records.
    """
    ops, key_checks = _transform_plan(table)
    prefix = tenant.value + KEY_SEPARATOR
    out: list[Record] = []
    errors: list[EtlError] = []
    tenant_value = tenant.value
    for rec in records:
        fields = rec.fields
        bad = None
        for idx, name in key_checks:
            if not fields[idx]:
                bad = name
                break
        if bad is not None:
            context = _key_context(fields, [i for i, _ in key_checks])
            errors.append(EtlError(rec.line_number, context, f"empty-key:{bad}"))
            continue
        out.append(
            Record(
                rec.line_number,
                [
                    tenant_value if op == _TENANT
                    else prefix + fields[arg] if op == _QUALIFY
                    else fields[arg]
                    for op, arg in ops
                ],
            )
        )
    return out, errors


def _row_renderer(table: TableDef, tenant: TenantKey):
    """Storage-row renderer compiled from the transform plan.

    Returns (fmt, getter) such that fmt % getter(fields) is the stored CSV
    line; a %-format plus one itemgetter keeps the per-row cost at C speed.
    """
    ops, _ = _transform_plan(table)
    prefix = tenant.value + KEY_SEPARATOR
    parts: list[str] = []
    idxs: list[int] = []
    for op, arg in ops:
        if op == _TENANT:
            parts.append(tenant.value.replace("%", "%%"))
        elif op == _QUALIFY:
            parts.append(prefix.replace("%", "%%") + "%s")
            idxs.append(arg)
        else:
            parts.append("%s")
            idxs.append(arg)
    fmt = ",".join(parts)
    if len(idxs) == 1:
        only = idxs[0]
        return fmt, lambda fields: (fields[only],)
    return fmt, itemgetter(*idxs)


@dataclass(frozen=True)
class _SplitOutcome:
    index: int
    out_path: str
    line_count: int
    record_count: int
    errors: tuple[EtlError, ...]
    busy: float


def _process_split(
    split: SplitRange, table: TableDef, tenant: TenantKey, out_path: str
) -> _SplitOutcome:
    """Worker body: extract + transform one split and write its intermediate
    file.  Busy time spans the whole body, queue wait excluded.

    This is a fused fast path over the same compiled plans extract() and
    transform() use; test suites assert it emits byte-identical output.
    """
    t0 = time.perf_counter()
    arity, numeric, key_idxs, reserved = _shape_plan(table)
    _, key_checks = _transform_plan(table)
    fmt, getter = _row_renderer(table, tenant)
    lines, bad_encoding = _split_lines(split)
    errors: list[EtlError] = []
    out_lines: list[str] = []
    start = 0
    line_no = 0
    if bad_encoding is not None:
        errors.append(bad_encoding)
        lines = []
    elif split.index == 0:
        if not lines:
            errors.append(EtlError(1, None, "header-mismatch: empty upload"))
        else:
            header = lines[0][:-1] if lines[0].endswith("\r") else lines[0]
            if header != table.upload_header:
                errors.append(
                    EtlError(1, None, f"header-mismatch: expected {table.upload_header!r}")
                )
                line_no = len(lines)
                lines = []
            else:
                start = 1
                line_no = 1
    for raw in lines[start:]:
        line_no += 1
        fields = raw[:-1].split(",") if raw.endswith("\r") else raw.split(",")
        if len(fields) != arity:
            errors.append(
                EtlError(line_no, None, f"arity: expected {arity} fields, found {len(fields)}")
            )
            continue
        bad_col = None
        for idx, is_int, name in numeric:
            value = fields[idx]
            try:
                parsed = int(value) if is_int else float(value)
            except ValueError:
                bad_col = f"not-numeric:{name}"
                break
            if not is_int and parsed - parsed != 0.0:
                bad_col = f"not-numeric:{name}"
                break
        if bad_col is None:
            for idx, name in reserved:
                if fields[idx] == RESERVED_ROLLUP_TEXT:
                    bad_col = f"reserved-value:{name}"
                    break
        if bad_col is None:
            for idx, name in key_checks:
                if not fields[idx]:
                    bad_col = f"empty-key:{name}"
                    break
        if bad_col is not None:
            errors.append(EtlError(line_no, _key_context(fields, key_idxs), bad_col))
            continue
        out_lines.append(fmt % getter(fields))
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        if out_lines:
            fh.write("\n".join(out_lines))
            fh.write("\n")
    busy = time.perf_counter() - t0
    return _SplitOutcome(
        split.index, out_path, line_no, len(out_lines), tuple(errors), busy
    )


@dataclass
class BatchResult:
    """Outcome and timings of one ETL run.

    ``rows_in`` counts data lines of the upload (header excluded); error
    report line numbers are physical file lines, so the first data row is
    line 2.
    """

    table: str
    mode: str
    segment: Segment | None
    report: EtlErrorReport | None
    rows_in: int
    rows_out: int
    n_m: int
    effective_time: float
    cumulative_time: float
    wall_time: float
    notes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def committed(self) -> bool:
        return self.segment is not None


def _stitch(parts: list[str], dest: str) -> list[float]:
    """Copy each part into its range of ``dest``; per-part busy times.

    Parts occupy disjoint byte ranges, so on a cluster these copies run
    concurrently (or collapse into a metadata-only merge); the returned
    per-part durations feed the parallel-phase timing model.
    """
    busy = []
    with open(dest, "wb") as out:
        for part in parts:
            t0 = time.perf_counter()
            with open(part, "rb") as src:
                size = os.fstat(src.fileno()).st_size
                done = 0
                while done < size:
                    done += os.copy_file_range(src.fileno(), out.fileno(), size - done)
            busy.append(time.perf_counter() - t0)
    return busy


class EtlPipeline:
    """Orchestrates plan -> parallel extract/transform -> all-or-nothing load."""

    def __init__(
        self,
        store: SegmentStore,
        split_cfg: SplitConfig,
        worker_pool_size: int | None = None,
    ):
        self.store = store
        self.split_cfg = split_cfg
        self.worker_pool_size = worker_pool_size or os.cpu_count() or 1

    def run(self, file: Path | str, table: str, tenant: TenantKey, mode: str = CASE2) -> BatchResult:
        """Ingest one upload file into ``table`` for ``tenant``.

        All splits are processed and all errors collected before deciding:
        any error rejects the whole batch and leaves the table untouched,
        otherwise the concatenated intermediate file is committed as one new
        segment.
        """
        table_def = self.store.schema.tables.get(table)
        if table_def is None:
            raise ValidationError(f"unknown table {table!r}")
        notes: list[str] = []
        t_start = time.perf_counter()
        plan = plan_splits(file, self.split_cfg, mode)
        t_planned = time.perf_counter()
        if mode == CASE1 and plan.n_m != 2:
            notes.append(f"case1 degenerated to {plan.n_m} split(s)")
        if plan.n_m > self.worker_pool_size:
            notes.append(f"n_m={plan.n_m} exceeds worker pool {self.worker_pool_size}")

        stem = uuid.uuid4().hex
        part_paths = [
            str(self.store.staging_path(f"{stem}.part{s.index}")) for s in plan.splits
        ]
        outcomes = self._run_splits(plan, table_def, tenant, part_paths)
        t_done = time.perf_counter()

        # Global line numbers: offset each split by its predecessors' counts.
        offsets = [0] * len(outcomes)
        running = 0
        for outcome in outcomes:
            offsets[outcome.index] = running
            running += outcome.line_count
        errors = [
            EtlError(e.line_number + offsets[o.index], e.tenant_key_value, e.reason)
            for o in outcomes
            for e in o.errors
        ]
        errors.sort(key=lambda e: e.line_number)
        rows_in = max(0, running - 1)  # header line is not a data row
        busy = [o.busy for o in outcomes]

        if errors:
            for path in part_paths:
                if os.path.exists(path):
                    os.unlink(path)
            t_end = time.perf_counter()
            return BatchResult(
                table, mode, None, EtlErrorReport(tuple(errors)),
                rows_in, 0, plan.n_m,
                effective_time=(t_planned - t_start) + max(busy) + (t_end - t_done),
                cumulative_time=sum(busy),
                wall_time=t_end - t_start,
                notes=tuple(notes),
            )

        rows_out = sum(o.record_count for o in outcomes)
        staged = str(self.store.staging_path(f"{stem}.staged"))
        if len(part_paths) == 1:
            os.replace(part_paths[0], staged)  # constant-time move, no stitch phase
            stitch_busy = [0.0]
        else:
            stitch_busy = _stitch(part_paths, staged)
            for path in part_paths:
                os.unlink(path)
        segment = self.store.commit_batch(table, staged, row_count=rows_out)
        t_end = time.perf_counter()
        # the coordinator tail is everything after extract minus the stitch
        # copies themselves, which are a parallel phase charged at their max
        tail = (t_end - t_done) - sum(stitch_busy)
        return BatchResult(
            table, mode, segment, None,
            rows_in, rows_out, plan.n_m,
            effective_time=(t_planned - t_start) + max(busy) + max(stitch_busy) + tail,
            cumulative_time=sum(busy) + sum(stitch_busy),
            wall_time=t_end - t_start,
            notes=tuple(notes),
        )

    def _run_splits(self, plan, table_def, tenant, part_paths) -> list[_SplitOutcome]:
        tasks = list(zip(plan.splits, part_paths))
        if self.worker_pool_size <= 1 or plan.n_m == 1:
            return [_process_split(s, table_def, tenant, p) for s, p in tasks]
        workers = min(self.worker_pool_size, plan.n_m)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_process_split, s, table_def, tenant, p) for s, p in tasks
            ]
            return [f.result() for f in futures]


def run_etl(
    file: Path | str,
    table: str,
    tenant: TenantKey,
    mode: str,
    cfg: SplitConfig,
    store: SegmentStore,
    worker_pool_size: int | None = None,
) -> BatchResult:
    """One-shot convenience wrapper around EtlPipeline.run."""
    return EtlPipeline(store, cfg, worker_pool_size).run(file, table, tenant, mode)
