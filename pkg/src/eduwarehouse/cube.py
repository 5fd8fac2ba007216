"""OLAP cube materialization with grouping_id bitmask semantics.

A cube precomputes, for every subset of its k grouping attributes, the
grouped averages of its measures.  Each cube row carries a grouping_id
bitmask telling which attributes are present (bit 1) versus rolled up
(bit 0); the most significant of the k bits corresponds to the last-listed
attribute.  Mandatory keys (the tenant key in all shipped cubes) are grouped
in every row and never rolled up.

Aggregates carry (sum, count) accumulators beside the mean so partial
aggregations merge associatively; built cubes are immutable and a rebuild
replaces the previous version atomically.
"""

from __future__ import annotations

import logging
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from itertools import islice

from .errors import StorageError, ValidationError
from .schema import DECIMAL, INTEGER, TEXT, TableDef
from .store import Segment, SegmentStore

logger = logging.getLogger(__name__)

MAX_CUBE_ATTRS = 62

AVG = "avg"

_PARTITION_CHUNK = 4096

_DIGITS = "0123456789abcdefghijklmnopqrstuvwxyz"


def grouping_id(cube_attrs, present) -> int:
    """Bitmask for one roll-up pattern.

    ``present[i]`` says whether the i-th listed attribute is grouped (True)
    or rolled up (False).  The bit for the j-th attribute (1-based listing
    order) has value 2^(j-1), so the most significant of the k bits belongs
    to the last-listed attribute.
    """
    attrs = tuple(cube_attrs)
    flags = tuple(bool(p) for p in present)
    if not attrs or len(attrs) != len(flags):
        raise ValidationError("present flags must match cube_attrs one to one")
    mask = 0
    for j, flag in enumerate(flags):
        if flag:
            mask |= 1 << j
    return mask


def presence_from_id(mask: int, k: int) -> tuple[bool, ...]:
    """Inverse of grouping_id: per-attribute presence flags in listing order."""
    if k < 1 or not 0 <= mask < (1 << k):
        raise ValidationError(f"mask {mask} out of range for k={k}")
    return tuple(bool(mask >> j & 1) for j in range(k))


def conv(value, from_base: int, to_base: int) -> str:
    """Re-express a digit string in another base (2..36, lowercase digits)."""
    if not (2 <= from_base <= 36 and 2 <= to_base <= 36):
        raise ValidationError("bases must be within 2..36")
    try:
        n = int(str(value).strip(), from_base)
    except ValueError:
        raise ValidationError(f"{value!r} is not a base-{from_base} number") from None
    if n == 0:
        return "0"
    sign = "-" if n < 0 else ""
    n = abs(n)
    digits = []
    while n:
        n, rem = divmod(n, to_base)
        digits.append(_DIGITS[rem])
    return sign + "".join(reversed(digits))


@dataclass(frozen=True)
class DimensionJoin:
    """Source a cube attribute from a dimension reached via a fact reference.

    ``reference`` is the fact's qualified reference attribute (e.g. time_key),
    ``attribute`` the dimension column that becomes the cube attribute value.
    """

    reference: str
    dimension: str
    attribute: str


@dataclass(frozen=True)
class AggregateSpec:
    name: str
    source: str
    function: str = AVG

    def __post_init__(self) -> None:
        if self.function != AVG:
            raise ValidationError(f"unsupported aggregate function {self.function!r}")


@dataclass(frozen=True)
class CubeSpec:
    """Definition of one materialized cube over a fact table."""

    name: str
    fact: str
    mandatory_keys: tuple[str, ...]
    cube_attrs: tuple[str, ...]
    aggregates: tuple[AggregateSpec, ...]
    dimension_joins: tuple[DimensionJoin, ...] = ()

    def __post_init__(self) -> None:
        if not self.name or "," in self.name or "/" in self.name:
            raise ValidationError(f"bad cube name {self.name!r}")
        if not self.cube_attrs:
            raise ValidationError("cube_attrs must be nonempty")
        if len(self.cube_attrs) > MAX_CUBE_ATTRS:
            raise ValidationError(f"at most {MAX_CUBE_ATTRS} cube attributes")
        if set(self.mandatory_keys) & set(self.cube_attrs):
            raise ValidationError("mandatory_keys and cube_attrs must be disjoint")
        if len(set(self.cube_attrs)) != len(self.cube_attrs):
            raise ValidationError("duplicate cube attribute")

    @property
    def k(self) -> int:
        return len(self.cube_attrs)

    @property
    def table_name(self) -> str:
        return f"cube_{self.name}"


@dataclass(frozen=True)
class CubeRow:
    """One materialized group: attrs[i] is None iff rolled up (bit i = 0)."""

    grouping_id: int
    mandatory: tuple[str, ...]
    attrs: tuple[str | None, ...]
    sums: tuple[float, ...]
    counts: tuple[int, ...]
    means: tuple[float, ...]
    support_count: int


def cube_columns(spec: CubeSpec) -> tuple[str, ...]:
    """Storage layout of cube_<name> segments.

    grouping_id (decimal text), mandatory keys, each cube attribute beside a
    0/1 presence flag, then sum/count/mean per aggregate, then support_count.
    """
    cols = ["grouping_id", *spec.mandatory_keys]
    for attr in spec.cube_attrs:
        cols.extend((attr, f"{attr}_set"))
    for agg in spec.aggregates:
        cols.extend((f"{agg.name}_sum", f"{agg.name}_count", f"{agg.name}_mean"))
    cols.append("support_count")
    return tuple(cols)


def parse_cube_row(spec: CubeSpec, fields: list[str]) -> CubeRow:
    """Decode one stored cube segment row."""
    k = spec.k
    n_mand = len(spec.mandatory_keys)
    mask = int(fields[0])
    mandatory = tuple(fields[1 : 1 + n_mand])
    attrs = []
    base = 1 + n_mand
    for i in range(k):
        value, flag = fields[base + 2 * i], fields[base + 2 * i + 1]
        attrs.append(value if flag == "1" else None)
    base += 2 * k
    sums, counts, means = [], [], []
    for i in range(len(spec.aggregates)):
        sums.append(float(fields[base + 3 * i]))
        counts.append(int(fields[base + 3 * i + 1]))
        means.append(float(fields[base + 3 * i + 2]))
    support = int(fields[base + 3 * len(spec.aggregates)])
    return CubeRow(mask, mandatory, tuple(attrs), tuple(sums), tuple(counts), tuple(means), support)


def merge_accumulators(a: list, b: list) -> list:
    """Combine two accumulator vectors [support, sum0, count0, sum1, ...].

    Elementwise addition, hence associative and commutative; partial
    aggregations over any partitioning merge to the same totals.
    """
    if len(a) != len(b):
        raise ValidationError("accumulator arity mismatch")
    return [x + y for x, y in zip(a, b)]


@dataclass(frozen=True)
class CubeBuildSummary:
    cube: str
    version: int
    rows_scanned: int
    rows_excluded: int
    cube_rows: int
    build_seconds: float
    cumulative_seconds: float
    fact_batches: tuple[int, ...]

    def to_report(self) -> str:
        lines = [
            f"cube: {self.cube}",
            f"version: {self.version}",
            f"rows_scanned: {self.rows_scanned}",
            f"rows_excluded: {self.rows_excluded}",
            f"cube_rows: {self.cube_rows}",
            f"build_seconds: {self.build_seconds:.3f}",
            f"cumulative_seconds: {self.cumulative_seconds:.3f}",
            f"fact_batches: {','.join(str(b) for b in self.fact_batches) or '-'}",
        ]
        return "\n".join(lines) + "\n"


@lru_cache(maxsize=None)
def _masked_indexes(k: int) -> tuple[tuple[int, ...], ...]:
    # for each mask, the listing positions of the present attributes
    return tuple(
        tuple(j for j in range(k) if mask >> j & 1) for mask in range(1 << k)
    )


class CubeEngine:
    """Builds cubes from deduped fact scans and persists them as segments.

    The fact scan is split into ``partitions`` consecutive partitions; each
    produces a partial accumulator map and a merge stage combines them
    (associative, so any partitioning yields the same totals).  The desk
    default is one partition.
    """

    def __init__(self, store: SegmentStore, partitions: int = 1):
        if partitions < 1:
            raise ValidationError("partitions must be >= 1")
        self.store = store
        self.partitions = partitions

    def _attr_sources(self, spec: CubeSpec, fact: TableDef):
        """Resolve each cube attribute to a fact column or a declared join."""
        joins = {j.attribute: j for j in spec.dimension_joins}
        fact_cols = fact.storage_columns
        sources = []
        for attr in spec.cube_attrs:
            if attr in joins:
                join = joins[attr]
                sources.append(("join", fact_cols.index(join.reference), join))
            elif attr in fact_cols:
                sources.append(("fact", fact_cols.index(attr), None))
            else:
                raise ValidationError(
                    f"cube attribute {attr!r} is neither a {spec.fact} column "
                    f"nor a declared dimension join"
                )
        return sources

    def _join_map(self, join: DimensionJoin, fact: TableDef) -> dict[str, str]:
        ref = fact.attribute(join.reference)
        if ref.referenced_table != join.dimension:
            raise ValidationError(
                f"{join.reference} references {ref.referenced_table}, not {join.dimension}"
            )
        dim = self.store.schema.tables.get(join.dimension)
        if dim is None:
            raise StorageError(f"dimension table {join.dimension!r} missing")
        key_idx = dim.storage_index(dim.natural_key[0])
        value_idx = dim.storage_index(join.attribute)
        return {row[key_idx]: row[value_idx] for row in self.store.scan(join.dimension)}

    def build(self, spec: CubeSpec) -> CubeBuildSummary:
        """Materialize all 2^k groupings of spec's fact into cube_<name>.

        Fact rows whose qualified references do not resolve to a dimension
        row (or whose measures fail to parse, which ETL should have made
        impossible) are excluded and counted, never errored.
        """
        t_start = time.perf_counter()
        fact = self.store.schema.tables.get(spec.fact)
        if fact is None:
            raise ValidationError(f"unknown fact table {spec.fact!r}")
        fact_cols = fact.storage_columns
        try:
            mand_idx = tuple(fact_cols.index(c) for c in spec.mandatory_keys)
        except ValueError as exc:
            raise ValidationError(f"mandatory key not on {spec.fact}: {exc}") from None
        sources = self._attr_sources(spec, fact)
        join_maps = {
            id(join): self._join_map(join, fact)
            for kind, _, join in sources
            if kind == "join"
        }
        agg_idx = []
        agg_is_int = []
        for agg in spec.aggregates:
            attr = fact.attribute(agg.source)
            if attr.value_class == TEXT:
                raise ValidationError(f"aggregate source {agg.source!r} is not numeric")
            agg_idx.append(fact.storage_index(agg.source))
            agg_is_int.append(attr.value_class == INTEGER)

        fact_batches = tuple(s.batch_id for s in self.store.segments(spec.fact))
        masks = _masked_indexes(spec.k)
        n_aggs = len(spec.aggregates)

        partials, rows_scanned, rows_excluded, busy = self._accumulate(
            spec, sources, join_maps, mand_idx, agg_idx, agg_is_int, masks, n_aggs
        )
        groups: dict = partials[0]
        for partial in partials[1:]:
            for key, acc in partial.items():
                mine = groups.get(key)
                if mine is None:
                    groups[key] = acc
                else:
                    groups[key] = merge_accumulators(mine, acc)

        segment = self._persist(spec, groups, n_aggs)
        build_seconds = time.perf_counter() - t_start
        summary = CubeBuildSummary(
            spec.name, segment.batch_id, rows_scanned, rows_excluded,
            len(groups), build_seconds, sum(busy), fact_batches,
        )
        logger.info(
            "built cube %s v%d: %d rows from %d facts (%d excluded) in %.2fs",
            spec.name, segment.batch_id, len(groups), rows_scanned, rows_excluded,
            build_seconds,
        )
        return summary

    def _accumulate(self, spec, sources, join_maps, mand_idx, agg_idx, agg_is_int, masks, n_aggs):
        """Deal the deduped fact stream round-robin to partition aggregators.

        Each partition owns a partial accumulator map; its busy time covers
        reading its share of the scan plus the aggregation work.
        """
        partials: list[dict] = [dict() for _ in range(self.partitions)]
        busy = [0.0] * self.partitions
        rows_scanned = 0
        rows_excluded = 0
        acc_len = 1 + 2 * n_aggs
        plain = [
            (idx, i) for i, (kind, idx, _) in enumerate(sources) if kind == "fact"
        ]
        joined = [
            (idx, i, join_maps[id(join)])
            for i, (kind, idx, join) in enumerate(sources)
            if kind == "join"
        ]
        k = spec.k
        attr_slots: list = [None] * k
        all_masks = range(1 << k)
        rows = iter(self.store.scan(spec.fact))
        chunk_no = 0
        while True:
            part = chunk_no % self.partitions
            groups = partials[part]
            t0 = time.perf_counter()
            chunk = list(islice(rows, _PARTITION_CHUNK))
            for fields in chunk:
                rows_scanned += 1
                mandatory = tuple(fields[i] for i in mand_idx)
                for idx, slot in plain:
                    attr_slots[slot] = fields[idx]
                resolved = True
                for idx, slot, mapping in joined:
                    value = mapping.get(fields[idx])
                    if value is None:
                        resolved = False
                        break
                    attr_slots[slot] = value
                if not resolved:
                    rows_excluded += 1
                    continue
                try:
                    measures = [
                        int(fields[i]) if is_int else float(fields[i])
                        for i, is_int in zip(agg_idx, agg_is_int)
                    ]
                except ValueError:
                    rows_excluded += 1
                    continue
                for mask in all_masks:
                    key = (mask, mandatory, tuple(attr_slots[j] for j in masks[mask]))
                    acc = groups.get(key)
                    if acc is None:
                        acc = [0] * acc_len
                        groups[key] = acc
                    acc[0] += 1
                    for a, m in enumerate(measures):
                        acc[1 + 2 * a] += m
                        acc[2 + 2 * a] += 1
            busy[part] += time.perf_counter() - t0
            chunk_no += 1
            if len(chunk) < _PARTITION_CHUNK:
                break
        return partials, rows_scanned, rows_excluded, busy

    def _persist(self, spec: CubeSpec, groups: dict, n_aggs: int) -> Segment:
        k = spec.k
        masks = _masked_indexes(k)
        stem = uuid.uuid4().hex
        staged = self.store.staging_path(f"{stem}.cube")
        with open(staged, "w", encoding="utf-8", newline="") as fh:
            for (mask, mandatory, present_vals), acc in groups.items():
                attr_cells = ["", "0"] * k
                for value, j in zip(present_vals, masks[mask]):
                    attr_cells[2 * j] = value
                    attr_cells[2 * j + 1] = "1"
                cells = [str(mask), *mandatory, *attr_cells]
                for a in range(n_aggs):
                    total, count = acc[1 + 2 * a], acc[2 + 2 * a]
                    cells.append(repr(total))
                    cells.append(str(count))
                    cells.append(repr(total / count))
                cells.append(str(acc[0]))
                fh.write(",".join(cells))
                fh.write("\n")
        segment = self.store.commit_batch(spec.table_name, staged, row_count=len(groups))
        for old in self.store.segments(spec.table_name):
            if old.batch_id != segment.batch_id:
                self.store.drop_batch(spec.table_name, old.batch_id)
        return segment

    def latest_segment(self, spec: CubeSpec) -> Segment | None:
        segments = self.store.segments(spec.table_name)
        return segments[-1] if segments else None


def latest_cube_segment(store: SegmentStore, spec: CubeSpec) -> Segment | None:
    """Newest committed version of a cube, or None when never built."""
    segments = store.segments(spec.table_name)
    return segments[-1] if segments else None


def builtin_cube_specs() -> dict[str, CubeSpec]:
    """The shipped cubes, one per data mart.

    cube_student_performance keeps the tenant key mandatory and cubes the
    three codes course/time/regtype (k=3), which is what the shipped report
    queries expect; attribute values come from dimension joins so facts with
    unresolved references are excluded rather than miscounted.
    """
    specs = [
        CubeSpec(
            name="student_performance",
            fact="StudentPerformance",
            mandatory_keys=("university_key",),
            cube_attrs=("course_code", "time_code", "regtype_code"),
            aggregates=(
                AggregateSpec("avg_marks", "marks"),
                AggregateSpec("avg_per_att", "percent_attended"),
            ),
            dimension_joins=(
                DimensionJoin("course_key", "Courses", "course_code"),
                DimensionJoin("time_key", "Times", "time_code"),
                DimensionJoin("regtype_key", "Regtypes", "regtype_code"),
            ),
        ),
        CubeSpec(
            name="teaching_quality",
            fact="TeachingQuality",
            mandatory_keys=("university_key",),
            cube_attrs=("course_code", "time_code"),
            aggregates=(AggregateSpec("avg_rating", "rating"),),
            dimension_joins=(
                DimensionJoin("course_key", "Courses", "course_code"),
                DimensionJoin("time_key", "Times", "time_code"),
            ),
        ),
        CubeSpec(
            name="student_counts",
            fact="StudentCounts",
            mandatory_keys=("university_key",),
            cube_attrs=("department_code", "program_code", "year"),
            aggregates=(AggregateSpec("avg_head_count", "head_count"),),
            dimension_joins=(
                DimensionJoin("department_key", "Departments", "department_code"),
                DimensionJoin("program_key", "Programs", "program_code"),
                DimensionJoin("time_key", "Times", "year"),
            ),
        ),
    ]
    return {spec.name: spec for spec in specs}


@dataclass(frozen=True)
class VisibilityLagSample:
    cube: str
    fact_batch: int
    lag_seconds: float


class CubeRefresher:
    """Rebuilds registered cubes at a fixed interval on a daemon thread.

    Each rebuild replaces the cube atomically (readers see the old version
    until the new segment commits); a failed rebuild leaves the previous
    version in place.  Records, per fact batch, how long it took until a
    cube containing that batch became visible.
    """

    def __init__(self, engine: CubeEngine, specs, interval: float):
        if interval <= 0:
            raise ValidationError("interval must be positive")
        self.engine = engine
        self.specs = list(specs)
        self.interval = interval
        self.lag_samples: deque[VisibilityLagSample] = deque(maxlen=256)
        self.last_summaries: dict[str, CubeBuildSummary] = {}
        self._covered: dict[str, set[int]] = {}
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def run_once(self) -> list[CubeBuildSummary]:
        summaries = []
        for spec in self.specs:
            batch_times = {
                s.batch_id: s.path.stat().st_ctime
                for s in self.engine.store.segments(spec.fact)
            }
            try:
                summary = self.engine.build(spec)
            except Exception:
                logger.exception("cube %s rebuild failed; previous version kept", spec.name)
                continue
            visible_at = time.time()
            covered = self._covered.setdefault(spec.name, set())
            for batch_id in summary.fact_batches:
                if batch_id in covered:
                    continue
                covered.add(batch_id)
                committed = batch_times.get(batch_id)
                if committed is not None:
                    self.lag_samples.append(
                        VisibilityLagSample(spec.name, batch_id, visible_at - committed)
                    )
            self.last_summaries[spec.name] = summary
            summaries.append(summary)
        return summaries

    def _loop(self) -> None:
        while not self._stop.wait(self.interval):
            try:
                self.run_once()
            except Exception:
                logger.exception("cube refresh pass failed")

    def start(self) -> "CubeRefresher":
        if self._thread is not None:
            return self
        self._stop.clear()
        self._thread = threading.Thread(target=self._loop, name="cube-refresher", daemon=True)
        self._thread.start()
        return self

    def stop(self, timeout: float = 5.0) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout)
            self._thread = None


def refresh_cubes(engine: CubeEngine, specs, interval: float) -> CubeRefresher:
    """Start periodic cube rebuilds; returns the running scheduler handle."""
    return CubeRefresher(engine, specs, interval).start()
