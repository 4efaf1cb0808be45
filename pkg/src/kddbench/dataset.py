"""KDD Cup 99 schema, streaming record parser and label census."""

from __future__ import annotations

import csv
import gzip
import hashlib
import io
import logging
import math
import os
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

import numpy as np

from . import _parse
from .rng import fnv1a64

log = logging.getLogger(__name__)

N_FEATURES = 41
NUMERIC = "numeric"
NOMINAL = "nominal"
DEFAULT_CHUNK = 8 << 20
_LABEL_SLOTS = 8192

_NUMBER_RE = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")


class SchemaError(ValueError):
    """Schema file is malformed or violates the 41+1 column layout."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class RecordError(ValueError):
    """A corpus line could not be parsed."""

    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    domain: tuple[str, ...] = ()

    @property
    def bounds(self) -> tuple[float, float]:
        if self.kind != NUMERIC:
            return (-math.inf, math.inf)
        # Rates are fractions; every other KDD numeric is a count, byte total or duration.
        return (0.0, 1.0) if self.name.endswith("_rate") else (0.0, math.inf)


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple[Column, ...]

    def __post_init__(self):
        if len(self.columns) != N_FEATURES:
            raise SchemaError(f"expected {N_FEATURES} feature columns, got {len(self.columns)}")
        seen = set()
        for col in self.columns:
            if col.name in seen:
                raise SchemaError(f"duplicate column name {col.name!r}")
            seen.add(col.name)
            if col.kind == NOMINAL:
                if not col.domain:
                    raise SchemaError(f"nominal column {col.name!r} has an empty domain")
                if len(set(col.domain)) != len(col.domain):
                    raise SchemaError(f"nominal column {col.name!r} repeats a symbol")
                if len({fnv1a64(s) for s in col.domain}) != len(col.domain):
                    raise SchemaError(f"symbol hash collision in column {col.name!r}")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def nominal_index(self) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c.kind == NOMINAL]

    @property
    def numeric_index(self) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c.kind == NUMERIC]

    @property
    def cardinalities(self) -> np.ndarray:
        """Per column: 0 for numeric, len(domain) + 1 (UNSEEN slot) for nominal."""
        return np.array([len(c.domain) + 1 if c.kind == NOMINAL else 0 for c in self.columns])

    def unseen(self, column: int) -> int:
        return len(self.columns[column].domain)

    def to_text(self) -> str:
        lines = []
        for c in self.columns:
            lines.append(f"{c.name},{c.kind}" + (f",{';'.join(c.domain)}" if c.domain else ""))
        return "\n".join(lines) + "\n"

    @property
    def digest(self) -> bytes:
        return hashlib.sha256(self.to_text().encode("utf-8")).digest()


def parse_schema(text: str) -> FeatureSchema:
    columns = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) not in (2, 3) or not parts[0]:
            raise SchemaError(f"expected '<name>,<numeric|nominal>[,<symbols>]', got {raw!r}", lineno)
        name, kind = parts[0].strip(), parts[1].strip()
        if kind == NUMERIC:
            if len(parts) == 3:
                raise SchemaError(f"numeric column {name!r} cannot declare symbols", lineno)
            columns.append(Column(name, NUMERIC))
        elif kind == NOMINAL:
            if len(parts) != 3:
                raise SchemaError(f"nominal column {name!r} needs a symbol list", lineno)
            symbols = tuple(s.strip() for s in parts[2].split(";"))
            if any(not s for s in symbols):
                raise SchemaError(f"empty symbol in column {name!r}", lineno)
            columns.append(Column(name, NOMINAL, symbols))
        else:
            raise SchemaError(f"unknown column kind {kind!r}", lineno)
    return FeatureSchema(tuple(columns))


def load_schema(path: str | os.PathLike | None = None) -> FeatureSchema:
    """Load a schema file; ``None`` gives the shipped KDD Cup 99 layout."""
    if path is None:
        text = resources.files("kddbench").joinpath("data/kdd99.schema").read_text()
    else:
        text = Path(path).read_text()
    return parse_schema(text)


@dataclass(frozen=True)
class ConnectionRecord:
    numeric: tuple[float, ...]
    nominal: tuple[int, ...]
    label: str


@dataclass
class RecordBatch:
    """Columnar block of parsed records.

    ``values`` holds all 41 features in schema order; nominal columns carry
    their symbol index (UNSEEN = len(domain)) as a float.
    """

    values: np.ndarray
    labels: np.ndarray
    label_names: list[str]
    first_ordinal: int = 0

    def __len__(self) -> int:
        return len(self.labels)

    def label_array(self) -> np.ndarray:
        names = np.array(self.label_names, dtype=object)
        return names[self.labels] if len(self.labels) else np.array([], dtype=object)

    def records(self, schema: FeatureSchema) -> Iterator[ConnectionRecord]:
        num, nom = schema.numeric_index, schema.nominal_index
        nums = self.values[:, num].tolist()
        noms = self.values[:, nom].astype(np.int64).tolist()
        for a, b, lab in zip(nums, noms, self.labels.tolist()):
            yield ConnectionRecord(tuple(a), tuple(b), self.label_names[lab])


def _parse_number(token: str) -> float:
    if not _NUMBER_RE.fullmatch(token):
        raise ValueError(f"non-numeric value {token!r}")
    value = float(token)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {token!r}")
    return value


def parse_line(line: str, schema: FeatureSchema, lineno: int = 0) -> tuple[list[float], str]:
    """Reference parser for one line: (41 values in schema order, label).

    Also the slow path of the batch reader, so both routes agree by construction
    on anything the compiled scanner defers.
    """
    fields = line.rstrip("\r\n").split(",")
    if len(fields) != N_FEATURES + 1:
        raise RecordError(lineno, f"expected {N_FEATURES + 1} fields, got {len(fields)}")
    values: list[float] = []
    for col, token in zip(schema.columns, fields):
        if col.kind == NUMERIC:
            try:
                v = _parse_number(token)
            except ValueError as exc:
                raise RecordError(lineno, f"column {col.name}: {exc}") from None
            lo, hi = col.bounds
            if not lo <= v <= hi:
                raise RecordError(lineno, f"column {col.name}: {v} outside [{lo}, {hi}]")
            values.append(v)
        else:
            try:
                values.append(float(col.domain.index(token)))
            except ValueError:
                values.append(float(len(col.domain)))
    label = fields[-1]
    if label.endswith("."):
        label = label[:-1]
    if not label:
        raise RecordError(lineno, "empty label")
    return values, label


def format_record(record: ConnectionRecord, schema: FeatureSchema) -> str:
    """Render a record as a KDD text line (label gets the customary period)."""
    out = []
    num, nom = iter(record.numeric), iter(record.nominal)
    for col in schema.columns:
        if col.kind == NUMERIC:
            v = next(num)
            out.append(str(int(v)) if v.is_integer() and abs(v) < 2**53 else repr(v))
        else:
            k = next(nom)
            out.append(col.domain[k] if k < len(col.domain) else "?")
    out.append(record.label + ".")
    return ",".join(out)


def open_source(source: str | os.PathLike | BinaryIO | bytes) -> BinaryIO:
    """Binary stream over a path, bytes or file object; gzip is detected by magic."""
    if isinstance(source, (bytes, bytearray)):
        stream: BinaryIO = io.BytesIO(source)
    elif isinstance(source, (str, os.PathLike)):
        stream = open(source, "rb")
    else:
        stream = source
    if hasattr(stream, "peek"):
        head = stream.peek(2)[:2]
    elif stream.seekable():
        pos = stream.tell()
        head = stream.read(2)
        stream.seek(pos)
    else:
        data = stream.read()
        head, stream = data[:2], io.BytesIO(data)
    if head == b"\x1f\x8b":
        return gzip.GzipFile(fileobj=stream)
    return stream


_REASONS = {
    _parse.BAD_ARITY: "wrong field count",
    _parse.BAD_NUMBER: "non-numeric value",
    _parse.OUT_OF_RANGE: "value out of range",
    _parse.EMPTY_LABEL: "empty label",
}


@dataclass
class ParseStats:
    lines: int = 0
    records: int = 0
    bad_records: int = 0
    first_error: RecordError | None = None
    unseen: dict[str, int] = field(default_factory=dict)


class RecordReader:
    """Single-pass reader yielding :class:`RecordBatch` blocks in file order.

    ``errors="raise"`` aborts on the first bad line; ``"skip"`` drops it and
    counts it in ``stats``. Record ordinals count accepted records only.
    """

    def __init__(self, source, schema: FeatureSchema, errors: str = "raise",
                 chunk_size: int = DEFAULT_CHUNK):
        if errors not in ("raise", "skip"):
            raise ValueError("errors must be 'raise' or 'skip'")
        self.source = source
        self.schema = schema
        self.errors = errors
        self.chunk_size = chunk_size
        self.stats = ParseStats()
        self.label_names: list[str] = []
        cols = schema.columns
        self._kinds = np.array([0 if c.kind == NUMERIC else 1 for c in cols], dtype=np.int8)
        self._lo = np.array([c.bounds[0] for c in cols])
        self._hi = np.array([c.bounds[1] for c in cols])
        nominal = schema.nominal_index
        tables = [_parse.build_table([fnv1a64(sym) for sym in cols[j].domain]) for j in nominal]
        width = max((len(k) for k, _ in tables), default=16)
        self._nom_keys = np.zeros((len(nominal), width), dtype=np.uint64)
        self._nom_vals = np.full((len(nominal), width), -1, dtype=np.int64)
        for k, (keys, vals) in enumerate(tables):
            # Re-home each table into a common width so lookups stay one 2-D array.
            for h, v in zip(keys[keys != 0].tolist(), vals[keys != 0].tolist()):
                slot = h & (width - 1)
                while self._nom_keys[k, slot] != 0:
                    slot = (slot + 1) & (width - 1)
                self._nom_keys[k, slot] = h
                self._nom_vals[k, slot] = v
        self._unseen_code = np.array([len(cols[j].domain) for j in nominal], dtype=np.int64)
        self._unseen_count = np.zeros(len(nominal), dtype=np.int64)
        self._lab_keys = np.zeros(_LABEL_SLOTS, dtype=np.uint64)
        self._lab_vals = np.full(_LABEL_SLOTS, -1, dtype=np.int64)
        self._new_start = np.zeros(_LABEL_SLOTS // 2, dtype=np.int64)
        self._new_end = np.zeros(_LABEL_SLOTS // 2, dtype=np.int64)

    def __iter__(self) -> Iterator[RecordBatch]:
        stream = open_source(self.source)
        try:
            tail = b""
            while True:
                chunk = stream.read(self.chunk_size)
                if not chunk:
                    break
                data = tail + chunk
                cut = data.rfind(b"\n")
                if cut < 0:
                    tail = data
                    continue
                tail = data[cut + 1:]
                yield from self._scan(data[:cut + 1])
            if tail:
                yield from self._scan(tail + b"\n")
        finally:
            if stream is not self.source:
                stream.close()
            names = self.schema.columns
            for k, j in enumerate(self.schema.nominal_index):
                if self._unseen_count[k]:
                    self.stats.unseen[names[j].name] = int(self._unseen_count[k])

    def _scan(self, data: bytes) -> Iterator[RecordBatch]:
        buf = np.frombuffer(data, dtype=np.uint8)
        pos = 0
        while pos < len(buf):
            cap = (len(buf) - pos) // 64 + 16
            values = np.empty((cap, N_FEATURES))
            labels = np.zeros(cap, dtype=np.int32)
            status = np.zeros(cap, dtype=np.int8)
            bad_col = np.zeros(cap, dtype=np.int64)
            line_of_row = np.zeros(cap, dtype=np.int64)
            known = len(self.label_names)
            rows, lines, end, n_labels = _parse.scan_block(
                buf, pos, self._kinds, self._lo, self._hi, self._nom_keys, self._nom_vals,
                self._unseen_code, self._unseen_count, self._lab_keys, self._lab_vals, known,
                self._new_start, self._new_end, values, labels, status, bad_col, line_of_row)
            for lid in range(known, n_labels):
                self.label_names.append(
                    data[self._new_start[lid]:self._new_end[lid]].decode("utf-8", "replace"))
            if n_labels >= len(self._new_start):
                raise RecordError(self.stats.lines + lines, "too many distinct labels")
            batch = self._finish(data, pos, rows, values, labels, status, bad_col, line_of_row)
            self.stats.lines += lines
            if end == pos:
                raise RecordError(self.stats.lines + 1, "unterminated line")
            pos = end
            if batch is not None:
                yield batch

    def _finish(self, data, start, rows, values, labels, status, bad_col, line_of_row):
        if rows == 0:
            return None
        values, labels, status = values[:rows], labels[:rows], status[:rows]
        keep = status == _parse.OK
        if not keep.all():
            base_line = self.stats.lines
            num = self.schema.numeric_index
            text = None
            for r in np.flatnonzero(~keep):
                lineno = base_line + int(line_of_row[r]) + 1
                code = int(status[r])
                if code == _parse.SLOW_PATH:
                    if text is None:
                        text = data[start:].split(b"\n")
                    line = text[int(line_of_row[r])].decode("utf-8", "replace")
                    try:
                        vals, _ = parse_line(line, self.schema, lineno)
                    except RecordError as exc:
                        self._fail(exc)
                        continue
                    values[r, num] = np.asarray(vals)[num]
                    keep[r] = True
                    continue
                reason = _REASONS[code]
                if code == _parse.BAD_ARITY:
                    reason += f" (expected {N_FEATURES + 1}, got {int(bad_col[r])})"
                else:
                    reason += f" in column {self._column_name(int(bad_col[r]))}"
                self._fail(RecordError(lineno, reason))
            values, labels = values[keep], labels[keep]
        n = len(labels)
        if n == 0:
            return None
        batch = RecordBatch(values, labels, self.label_names, self.stats.records)
        self.stats.records += n
        return batch

    def _column_name(self, col: int) -> str:
        return self.schema.columns[col].name if col < N_FEATURES else "label"

    def _fail(self, exc: RecordError) -> None:
        if self.errors == "raise":
            raise exc
        self.stats.bad_records += 1
        if self.stats.first_error is None:
            self.stats.first_error = exc
        log.warning("skipping %s", exc)


def read_batches(source, schema: FeatureSchema, errors: str = "raise") -> Iterator[RecordBatch]:
    return iter(RecordReader(source, schema, errors))


def parse_records(source, schema: FeatureSchema, errors: str = "raise") -> Iterator[ConnectionRecord]:
    """Stream :class:`ConnectionRecord` objects in file order."""
    reader = RecordReader(source, schema, errors)
    for batch in reader:
        yield from batch.records(schema)
    for name, n in reader.stats.unseen.items():
        log.warning("%d unseen symbols in column %s mapped to UNSEEN", n, name)


def read_corpus(source, schema: FeatureSchema, errors: str = "raise") -> RecordBatch:
    """Whole corpus as one batch (only for corpora that fit in memory)."""
    reader = RecordReader(source, schema, errors)
    blocks = list(reader)
    if not blocks:
        return RecordBatch(np.empty((0, N_FEATURES)), np.empty(0, dtype=np.int32), reader.label_names)
    return RecordBatch(np.concatenate([b.values for b in blocks]),
                       np.concatenate([b.labels for b in blocks]), reader.label_names)


@dataclass
class LabelCensus:
    counts: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def __add__(self, other: "LabelCensus") -> "LabelCensus":
        merged = dict(self.counts)
        for k, v in other.counts.items():
            merged[k] = merged.get(k, 0) + v
        return LabelCensus(merged)

    def rows(self) -> list[tuple[str, int]]:
        return sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "count"])
        w.writerows(self.rows())
        w.writerow(["total", self.total])
        return buf.getvalue()


def census(records: Iterable[ConnectionRecord | RecordBatch]) -> LabelCensus:
    """Count records per raw label in one pass.

    Accepts individual records or whole batches (the fast route).
    """
    counts: dict[str, int] = {}
    for item in records:
        if isinstance(item, RecordBatch):
            tally = np.bincount(item.labels, minlength=len(item.label_names))
            for lid in np.flatnonzero(tally):
                name = item.label_names[lid]
                counts[name] = counts.get(name, 0) + int(tally[lid])
        else:
            counts[item.label] = counts.get(item.label, 0) + 1
    return LabelCensus(counts)


def census_file(source, schema: FeatureSchema, errors: str = "raise") -> tuple[LabelCensus, ParseStats]:
    reader = RecordReader(source, schema, errors)
    result = census(reader)
    return result, reader.stats
