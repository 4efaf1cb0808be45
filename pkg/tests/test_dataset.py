from __future__ import annotations

import gzip
import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kddbench.dataset import (N_FEATURES, ConnectionRecord, LabelCensus, RecordError, RecordReader,
                              SchemaError, census, census_file, format_record, load_schema,
                              parse_line, parse_records, parse_schema, read_corpus)

from conftest import kdd_line

SCHEMA = load_schema()
LABELS = st.sampled_from(["normal", "smurf", "neptune", "perl", "warezclient", "x-y_z"])


def _value(col):
    if col.name.endswith("_rate"):
        return st.integers(0, 100).map(lambda v: v / 100)
    return st.one_of(st.integers(0, 10**9).map(float),
                     st.floats(0, 1e6, allow_nan=False, allow_infinity=False))


records = st.tuples(
    st.tuples(*[_value(c) for c in SCHEMA.columns if c.kind == "numeric"]),
    st.tuples(*[st.integers(0, len(c.domain) - 1) for c in SCHEMA.columns if c.kind == "nominal"]),
    LABELS,
).map(lambda t: ConnectionRecord(*t))


def _bytes(lines):
    return ("\n".join(lines) + "\n").encode() if lines else b""


def test_shipped_schema_layout():
    assert len(SCHEMA.columns) == N_FEATURES
    assert [c.name for c in SCHEMA.columns if c.kind == "nominal"] == ["protocol_type", "service", "flag"]
    assert len(set(SCHEMA.names)) == N_FEATURES


def test_schema_with_40_columns_rejected():
    text = "\n".join(SCHEMA.to_text().splitlines()[:-1])
    with pytest.raises(SchemaError):
        parse_schema(text)


def test_schema_text_round_trip():
    assert parse_schema(SCHEMA.to_text()) == SCHEMA
    assert parse_schema(SCHEMA.to_text()).digest == SCHEMA.digest


def test_period_stripped_from_label():
    values, label = parse_line(kdd_line("normal", src_bytes=215, dst_bytes=45076), SCHEMA)
    assert label == "normal"
    assert values[4] == 215 and values[5] == 45076


def test_empty_input():
    reader = RecordReader(b"", SCHEMA)
    assert list(reader) == []
    assert reader.stats.records == 0 and reader.stats.bad_records == 0


def test_census_of_small_fixture():
    data = _bytes([kdd_line("smurf")] * 3 + [kdd_line("normal")] * 2)
    result = census(read_batches_of(data))
    assert result.counts == {"smurf": 3, "normal": 2}
    assert result.total == 5


def read_batches_of(data, **kw):
    return RecordReader(data, SCHEMA, **kw)


def test_census_total_row_for_empty_file():
    result, _ = census_file(b"", SCHEMA)
    assert result.to_csv() == "label,count\ntotal,0\n"


@pytest.mark.parametrize("line,reason", [
    ("1,2,3,normal.", "field count"),
    (kdd_line("normal", duration="abc"), "non-numeric"),
    (kdd_line("normal", serror_rate="1.5"), "range"),
    (kdd_line("normal", src_bytes="-3"), "range"),
    (kdd_line("") , "empty label"),
])
def test_bad_lines_raise_with_line_number(line, reason):
    data = _bytes([kdd_line("normal"), line])
    with pytest.raises(RecordError) as exc:
        read_corpus(data, SCHEMA)
    assert exc.value.line == 2
    assert reason in str(exc.value)


def test_skip_mode_counts_bad_lines():
    data = _bytes([kdd_line("normal"), "garbage", kdd_line("smurf")])
    reader = RecordReader(data, SCHEMA, errors="skip")
    batch_labels = [lab for b in reader for lab in b.label_array()]
    assert batch_labels == ["normal", "smurf"]
    assert reader.stats.bad_records == 1


def test_unseen_symbol_maps_to_reserved_index():
    values, _ = parse_line(kdd_line("normal", service="brand_new"), SCHEMA)
    assert values[2] == SCHEMA.unseen(2)
    batch = read_corpus(_bytes([kdd_line("normal", service="brand_new")]), SCHEMA)
    assert batch.values[0, 2] == SCHEMA.unseen(2)


def test_crlf_and_missing_final_newline():
    data = (kdd_line("normal") + "\r\n" + kdd_line("smurf")).encode()
    batch = read_corpus(data, SCHEMA)
    assert list(batch.label_array()) == ["normal", "smurf"]


def test_gzip_input_detected():
    raw = _bytes([kdd_line("pod")] * 4)
    assert census_file(gzip.compress(raw), SCHEMA)[0].counts == {"pod": 4}
    assert census_file(io.BytesIO(gzip.compress(raw)), SCHEMA)[0].counts == {"pod": 4}


@given(st.lists(records, max_size=25))
def test_round_trip(recs):
    text = _bytes([format_record(r, SCHEMA) for r in recs])
    assert list(parse_records(text, SCHEMA)) == recs


@given(st.lists(records, max_size=40), st.integers(256, 4096))
def test_batch_reader_matches_reference_parser(recs, chunk):
    lines = [format_record(r, SCHEMA) for r in recs]
    batches = list(RecordReader(_bytes(lines), SCHEMA, chunk_size=chunk))
    values = np.concatenate([b.values for b in batches]) if batches else np.empty((0, N_FEATURES))
    labels = [lab for b in batches for lab in b.label_array()]
    for i, line in enumerate(lines):
        ref_values, ref_label = parse_line(line, SCHEMA)
        assert values[i].tolist() == ref_values
        assert labels[i] == ref_label
    ordinals = [b.first_ordinal for b in batches]
    assert ordinals == sorted(ordinals)


@given(st.lists(LABELS, max_size=30), st.lists(LABELS, max_size=30))
def test_census_additivity(a, b):
    ca = census(RecordReader(_bytes([kdd_line(x) for x in a]), SCHEMA))
    cb = census(RecordReader(_bytes([kdd_line(x) for x in b]), SCHEMA))
    both = census(RecordReader(_bytes([kdd_line(x) for x in a + b]), SCHEMA))
    assert both.counts == (ca + cb).counts
    assert both.total == len(a) + len(b)


@given(st.lists(LABELS, max_size=30))
def test_record_and_batch_census_agree(labels):
    data = _bytes([kdd_line(x) for x in labels])
    assert census(parse_records(data, SCHEMA)).counts == census(RecordReader(data, SCHEMA)).counts


def test_parsed_rates_and_counts_in_range(schema):
    from conftest import FIXTURE

    batch = read_corpus(FIXTURE, schema)
    for j, col in enumerate(schema.columns):
        if col.kind == "numeric":
            assert (batch.values[:, j] >= 0).all()
            if col.name.endswith("_rate"):
                assert (batch.values[:, j] <= 1).all()


def test_label_census_csv_sorted_by_count():
    c = LabelCensus({"a": 1, "b": 5, "c": 5})
    assert c.to_csv() == "label,count\nb,5\nc,5\na,1\ntotal,11\n"
