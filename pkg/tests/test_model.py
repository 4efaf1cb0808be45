from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kddbench.dataset import N_FEATURES, read_corpus
from kddbench.model import (FORMAT_VERSION, MAGIC, ArityError, ModelCorruptError, ModelFormatError,
                            ModelTruncatedError, ModelVersionError, SchemaDigestError, fit_encoder,
                            load_model, read_container, train_model, write_container)
from kddbench.preprocess import AttackTaxonomy

KINDS = ["j48", "random-forest", "random-tree", "mlp", "naive-bayes", "bayes-net"]
FAST = {"random-forest": {"n_trees": 10}, "mlp": {"max_epochs": 15}}


@pytest.fixture(scope="module")
def data(small_corpus, schema):
    batch = read_corpus(small_corpus, schema)
    y = AttackTaxonomy.default().class_indices(batch.label_names, batch.labels)
    keep = y >= 0
    return batch.values[keep][:1500], y[keep][:1500], batch.values[keep][1500:2500]


@pytest.fixture(scope="module")
def models(data, schema):
    X, y, _ = data
    return {k: train_model(k, X, y, schema, FAST.get(k)) for k in KINDS}


def test_encoder_min_max_endpoints(schema):
    values = np.zeros((3, N_FEATURES))
    values[:, 0] = [0, 10, 5]
    values[:, 4] = [5, 5, 5]
    enc = fit_encoder(values, schema)
    scaled = enc.scale(values)
    assert scaled[:, 0].tolist() == [0.0, 1.0, 0.5]
    assert scaled[:, 4].tolist() == [0.0, 0.0, 0.0]


def test_encoder_one_hot_groups(schema, data):
    X, _, _ = data
    enc = fit_encoder(X, schema)
    Z = enc.transform(X)
    assert Z.shape == (len(X), enc.width)
    assert np.isfinite(Z).all()
    k = len(enc.numeric_index)
    for size in enc.sizes.tolist():
        assert (Z[:, k:k + size].sum(axis=1) == 1).all()
        k += size
    assert np.array_equal(enc.transform(X), Z)
    assert len(enc.feature_names(schema)) == enc.width


def test_unseen_symbol_encodes_to_zeros(schema, data):
    X, _, _ = data
    enc = fit_encoder(X, schema)
    row = X[:1].copy()
    row[0, 2] = schema.unseen(2)
    Z = enc.transform(row)
    start = len(enc.numeric_index) + int(enc.sizes[0])
    assert Z[0, start:start + enc.sizes[1]].sum() == 0


def test_wrong_arity_rejected(schema, data):
    enc = fit_encoder(data[0], schema)
    with pytest.raises(ArityError):
        enc.transform(np.zeros((2, 40)))


@pytest.mark.parametrize("dist,expected", [((0.1, 0.7, 0.1, 0.05, 0.05), 1), ((0.5, 0.5, 0, 0, 0), 0)])
def test_argmax_with_lowest_index_tie_break(models, dist, expected):
    class Fixed:
        tag = "naive-bayes"
        input_kind = "raw"

        def predict_distribution(self, X):
            return np.tile(dist, (len(X), 1))

    m = models["naive-bayes"]
    fixed = type(m)(Fixed(), m.encoder, m.schema_digest)
    assert fixed.predict_class(np.zeros((1, N_FEATURES))).tolist() == [expected]


@pytest.mark.parametrize("kind", KINDS)
def test_distribution_valid(models, data, kind):
    _, _, X_test = data
    p = models[kind].predict_distribution(X_test)
    assert p.shape == (len(X_test), 5)
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


@pytest.mark.parametrize("kind", KINDS)
def test_persistence_round_trip(models, data, schema, tmp_path, kind):
    _, _, X_test = data
    path = tmp_path / f"{kind}.model"
    models[kind].save(path)
    again = load_model(path, schema)
    assert again.kind == kind
    assert again.meta == models[kind].meta
    assert np.array_equal(again.predict_distribution(X_test), models[kind].predict_distribution(X_test))
    again.save(tmp_path / "second.model")
    assert (tmp_path / "second.model").read_bytes() == path.read_bytes()


def test_forest_round_trip_on_fuzzed_instances(models, data, schema, tmp_path):
    rng = np.random.default_rng(5)
    X = data[0][rng.integers(0, len(data[0]), 1000)].copy()
    X[:, schema.numeric_index] *= rng.uniform(0, 2, (1000, len(schema.numeric_index)))
    m = models["random-forest"]
    m.save(tmp_path / "f.model")
    assert np.array_equal(load_model(tmp_path / "f.model").predict_class(X), m.predict_class(X))


def test_default_hyperparameters_recorded(models):
    assert models["j48"].meta["confidence_factor"] == 0.25
    assert models["random-tree"].meta["min_gain"] == 0.001
    assert models["random-tree"].meta["seed"] == 1
    assert models["mlp"].meta["learning_rate"] == 0.3
    assert models["mlp"].meta["momentum"] == 0.2
    assert models["mlp"].meta["validation_threshold"] == 20


@pytest.fixture
def saved(models, tmp_path):
    path = tmp_path / "nb.model"
    models["naive-bayes"].save(path)
    return path


def test_truncated_file(saved):
    data = saved.read_bytes()
    for cut in (10, 100, len(data) - 1):
        saved.write_bytes(data[:cut])
        with pytest.raises(ModelTruncatedError):
            load_model(saved)


def test_corrupted_payload(saved):
    data = bytearray(saved.read_bytes())
    data[-3] ^= 0xFF
    saved.write_bytes(bytes(data))
    with pytest.raises(ModelCorruptError):
        load_model(saved)


def test_wrong_magic_and_version(saved):
    data = saved.read_bytes()
    saved.write_bytes(b"NOTMODEL" + data[8:])
    with pytest.raises(ModelFormatError):
        load_model(saved)
    saved.write_bytes(data[:8] + (FORMAT_VERSION + 1).to_bytes(2, "little") + data[10:])
    with pytest.raises(ModelVersionError):
        load_model(saved)


def test_schema_digest_mismatch(saved, schema):
    from dataclasses import replace
    from kddbench.dataset import Column

    cols = list(schema.columns)
    cols[0] = Column("duration_s", "numeric")
    with pytest.raises(SchemaDigestError):
        load_model(saved, replace(schema, columns=tuple(cols)))


def test_header_layout(saved):
    data = saved.read_bytes()
    assert data[:8] == MAGIC
    assert int.from_bytes(data[8:10], "little") == FORMAT_VERSION
    assert data[12:28].rstrip(b"\0") == b"naive-bayes"


@given(st.lists(st.tuples(st.sampled_from(["<f8", "<i8", "<i4", "|u1", "<f4"]),
                          st.lists(st.integers(0, 5), max_size=3)), max_size=5),
       st.dictionaries(st.text(max_size=5), st.integers(), max_size=3))
def test_container_round_trip(tmp_path_factory, specs, meta):
    rng = np.random.default_rng(len(specs))
    arrays = {f"a{i}": (rng.random(shape) * 100).astype(dtype) for i, (dtype, shape) in enumerate(specs)}
    path = tmp_path_factory.mktemp("c") / "x.model"
    write_container(path, "j48", bytes(32), arrays, meta)
    tag, digest, out, meta2 = read_container(path)
    assert tag == "j48" and digest == bytes(32) and meta2 == meta
    assert out.keys() == arrays.keys()
    for k in arrays:
        assert out[k].dtype == arrays[k].dtype and np.array_equal(out[k], arrays[k])
