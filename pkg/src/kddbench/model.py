"""Feature encoding, the shared classifier contract and model files."""

from __future__ import annotations

import hashlib
import importlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, ClassVar

import numpy as np

from .dataset import N_FEATURES, FeatureSchema
from .preprocess import CATEGORIES

N_CLASSES = len(CATEGORIES)

MAGIC = b"KDDBMODL"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHH16s32sQ32s")
_ALIGN = 8


class ModelFormatError(ValueError):
    """Model file cannot be read."""


class ModelVersionError(ModelFormatError):
    pass


class ModelTruncatedError(ModelFormatError):
    pass


class ModelCorruptError(ModelFormatError):
    pass


class SchemaDigestError(ModelFormatError):
    pass


class ArityError(ValueError):
    pass


@dataclass
class Encoder:
    """Min-max scaling for numeric columns, one-hot groups for nominal ones.

    Ranges come from training data only. Values outside the fitted range
    are not clamped, so a test value of 20 on a [0, 10] column scales to 2.
    """

    numeric_index: np.ndarray
    lo: np.ndarray
    span: np.ndarray
    nominal_index: np.ndarray
    sizes: np.ndarray          # declared domain size per nominal column (UNSEEN excluded)
    classes: tuple[str, ...] = CATEGORIES

    @property
    def width(self) -> int:
        return len(self.numeric_index) + int(self.sizes.sum())

    def scale(self, values: np.ndarray) -> np.ndarray:
        """Copy of ``values`` with numeric columns scaled; nominal codes untouched."""
        values = self._check(values)
        out = values.copy()
        out[:, self.numeric_index] = (values[:, self.numeric_index] - self.lo) / self.span
        return out

    def transform(self, values: np.ndarray) -> np.ndarray:
        values = self._check(values)
        n = len(values)
        out = np.zeros((n, self.width))
        k = len(self.numeric_index)
        out[:, :k] = (values[:, self.numeric_index] - self.lo) / self.span
        rows = np.arange(n)
        for j, size in zip(self.nominal_index.tolist(), self.sizes.tolist()):
            codes = values[:, j].astype(np.int64)
            seen = (codes >= 0) & (codes < size)
            out[rows[seen], k + codes[seen]] = 1.0
            k += size
        return out

    def feature_names(self, schema: FeatureSchema) -> list[str]:
        names = [schema.columns[j].name for j in self.numeric_index]
        for j in self.nominal_index:
            col = schema.columns[j]
            names += [f"{col.name}={s}" for s in col.domain]
        return names

    def _check(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != N_FEATURES:
            raise ArityError(f"expected rows of {N_FEATURES} features, got shape {values.shape}")
        return values

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {"numeric_index": self.numeric_index, "lo": self.lo, "span": self.span,
                "nominal_index": self.nominal_index, "sizes": self.sizes}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "Encoder":
        return cls(**{k: arrays[k] for k in ("numeric_index", "lo", "span", "nominal_index", "sizes")})


def fit_encoder(values: np.ndarray, schema: FeatureSchema) -> Encoder:
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        raise ValueError("cannot fit an encoder on an empty training set")
    num = np.array(schema.numeric_index, dtype=np.int64)
    nom = np.array(schema.nominal_index, dtype=np.int64)
    lo = values[:, num].min(axis=0)
    hi = values[:, num].max(axis=0)
    span = hi - lo
    span[span == 0] = 1.0  # constant column: range (min, min + 1)
    sizes = np.array([len(schema.columns[j].domain) for j in nom], dtype=np.int64)
    return Encoder(num, lo, span, nom, sizes)


def prepare_input(kind: str, encoder: Encoder, values: np.ndarray) -> np.ndarray:
    if kind == "encoded":
        return encoder.transform(values)
    if kind == "scaled":
        return encoder.scale(values)
    return encoder._check(values)


class Estimator:
    """Contract shared by the six classifiers.

    ``fit(X, y, schema=None, **params)`` is a classmethod returning the
    fitted estimator and the dict of hyperparameters it actually used.

    ``input_kind`` says what the wrapper feeds to ``predict_distribution``:
    ``"raw"`` parsed values, ``"scaled"`` numerics min-max scaled with
    nominal codes kept, or ``"encoded"`` the full one-hot vector.
    """

    tag: ClassVar[str]
    input_kind: ClassVar[str] = "raw"

    def predict_distribution(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_arrays(self) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
        raise NotImplementedError

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], meta: dict[str, Any]) -> "Estimator":
        raise NotImplementedError


_REGISTRY = {
    "j48": ("kddbench.trees", "DecisionTreeModel"),
    "random-tree": ("kddbench.trees", "RandomTreeModel"),
    "random-forest": ("kddbench.trees", "RandomForestModel"),
    "mlp": ("kddbench.mlp", "MlpModel"),
    "naive-bayes": ("kddbench.bayes", "NaiveBayesModel"),
    "bayes-net": ("kddbench.bayes", "BayesNetModel"),
}


def estimator_class(tag: str) -> type[Estimator]:
    try:
        module, name = _REGISTRY[tag]
    except KeyError:
        raise ModelFormatError(f"unknown model type {tag!r}") from None
    return getattr(importlib.import_module(module), name)


@dataclass
class TrainedModel:
    estimator: Estimator
    encoder: Encoder
    schema_digest: bytes
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.estimator.tag

    def prepare(self, values: np.ndarray) -> np.ndarray:
        return prepare_input(self.estimator.input_kind, self.encoder, values)

    def predict_distribution(self, values: np.ndarray) -> np.ndarray:
        return self.estimator.predict_distribution(self.prepare(values))

    def predict_class(self, values: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_distribution(values), axis=1)

    def save(self, path: str | os.PathLike) -> None:
        arrays, est_meta = self.estimator.to_arrays()
        blobs = {f"model/{k}": v for k, v in arrays.items()}
        blobs.update({f"encoder/{k}": v for k, v in self.encoder.to_arrays().items()})
        write_container(path, self.kind, self.schema_digest, blobs,
                        {"estimator": est_meta, "train": self.meta})


def load_model(path: str | os.PathLike, schema: FeatureSchema | None = None) -> TrainedModel:
    """Read a model file; with ``schema`` the stored digest must match it."""
    tag, digest, arrays, meta = read_container(path)
    if schema is not None and digest != schema.digest:
        raise SchemaDigestError(
            f"{path}: model was trained on schema {digest.hex()[:12]}, "
            f"corpus schema is {schema.digest.hex()[:12]}")
    cls = estimator_class(tag)
    est = cls.from_arrays({k[6:]: v for k, v in arrays.items() if k.startswith("model/")},
                          meta["estimator"])
    enc = Encoder.from_arrays({k[8:]: v for k, v in arrays.items() if k.startswith("encoder/")})
    return TrainedModel(est, enc, digest, meta["train"])


def _pad(n: int) -> int:
    return -n % _ALIGN


def write_container(path: str | os.PathLike, tag: str, digest: bytes,
                    arrays: dict[str, np.ndarray], meta: dict[str, Any]) -> None:
    directory = []
    body = bytearray()
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        a = np.ascontiguousarray(a).reshape(a.shape)   # ascontiguousarray promotes 0-d to 1-d
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        directory.append([name, a.dtype.str, list(a.shape), len(body), a.nbytes])
        body += a.tobytes()
        body += b"\0" * _pad(len(body))
    head = json.dumps({"arrays": directory, "meta": meta}, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    head += b" " * _pad(len(head) + 4)
    payload = struct.pack("<I", len(head)) + head + bytes(body)
    tag_bytes = tag.encode("ascii")
    if len(tag_bytes) > 16 or len(digest) != 32:
        raise ValueError("model tag longer than 16 bytes or digest not 32 bytes")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, 0, tag_bytes, digest, len(payload),
                          hashlib.sha256(payload).digest())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + payload)
    os.replace(tmp, path)


def read_container(path: str | os.PathLike):
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC[:len(data)]:
        raise ModelFormatError(f"{path}: not a model file")
    if len(data) < _HEADER.size:
        raise ModelTruncatedError(f"{path}: truncated header ({len(data)} bytes)")
    magic, version, _flags, tag, digest, length, checksum = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    payload = data[_HEADER.size:]
    if len(payload) < length:
        raise ModelTruncatedError(f"{path}: payload has {len(payload)} of {length} bytes")
    if len(payload) > length or hashlib.sha256(payload).digest() != checksum:
        raise ModelCorruptError(f"{path}: payload checksum mismatch")
    (head_len,) = struct.unpack_from("<I", payload)
    head = json.loads(payload[4:4 + head_len])
    base = 4 + head_len
    arrays = {}
    for name, dtype, shape, offset, nbytes in head["arrays"]:
        raw = payload[base + offset:base + offset + nbytes]
        arrays[name] = np.frombuffer(raw, dtype=np.dtype(dtype)).reshape(shape).copy()
    return tag.rstrip(b"\0").decode("ascii"), digest, arrays, head["meta"]


def train_model(kind: str, values: np.ndarray, y: np.ndarray, schema: FeatureSchema,
                params: dict[str, Any] | None = None, encoder: Encoder | None = None) -> TrainedModel:
    """Fit one classifier on parsed rows ``values`` with class indices ``y``."""
    values = np.asarray(values, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(values) == 0:
        raise ValueError("empty training set")
    encoder = encoder or fit_encoder(values, schema)
    cls = estimator_class(kind)
    X = prepare_input(cls.input_kind, encoder, values)
    params = {"n_classes": N_CLASSES, **(params or {})}
    est, info = cls.fit(X, y, schema=schema, **params)
    return TrainedModel(est, encoder, schema.digest, {"classifier": kind, **info})
