"""Attack taxonomy, stratified extracts and split manifests."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .dataset import N_FEATURES, FeatureSchema, LabelCensus, RecordBatch, RecordReader
from .rng import MASK64, SplitMix64

log = logging.getLogger(__name__)

CATEGORIES = ("DOS", "U2R", "R2L", "PROBE", "NORMAL")
UNKNOWN = "UNKNOWN"

_GROUPS = {
    "DOS": ("smurf", "neptune", "back", "pod", "teardrop"),
    "U2R": ("buffer_overflow", "loadmodule", "perl", "rootkit"),
    "R2L": ("ftp_write", "guess_passwd", "imap", "multihop", "phf", "spy",
            "warezclient", "warezmaster"),
    "PROBE": ("ipsweep", "nmap", "portsweep", "satan"),
    "NORMAL": ("normal",),
}


class InfeasiblePlanError(ValueError):
    def __init__(self, label: str, message: str):
        self.label = label
        super().__init__(message)


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class AttackTaxonomy:
    mapping: Mapping[str, str]

    @classmethod
    def default(cls) -> "AttackTaxonomy":
        return cls({label: cat for cat, labels in _GROUPS.items() for label in labels})

    def __post_init__(self):
        bad = {c for c in self.mapping.values() if c not in CATEGORIES}
        if bad:
            raise ValueError(f"unknown categories {sorted(bad)}")

    def categorize(self, label: str) -> str:
        return self.mapping.get(label, UNKNOWN)

    def class_index(self, label: str) -> int:
        """Position in CATEGORIES, or -1 for labels outside the taxonomy."""
        cat = self.mapping.get(label)
        return CATEGORIES.index(cat) if cat is not None else -1

    def class_indices(self, label_names: list[str], labels: np.ndarray) -> np.ndarray:
        lookup = np.array([self.class_index(n) for n in label_names] or [-1], dtype=np.int64)
        return lookup[labels]


def categorize(label: str, taxonomy: AttackTaxonomy | None = None) -> str:
    return (taxonomy or AttackTaxonomy.default()).categorize(label)


@dataclass
class SamplingPlan:
    targets: dict[str, int]
    seed: int = 1
    stated_total: int | None = None

    def __post_init__(self):
        if not 0 <= self.seed <= MASK64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        for label, n in self.targets.items():
            if n < 0:
                raise ValueError(f"negative target for {label!r}")

    @property
    def total(self) -> int:
        return sum(self.targets.values())

    def check(self, census: LabelCensus) -> None:
        for label, n in self.targets.items():
            have = census.counts.get(label, 0)
            if n > have:
                raise InfeasiblePlanError(
                    label, f"plan asks for {n} {label!r} records but the corpus has {have}")

    def to_text(self) -> str:
        rows = [f"seed={self.seed}"]
        if self.stated_total is not None:
            rows.append(f"stated_total={self.stated_total}")
        rows.append("label,target_count")
        rows += [f"{k},{v}" for k, v in self.targets.items()]
        return "\n".join(rows) + "\n"


def parse_plan(text: str) -> SamplingPlan:
    seed = stated = None
    targets: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("seed="):
            if seed is not None:
                raise ValueError(f"line {lineno}: seed given twice")
            seed = int(line[5:])
            continue
        if line.startswith("stated_total="):
            stated = int(line[13:])
            continue
        if line.replace(" ", "") == "label,target_count":
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2 or not parts[0]:
            raise ValueError(f"line {lineno}: expected 'label,count', got {raw!r}")
        if parts[0] in targets:
            raise ValueError(f"line {lineno}: label {parts[0]!r} repeated")
        try:
            targets[parts[0]] = int(parts[1])
        except ValueError:
            raise ValueError(f"line {lineno}: bad count {parts[1]!r}") from None
    if seed is None:
        raise ValueError("plan has no 'seed=' line")
    return SamplingPlan(targets, seed, stated)


def load_plan(path: str | os.PathLike | None = None) -> SamplingPlan:
    """Read a plan file; ``None`` gives the shipped default extract."""
    if path is None:
        text = resources.files("kddbench").joinpath("data/table2.plan").read_text()
    else:
        text = Path(path).read_text()
    return parse_plan(text)


class LabelIndex:
    """Raw label of every accepted record, addressable by ordinal.

    Holds one int32 per record, which is what sampling needs without keeping
    any feature values around.
    """

    def __init__(self, labels: np.ndarray, names: list[str]):
        self.labels = np.asarray(labels, dtype=np.int32)
        self.names = list(names)
        order = np.argsort(self.labels, kind="stable")
        bounds = np.searchsorted(self.labels[order], np.arange(len(self.names) + 1))
        self._strata = {name: order[bounds[i]:bounds[i + 1]] for i, name in enumerate(self.names)}

    @classmethod
    def from_source(cls, source, schema: FeatureSchema, errors: str = "raise") -> "LabelIndex":
        reader = RecordReader(source, schema, errors)
        parts = [b.labels for b in reader]
        labels = np.concatenate(parts) if parts else np.empty(0, dtype=np.int32)
        return cls(labels, reader.label_names)

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> "LabelIndex":
        names: dict[str, int] = {}
        ids = [names.setdefault(l, len(names)) for l in labels]
        return cls(np.array(ids, dtype=np.int32), list(names))

    def __len__(self) -> int:
        return len(self.labels)

    def ordinals(self, label: str) -> np.ndarray:
        """Ordinals bearing ``label``, ascending."""
        return self._strata.get(label, np.empty(0, dtype=np.int64))

    def label_of(self, ordinals: np.ndarray) -> np.ndarray:
        names = np.array(self.names, dtype=object)
        return names[self.labels[np.asarray(ordinals, dtype=np.int64)]]

    def census(self) -> LabelCensus:
        counts = np.bincount(self.labels, minlength=len(self.names))
        return LabelCensus({n: int(c) for n, c in zip(self.names, counts) if c})


def _smallest_keys(ordinals: np.ndarray, stream: SplitMix64, k: int) -> np.ndarray:
    keys = stream.at(ordinals)
    return ordinals[np.argsort(keys, kind="stable")[:k]]


def shuffle_ordinals(ordinals: np.ndarray, seed: int) -> np.ndarray:
    """Keyed shuffle: the position of an ordinal depends only on (seed, ordinal)."""
    ordinals = np.sort(np.asarray(ordinals, dtype=np.int64))
    keys = SplitMix64.derive(seed, "shuffle").at(ordinals)
    return ordinals[np.argsort(keys, kind="stable")]


def stratified_sample(index: LabelIndex, plan: SamplingPlan) -> np.ndarray:
    """Draw ``plan.targets[l]`` ordinals per label without replacement, then shuffle.

    Each stratum ranks its records by a key derived from (seed, label,
    ordinal) and keeps the smallest ones, so a stratum's draw is independent
    of every other stratum and of the order the plan lists labels in.
    """
    plan.check(index.census())
    if plan.stated_total is not None and plan.stated_total != plan.total:
        # Kept as-is on purpose: the per-label targets are authoritative.
        log.warning("plan targets sum to %d but the plan states %d records; targets used verbatim",
                    plan.total, plan.stated_total)
    picked = []
    for label in sorted(plan.targets):
        k = plan.targets[label]
        if k == 0:
            continue
        stream = SplitMix64.derive(plan.seed, "stratum", label)
        picked.append(_smallest_keys(index.ordinals(label), stream, k))
    if not picked:
        return np.empty(0, dtype=np.int64)
    return shuffle_ordinals(np.concatenate(picked), plan.seed)


@dataclass
class DatasetSplit:
    train: np.ndarray
    test: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)
        for name, arr in (("train", self.train), ("test", self.test)):
            if len(np.unique(arr)) != len(arr):
                raise ValueError(f"{name} ordinals contain duplicates")
        if np.intersect1d(self.train, self.test).size:
            raise ValueError("train and test ordinals overlap")


def holdout_sample(index: LabelIndex, train: np.ndarray, test_size: int, seed: int,
                   taxonomy: AttackTaxonomy | None = None) -> DatasetSplit:
    """Uniform draw of ``test_size`` ordinals outside ``train``.

    Disjointness is by ordinal: KDD repeats identical rows, so content-level
    independence is not achievable. With a taxonomy, records whose label it
    does not cover are left out of the pool since they cannot be scored.
    """
    if test_size < 0:
        raise ValueError("test size must be non-negative")
    train = np.asarray(train, dtype=np.int64)
    pool_mask = np.ones(len(index), dtype=bool)
    pool_mask[train] = False
    if taxonomy is not None:
        known = np.array([taxonomy.class_index(n) >= 0 for n in index.names] or [False])
        pool_mask &= known[index.labels]
    pool = np.flatnonzero(pool_mask)
    if test_size > len(pool):
        raise InfeasiblePlanError(
            "*", f"test size {test_size} exceeds the {len(pool)} records left outside the training extract")
    test = _smallest_keys(pool, SplitMix64.derive(seed, "holdout"), test_size)
    return DatasetSplit(train, test)


def class_proportions(labels: Iterable[str] | LabelCensus,
                      taxonomy: AttackTaxonomy | None = None) -> dict[str, float]:
    """Fraction of the sample in each category (UNKNOWN included only if present)."""
    taxonomy = taxonomy or AttackTaxonomy.default()
    counts: dict[str, int] = {}
    items = labels.counts.items() if isinstance(labels, LabelCensus) else ((l, 1) for l in labels)
    for label, n in items:
        cat = taxonomy.categorize(label)
        counts[cat] = counts.get(cat, 0) + n
    total = sum(counts.values())
    if total == 0:
        raise ValueError("proportions of an empty sample are undefined")
    order = [c for c in CATEGORIES + (UNKNOWN,) if c in counts]
    return {c: counts[c] / total for c in order}


def write_manifest(path: str | os.PathLike, ordinals: np.ndarray, role: str) -> None:
    if role not in ("train", "test"):
        raise ValueError("role must be 'train' or 'test'")
    body = "\n".join(map(str, np.asarray(ordinals, dtype=np.int64).tolist()))
    Path(path).write_text(f"# role: {role}\n" + (body + "\n" if body else ""))


def read_manifest(path: str | os.PathLike) -> tuple[str, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# role:"):
        raise ManifestError(f"{path}: missing '# role:' header")
    role = lines[0].split(":", 1)[1].strip()
    if role not in ("train", "test"):
        raise ManifestError(f"{path}: unknown role {role!r}")
    try:
        ords = np.array([int(x) for x in lines[1:] if x.strip()], dtype=np.int64)
    except ValueError as exc:
        raise ManifestError(f"{path}: {exc}") from None
    if (ords < 0).any():
        raise ManifestError(f"{path}: negative ordinal")
    return role, ords


def gather(source, schema: FeatureSchema, ordinals: np.ndarray,
           errors: str = "raise") -> RecordBatch:
    """Records at ``ordinals``, in the order given, from one pass over the corpus."""
    ordinals = np.asarray(ordinals, dtype=np.int64)
    order = np.argsort(ordinals, kind="stable")
    wanted = ordinals[order]
    values = np.empty((len(ordinals), N_FEATURES))
    labels = np.empty(len(ordinals), dtype=np.int32)
    reader = RecordReader(source, schema, errors)
    lo = 0
    for batch in reader:
        if lo >= len(wanted):
            break
        start, stop = batch.first_ordinal, batch.first_ordinal + len(batch)
        hi = np.searchsorted(wanted, stop)
        rows = wanted[lo:hi] - start
        values[order[lo:hi]] = batch.values[rows]
        labels[order[lo:hi]] = batch.labels[rows]
        lo = hi
    if lo < len(wanted):
        raise ManifestError(f"ordinal {int(wanted[lo])} is beyond the end of the corpus")
    return RecordBatch(values, labels, reader.label_names)


def scale_plan(plan: SamplingPlan, census: LabelCensus, total: int) -> SamplingPlan:
    """Same label mix as ``plan`` shrunk to about ``total`` records, capped by availability.

    Every label the plan asks for keeps at least one record when the corpus
    has one; the largest-remainder rule distributes the rest.
    """
    if plan.total == 0:
        return SamplingPlan({}, plan.seed)
    labels = sorted(plan.targets)
    share = np.array([plan.targets[l] * total / plan.total for l in labels])
    base = np.floor(share).astype(np.int64)
    rest = int(total - base.sum())
    order = np.lexsort((np.arange(len(labels)), -(share - base)))
    base[order[:max(rest, 0)]] += 1
    targets = {}
    for l, n in zip(labels, base.tolist()):
        if plan.targets[l] > 0:
            n = max(n, 1)
        targets[l] = min(n, census.counts.get(l, 0))
    return SamplingPlan(targets, plan.seed)
