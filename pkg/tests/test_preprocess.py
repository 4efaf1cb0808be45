from __future__ import annotations

import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kddbench.dataset import LabelCensus, read_corpus
from kddbench.preprocess import (CATEGORIES, UNKNOWN, AttackTaxonomy, DatasetSplit, InfeasiblePlanError,
                                 LabelIndex, ManifestError, SamplingPlan, categorize, class_proportions,
                                 gather, holdout_sample, load_plan, parse_plan, read_manifest, scale_plan,
                                 shuffle_ordinals, stratified_sample, write_manifest)

from conftest import kdd_line

# Per-label training extract counts as printed in the source table.
TABLE2 = {
    "smurf": 85983, "neptune": 32827, "back": 70, "pod": 10, "teardrop": 30,
    "buffer_overflow": 10, "loadmodule": 2, "perl": 1, "rootkit": 5,
    "ftp_write": 2, "guess_passwd": 10, "imap": 4, "multihop": 2, "phf": 1, "spy": 1,
    "warezclient": 31, "warezmaster": 7,
    "ipsweep": 382, "nmap": 70, "portsweep": 318, "satan": 487, "normal": 28500,
}

label_lists = st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=0, max_size=60)


def _plan_for(labels, draw_fraction, seed):
    counts = LabelIndex.from_labels(labels).census().counts
    return SamplingPlan({k: int(v * draw_fraction) for k, v in counts.items()}, seed)


def test_taxonomy_groups():
    tax = AttackTaxonomy.default()
    assert categorize("smurf") == "DOS"
    assert categorize("normal") == "NORMAL"
    assert categorize("perl") == "U2R"
    assert categorize("warezmaster") == "R2L"
    assert categorize("satan") == "PROBE"
    assert categorize("land") == UNKNOWN
    assert set(tax.mapping) == set(TABLE2)
    assert tax.class_index("normal") == CATEGORIES.index("NORMAL")


def test_shipped_plan_matches_table():
    plan = load_plan()
    assert plan.targets == TABLE2
    assert plan.seed == 1
    assert plan.total == 148753
    assert plan.stated_total == 148758


def test_plan_text_round_trip():
    plan = load_plan()
    again = parse_plan(plan.to_text())
    assert again.targets == plan.targets and again.seed == plan.seed
    assert again.stated_total == plan.stated_total


def test_plan_without_seed_rejected():
    with pytest.raises(ValueError):
        parse_plan("label,target_count\nsmurf,3\n")


def test_all_zero_plan_gives_empty_sample():
    index = LabelIndex.from_labels(["a", "b", "a"])
    assert stratified_sample(index, SamplingPlan({"a": 0, "b": 0})).size == 0


def test_infeasible_plan_names_label():
    index = LabelIndex.from_labels(["perl"] * 3 + ["normal"] * 5)
    with pytest.raises(InfeasiblePlanError) as exc:
        stratified_sample(index, SamplingPlan({"perl": 100}))
    assert exc.value.label == "perl"
    assert "perl" in str(exc.value)


def test_stated_total_mismatch_is_logged(caplog):
    index = LabelIndex.from_labels(["a"] * 5)
    with caplog.at_level(logging.WARNING):
        out = stratified_sample(index, SamplingPlan({"a": 3}, stated_total=8))
    assert len(out) == 3
    assert "8" in caplog.text and "3" in caplog.text


def test_table2_proportions():
    props = class_proportions(LabelCensus(TABLE2))
    # Category sums of the table divided by 148,753, worked out by hand.
    assert props["NORMAL"] == pytest.approx(28500 / 148753)
    assert props["DOS"] == pytest.approx(118920 / 148753)
    assert round(props["NORMAL"], 4) == 0.1916
    assert round(props["DOS"], 4) == 0.7994
    assert sum(props.values()) == pytest.approx(1.0)


def test_single_record_proportion():
    assert class_proportions(["neptune"]) == {"DOS": 1.0}


def test_holdout_zero_size():
    index = LabelIndex.from_labels(["a"] * 10)
    split = holdout_sample(index, np.array([1, 2]), 0, seed=1)
    assert split.test.size == 0


def test_holdout_excludes_labels_outside_taxonomy():
    index = LabelIndex.from_labels(["land"] * 5 + ["normal"] * 5)
    split = holdout_sample(index, np.empty(0, np.int64), 5, 1, AttackTaxonomy.default())
    assert sorted(split.test.tolist()) == [5, 6, 7, 8, 9]
    with pytest.raises(InfeasiblePlanError):
        holdout_sample(index, np.empty(0, np.int64), 6, 1, AttackTaxonomy.default())


def test_split_rejects_overlap_and_duplicates():
    with pytest.raises(ValueError):
        DatasetSplit(np.array([1, 2]), np.array([2, 3]))
    with pytest.raises(ValueError):
        DatasetSplit(np.array([1, 1]))


@given(label_lists, st.floats(0, 1), st.integers(0, 2**64 - 1))
def test_stratum_purity_and_counts(labels, frac, seed):
    index = LabelIndex.from_labels(labels)
    plan = _plan_for(labels, frac, seed)
    out = stratified_sample(index, plan)
    assert len(np.unique(out)) == len(out)
    got = LabelIndex.from_labels(index.label_of(out)).census().counts if len(out) else {}
    assert got == {k: v for k, v in plan.targets.items() if v}


@given(label_lists, st.floats(0, 1), st.integers(0, 2**64 - 1))
def test_sampling_is_deterministic(labels, frac, seed):
    index = LabelIndex.from_labels(labels)
    plan = _plan_for(labels, frac, seed)
    a = stratified_sample(index, plan)
    b = stratified_sample(LabelIndex.from_labels(labels), SamplingPlan(dict(reversed(plan.targets.items())), seed))
    assert a.tobytes() == b.tobytes()


@given(st.lists(st.integers(0, 10**6), unique=True, max_size=200), st.integers(0, 2**64 - 1))
def test_shuffle_is_permutation(ords, seed):
    arr = np.array(ords, dtype=np.int64)
    out = shuffle_ordinals(arr, seed)
    assert sorted(out.tolist()) == sorted(ords)
    assert shuffle_ordinals(arr[::-1], seed).tolist() == out.tolist()


@given(label_lists, st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**64 - 1))
def test_holdout_disjoint(labels, frac, test_frac, seed):
    index = LabelIndex.from_labels(labels)
    train = stratified_sample(index, _plan_for(labels, frac, seed))
    room = len(labels) - len(train)
    split = holdout_sample(index, train, int(room * test_frac), seed)
    assert np.intersect1d(split.train, split.test).size == 0
    assert len(np.unique(split.test)) == len(split.test) == int(room * test_frac)


def test_table2_plan_on_label_index():
    labels = []
    for label, n in TABLE2.items():
        labels += [label] * (n + 7)
    rng = np.random.default_rng(0)
    labels = list(np.array(labels, dtype=object)[rng.permutation(len(labels))])
    index = LabelIndex.from_labels(labels)
    out = stratified_sample(index, load_plan())
    assert LabelIndex.from_labels(index.label_of(out)).census().counts == TABLE2


def test_manifest_round_trip(tmp_path):
    p = tmp_path / "m"
    write_manifest(p, np.array([5, 1, 9]), "test")
    role, ords = read_manifest(p)
    assert role == "test" and ords.tolist() == [5, 1, 9]
    write_manifest(p, np.empty(0, np.int64), "train")
    assert read_manifest(p)[1].size == 0
    p.write_text("1\n2\n")
    with pytest.raises(ManifestError):
        read_manifest(p)


def test_gather_returns_rows_in_manifest_order(schema):
    lines = [kdd_line(lab, duration=i) for i, lab in enumerate(["a", "b", "c", "d", "e"])]
    data = ("\n".join(lines) + "\n").encode()
    batch = gather(data, schema, np.array([3, 0, 4]))
    assert batch.values[:, 0].tolist() == [3, 0, 4]
    assert list(batch.label_array()) == ["d", "a", "e"]
    full = read_corpus(data, schema)
    assert np.array_equal(gather(data, schema, np.arange(5)).values, full.values)
    with pytest.raises(ManifestError):
        gather(data, schema, np.array([5]))


def test_scale_plan_keeps_rare_labels():
    census = LabelCensus({k: 3 * v for k, v in TABLE2.items()})
    small = scale_plan(load_plan(), census, 3000)
    assert set(small.targets) == set(TABLE2)
    assert min(small.targets.values()) >= 1
    assert abs(small.total - 3000) <= len(TABLE2)
    assert small.targets["smurf"] > small.targets["normal"] > small.targets["satan"]
