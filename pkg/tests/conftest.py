from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kddbench.dataset import load_schema

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=1000, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA = Path(__file__).parent / "data"
FIXTURE = DATA / "kdd50k.txt.gz"
FIXTURE_COUNTS = DATA / "kdd50k_counts.csv"


@pytest.fixture(scope="session")
def schema():
    return load_schema()


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """5,000 synthetic KDD records with every label present."""
    from kddbench.synthetic import scaled_counts, write_corpus

    path = tmp_path_factory.mktemp("corpus") / "c5k.txt"
    write_corpus(path, scaled_counts(5000), seed=3)
    return path


def separable(n: int = 200, n_features: int = 3, n_classes: int = 3, seed: int = 0):
    """Axis-aligned blocks: the class is a step function of feature 0."""
    rng = np.random.default_rng(seed)
    X = rng.random((n, n_features))
    y = np.minimum((X[:, 0] * n_classes).astype(np.int64), n_classes - 1)
    return X, y


def kdd_line(label: str = "normal", **overrides) -> str:
    schema = load_schema()
    fields = []
    for col in schema.columns:
        if col.name in overrides:
            fields.append(str(overrides[col.name]))
        elif col.kind == "nominal":
            fields.append(col.domain[0])
        else:
            fields.append("0")
    return ",".join(fields) + f",{label}."


BENCH_FILES = ("train.manifest", "test.manifest", "report.txt", "report.csv") + tuple(
    f"models/{k}.{ext}" for k in ("j48", "random-forest", "random-tree", "mlp", "naive-bayes", "bayes-net")
    for ext in ("model", "log"))


@pytest.fixture(scope="session")
def bench_twice(small_corpus, tmp_path_factory):
    """Two full bench runs on the 5,000-record corpus with the default seed."""
    import time

    from kddbench.cli import main

    runs = []
    for i in range(2):
        out = tmp_path_factory.mktemp(f"bench{i}")
        t0 = time.perf_counter()
        code = main(["bench", str(small_corpus), "--out-dir", str(out),
                     "--train-size", "3000", "--test-size", "1000"])
        runs.append((out, code, time.perf_counter() - t0))
    return runs


# Acceptance bookkeeping: tests marked ``criterion(n)`` roll up into one line per criterion.
CRITERIA: dict[int, list[tuple[str, str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "SKIP" if rep.skipped else "PASS" if rep.passed else "FAIL"
        CRITERIA.setdefault(mark.args[0], []).append((item.name, status))


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        results = CRITERIA[n]
        states = {s for _, s in results}
        overall = "FAIL" if "FAIL" in states else "SKIP" if states == {"SKIP"} else "PASS"
        detail = ", ".join(f"{name}={s}" for name, s in results)
        terminalreporter.write_line(f"criterion {n}: {overall} ({detail})")
