"""Brute-force metric definitions in plain Python, used as the reference for kddbench.evaluate."""

from __future__ import annotations

import math
import random


def argmax(row):
    best = 0
    for i, v in enumerate(row):
        if v > row[best]:
            best = i
    return best


def confusion(truth, probs, C):
    cm = [[0] * C for _ in range(C)]
    for t, p in zip(truth, probs):
        cm[t][argmax(p)] += 1
    return cm


def metrics(truth, probs, C):
    cm = confusion(truth, probs, C)
    n = len(truth)
    diag = sum(cm[i][i] for i in range(C))
    rows = [sum(cm[i]) for i in range(C)]
    cols = [sum(cm[i][j] for i in range(C)) for j in range(C)]
    out = {"cm": cm, "accuracy": diag / n}
    pe = sum(rows[i] * cols[i] for i in range(C)) / (n * n)
    out["kappa"] = (diag / n - pe) / (1 - pe) if pe < 1 else math.nan

    abs_sum = sq_sum = 0.0
    for t, p in zip(truth, probs):
        for c in range(C):
            e = p[c] - (1.0 if c == t else 0.0)
            abs_sum += abs(e)
            sq_sum += e * e
    out["mae"] = abs_sum / (n * C)
    out["rmse"] = math.sqrt(sq_sum / (n * C))

    def ratio(a, b):
        return a / b if b > 0 else 0.0

    out["tp"] = [ratio(cm[c][c], rows[c]) for c in range(C)]
    out["fp"] = [ratio(cols[c] - cm[c][c], n - rows[c]) for c in range(C)]
    out["precision"] = [ratio(cm[c][c], cols[c]) for c in range(C)]

    roc = []
    for c in range(C):
        pos = [p[c] for t, p in zip(truth, probs) if t == c]
        neg = [p[c] for t, p in zip(truth, probs) if t != c]
        if not pos or not neg:
            roc.append(math.nan)
            continue
        wins = 0.0
        for a in pos:
            for b in neg:
                wins += 1.0 if a > b else 0.5 if a == b else 0.0
        roc.append(wins / (len(pos) * len(neg)))
    out["roc"] = roc

    def weighted(values, skip_nan=False):
        num = den = 0.0
        for c in range(C):
            if skip_nan and math.isnan(values[c]):
                continue
            num += rows[c] * values[c] if rows[c] else 0.0
            den += rows[c]
        return num / den if den else math.nan

    out["w_tp"] = weighted(out["tp"])
    out["w_fp"] = weighted(out["fp"])
    out["w_precision"] = weighted(out["precision"])
    out["w_roc"] = weighted(roc, skip_nan=True)
    return out


def fixture(seed: int):
    """Random (truth, probability rows, C) with occasional ties and absent classes."""
    rnd = random.Random(seed)
    C = rnd.randint(2, 5)
    n = rnd.randint(1, 60)
    live = rnd.randint(1, C)
    truth = [rnd.randrange(live) if rnd.random() < 0.8 else rnd.randrange(C) for _ in range(n)]
    coarse = rnd.random() < 0.5
    probs = []
    for _ in range(n):
        w = [rnd.randint(0, 4) if coarse else rnd.random() for _ in range(C)]
        if sum(w) == 0:
            w[rnd.randrange(C)] = 1
        s = sum(w)
        probs.append([v / s for v in w])
    return truth, probs, C
