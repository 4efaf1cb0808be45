"""Entropy-driven trees: a pruned C4.5-style tree, random trees and a bagged forest.

Trees work on parsed values directly. Numeric tests are ``x <= threshold``
(left) versus ``x > threshold`` (right), thresholds sitting midway between
consecutive distinct values. Nominal tests branch once per declared symbol
plus one UNSEEN branch. Training weights are per-row multiplicities, which
is how bootstrap replicates are represented without copying rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Any, Callable

import numba
import numpy as np

from .dataset import NOMINAL, FeatureSchema
from .model import Estimator
from .rng import SplitMix64

GAIN = "gain"
GAIN_RATIO = "gain_ratio"


def entropy(dist) -> float:
    """Shannon entropy in bits of a count or probability vector."""
    p = np.asarray(dist, dtype=np.float64)
    total = p.sum()
    if not total > 0 or (p < 0).any():
        raise ValueError("entropy of an empty or negative distribution")
    p = p[p > 0] / total
    return float(max(0.0, -(p * np.log2(p)).sum()))


def information_gain(parent, children) -> float:
    parent = np.asarray(parent, dtype=np.float64)
    children = [np.asarray(c, dtype=np.float64) for c in children]
    if not np.allclose(np.sum(children, axis=0), parent, rtol=1e-12, atol=1e-9):
        raise ValueError("children counts do not add up to the parent counts")
    n = parent.sum()
    rest = sum(c.sum() / n * entropy(c) for c in children if c.sum() > 0)
    return entropy(parent) - rest


@numba.njit(cache=True, nogil=True, inline="always")
def _h(counts, total):
    if total <= 0.0:
        return 0.0
    s = 0.0
    for c in counts:
        if c > 0.0:
            s += c * math.log2(c)
    return max(0.0, math.log2(total) - s / total)


@numba.njit(cache=True, nogil=True)
def numeric_split(x, y, w, n_classes, min_leaf):
    """Best binary threshold on one numeric feature by information gain.

    Returns (found, gain, threshold, split_info). Ties keep the lowest
    threshold.
    """
    n = x.shape[0]
    order = np.argsort(x, kind="mergesort")
    total = np.zeros(n_classes)
    for i in range(n):
        total[y[i]] += w[i]
    W = total.sum()
    parent = _h(total, W)
    left = np.zeros(n_classes)
    right = np.empty(n_classes)
    wl = 0.0
    best = -1.0
    thr = 0.0
    si = 0.0
    found = False
    for i in range(n - 1):
        r = order[i]
        left[y[r]] += w[r]
        wl += w[r]
        a = x[r]
        b = x[order[i + 1]]
        if b <= a:
            continue
        wr = W - wl
        if wl < min_leaf or wr < min_leaf:
            continue
        for k in range(n_classes):
            right[k] = total[k] - left[k]
        gain = parent - (wl / W) * _h(left, wl) - (wr / W) * _h(right, wr)
        if gain > best:
            best = gain
            mid = (a + b) / 2.0
            thr = a if mid >= b else mid
            pl = wl / W
            si = -(pl * math.log2(pl) + (1.0 - pl) * math.log2(1.0 - pl))
            found = True
    return found, best, thr, si


def nominal_split(codes, y, w, n_branches, n_classes, min_leaf):
    """Gain of the multiway split on one nominal feature: (found, gain, 0.0, split_info)."""
    table = np.bincount(codes * n_classes + y, weights=w,
                        minlength=n_branches * n_classes).reshape(n_branches, n_classes)
    sizes = table.sum(axis=1)
    if (sizes >= min_leaf).sum() < 2:
        return False, 0.0, 0.0, 0.0
    W = sizes.sum()
    parent = _h(table.sum(axis=0), W)
    gain = parent
    si = 0.0
    for b in np.flatnonzero(sizes):
        gain -= sizes[b] / W * _h(table[b], sizes[b])
        si -= sizes[b] / W * math.log2(sizes[b] / W)
    return True, gain, 0.0, si


class _Node:
    __slots__ = ("feature", "threshold", "children", "counts", "rows")

    def __init__(self, counts, rows):
        self.feature = -1
        self.threshold = 0.0
        self.children: list[_Node] = []
        self.counts = counts
        self.rows = rows

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    def make_leaf(self) -> None:
        self.feature = -1
        self.threshold = 0.0
        self.children = []


@dataclass
class _Data:
    """Training view shared by the growers: feature-major values plus labels and weights."""

    xt: np.ndarray
    y: np.ndarray
    w: np.ndarray
    branches: np.ndarray        # per feature: 0 numeric, else number of nominal branches
    n_classes: int

    def counts(self, rows: np.ndarray) -> np.ndarray:
        return np.bincount(self.y[rows], weights=self.w[rows], minlength=self.n_classes)

    def codes(self, f: int, rows: np.ndarray) -> np.ndarray:
        nb = int(self.branches[f])
        c = self.xt[f, rows].astype(np.int64)
        c[(c < 0) | (c >= nb)] = nb - 1
        return c

    def partition(self, node: _Node, rows: np.ndarray) -> list[np.ndarray]:
        f = node.feature
        nb = int(self.branches[f])
        if nb == 0:
            x = self.xt[f, rows]
            return [rows[x <= node.threshold], rows[~(x <= node.threshold)]]
        codes = self.codes(f, rows)
        order = np.argsort(codes, kind="stable")
        cuts = np.searchsorted(codes[order], np.arange(nb + 1))
        return [rows[order[cuts[b]:cuts[b + 1]]] for b in range(nb)]


def _data(X: np.ndarray, y: np.ndarray, w: np.ndarray | None, branches: np.ndarray,
          n_classes: int) -> _Data:
    X = np.asarray(X, dtype=np.float64)
    w = np.ones(len(X)) if w is None else np.asarray(w, dtype=np.float64)
    return _Data(np.ascontiguousarray(X.T), np.asarray(y, dtype=np.int64), w,
                 np.asarray(branches, dtype=np.int64), n_classes)


def _choose(data: _Data, rows: np.ndarray, features, min_leaf: float, criterion: str):
    """Best (feature, threshold, gain) among ``features`` or None.

    Features are scanned in ascending index order and only a strictly
    better score replaces the incumbent, which makes the lowest feature
    index win ties.
    """
    y, w = data.y[rows], data.w[rows]
    scored = []
    for f in sorted(features):
        nb = int(data.branches[f])
        if nb == 0:
            found, gain, thr, si = numeric_split(data.xt[f, rows], y, w, data.n_classes, min_leaf)
        else:
            found, gain, thr, si = nominal_split(data.codes(f, rows), y, w, nb, data.n_classes, min_leaf)
        if found:
            scored.append((f, gain, thr, si))
    if not scored:
        return None
    if criterion == GAIN_RATIO:
        positive = [s for s in scored if s[1] > 1e-12 and s[3] > 0]
        if not positive:
            return None
        # C4.5 heuristic: only attributes with at least average gain compete on ratio.
        avg = sum(s[1] for s in positive) / len(positive)
        best = None
        for f, gain, thr, si in positive:
            if gain >= avg - 1e-3 and (best is None or gain / si > best[3]):
                best = (f, thr, gain, gain / si)
        return best[:3] if best else None
    best = None
    for f, gain, thr, _ in scored:
        if best is None or gain > best[2]:
            best = (f, thr, gain)
    return best


def grow(data: _Data, rows: np.ndarray, *, min_leaf: float, min_gain: float, criterion: str = GAIN,
         features: Callable[[], list[int]] | None = None, keep_rows: bool = False) -> _Node:
    """Grow a tree depth-first with an explicit stack.

    ``features`` draws the candidate features for each node (random trees);
    by default every feature is a candidate. A split is taken only if its
    gain is positive and at least ``min_gain``.
    """
    all_features = list(range(len(data.branches)))
    root = _Node(data.counts(rows), rows)
    stack = [root]
    while stack:
        node = stack.pop()
        counts = node.counts
        total = counts.sum()
        if (counts > 0).sum() > 1 and total >= 2 * min_leaf:
            cand = features() if features is not None else all_features
            best = _choose(data, node.rows, cand, min_leaf, criterion)
            if best is not None and best[2] > 1e-12 and best[2] >= min_gain:
                node.feature, node.threshold = best[0], float(best[1])
                parts = data.partition(node, node.rows)
                node.children = [_Node(data.counts(p), p) for p in parts]
                stack.extend(reversed(node.children))
        if not keep_rows:
            node.rows = None
    return root


# C4.5 pessimistic pruning ---------------------------------------------------

def add_errs(n: float, e: float, cf: float) -> float:
    """Extra errors from the upper confidence bound of the binomial (C4.5)."""
    if cf > 0.5:
        raise ValueError("confidence factor must be at most 0.5")
    if e < 1:
        base = n * (1 - cf ** (1 / n))
        if e == 0:
            return base
        return base + e * (add_errs(n, 1, cf) - base)
    if e + 0.5 >= n:
        return max(n - e, 0.0)
    z = NormalDist().inv_cdf(1 - cf)
    f = (e + 0.5) / n
    r = (f + z * z / (2 * n) + z * math.sqrt(f / n - f * f / n + z * z / (4 * n * n))) / (1 + z * z / n)
    return r * n - e


def _dist_errors(counts: np.ndarray, cf: float) -> float:
    n = counts.sum()
    if n <= 0:
        return 0.0
    e = n - counts.max()
    return e + add_errs(n, e, cf)


def _tree_errors(node: _Node, cf: float) -> float:
    if node.is_leaf:
        return _dist_errors(node.counts, cf)
    return sum(_tree_errors(c, cf) for c in node.children)


def _branch_errors(data: _Data, node: _Node, rows: np.ndarray, cf: float) -> float:
    if node.is_leaf:
        return _dist_errors(data.counts(rows), cf)
    return sum(_branch_errors(data, c, p, cf) for c, p in zip(node.children, data.partition(node, rows)))


def _training_errors(node: _Node) -> float:
    if node.is_leaf:
        return node.counts.sum() - node.counts.max()
    return sum(_training_errors(c) for c in node.children)


def _redistribute(data: _Data, node: _Node, rows: np.ndarray) -> None:
    node.rows = rows
    node.counts = data.counts(rows)
    if not node.is_leaf:
        for c, p in zip(node.children, data.partition(node, rows)):
            _redistribute(data, c, p)


def collapse(node: _Node) -> None:
    """Turn subtrees that do not reduce training error into leaves."""
    if node.is_leaf:
        return
    if _training_errors(node) >= node.counts.sum() - node.counts.max() - 1e-3:
        node.make_leaf()
    else:
        for c in node.children:
            collapse(c)


def prune(data: _Data, node: _Node, cf: float, subtree_raising: bool = True) -> None:
    if node.is_leaf:
        return
    for c in node.children:
        prune(data, c, cf, subtree_raising)
    sizes = [c.counts.sum() for c in node.children]
    largest = node.children[int(np.argmax(sizes))]
    err_largest = _branch_errors(data, largest, node.rows, cf) if subtree_raising else math.inf
    err_leaf = _dist_errors(node.counts, cf)
    err_tree = _tree_errors(node, cf)
    if err_leaf <= err_tree + 0.1 and err_leaf <= err_largest + 0.1:
        node.make_leaf()
    elif err_largest <= err_tree + 0.1:
        node.feature, node.threshold = largest.feature, largest.threshold
        node.children = largest.children
        _redistribute(data, node, node.rows)
        prune(data, node, cf, subtree_raising)


def reduced_error_prune(data: _Data, node: _Node, rows: np.ndarray) -> float:
    """Bottom-up replacement of subtrees by leaves when held-out errors do not grow.

    ``rows`` are the held-out rows reaching ``node``; returns their errors.
    """
    held = data.counts(rows)
    leaf_err = held.sum() - held[int(np.argmax(node.counts))] if held.sum() else 0.0
    if node.is_leaf:
        return leaf_err
    sub_err = sum(reduced_error_prune(data, c, p)
                  for c, p in zip(node.children, data.partition(node, rows)))
    if leaf_err <= sub_err:
        node.make_leaf()
        return leaf_err
    return sub_err


# flattened trees -------------------------------------------------------------

@dataclass
class FlatTree:
    """Array form of one or more trees; ``roots`` gives each tree's first node."""

    feature: np.ndarray
    threshold: np.ndarray
    child: np.ndarray
    n_children: np.ndarray
    counts: np.ndarray
    dist: np.ndarray
    roots: np.ndarray

    @classmethod
    def from_nodes(cls, roots: list[_Node], n_classes: int) -> "FlatTree":
        feature, threshold, child, nch, counts, dist, starts = [], [], [], [], [], [], []
        for root in roots:
            starts.append(len(feature))
            queue = [(root, None)]
            head = 0
            while head < len(queue):
                node, parent_dist = queue[head]
                head += 1
                total = node.counts.sum()
                d = node.counts / total if total > 0 else (
                    parent_dist if parent_dist is not None else np.full(n_classes, 1.0 / n_classes))
                feature.append(node.feature)
                threshold.append(node.threshold)
                child.append(len(queue) + starts[-1] if not node.is_leaf else -1)
                nch.append(len(node.children))
                counts.append(node.counts)
                dist.append(d)
                queue.extend((c, d) for c in node.children)
        return cls(np.array(feature, dtype=np.int32), np.array(threshold, dtype=np.float64),
                   np.array(child, dtype=np.int32), np.array(nch, dtype=np.int32),
                   np.array(counts, dtype=np.float64).reshape(-1, n_classes),
                   np.array(dist, dtype=np.float64).reshape(-1, n_classes),
                   np.array(starts, dtype=np.int64))

    @classmethod
    def concat(cls, parts: list["FlatTree"]) -> "FlatTree":
        offsets = np.cumsum([0] + [len(p.feature) for p in parts[:-1]])
        child = [np.where(p.child >= 0, p.child + o, -1) for p, o in zip(parts, offsets)]
        return cls(np.concatenate([p.feature for p in parts]),
                   np.concatenate([p.threshold for p in parts]),
                   np.concatenate(child).astype(np.int32),
                   np.concatenate([p.n_children for p in parts]),
                   np.concatenate([p.counts for p in parts]),
                   np.concatenate([p.dist for p in parts]),
                   np.concatenate([p.roots + o for p, o in zip(parts, offsets)]))

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def leaves(self, X: np.ndarray, nominal: np.ndarray, tree: int = 0) -> np.ndarray:
        return _route(np.asarray(X, dtype=np.float64), int(self.roots[tree]), self.feature,
                      self.threshold, self.child, self.n_children, nominal)

    def to_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + k: getattr(self, k) for k in
                ("feature", "threshold", "child", "n_children", "counts", "dist", "roots")}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], prefix: str = "") -> "FlatTree":
        return cls(**{k: arrays[prefix + k] for k in
                      ("feature", "threshold", "child", "n_children", "counts", "dist", "roots")})

    def dump(self, schema: FeatureSchema | None = None, classes=None, tree: int = 0) -> str:
        """Indented rendering of splits, leaves annotated with their class counts."""
        names = classes or [str(k) for k in range(self.counts.shape[1])]
        out: list[str] = []

        def counts(node):
            return "[" + " ".join(f"{c}:{v:g}" for c, v in zip(names, self.counts[node])) + "]"

        def test(node, f, b):
            col = schema.columns[f] if schema is not None else None
            label = col.name if col is not None else f"x{f}"
            if col is not None and col.kind == NOMINAL:
                return f"{label} = {col.domain[b] if b < len(col.domain) else '<unseen>'}"
            if col is None and self.n_children[node] != 2:
                return f"{label} = {b}"
            return f"{label} {'<=' if b == 0 else '>'} {self.threshold[node]:.6g}"

        def walk(node, depth):
            f = int(self.feature[node])
            for b in range(int(self.n_children[node])):
                c = int(self.child[node]) + b
                line = "|   " * depth + test(node, f, b)
                if self.feature[c] < 0:
                    line += ": " + counts(c)
                out.append(line)
                walk(c, depth + 1)

        root = int(self.roots[tree])
        if self.feature[root] < 0:
            out.append(counts(root))
        walk(root, 0)
        return "\n".join(out) + "\n"


@numba.njit(cache=True, nogil=True)
def _route(X, root, feature, threshold, child, n_children, nominal):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for r in range(n):
        node = root
        while feature[node] >= 0:
            f = feature[node]
            v = X[r, f]
            if nominal[f]:
                b = int(v) if v >= 0 and v < n_children[node] else n_children[node] - 1
            else:
                b = 0 if v <= threshold[node] else 1
            node = child[node] + b
        out[r] = node
    return out


def _branches(schema: FeatureSchema | None, X: np.ndarray, branches) -> np.ndarray:
    if branches is not None:
        return np.asarray(branches, dtype=np.int64)
    if schema is not None:
        return schema.cardinalities.astype(np.int64)
    return np.zeros(X.shape[1], dtype=np.int64)


def _n_classes(y: np.ndarray, n_classes: int | None) -> int:
    if len(y) == 0:
        raise ValueError("empty training set")
    k = int(y.max()) + 1
    if n_classes is not None and n_classes < k:
        raise ValueError(f"class index {k - 1} out of range for {n_classes} classes")
    return n_classes or k


class _TreeEstimator(Estimator):
    input_kind = "raw"

    def __init__(self, flat: FlatTree, nominal: np.ndarray, params: dict[str, Any]):
        self.flat = flat
        self.nominal = np.asarray(nominal, dtype=np.bool_)
        self.params = params

    @property
    def n_classes(self) -> int:
        return self.flat.dist.shape[1]

    def predict_distribution(self, X: np.ndarray) -> np.ndarray:
        return self.flat.dist[self.flat.leaves(X, self.nominal)]

    def predict_class(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_distribution(X), axis=1)

    def dump(self, schema: FeatureSchema | None = None, classes=None) -> str:
        return self.flat.dump(schema, classes)

    def to_arrays(self):
        return {**self.flat.to_arrays(), "nominal": self.nominal}, dict(self.params)

    @classmethod
    def from_arrays(cls, arrays, meta):
        return cls(FlatTree.from_arrays(arrays), arrays["nominal"], meta)


class DecisionTreeModel(_TreeEstimator):
    """C4.5-style tree: full growth, collapse, then pessimistic pruning."""

    tag = "j48"

    @classmethod
    def fit(cls, X, y, schema: FeatureSchema | None = None, *, confidence_factor: float = 0.25,
            min_leaf: float = 2, subtree_raising: bool = True, collapse_tree: bool = True,
            pruned: bool = True, criterion: str = GAIN, reduced_error_pruning: bool = False,
            num_folds: int = 3, seed: int = 1, n_classes: int | None = None, branches=None,
            sample_weight=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        C = _n_classes(y, n_classes)
        if not 0 < confidence_factor <= 0.5:
            raise ValueError("confidence factor must lie in (0, 0.5]")
        br = _branches(schema, X, branches)
        data = _data(X, y, sample_weight, br, C)
        rows = np.arange(len(y))
        held = None
        if pruned and reduced_error_pruning:
            if num_folds < 2:
                raise ValueError("reduced-error pruning needs num_folds >= 2")
            perm = SplitMix64.derive(seed, "rep").permutation(len(y))
            cut = len(y) - len(y) // num_folds
            rows, held = np.sort(perm[:cut]), np.sort(perm[cut:])
        root = grow(data, rows, min_leaf=min_leaf, min_gain=0.0, criterion=criterion, keep_rows=True)
        if collapse_tree:
            collapse(root)
        if pruned:
            if held is not None:
                reduced_error_prune(data, root, held)
            else:
                prune(data, root, confidence_factor, subtree_raising)
        params = {"confidence_factor": confidence_factor, "min_leaf": min_leaf,
                  "subtree_raising": subtree_raising, "collapse": collapse_tree, "pruned": pruned,
                  "criterion": criterion, "reduced_error_pruning": reduced_error_pruning,
                  "num_folds": num_folds}
        est = cls(FlatTree.from_nodes([root], C), br > 0, params)
        return est, params


def default_m_tries(n_features: int) -> int:
    return int(math.floor(math.log2(n_features))) + 1


def _random_tree(data: _Data, rows: np.ndarray, stream: SplitMix64, m_tries: int,
                 min_gain: float, min_leaf: float) -> _Node:
    F = len(data.branches)
    return grow(data, rows, min_leaf=min_leaf, min_gain=min_gain,
                features=lambda: stream.choose(F, m_tries))


def _check_m(m_tries: int | None, F: int) -> int:
    m = default_m_tries(F) if m_tries is None else int(m_tries)
    if not 1 <= m <= F:
        raise ValueError(f"m_tries must lie in [1, {F}], got {m}")
    return m


class RandomTreeModel(_TreeEstimator):
    """Unpruned tree whose nodes each look at a random subset of features."""

    tag = "random-tree"

    @classmethod
    def fit(cls, X, y, schema: FeatureSchema | None = None, *, m_tries: int | None = None,
            min_gain: float = 0.001, min_leaf: float = 1, seed: int = 1,
            n_classes: int | None = None, branches=None, sample_weight=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        C = _n_classes(y, n_classes)
        br = _branches(schema, X, branches)
        m = _check_m(m_tries, X.shape[1])
        data = _data(X, y, sample_weight, br, C)
        root = _random_tree(data, np.arange(len(y)), SplitMix64.derive(seed, "tree"), m, min_gain, min_leaf)
        params = {"m_tries": m, "min_gain": min_gain, "min_leaf": min_leaf, "seed": seed}
        return cls(FlatTree.from_nodes([root], C), br > 0, params), params


@dataclass
class ForestConfig:
    n_trees: int = 100
    m_tries: int | None = None
    seed: int = 1
    min_gain: float = 0.001
    min_leaf: float = 1
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("a forest needs at least one tree")


def _forest_member(X, y, branches, n_classes, cfg: ForestConfig, m: int, i: int):
    n = len(y)
    stream = SplitMix64.derive(cfg.seed, "tree", i)
    multiplicity = np.bincount(stream.below(n, n), minlength=n)
    rows = np.flatnonzero(multiplicity)
    data = _data(X, y, multiplicity.astype(np.float64), branches, n_classes)
    root = _random_tree(data, rows, stream, m, cfg.min_gain, cfg.min_leaf)
    return FlatTree.from_nodes([root], n_classes), np.packbits(multiplicity > 0)


class RandomForestModel(Estimator):
    """Bootstrap-aggregated random trees with plain majority voting.

    The class distribution reported for an instance is the fraction of
    trees voting for each class.
    """

    tag = "random-forest"
    input_kind = "raw"

    def __init__(self, flat: FlatTree, nominal: np.ndarray, in_bag: np.ndarray, n_train: int,
                 params: dict[str, Any]):
        self.flat = flat
        self.nominal = np.asarray(nominal, dtype=np.bool_)
        self.in_bag = in_bag
        self.n_train = int(n_train)
        self.params = params

    @classmethod
    def fit(cls, X, y, schema: FeatureSchema | None = None, *, config: ForestConfig | None = None,
            n_classes: int | None = None, branches=None, **overrides):
        from joblib import Parallel, delayed

        cfg = config or ForestConfig(**overrides)
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        C = _n_classes(y, n_classes)
        br = _branches(schema, X, branches)
        m = _check_m(cfg.m_tries, X.shape[1])
        jobs = (delayed(_forest_member)(X, y, br, C, cfg, m, i) for i in range(cfg.n_trees))
        if cfg.n_jobs == 1:
            members = [f(*a, **k) for f, a, k in jobs]
        else:
            members = Parallel(n_jobs=cfg.n_jobs)(jobs)
        flat = FlatTree.concat([t for t, _ in members])
        in_bag = np.stack([b for _, b in members])
        params = {"n_trees": cfg.n_trees, "m_tries": m, "seed": cfg.seed,
                  "min_gain": cfg.min_gain, "min_leaf": cfg.min_leaf}
        return cls(flat, br > 0, in_bag, len(y), params), params

    @property
    def n_trees(self) -> int:
        return len(self.flat.roots)

    @property
    def n_classes(self) -> int:
        return self.flat.dist.shape[1]

    def tree_votes(self, X: np.ndarray) -> np.ndarray:
        """(n_trees, n) class index predicted by every tree."""
        X = np.asarray(X, dtype=np.float64)
        return np.stack([np.argmax(self.flat.dist[self.flat.leaves(X, self.nominal, t)], axis=1)
                         for t in range(self.n_trees)])

    def _tally(self, votes: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        n, C = votes.shape[1], self.n_classes
        cells = np.arange(n) * C + votes
        if mask is not None:
            cells = cells[mask]
        return np.bincount(cells.ravel(), minlength=n * C).reshape(n, C).astype(np.float64)

    def predict_distribution(self, X: np.ndarray) -> np.ndarray:
        return self._tally(self.tree_votes(X)) / self.n_trees

    def predict_class(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_distribution(X), axis=1)

    def out_of_bag(self) -> np.ndarray:
        """(n_trees, n_train) boolean: record left out of that tree's bootstrap."""
        return ~np.unpackbits(self.in_bag, axis=1, count=self.n_train).astype(bool)

    def oob_error(self, X: np.ndarray, y: np.ndarray) -> float:
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if len(y) != self.n_train:
            raise ValueError("OOB error needs exactly the training records")
        oob = self.out_of_bag()
        tally = self._tally(self.tree_votes(X), oob)
        covered = oob.any(axis=0)
        if not covered.any():
            raise ValueError("no record is out of bag for any tree; OOB error undefined")
        wrong = np.argmax(tally[covered], axis=1) != y[covered]
        return float(wrong.mean())

    def to_arrays(self):
        arrays = {**self.flat.to_arrays(), "nominal": self.nominal, "in_bag": self.in_bag}
        return arrays, {**self.params, "n_train": self.n_train}

    @classmethod
    def from_arrays(cls, arrays, meta):
        meta = dict(meta)
        n_train = meta.pop("n_train")
        return cls(FlatTree.from_arrays(arrays), arrays["nominal"], arrays["in_bag"], n_train, meta)


def oob_error(model: RandomForestModel, X: np.ndarray, y: np.ndarray) -> float:
    return model.oob_error(X, y)
