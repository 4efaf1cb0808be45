"""Naive Bayes, prior correction, source combination and a K2-searched Bayes network.

All probability arithmetic stays in log space until the final normalization.
Features are described by a cardinality vector: 0 marks a numeric column
(Gaussian likelihood), k > 0 a discrete column with codes 0..k-1 where any
out-of-range code is read as the last (UNSEEN) symbol.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .model import Estimator

_LOG_2PI = math.log(2 * math.pi)


def _normalize_log(logp: np.ndarray) -> np.ndarray:
    top = np.max(logp, axis=-1, keepdims=True)
    if not np.isfinite(top).all():
        raise FloatingPointError("every class has zero likelihood for some instance")
    return np.exp(logp - logsumexp(logp, axis=-1, keepdims=True))


def _codes(col: np.ndarray, k: int) -> np.ndarray:
    c = np.asarray(col).astype(np.int64)
    c[(c < 0) | (c >= k)] = k - 1
    return c


def _class_count(y: np.ndarray, n_classes: int | None) -> int:
    if len(y) == 0:
        raise ValueError("empty training set")
    k = int(y.max()) + 1
    return n_classes or k


def _log_prior(counts: np.ndarray, alpha: float) -> np.ndarray:
    p = (counts + alpha) / (counts.sum() + alpha * len(counts))
    with np.errstate(divide="ignore"):
        return np.log(p)


class NaiveBayesModel(Estimator):
    """Class priors plus per-class independent feature likelihoods.

    Discrete features use add-alpha smoothed frequency tables over their
    full cardinality; numeric features use a Gaussian with MLE variance
    floored at ``variance_floor``. ``prior_alpha`` (default 0) smooths the
    class prior, which plain frequencies leave at zero for absent classes.
    """

    tag = "naive-bayes"
    input_kind = "scaled"

    def __init__(self, log_prior, cards, tables, mean, var, params):
        self.log_prior = np.asarray(log_prior, dtype=np.float64)
        self.cards = np.asarray(cards, dtype=np.int64)
        self.tables = list(tables)          # per discrete column: (C, k) log-probabilities
        self.mean = np.asarray(mean, dtype=np.float64)
        self.var = np.asarray(var, dtype=np.float64)
        self.params = params

    @property
    def n_classes(self) -> int:
        return len(self.log_prior)

    @property
    def priors(self) -> np.ndarray:
        return np.exp(self.log_prior)

    @classmethod
    def fit(cls, X, y, schema=None, *, alpha: float = 1.0, variance_floor: float = 1e-9,
            prior_alpha: float = 0.0, cardinalities=None, n_classes: int | None = None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        C = _class_count(y, n_classes)
        if cardinalities is not None:
            cards = np.asarray(cardinalities, dtype=np.int64)
        elif schema is not None:
            cards = schema.cardinalities.astype(np.int64)
        else:
            cards = np.zeros(X.shape[1], dtype=np.int64)
        if len(cards) != X.shape[1]:
            raise ValueError("cardinalities do not match the feature count")
        if alpha < 0 or prior_alpha < 0:
            raise ValueError("smoothing must be non-negative")
        class_counts = np.bincount(y, minlength=C).astype(np.float64)
        tables = []
        num = np.flatnonzero(cards == 0)
        mean = np.zeros((C, len(num)))
        var = np.ones((C, len(num)))
        for j in np.flatnonzero(cards > 0):
            k = int(cards[j])
            counts = np.bincount(y * k + _codes(X[:, j], k), minlength=C * k).reshape(C, k).astype(np.float64)
            tables.append(_smoothed_log(counts, alpha))
        for c in range(C):
            rows = X[y == c][:, num]
            if len(rows):
                mean[c] = rows.mean(axis=0)
                var[c] = ((rows - mean[c]) ** 2).mean(axis=0)
        var = np.maximum(var, variance_floor)
        params = {"alpha": alpha, "variance_floor": variance_floor, "prior_alpha": prior_alpha}
        return cls(_log_prior(class_counts, prior_alpha), cards, tables, mean, var, params), params

    def log_likelihood(self, X: np.ndarray) -> np.ndarray:
        """(n, C) sum over features of log p(x_d | y), the prior excluded."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != len(self.cards):
            raise ValueError(f"expected {len(self.cards)} features, got {X.shape[1]}")
        out = np.zeros((len(X), self.n_classes))
        t = 0
        g = 0
        for j, k in enumerate(self.cards.tolist()):
            if k > 0:
                out += self.tables[t][:, _codes(X[:, j], k)].T
                t += 1
            else:
                d = X[:, j][:, None] - self.mean[:, g]
                out += -0.5 * (_LOG_2PI + np.log(self.var[:, g]) + d * d / self.var[:, g])
                g += 1
        return out

    def log_joint(self, X: np.ndarray) -> np.ndarray:
        return self.log_prior + self.log_likelihood(X)

    def posterior(self, X: np.ndarray) -> np.ndarray:
        return _normalize_log(self.log_joint(X))

    def predict_distribution(self, X: np.ndarray) -> np.ndarray:
        return self.posterior(X)

    def to_arrays(self):
        arrays = {"log_prior": self.log_prior, "cards": self.cards, "mean": self.mean, "var": self.var}
        arrays.update({f"table{i:03d}": t for i, t in enumerate(self.tables)})
        return arrays, dict(self.params)

    @classmethod
    def from_arrays(cls, arrays, meta):
        tables = [arrays[k] for k in sorted(arrays) if k.startswith("table")]
        return cls(arrays["log_prior"], arrays["cards"], tables, arrays["mean"], arrays["var"], dict(meta))


def _smoothed_log(counts: np.ndarray, alpha: float) -> np.ndarray:
    """Row-wise add-alpha estimate in log space; empty rows become uniform."""
    k = counts.shape[-1]
    num = counts + alpha
    den = num.sum(axis=-1, keepdims=True)
    empty = den[..., 0] <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(num) - np.log(den)
    out[empty] = -math.log(k)
    return out


def train_naive_bayes(X, y, alpha: float = 1.0, variance_floor: float = 1e-9, **kw) -> NaiveBayesModel:
    return NaiveBayesModel.fit(X, y, alpha=alpha, variance_floor=variance_floor, **kw)[0]


def rebalance_posterior(posterior, balanced_prior, true_prior) -> np.ndarray:
    """Move a posterior learned under ``balanced_prior`` onto ``true_prior``.

    p'(y|x) is proportional to p(y|x) / P_bal(y) * P_true(y).
    """
    post = np.asarray(posterior, dtype=np.float64)
    bal = np.asarray(balanced_prior, dtype=np.float64)
    true = np.asarray(true_prior, dtype=np.float64)
    if post.shape[-1] != len(bal) or len(bal) != len(true):
        raise ValueError("class arity mismatch")
    if (true < 0).any() or not math.isclose(true.sum(), 1.0, abs_tol=1e-9):
        raise ValueError("true priors must be non-negative and sum to 1")
    if (bal <= 0).any():
        raise ValueError("balanced priors must be positive")
    if ((true == 0) & (post > 0)).any():
        raise ValueError("zero true prior for a class with posterior mass")
    w = post / bal * true
    return w / w.sum(axis=-1, keepdims=True)


def combine_sources(posteriors: Sequence[np.ndarray], prior) -> np.ndarray:
    """Fuse per-group posteriors of conditionally independent feature groups.

    With p_g(y|x_g) proportional to p(x_g|y) p(y), the joint posterior is
    proportional to p(y) * prod_g p_g(y|x_g) / p(y).
    """
    if len(posteriors) < 2:
        raise ValueError("need at least two sources")
    prior = np.asarray(prior, dtype=np.float64)
    posts = [np.asarray(p, dtype=np.float64) for p in posteriors]
    if any(p.shape[-1] != len(prior) for p in posts) or len({p.shape for p in posts}) != 1:
        raise ValueError("class arity mismatch across sources")
    with np.errstate(divide="ignore"):
        logp = (1 - len(posts)) * np.log(prior)
        logp = np.where(prior > 0, logp, -np.inf)
        for p in posts:
            logp = logp + np.log(p)
    return _normalize_log(logp)


# Bayes network ---------------------------------------------------------------

def equal_frequency_cuts(values: np.ndarray, bins: int) -> np.ndarray:
    """Cut points giving ``bins`` roughly equal-count bins.

    A value equal to a cut falls in the lower bin; repeated cuts collapse,
    so heavily tied columns get fewer bins.
    """
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = len(v)
    if n == 0 or bins < 2:
        return np.empty(0)
    pos = np.ceil(np.arange(1, bins) * n / bins).astype(np.int64) - 1
    cuts = np.unique(v[np.clip(pos, 0, n - 1)])
    return cuts[cuts < v[-1]]


def bin_index(values: np.ndarray, cuts: np.ndarray) -> np.ndarray:
    return np.searchsorted(cuts, values, side="left")


@dataclass
class Discretizer:
    cards: np.ndarray                     # input cardinalities (0 = numeric)
    cuts: list[np.ndarray] = field(default_factory=list)   # one per numeric column

    @classmethod
    def fit(cls, X: np.ndarray, cards: np.ndarray, bins: int = 10) -> "Discretizer":
        cards = np.asarray(cards, dtype=np.int64)
        cuts = [equal_frequency_cuts(X[:, j], bins) for j in np.flatnonzero(cards == 0)]
        return cls(cards, cuts)

    @property
    def out_cards(self) -> np.ndarray:
        out = self.cards.copy()
        out[self.cards == 0] = [len(c) + 1 for c in self.cuts]
        return out

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.empty(X.shape, dtype=np.int64)
        g = 0
        for j, k in enumerate(self.cards.tolist()):
            if k > 0:
                out[:, j] = _codes(X[:, j], k)
            else:
                out[:, j] = bin_index(X[:, j], self.cuts[g])
                g += 1
        return out


def family_counts(D: np.ndarray, y: np.ndarray, node: int, parent: int, cards: np.ndarray,
                  n_classes: int) -> np.ndarray:
    """N_ijk as a (configurations, r_i) table; configuration = class + C * parent value."""
    r = int(cards[node])
    config = y.copy()
    q = n_classes
    if parent >= 0:
        config = config + n_classes * D[:, parent]
        q *= int(cards[parent])
    return np.bincount(config * r + D[:, node], minlength=q * r).reshape(q, r).astype(np.float64)


def bd_score(counts: np.ndarray, alpha: float) -> float:
    """Bayesian Dirichlet log marginal likelihood of one family, alpha per cell."""
    r = counts.shape[1]
    nij = counts.sum(axis=1)
    return float((gammaln(r * alpha) - gammaln(r * alpha + nij)).sum()
                 + (gammaln(alpha + counts) - gammaln(alpha)).sum())


class BayesNetModel(Estimator):
    """Class node plus feature nodes; every feature has the class as a parent.

    ``parents[i]`` is the optional extra parent of feature i (-1 for none);
    ``cpts[i]`` has one row per (class, parent value) configuration with
    row index ``class + C * parent_value``.
    """

    tag = "bayes-net"
    input_kind = "scaled"

    def __init__(self, log_prior, parents, cards, cpts, discretizer: Discretizer | None,
                 params: dict[str, Any] | None = None, search_log=None):
        self.log_prior = np.asarray(log_prior, dtype=np.float64)
        self.parents = np.asarray(parents, dtype=np.int64)
        self.cards = np.asarray(cards, dtype=np.int64)
        self.log_cpts = [np.asarray(t, dtype=np.float64) for t in cpts]
        self.discretizer = discretizer
        self.params = params or {}
        self.search_log = search_log or []
        for i, p in enumerate(self.parents.tolist()):
            if p >= i:
                raise ValueError("extra parents must precede their child in node order")

    @property
    def n_classes(self) -> int:
        return len(self.log_prior)

    @classmethod
    def fit(cls, X, y, schema=None, *, alpha: float = 0.5, max_parents: int = 1, bins: int = 10,
            cardinalities=None, n_classes: int | None = None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        C = _class_count(y, n_classes)
        if cardinalities is not None:
            in_cards = np.asarray(cardinalities, dtype=np.int64)
        elif schema is not None:
            in_cards = schema.cardinalities.astype(np.int64)
        else:
            in_cards = np.zeros(X.shape[1], dtype=np.int64)
        if max_parents not in (0, 1):
            raise ValueError("only 0 or 1 extra parents are supported")
        disc = Discretizer.fit(X, in_cards, bins)
        D = disc.transform(X)
        cards = disc.out_cards
        parents, search_log = k2_search(D, y, cards, C, alpha, max_parents)
        cpts = [_smoothed_log(family_counts(D, y, i, p, cards, C), alpha)
                for i, p in enumerate(parents)]
        log_prior = _log_prior(np.bincount(y, minlength=C).astype(np.float64), alpha)
        params = {"alpha": alpha, "max_parents": max_parents, "bins": bins, "search": "K2",
                  "estimator": "simple"}
        return cls(log_prior, parents, cards, cpts, disc, params, search_log), params

    def discretize(self, X: np.ndarray) -> np.ndarray:
        if self.discretizer is None:
            return np.atleast_2d(np.asarray(X)).astype(np.int64)
        return self.discretizer.transform(X)

    def log_joint(self, X: np.ndarray) -> np.ndarray:
        D = self.discretize(X)
        if D.shape[1] != len(self.cards):
            raise ValueError(f"expected {len(self.cards)} features, got {D.shape[1]}")
        C = self.n_classes
        out = np.zeros((len(D), C)) + self.log_prior
        classes = np.arange(C)
        for i, (p, k) in enumerate(zip(self.parents.tolist(), self.cards.tolist())):
            codes = _codes(D[:, i], k)
            config = np.broadcast_to(classes, (len(D), C))
            if p >= 0:
                config = config + C * _codes(D[:, p], int(self.cards[p]))[:, None]
            out += self.log_cpts[i][config, codes[:, None]]
        return out

    def posterior(self, X: np.ndarray) -> np.ndarray:
        return _normalize_log(self.log_joint(X))

    def predict_distribution(self, X: np.ndarray) -> np.ndarray:
        return self.posterior(X)

    def dump(self, names: Sequence[str] | None = None, tables: bool = False) -> str:
        names = list(names) if names is not None else [f"x{i}" for i in range(len(self.cards))]
        out = io.StringIO()
        out.write("class <-\n")
        for i, p in enumerate(self.parents.tolist()):
            out.write(f"{names[i]} <- class" + (f", {names[p]}" if p >= 0 else "") + "\n")
            if tables:
                for row in np.exp(self.log_cpts[i]):
                    out.write("    " + " ".join(f"{v:.6f}" for v in row) + "\n")
        return out.getvalue()

    def to_arrays(self):
        arrays = {"log_prior": self.log_prior, "parents": self.parents, "cards": self.cards}
        arrays.update({f"cpt{i:03d}": t for i, t in enumerate(self.log_cpts)})
        if self.discretizer is not None:
            arrays["in_cards"] = self.discretizer.cards
            arrays.update({f"cuts{i:03d}": c for i, c in enumerate(self.discretizer.cuts)})
        return arrays, dict(self.params)

    @classmethod
    def from_arrays(cls, arrays, meta):
        cpts = [arrays[k] for k in sorted(arrays) if k.startswith("cpt")]
        disc = None
        if "in_cards" in arrays:
            disc = Discretizer(arrays["in_cards"], [arrays[k] for k in sorted(arrays) if k.startswith("cuts")])
        return cls(arrays["log_prior"], arrays["parents"], arrays["cards"], cpts, disc, dict(meta))


def k2_search(D: np.ndarray, y: np.ndarray, cards: np.ndarray, n_classes: int, alpha: float,
              max_parents: int) -> tuple[list[int], list[tuple[int, int, float, float]]]:
    """Greedy K2 in column order with the class as a fixed parent of every node.

    Returns the extra parent per node (-1 for none) and the accepted
    additions as (node, parent, score before, score after).
    """
    parents = []
    log = []
    for i in range(D.shape[1]):
        current = bd_score(family_counts(D, y, i, -1, cards, n_classes), alpha)
        chosen = -1
        if max_parents >= 1 and i > 0:
            best, best_z = current, -1
            for z in range(i):
                s = bd_score(family_counts(D, y, i, z, cards, n_classes), alpha)
                if s > best:
                    best, best_z = s, z
            if best_z >= 0:
                log.append((i, best_z, current, best))
                chosen = best_z
        parents.append(chosen)
    return parents, log
