"""Feature ranking by decision-tree F1 backward elimination and two-sample tests."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats
from sklearn.model_selection import StratifiedKFold
from sklearn.tree import DecisionTreeClassifier

from .dataset import LabeledDataset
from .errors import DataError

log = logging.getLogger(__name__)

MRF_THRESHOLD = 0.85
NFRF_THRESHOLD = 0.80
EXACT_MW_MAX_N = 12


@dataclass
class RankedFeatures:
    entries: list[tuple[str, float]]  # most important first
    threshold: float | None = None

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.entries]


@dataclass
class TestResult:
    statistic: float
    p_value: float
    kind: str
    df: float | None = None


# --------------------------------------------------------------------------
# F1 importance


def _f1(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    tp = np.sum((y_pred == 1) & (y_true == 1))
    fp = np.sum((y_pred == 1) & (y_true == 0))
    fn = np.sum((y_pred == 0) & (y_true == 1))
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def rank_by_f1_importance(data: LabeledDataset, cv: int = 5, seed: int = 0, max_depth: int = 3) -> RankedFeatures:
    """Rank features by backward elimination under cross-validated F1.

    At each step every remaining feature is tentatively removed and a
    depth-limited tree is cross-validated on the rest; the feature whose
    removal costs the least F1 is dropped for good (first in column order on
    ties). The reversed elimination order is the ranking. Scores are
    rank-based, ``1 - rank / p``, so the top feature scores 1.

    Rows are put in a canonical order before splitting, which makes the
    result independent of the input row order.
    """
    X, y = data.X, data.labels
    p = X.shape[1]
    if p < 2:
        raise DataError("need at least two features to rank")
    if y is None or len(np.unique(y)) < 2:
        raise DataError("both classes must be present")
    if np.isnan(X).any():
        raise DataError("features with missing values cannot be ranked")
    if np.all(np.ptp(X, axis=0) == 0):
        raise DataError("degenerate data: all rows are identical")

    order = np.lexsort(np.column_stack([X, y]).T[::-1])
    X, y = X[order], y[order]
    n_splits = max(2, min(cv, int(np.bincount(y).min())))
    if np.bincount(y).min() < 2:
        raise DataError("each class needs at least two rows for cross-validation")
    folds = list(StratifiedKFold(n_splits, shuffle=True, random_state=seed).split(X, y))

    def cv_f1(cols: list[int]) -> float:
        scores = []
        for train, test in folds:
            tree = DecisionTreeClassifier(max_depth=max_depth, random_state=seed)
            tree.fit(X[np.ix_(train, cols)], y[train])
            scores.append(_f1(y[test], tree.predict(X[np.ix_(test, cols)])))
        return float(np.mean(scores))

    remaining = list(range(p))
    eliminated = []
    while len(remaining) > 1:
        trial = [cv_f1([c for c in remaining if c != f]) for f in remaining]
        drop = remaining[int(np.argmax(trial))]
        remaining.remove(drop)
        eliminated.append(drop)
        log.debug("dropped %s (F1 without it %.4f)", data.feature_names[drop], max(trial))
    ranking = remaining + eliminated[::-1]
    return RankedFeatures([(data.feature_names[c], 1.0 - r / p) for r, c in enumerate(ranking)])


def select_top(ranked: RankedFeatures, threshold: float) -> list[str]:
    """Features scoring at least `threshold`, in rank order; never empty."""
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    ranked.threshold = threshold
    keep = [n for n, s in ranked.entries if s >= threshold]
    if not keep and ranked.entries:
        warnings.warn(f"no feature scored >= {threshold}; keeping the top-ranked feature", stacklevel=2)
        keep = [ranked.entries[0][0]]
    return keep


# --------------------------------------------------------------------------
# two-sample tests


def _u_distribution(m: int, n: int) -> np.ndarray:
    """Counts of arrangements giving each U value, for sample sizes m and n."""
    # f[j][u]: arrangements of i x's and j y's with U = u, built row by row over i
    prev = [np.ones(1, dtype=np.float64) for _ in range(n + 1)]
    for i in range(1, m + 1):
        cur = [np.ones(1, dtype=np.float64)]
        for j in range(1, n + 1):
            size = i * j + 1
            a = np.zeros(size)
            a[: len(cur[j - 1])] += cur[j - 1]  # last element is y: U unchanged
            a[j : j + len(prev[j])] += prev[j]  # last element is x: beats all j y's
            cur.append(a)
        prev = cur
    return prev[n]


def mann_whitney(a, b) -> TestResult:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    na, nb = len(a), len(b)
    if na < 1 or nb < 1:
        raise ValueError("each group needs at least one value")
    pooled = np.concatenate([a, b])
    ranks = stats.rankdata(pooled)
    u = float(ranks[:na].sum() - na * (na + 1) / 2.0)
    _, tie_counts = np.unique(pooled, return_counts=True)
    ties = bool(np.any(tie_counts > 1))
    if na + nb <= EXACT_MW_MAX_N and not ties:
        dist = _u_distribution(na, nb)
        dist = dist / dist.sum()
        k = int(round(u))
        p = 2.0 * min(dist[: k + 1].sum(), dist[k:].sum())
        return TestResult(u, min(1.0, p), "mann-whitney")
    N = na + nb
    mu = na * nb / 2.0
    tie_term = float(np.sum(tie_counts**3 - tie_counts)) / (N * (N - 1))
    var = na * nb / 12.0 * ((N + 1) - tie_term)
    if var <= 0:
        return TestResult(u, 1.0, "mann-whitney")
    z = max(abs(u - mu) - 0.5, 0.0) / np.sqrt(var)
    return TestResult(u, float(min(1.0, 2.0 * stats.norm.sf(z))), "mann-whitney")


def welch_t(a, b) -> TestResult:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise ValueError("the t-test needs at least two values per group")
    va, vb = a.var(ddof=1) / na, b.var(ddof=1) / nb
    se2 = va + vb
    if se2 == 0:
        # both groups constant: reported as no evidence of a difference
        return TestResult(0.0, 1.0, "t", float(na + nb - 2))
    t = (a.mean() - b.mean()) / np.sqrt(se2)
    df = se2**2 / (va**2 / (na - 1) + vb**2 / (nb - 1))
    return TestResult(float(t), float(min(1.0, 2.0 * stats.t.sf(abs(t), df))), "t", float(df))


def two_sample_test(a, b, kind: str = "mann-whitney") -> TestResult:
    """Two-sided test of group A vs group B: Welch ``"t"`` or ``"mann-whitney"``.

    Mann-Whitney is exact (full null distribution of U) when the samples
    total at most 12 values without ties; otherwise it uses the normal
    approximation with tie and continuity corrections. The reported statistic
    is U of group A.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("values must be finite")
    if kind == "t":
        return welch_t(a, b)
    if kind == "mann-whitney":
        return mann_whitney(a, b)
    raise ValueError(f"unknown test kind {kind!r}")


def significance_filter(data: LabeledDataset, features, alpha: float = 0.05, kind: str = "mann-whitney"):
    """``(feature, TestResult)`` pairs with p < alpha, ascending by p.

    Group A is the RN class (label 0), group B the rBT class (label 1);
    missing values are dropped per feature.
    """
    y = data.labels
    if y is None or not ((y == 0).any() and (y == 1).any()):
        raise DataError("both classes must be present")
    out = []
    for f in features:
        col = data.column(f)
        ok = ~np.isnan(col)
        a, b = col[ok & (y == 0)], col[ok & (y == 1)]
        if len(a) < (2 if kind == "t" else 1) or len(b) < (2 if kind == "t" else 1):
            continue
        res = two_sample_test(a, b, kind)
        if res.p_value < alpha:
            out.append((f, res))
    out.sort(key=lambda fr: (fr[1].p_value, fr[0]))
    return out
