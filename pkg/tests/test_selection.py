import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from oracles import mw_enumeration
from radcopula.dataset import LabeledDataset
from radcopula.errors import DataError
from radcopula.selection import (
    RankedFeatures,
    mann_whitney,
    rank_by_f1_importance,
    select_top,
    significance_filter,
    two_sample_test,
    welch_t,
)
from radcopula.synthetic import classification_table


def test_mann_whitney_disjoint_triplets():
    r = two_sample_test([1, 2, 3], [4, 5, 6], "mann-whitney")
    assert r.statistic == 0.0
    assert r.p_value == pytest.approx(0.1, abs=1e-15)
    assert mw_enumeration(np.array([1, 2, 3.]), np.array([4, 5, 6.]))[1] == pytest.approx(0.1)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10**6))
def test_mann_whitney_exact_matches_enumeration(na, nb, seed):
    if na + nb > 10:
        return
    vals = np.random.default_rng(seed).permutation(na + nb).astype(float)
    a, b = vals[:na], vals[na:]
    u, p = mw_enumeration(a, b)
    res = mann_whitney(a, b)
    assert res.statistic == u
    assert res.p_value == pytest.approx(p, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 30), st.integers(2, 30), st.integers(0, 10**6), st.booleans())
def test_two_sample_symmetry(na, nb, seed, ties):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=na), r.normal(size=nb) + 0.5
    if ties:
        a, b = np.round(a), np.round(b)
    m1, m2 = two_sample_test(a, b), two_sample_test(b, a)
    assert m1.statistic + m2.statistic == na * nb
    assert m1.p_value == pytest.approx(m2.p_value, abs=1e-12)
    if np.var(a) + np.var(b) > 0:
        t1, t2 = two_sample_test(a, b, "t"), two_sample_test(b, a, "t")
        assert t1.statistic == pytest.approx(-t2.statistic)
        assert t1.p_value == pytest.approx(t2.p_value, abs=1e-12)


def test_mann_whitney_matches_scipy_asymptotic(rng):
    a, b = rng.normal(size=40), np.round(rng.normal(size=25), 1)
    ours = mann_whitney(a, b)
    ref = stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
    assert ours.statistic == ref.statistic
    assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-10)


def test_welch_identical_groups():
    r = two_sample_test([1, 2, 3], [1, 2, 3], "t")
    assert r.statistic == 0.0 and r.p_value == 1.0


def test_welch_closed_form_and_integrated_cdf():
    r = welch_t([1, 2, 3], [2, 3, 4])
    assert r.statistic == pytest.approx(-1.2247, abs=1e-4)
    assert r.df == pytest.approx(4.0, abs=1e-12)
    # t density integrated numerically, independent of the t distribution code
    df = r.df
    c = math.exp(math.lgamma((df + 1) / 2) - math.lgamma(df / 2)) / math.sqrt(math.pi * df)
    tail, _ = integrate.quad(lambda t: c * (1 + t * t / df) ** (-(df + 1) / 2), abs(r.statistic), np.inf)
    assert r.p_value == pytest.approx(2 * tail, abs=1e-9)
    assert r.p_value == pytest.approx(0.2878, abs=1e-4)


def test_two_sample_rejects_bad_input():
    with pytest.raises(ValueError):
        two_sample_test([1, np.nan], [2, 3])
    with pytest.raises(ValueError):
        two_sample_test([1, 2], [3, 4], "anova")
    with pytest.raises(ValueError):
        welch_t([1], [2, 3])


def _table(columns, labels):
    X = np.column_stack(columns)
    return LabeledDataset([f"r{i}" for i in range(len(labels))], X, [f"f{j}" for j in range(X.shape[1])], labels)


def test_separating_feature_ranked_first(rng):
    y = np.r_[np.zeros(30, int), np.ones(30, int)]
    sep = y + rng.normal(scale=0.1, size=60)
    noise = rng.normal(size=60)
    ranked = rank_by_f1_importance(_table([noise, sep], y), seed=0)
    assert ranked.names[0] == "f1"
    # exhaustive check on the noise-only feature: its CV F1 sits near chance
    from sklearn.model_selection import StratifiedKFold
    from sklearn.tree import DecisionTreeClassifier

    f1s = []
    for tr, te in StratifiedKFold(5, shuffle=True, random_state=0).split(noise[:, None], y):
        pred = DecisionTreeClassifier(max_depth=3, random_state=0).fit(noise[tr, None], y[tr]).predict(noise[te, None])
        tp = np.sum((pred == 1) & (y[te] == 1))
        f1s.append(2 * tp / (np.sum(pred == 1) + np.sum(y[te] == 1)))
    assert 0.2 < np.mean(f1s) < 0.8


def test_duplicate_feature_fills_top_two(rng):
    y = np.r_[np.zeros(30, int), np.ones(30, int)]
    sep = y + rng.normal(scale=0.1, size=60)
    ranked = rank_by_f1_importance(_table([rng.normal(size=60), sep, sep], y))
    assert set(ranked.names[:2]) == {"f1", "f2"}


def test_constant_duplicates_are_degenerate():
    y = np.r_[np.zeros(5, int), np.ones(5, int)]
    with pytest.raises(DataError, match="degenerate"):
        rank_by_f1_importance(_table([np.ones(10), np.ones(10)], y))


def test_ranking_deterministic_and_row_order_invariant():
    data = classification_table(60, 20, 8, 3, 1.0, seed=2)
    a = rank_by_f1_importance(data, seed=5)
    b = rank_by_f1_importance(data, seed=5)
    perm = np.random.default_rng(0).permutation(len(data))
    c = rank_by_f1_importance(data.subset(perm), seed=5)
    assert a.entries == b.entries == c.entries
    scores = [s for _, s in a.entries]
    assert scores == sorted(scores, reverse=True) and scores[0] == 1.0


def test_select_top_examples():
    ranked = RankedFeatures([("a", 1.0), ("b", 0.9), ("c", 0.3)])
    assert select_top(ranked, 0.85) == ["a", "b"]
    with pytest.warns(UserWarning, match="top-ranked"):
        assert select_top(RankedFeatures([("a", 0.5), ("b", 0.1)]), 0.85) == ["a"]


def test_select_top_matches_list_filter():
    data = classification_table(60, 20, 30, 4, 1.5, seed=4)
    ranked = rank_by_f1_importance(data)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        got = select_top(ranked, 0.80)
    brute = [n for n, s in ranked.entries if s >= 0.80] or [ranked.entries[0][0]]
    assert got == brute


def test_significance_filter_examples(rng):
    y = np.r_[np.zeros(15, int), np.ones(143, int)]
    same = np.tile([1.0, 2.0], 79)
    disjoint = np.r_[rng.uniform(0, 1, 15), rng.uniform(2, 3, 143)]
    data = _table([same, disjoint], y)
    out = significance_filter(data, ["f0", "f1"])
    assert [f for f, _ in out] == ["f1"]
    assert out[0][1].statistic == 0 and out[0][1].p_value < 1e-8
    assert significance_filter(data, []) == []
