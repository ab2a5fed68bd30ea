import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from oracles import c_index_pairs, weibull_oracle
from radcopula.errors import DataError
from radcopula.survival import (
    PrognosticModel,
    _DependentWeibull,
    c_index,
    clayton_alpha,
    clayton_tau,
    copula_graphic,
    curve_separation,
    cv_c_index,
    fit_dependent_cox,
    kaplan_meier,
    numeric_gradient,
    prognostic_index,
    select_survival_features,
)
from radcopula.synthetic import clayton_pair, survival_cohort


def _records(r, n, cens=0.4, ties=False):
    t = r.exponential(100.0, size=n)
    c = r.exponential(100.0 * (1 - cens) / max(cens, 1e-3), size=n)
    y = np.minimum(t, c)
    if ties:
        y = np.ceil(y / 10.0) * 10.0
    return np.maximum(y, 1e-3), (t <= c).astype(int)


def _assert_curve(curve):
    assert curve.times[0] == 0 and curve.surv[0] == 1
    assert np.all(np.diff(curve.surv) <= 0)
    assert np.all((curve.surv >= 0) & (curve.surv <= 1))


# Clayton --------------------------------------------------------------------

def test_clayton_examples():
    assert clayton_tau(18) == 0.90
    assert clayton_tau(0) == 0 and clayton_tau(2) == 0.5
    with pytest.raises(ValueError):
        clayton_alpha(1.0)
    with pytest.raises(ValueError):
        clayton_tau(-1)


def test_clayton_round_trip():
    for tau in np.arange(10) / 10:
        assert abs(clayton_tau(clayton_alpha(tau)) - tau) < 1e-12


def test_clayton_sampler_kendall_tau():
    u, log_v = clayton_pair(5000, clayton_alpha(0.9), np.random.default_rng(0))
    assert 0.87 <= stats.kendalltau(u, log_v)[0] <= 0.93


# curves ---------------------------------------------------------------------

def test_kaplan_meier_examples():
    km = kaplan_meier([1, 2, 3], [1, 0, 1])
    assert km(1) == pytest.approx(2 / 3) and km(2.5) == pytest.approx(2 / 3) and km(3) == 0
    km = kaplan_meier([5.0], [1])
    assert km(4.999) == 1 and km(5) == 0 and km(100) == 0
    km = kaplan_meier([1, 2, 3], [0, 0, 0])
    assert np.all(km([0, 1, 10]) == 1)


def test_km_matches_product_limit_loop(rng):
    y, d = _records(rng, 80, ties=True)
    km = kaplan_meier(y, d)
    s = 1.0
    for t in np.unique(y[d == 1]):
        s *= 1 - np.sum((y == t) & (d == 1)) / np.sum(y >= t)
        assert km(t) == pytest.approx(s, abs=1e-14)


def test_copula_graphic_reduces_to_km():
    r = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        y, d = _records(r, int(r.integers(2, 501)), cens=r.uniform(0.05, 0.8), ties=bool(r.integers(2)))
        if d.sum() == 0:
            continue
        km, cg = kaplan_meier(y, d), copula_graphic(y, d, 0.0)
        grid = np.unique(np.r_[0.0, y])
        worst = max(worst, float(np.max(np.abs(km(grid) - cg(grid)))))
        _assert_curve(cg)
    assert worst < 1e-9


@pytest.mark.parametrize("alpha", [0.0, 0.5, 4.0, 18.0])
def test_copula_graphic_without_censoring_is_empirical(alpha, rng):
    y = rng.exponential(size=50)
    cg = copula_graphic(y, np.ones(50, int), alpha)
    grid = np.sort(y)
    np.testing.assert_allclose(cg(grid), 1 - np.arange(1, 51) / 50, atol=1e-12)


@pytest.mark.parametrize("alpha", [0.0, 2.0, 18.0])
def test_copula_graphic_all_censored(alpha):
    assert np.all(copula_graphic([1, 2, 3], [0, 0, 0], alpha).surv == 1)


def test_copula_graphic_is_consistent_under_dependence():
    # true S_T is Weibull(365, 1.5) with no covariate effect
    coh = survival_cohort(6000, 1, 1, alpha=4.0, beta=0.0, gamma_signal=0.0, seed=3)
    y, d = coh.data.time, coh.data.censor
    grid = np.quantile(y, np.linspace(0.05, 0.7, 20))
    truth = np.exp(-((grid / 365.0) ** 1.5))
    cg_err = np.max(np.abs(copula_graphic(y, d, 4.0)(grid) - truth))
    km_err = np.max(np.abs(kaplan_meier(y, d)(grid) - truth))
    assert cg_err < 0.03
    assert km_err > 2 * cg_err


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(0, 30))
def test_curve_invariants(seed, alpha):
    y, d = _records(np.random.default_rng(seed), 40, ties=True)
    _assert_curve(copula_graphic(y, d, alpha))


def test_records_validation():
    with pytest.raises(DataError):
        kaplan_meier([0.0, 1.0], [1, 1])
    with pytest.raises(DataError):
        kaplan_meier([1.0, 2.0], [1, 2])


# dependent Weibull model ----------------------------------------------------

def test_independence_fit_matchesweibull_oracle():
    for seed in range(3):
        coh = survival_cohort(300, 1, 1, alpha=0.0, beta=0.7, gamma_signal=0.3, seed=seed)
        y, d, x = coh.data.time, coh.data.censor, coh.data.X[:, 0]
        fit = fit_dependent_cox(y, d, x, 0.0)
        assert abs(fit.beta - weibull_oracle(y, d, x)) < 1e-6


def test_recovers_beta_under_dependence():
    coh = survival_cohort(400, 1, 1, alpha=4.0, beta=1.0, gamma_signal=0.0, seed=0)
    fit = fit_dependent_cox(coh.data.time, coh.data.censor, coh.data.X[:, 0], 4.0)
    assert 0.7 <= fit.beta <= 1.3
    assert fit.se > 0 and 0 <= fit.p_value <= 1


@pytest.mark.parametrize("alpha", [0.0, 1.0, 4.0, 18.0])
def test_gradient_vanishes_at_optimum(alpha):
    coh = survival_cohort(300, 1, 1, alpha=4.0, beta=1.0, gamma_signal=0.5, seed=1)
    y, d, x = coh.data.time, coh.data.censor, coh.data.X[:, 0]
    fit = fit_dependent_cox(y, d, x, alpha)
    model = _DependentWeibull(np.log(y / np.median(y)), d, x, alpha)
    g = numeric_gradient(model.loglik, fit.params, rel_step=1e-6)
    assert np.linalg.norm(g) < 1e-5
    grad, hess = model.derivatives(fit.params)
    assert np.linalg.norm(grad) < 1e-6
    num_h = np.array([numeric_gradient(lambda t, i=i: model.derivatives(t)[0][i], fit.params) for i in range(6)])
    np.testing.assert_allclose(hess, num_h, rtol=1e-4, atol=1e-4 * np.abs(hess).max())


def test_null_p_values_are_uniform():
    ps, betas = [], []
    for seed in range(200):
        coh = survival_cohort(120, 1, 0, alpha=0.0, seed=1000 + seed)
        fit = fit_dependent_cox(coh.data.time, coh.data.censor, coh.data.X[:, 0], 0.0)
        ps.append(fit.p_value)
        betas.append(fit.beta)
    assert stats.kstest(ps, "uniform").statistic < 0.1
    assert abs(np.mean(betas)) < 0.05


def test_fit_errors():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    with pytest.raises(DataError, match="zero variance"):
        fit_dependent_cox(y, [1, 0, 1, 0], np.ones(4), 0.0)
    with pytest.raises(DataError, match="event"):
        fit_dependent_cox(y, [0, 0, 0, 0], np.arange(4.0), 0.0)
    with pytest.raises(DataError, match="censored"):
        fit_dependent_cox(y, [1, 1, 1, 1], np.arange(4.0), 2.0)
    fit = fit_dependent_cox(np.arange(1.0, 21.0), np.ones(20, int), np.r_[np.ones(10), -np.ones(10)], 0.0)
    assert fit.beta > 0


# selection ------------------------------------------------------------------

def test_null_feature_selection_rate():
    coh = survival_cohort(200, 500, 0, alpha=0.0, seed=7)
    d = coh.data
    fits = select_survival_features(d.time, d.censor, d.X, d.feature_names, 0.0)
    assert 0.02 <= len(fits) / 500 <= 0.09


def test_monotone_feature_ranks_first(rng):
    coh = survival_cohort(150, 5, 0, alpha=0.0, seed=2)
    d = coh.data
    rank = stats.rankdata(coh.latent_t)
    X = np.column_stack([d.X, -np.log(rank)])
    names = d.feature_names + ["signal"]
    fits = select_survival_features(d.time, d.censor, X, names, 0.0)
    assert fits[0].feature == "signal"
    assert select_survival_features(d.time, d.censor, np.empty((150, 0)), [], 0.0) == []


# prognostic index -----------------------------------------------------------

def test_prognostic_index_examples():
    m = PrognosticModel(["a", "b"], np.zeros(2), np.zeros(2), np.ones(2))
    assert prognostic_index(m, {"a": 3.0, "b": -1.0}) == 0.0
    m = PrognosticModel(["a"], np.array([1.0]), np.array([0.0]), np.array([1.0]))
    assert prognostic_index(m, {"a": 2.0}) == 2.0
    with pytest.raises(DataError, match="'a'"):
        prognostic_index(m, {"b": 1.0})


def test_prognostic_index_sixteen_terms(rng):
    names = [f"f{j}" for j in range(16)]
    betas, mu, sd = rng.normal(size=16), rng.normal(size=16), rng.uniform(0.5, 2, 16)
    x = {n: float(v) for n, v in zip(names, rng.normal(size=16))}
    m = PrognosticModel(names, betas, mu, sd)
    hand = sum(b * (x[n] - m_) / s for n, b, m_, s in zip(names, betas, mu, sd))
    assert prognostic_index(m, x) == pytest.approx(hand, abs=1e-12)


def test_prognostic_index_affine_in_features(rng):
    m = PrognosticModel(["a", "b"], np.array([0.5, -2.0]), np.array([1.0, 2.0]), np.array([2.0, 0.5]))
    x = rng.normal(size=(10, 2))
    shift = m.pi_matrix(3.0 * x - 1.5) - 3.0 * m.pi_matrix(x)
    np.testing.assert_allclose(shift, shift[0], atol=1e-12)


# concordance ----------------------------------------------------------------

def test_c_index_examples():
    y = np.arange(1.0, 11.0)
    assert c_index(y, np.ones(10, int), -y) == 1.0
    assert c_index(y, np.ones(10, int), np.zeros(10)) == 0.5
    assert c_index([1.0, 2.0], [1, 0], [2.0, 1.0]) == 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 200))
def test_c_index_matches_pair_enumeration(seed, n):
    r = np.random.default_rng(seed)
    y, d = _records(r, n, ties=True)
    d[0] = 1
    pi = np.round(r.normal(size=n), 1)
    if not np.any((y[d == 1][:, None] < y[None, :])):
        return
    assert c_index(y, d, pi) == pytest.approx(c_index_pairs(y, d, pi), abs=1e-12)


# cross-validated alpha choice -----------------------------------------------

def test_cv_single_alpha():
    coh = survival_cohort(80, 4, 1, alpha=2.0, seed=0)
    d = coh.data
    curve = cv_c_index(d.time, d.censor, d.X, d.feature_names, alpha_grid=[4.0], folds=3)
    assert curve.best_alpha == 4.0 and len(curve.c_mean) == 1


def test_cv_flat_under_independence():
    coh = survival_cohort(200, 10, 3, alpha=0.0, gamma_signal=0.0, seed=4)
    d = coh.data
    curve = cv_c_index(d.time, d.censor, d.X, d.feature_names)
    assert max(curve.c_mean) - min(curve.c_mean) < 0.1


def test_cv_requires_events_in_every_fold():
    y = np.arange(1.0, 11.0)
    d = np.r_[np.ones(8, int), np.zeros(2, int)]
    with pytest.raises(DataError, match="censorings"):
        cv_c_index(y, d, np.arange(10.0)[:, None], ["a"], folds=5)


# good / poor separation -----------------------------------------------------

def test_separation_bound_case():
    y = np.array([1.0] * 5 + [2.0, 3.0, 4.0, 5.0, 6.0])
    d = np.array([1] * 5 + [0] * 5)
    pi = np.r_[np.ones(5), np.zeros(5)]
    sep = curve_separation(y, d, pi, 0.0, n_permutations=200)
    assert sep.statistic == 1.0
    assert sep.poor.tolist() == [True] * 5 + [False] * 5


def test_separation_detects_hazard_ratio_four():
    r = np.random.default_rng(0)
    g = np.r_[np.zeros(50), np.ones(50)]
    t = r.exponential(1.0 / np.where(g == 1, 4.0, 1.0))
    c = r.exponential(2.0, size=100)
    y, d = np.minimum(t, c), (t <= c).astype(int)
    sep = curve_separation(y, d, g + 0.01 * r.normal(size=100), 0.0, n_permutations=2000, seed=1)
    assert sep.p_value < 0.01


def test_separation_null_calibration():
    passes = 0
    for seed in range(20):
        coh = survival_cohort(80, 1, 0, alpha=2.0, seed=500 + seed)
        pi = np.random.default_rng(seed).normal(size=80)
        passes += curve_separation(coh.data.time, coh.data.censor, pi, 2.0, 500, seed).p_value > 0.05
    assert passes >= 17


def test_separation_invariant_to_affine_pi(rng):
    coh = survival_cohort(60, 1, 1, alpha=4.0, seed=8)
    y, d, pi = coh.data.time, coh.data.censor, coh.data.X[:, 0]
    a = curve_separation(y, d, pi, 4.0, 300, seed=5)
    b = curve_separation(y, d, 2.5 * pi - 7.0, 4.0, 300, seed=5)
    assert np.array_equal(a.poor, b.poor) and a.p_value == b.p_value and a.statistic == b.statistic
