"""Survival analysis under Clayton-copula dependent censoring.

Conventions: ``time`` holds observed times y > 0 and ``event`` the indicator
(1 = death observed, so y realizes the survival time T; 0 = censored, so y
realizes the censoring time U). At tied times, events are processed before
censorings.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats
from sklearn.model_selection import StratifiedKFold

from .errors import ConvergenceError, DataError, NumericalError

log = logging.getLogger(__name__)

DEFAULT_ALPHA_GRID = (0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 12.0, 18.0, 24.0)
DEFAULT_PERMUTATIONS = 2000


def clayton_tau(alpha: float) -> float:
    """Kendall's tau of the Clayton copula, ``alpha / (alpha + 2)``."""
    if not alpha >= 0:
        raise ValueError("alpha must be >= 0")
    return alpha / (alpha + 2.0)


def clayton_alpha(tau: float) -> float:
    """Clayton parameter for a Kendall's tau in [0, 1)."""
    if not 0 <= tau < 1:
        raise ValueError("tau must be in [0, 1)")
    return 2.0 * tau / (1.0 - tau)


def _check_records(time, event):
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event)
    if time.ndim != 1 or time.shape != event.shape:
        raise DataError("time and event must be 1-D arrays of equal length")
    if time.size == 0:
        raise DataError("no survival records")
    if not (np.all(np.isfinite(time)) and np.all(time > 0)):
        raise DataError("survival times must be finite and > 0")
    if not np.isin(event, (0, 1)).all():
        raise DataError("event indicator must be 0 or 1")
    return time, event.astype(np.int64)


# --------------------------------------------------------------------------
# survival curves


@dataclass
class SurvivalCurve:
    """Right-continuous step function; ``times[0] == 0`` and ``surv[0] == 1``."""

    times: np.ndarray
    surv: np.ndarray

    def __call__(self, t) -> np.ndarray:
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="right") - 1
        return self.surv[np.maximum(idx, 0)]


def _risk_table(time, event):
    """Distinct event times with their risk-set sizes and death counts."""
    t_ev = np.unique(time[event == 1])
    at_risk = len(time) - np.searchsorted(np.sort(time), t_ev, side="left")
    deaths = np.bincount(np.searchsorted(t_ev, time[event == 1]), minlength=len(t_ev))
    return t_ev, at_risk.astype(np.float64), deaths.astype(np.float64)


def _curve(t_ev, s):
    s = np.minimum.accumulate(np.clip(s, 0.0, 1.0))
    return SurvivalCurve(np.concatenate([[0.0], t_ev]), np.concatenate([[1.0], s]))


def kaplan_meier(time, event) -> SurvivalCurve:
    """Product-limit estimator over the distinct event times."""
    time, event = _check_records(time, event)
    t_ev, n, d = _risk_table(time, event)
    return _curve(t_ev, np.cumprod(1.0 - d / n))


def clayton_generator(s, alpha: float):
    """phi(s) = (s^-alpha - 1) / alpha, and -log s at alpha = 0; phi(0) = inf."""
    s = np.asarray(s, dtype=np.float64)
    with np.errstate(divide="ignore", over="ignore"):
        if alpha == 0:
            return -np.log(s)
        return np.expm1(-alpha * np.log(s)) / alpha


def clayton_generator_inv(x, alpha: float):
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore", divide="ignore"):
        if alpha == 0:
            return np.exp(-x)
        return np.exp(-np.log1p(alpha * x) / alpha)


def _cg_increments(n, d, n_total, alpha):
    """Generator jumps at event times; zero where no deaths occur."""
    with np.errstate(invalid="ignore"):
        inc = clayton_generator((n - d) / n_total, alpha) - clayton_generator(n / n_total, alpha)
    return np.where(d > 0, inc, 0.0)


def copula_graphic(time, event, alpha: float) -> SurvivalCurve:
    """Copula-graphic survival estimator under a Clayton copula.

    With ``pi(t)`` the empirical fraction of records still at risk, every
    event time adds ``phi(pi after the deaths) - phi(pi before)`` to a running
    sum and ``S(t) = phi^-1(sum)``. At alpha = 0 this is Kaplan-Meier; without
    censoring it is the empirical survival function for every alpha.
    """
    if not alpha >= 0:
        raise ValueError("alpha must be >= 0")
    time, event = _check_records(time, event)
    t_ev, n, d = _risk_table(time, event)
    acc = np.cumsum(_cg_increments(n, d, float(len(time)), alpha))
    return _curve(t_ev, clayton_generator_inv(acc, alpha))


def _cg_batch(time, event, groups, alpha, grid):
    """Copula-graphic curves of many row subsets evaluated on `grid`.

    ``groups`` is a boolean (B, n) membership matrix; returns (B, len(grid)).
    """
    order = np.lexsort((1 - event, time))  # by time, events first
    t, e, g = time[order], event[order], groups[:, order].astype(np.float64)
    uniq, start = np.unique(t, return_index=True)
    # members with y >= u_k and member deaths at u_k
    at_risk = np.cumsum(g[:, ::-1], axis=1)[:, ::-1][:, start]
    deaths = np.add.reduceat(g * e, start, axis=1)
    n_total = g.sum(axis=1, keepdims=True)
    acc = np.cumsum(_cg_increments(at_risk, deaths, n_total, alpha), axis=1)
    surv = np.clip(clayton_generator_inv(acc, alpha), 0.0, 1.0)
    surv = np.minimum.accumulate(surv, axis=1)
    return surv[:, np.searchsorted(uniq, grid)]


# --------------------------------------------------------------------------
# dependent-censoring Weibull model

N_PARAMS = 6  # a_T, b_T, beta, a_U, b_U, gamma
BETA = 2


@dataclass
class CoxFit:
    feature: str
    beta: float
    se: float
    p_value: float
    alpha: float
    params: np.ndarray | None = None  # full parameter vector on the internal time scale
    loglik: float = float("nan")


def _log_a(a, b):
    """log(e^a + e^b - 1) for a, b >= 0 without overflow."""
    m = np.maximum(a, b)
    small = m < 30.0
    out = np.empty_like(m)
    out[small] = np.log1p(np.expm1(a[small]) + np.expm1(b[small]))
    ms, lo = m[~small], np.minimum(a, b)[~small]
    out[~small] = ms + np.log1p(np.exp(lo - ms) - np.exp(-ms))
    return out


class _DependentWeibull:
    """Log-likelihood of (y, delta, x) with Weibull margins joined by a Clayton copula.

    ``H_T = exp(a_T + beta x + k_T log y)``, ``k_T = exp(b_T)`` and likewise
    for U. An event contributes ``log h_T + alpha H_T - (1 + 1/alpha) log A``
    and a censoring ``log h_U + alpha H_U - (1 + 1/alpha) log A`` where
    ``A = exp(alpha H_T) + exp(alpha H_U) - 1``; at alpha = 0 the copula term
    is ``-(H_T + H_U)``.
    """

    def __init__(self, logy, event, x, alpha):
        self.logy, self.d, self.x, self.alpha = logy, event.astype(np.float64), x, float(alpha)

    def _parts(self, th):
        aT, bT, beta, aU, bU, gamma = th
        with np.errstate(over="ignore"):
            kT, kU = np.exp(bT), np.exp(bU)
            HT = np.exp(aT + beta * self.x + kT * self.logy)
            HU = np.exp(aU + gamma * self.x + kU * self.logy)
        return kT, kU, HT, HU

    def loglik(self, th) -> float:
        aT, bT, beta, aU, bU, gamma = th
        kT, kU, HT, HU = self._parts(th)
        if not (np.all(np.isfinite(HT)) and np.all(np.isfinite(HU))):
            return -np.inf
        d, al = self.d, self.alpha
        etaT = aT + beta * self.x + kT * self.logy
        etaU = aU + gamma * self.x + kU * self.logy
        base = d * (etaT + bT) + (1 - d) * (etaU + bU) - self.logy
        if al == 0:
            ll = base - HT - HU
        else:
            with np.errstate(over="ignore", invalid="ignore"):
                ll = base + al * (d * HT + (1 - d) * HU) - (1.0 + 1.0 / al) * _log_a(al * HT, al * HU)
        total = float(np.sum(ll))
        return total if np.isfinite(total) else -np.inf

    def derivatives(self, th):
        """Gradient and Hessian of the log-likelihood."""
        kT, kU, HT, HU = self._parts(th)
        d, al, x, ly = self.d, self.alpha, self.x, self.logy
        if al == 0:
            wT = wU = np.ones_like(HT)
            cross = np.zeros_like(HT)
            dgT = dgU = np.zeros_like(HT)
        else:
            la = _log_a(al * HT, al * HU)
            wT, wU = np.exp(al * HT - la), np.exp(al * HU - la)
            # 1 - w_T = (e^{alpha H_U} - 1) / A, computed without cancellation
            omT = np.exp(al * HU - la) * -np.expm1(-al * HU)
            omU = np.exp(al * HT - la) * -np.expm1(-al * HT)
            dgT = -(al + 1) * al * wT * omT
            dgU = -(al + 1) * al * wU * omU
            cross = (al + 1) * al * wT * wU
        gT = d * al - (al + 1) * wT  # d ll / d H_T
        gU = (1 - d) * al - (al + 1) * wU
        sT = d + HT * gT  # d ll / d eta_T
        sU = (1 - d) + HU * gU
        # second derivatives in eta
        hTT = HT * gT + HT * HT * dgT
        hUU = HU * gU + HU * HU * dgU
        hTU = HT * HU * cross
        JT = np.stack([np.ones_like(x), kT * ly, x])  # d eta_T / d (a_T, b_T, beta)
        JU = np.stack([np.ones_like(x), kU * ly, x])
        grad = np.concatenate([JT @ sT, JU @ sU])
        grad[1] += d.sum()
        grad[4] += (1 - d).sum()
        hess = np.empty((N_PARAMS, N_PARAMS))
        hess[:3, :3] = (JT * hTT) @ JT.T
        hess[3:, 3:] = (JU * hUU) @ JU.T
        hess[:3, 3:] = (JT * hTU) @ JU.T
        hess[3:, :3] = hess[:3, 3:].T
        hess[1, 1] += np.sum(sT * kT * ly)
        hess[4, 4] += np.sum(sU * kU * ly)
        return grad, hess


def numeric_gradient(fn, theta, rel_step: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient with step ``rel_step * max(1, |theta_i|)``."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.empty_like(theta)
    for i in range(theta.size):
        h = rel_step * max(1.0, abs(theta[i]))
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (fn(up) - fn(dn)) / (2 * h)
    return g


def _newton(model, theta, free, max_iter=200, tol=1e-9):
    """Damped Newton ascent over the `free` parameter indices with Levenberg damping."""
    theta = theta.copy()
    ll = model.loglik(theta)
    if not np.isfinite(ll):
        raise ConvergenceError("non-finite log-likelihood at the starting point", theta)
    mu = 0.0
    for it in range(max_iter):
        grad, hess = model.derivatives(theta)
        g, H = grad[free], hess[np.ix_(free, free)]
        if np.max(np.abs(g)) < tol * max(1.0, abs(ll)) and mu == 0.0:
            return theta, ll, it
        stepped = False
        for _ in range(60):
            A = -H + mu * np.eye(len(free))
            try:
                np.linalg.cholesky(A)
                step = np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                mu = max(1e-6, 10.0 * mu)
                continue
            cand = theta.copy()
            cand[free] += step
            ll_new = model.loglik(cand)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                stepped = True
                small = np.max(np.abs(step)) < 1e-11
                theta, ll = cand, max(ll_new, ll)
                mu = 0.0 if mu < 1e-4 else mu / 10.0
                break
            mu = max(1e-6, 10.0 * mu)
        if not stepped:
            raise ConvergenceError("line search failed", theta)
        if small and np.max(np.abs(g)) < 1e-5:
            return theta, ll, it
    raise ConvergenceError(f"no convergence after {max_iter} iterations", theta)


def _weibull_start(logy, event):
    """Exponential-rate start for one margin: a = log(events / sum y), b = 0."""
    rate = max(event.sum(), 0.5) / np.exp(logy).sum()
    return np.array([np.log(rate), 0.0, 0.0])


def fit_dependent_cox(time, event, x, alpha: float, feature: str = "x", check_gradient: bool = True) -> CoxFit:
    """Fit the copula model for one covariate and test the T-margin coefficient.

    Times are rescaled by their median internally; this shifts only the
    intercepts, so beta, its standard error and the p-value are unaffected.
    The independence fit (alpha = 0) is computed first and used as the start
    for the dependent fit. The standard error comes from the observed
    information; the p-value is the two-sided Wald test.
    """
    time, event = _check_records(time, event)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != time.shape or not np.all(np.isfinite(x)):
        raise DataError("covariate must be finite with one value per record")
    if np.ptp(x) == 0:
        raise DataError(f"feature {feature!r} has zero variance")
    if not alpha >= 0:
        raise ValueError("alpha must be >= 0")
    n_ev = int(event.sum())
    if n_ev == 0:
        raise DataError("at least one event is required")
    if alpha > 0 and n_ev == len(event):
        raise DataError("dependent-censoring fit needs at least one censored record")

    logy = np.log(time / np.median(time))
    theta = np.concatenate([_weibull_start(logy, event), _weibull_start(logy, 1 - event)])
    t_block = [0, 1, 2]
    free = t_block if n_ev == len(event) else list(range(N_PARAMS))
    indep = _DependentWeibull(logy, event, x, 0.0)
    theta, ll, _ = _newton(indep, theta, free)
    model = indep
    if alpha > 0:
        model = _DependentWeibull(logy, event, x, alpha)
        theta, ll, _ = _newton(model, theta, free)

    grad, hess = model.derivatives(theta)
    info = -hess[np.ix_(free, free)]
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise NumericalError(f"singular information matrix for {feature!r}") from None
    var = cov[free.index(BETA), free.index(BETA)]
    if not var > 0:
        raise NumericalError(f"non-positive variance for {feature!r}")
    if check_gradient:
        num = numeric_gradient(model.loglik, theta)[free]
        if np.max(np.abs(num - grad[free])) > 1e-3 * max(1.0, np.max(np.abs(num))):
            log.warning("analytic and numeric gradients disagree for %s", feature)
    se = float(np.sqrt(var))
    beta = float(theta[BETA])
    p = float(2.0 * stats.norm.sf(abs(beta / se)))
    return CoxFit(feature, beta, se, p, float(alpha), theta, ll)


def standardize(X):
    X = np.asarray(X, dtype=np.float64)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    return mu, sd


def select_survival_features(time, event, X, names, alpha: float, p_threshold: float = 0.05, keep_all: bool = False):
    """Univariate copula-model fits on standardized features, kept when p < threshold.

    Returns CoxFits sorted by ascending p (then name). Zero-variance features
    and failed fits are skipped with a warning. With ``keep_all`` every
    successful fit is returned regardless of p.
    """
    X = np.asarray(X, dtype=np.float64).reshape(len(time), -1)
    mu, sd = standardize(X)
    fits = []
    for j, name in enumerate(names):
        if sd[j] == 0:
            warnings.warn(f"skipping zero-variance feature {name}", stacklevel=2)
            continue
        try:
            fit = fit_dependent_cox(time, event, (X[:, j] - mu[j]) / sd[j], alpha, name, check_gradient=False)
        except NumericalError as exc:
            warnings.warn(f"fit failed for {name}: {exc}", stacklevel=2)
            continue
        if keep_all or fit.p_value < p_threshold:
            fits.append(fit)
    fits.sort(key=lambda f: (f.p_value, f.feature))
    return fits


# --------------------------------------------------------------------------
# prognostic index and concordance


@dataclass
class PrognosticModel:
    features: list[str]
    betas: np.ndarray
    means: np.ndarray
    sds: np.ndarray
    threshold: float = 0.0  # median PI of the fitting data; PI > threshold is poor prognosis

    @classmethod
    def from_fits(cls, fits, X, names) -> "PrognosticModel":
        X = np.asarray(X, dtype=np.float64)
        cols = [list(names).index(f.feature) for f in fits]
        mu, sd = standardize(X[:, cols])
        model = cls([f.feature for f in fits], np.array([f.beta for f in fits]), mu, sd)
        model.threshold = float(np.median(model.pi_matrix(X[:, cols])))
        return model

    def pi_matrix(self, Xsel) -> np.ndarray:
        """PI for rows whose columns follow ``self.features``."""
        Z = (np.asarray(Xsel, dtype=np.float64).reshape(-1, len(self.features)) - self.means) / self.sds
        return Z @ self.betas


def prognostic_index(model: PrognosticModel, x: dict) -> float:
    """``sum_j beta_j * (x_j - mean_j) / sd_j`` for one feature mapping."""
    missing = [f for f in model.features if f not in x or x[f] is None]
    if missing:
        raise DataError(f"feature vector is missing {missing[0]!r}")
    return float(model.pi_matrix(np.array([x[f] for f in model.features]))[0])


def c_index(time, event, pi) -> float:
    """Harrell's concordance: pairs with y_i < y_j and delta_i = 1; PI ties count 1/2."""
    time, event = _check_records(time, event)
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != time.shape:
        raise DataError("one PI value per record is required")
    num = 0.0
    pairs = 0
    ev = np.flatnonzero(event == 1)
    for start in range(0, len(ev), 256):
        i = ev[start : start + 256]
        comp = time[i, None] < time[None, :]
        diff = pi[i, None] - pi[None, :]
        pairs += int(comp.sum())
        num += float(np.sum(comp & (diff > 0)) + 0.5 * np.sum(comp & (diff == 0)))
    if pairs == 0:
        raise DataError("no comparable pairs for the c-index")
    return num / pairs


def fit_prognostic_model(time, event, X, names, alpha, p_threshold=0.05):
    """Select features at `alpha` and build the compound-covariate PI.

    Falls back to the single feature with the smallest p when none passes
    the threshold.
    """
    fits = select_survival_features(time, event, X, names, alpha, p_threshold, keep_all=True)
    if not fits:
        raise NumericalError("no feature could be fitted")
    chosen = [f for f in fits if f.p_value < p_threshold] or fits[:1]
    return PrognosticModel.from_fits(chosen, X, names), chosen


@dataclass
class CIndexCurve:
    alphas: list[float]
    c_mean: list[float]
    c_folds: list[list[float]]
    best_alpha: float


def cv_c_index(time, event, X, names, alpha_grid=DEFAULT_ALPHA_GRID, folds: int = 5, seed: int = 0, p_threshold: float = 0.05) -> CIndexCurve:
    """Cross-validated c-index of the selected-feature PI for each alpha.

    Every alpha uses the same folds (stratified on the event indicator). The
    largest mean wins; ties go to the smallest alpha.
    """
    time, event = _check_records(time, event)
    X = np.asarray(X, dtype=np.float64).reshape(len(time), -1)
    if len(alpha_grid) == 0:
        raise ValueError("alpha grid is empty")
    if folds < 2:
        raise ValueError("need at least two folds")
    n_ev, n_cens = int(event.sum()), int(len(event) - event.sum())
    if min(n_ev, n_cens) < folds:
        raise DataError(f"{folds}-fold CV needs at least {folds} events and {folds} censorings; have {n_ev} and {n_cens}")
    splits = list(StratifiedKFold(folds, shuffle=True, random_state=seed).split(X, event))
    alphas = sorted(float(a) for a in alpha_grid)
    c_folds = []
    for a in alphas:
        cs = []
        for tr, te in splits:
            model, _ = fit_prognostic_model(time[tr], event[tr], X[tr], names, a, p_threshold)
            cols = [list(names).index(f) for f in model.features]
            try:
                cs.append(c_index(time[te], event[te], model.pi_matrix(X[np.ix_(te, cols)])))
            except DataError:
                continue
        c_folds.append(cs)
        log.info("alpha %g: c-index %.4f", a, np.mean(cs) if cs else float("nan"))
    means = [float(np.mean(c)) if c else float("nan") for c in c_folds]
    finite = [m for m in means if np.isfinite(m)]
    if not finite:
        raise NumericalError("no fold produced a c-index")
    best = alphas[means.index(max(finite))]
    return CIndexCurve(alphas, means, c_folds, best)


# --------------------------------------------------------------------------
# separation of good and poor prognosis curves


@dataclass
class Separation:
    statistic: float
    p_value: float
    poor: np.ndarray  # boolean group assignment
    n_permutations: int


def curve_separation(time, event, pi, alpha: float, n_permutations: int = DEFAULT_PERMUTATIONS, seed: int = 0, chunk: int = 500) -> Separation:
    """Mean vertical gap between good and poor prognosis curves, with a permutation p-value.

    Poor prognosis is PI above its median. Both curves are copula-graphic
    estimates at `alpha` and the gap is averaged over the pooled distinct
    event times. The p-value ``(1 + #{permuted >= observed}) / (1 + B)``
    reassigns group labels at random with group sizes preserved.
    """
    time, event = _check_records(time, event)
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != time.shape:
        raise DataError("one PI value per record is required")
    poor = pi > np.median(pi)
    if poor.sum() < 2 or (~poor).sum() < 2:
        raise DataError("median PI split leaves a group with fewer than two records")
    grid = np.unique(time[event == 1])
    if grid.size == 0:
        return Separation(0.0, 1.0, poor, n_permutations)

    def gaps(groups):
        s_poor = _cg_batch(time, event, groups, alpha, grid)
        s_good = _cg_batch(time, event, ~groups, alpha, grid)
        return np.mean(np.abs(s_good - s_poor), axis=1)

    observed = gaps(poor[None, :])[0]
    rng = np.random.default_rng(seed)
    exceed = 0
    done = 0
    while done < n_permutations:
        b = min(chunk, n_permutations - done)
        perm = rng.permuted(np.broadcast_to(poor, (b, len(poor))), axis=1)
        exceed += int(np.sum(gaps(perm) >= observed))
        done += b
    return Separation(float(observed), (1.0 + exceed) / (1.0 + n_permutations), poor, n_permutations)


def group_curves(time, event, poor, alpha: float) -> tuple[SurvivalCurve, SurvivalCurve]:
    """(good, poor) copula-graphic curves for a group split."""
    poor = np.asarray(poor, dtype=bool)
    return copula_graphic(time[~poor], event[~poor], alpha), copula_graphic(time[poor], event[poor], alpha)
