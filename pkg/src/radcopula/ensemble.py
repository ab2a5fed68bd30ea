"""Balanced sub-sampling ensembles of gradient-boosted trees, oversampling baselines and metrics.

The minority class N_0 is matched against equal-size, disjoint chunks of the
majority class N_1; every chunk plus all minority rows trains one boosted
tree model, and the ensemble averages member probabilities. Training is
repeated over ``i`` seeded stratified ``n``-fold splits.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import stats
from sklearn.model_selection import StratifiedKFold
from sklearn.neighbors import NearestNeighbors

from .dataset import LabeledDataset
from .errors import DataError

log = logging.getLogger(__name__)

SAMPLERS = ("rrs", "smote", "adasyn")
METRIC_NAMES = ("auc", "accuracy", "ppv", "fpr")


def derive_seed(*parts: int) -> int:
    """Mix integers into an independent 32-bit seed (order sensitive)."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# --------------------------------------------------------------------------
# balanced subsets


@dataclass
class BalancedSubset:
    rows: np.ndarray  # indices into the source dataset
    minority_count: int
    majority_count: int


def _class_split(labels: np.ndarray) -> tuple[int, int]:
    """(majority label, minority label); label 1 is majority on equal counts."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=2)
    if (counts == 0).any():
        raise DataError("both classes must be present")
    return (1, 0) if counts[1] >= counts[0] else (0, 1)


def balanced_subsets(data: LabeledDataset | np.ndarray, seed: int = 0) -> list[BalancedSubset]:
    """Partition the shuffled majority into ``ceil(N1/N0)`` chunks, each joined with all minority rows."""
    labels = data.labels if isinstance(data, LabeledDataset) else np.asarray(data)
    if labels is None:
        raise DataError("labels are required")
    major, minor = _class_split(labels)
    maj_rows = np.flatnonzero(labels == major)
    min_rows = np.flatnonzero(labels == minor)
    rng = np.random.default_rng(seed)
    maj_rows = maj_rows[rng.permutation(len(maj_rows))]
    n0 = len(min_rows)
    out = []
    for start in range(0, len(maj_rows), n0):
        chunk = maj_rows[start : start + n0]
        out.append(BalancedSubset(np.concatenate([chunk, min_rows]), n0, len(chunk)))
    return out


# --------------------------------------------------------------------------
# gradient-boosted trees


@dataclass
class GBDTParams:
    trees: int = 200
    depth: int = 4
    learning_rate: float = 0.1
    min_leaf: int = 2

    def __post_init__(self):
        if self.trees < 0 or self.depth < 1 or self.min_leaf < 1 or not self.learning_rate > 0:
            raise ValueError(f"invalid GBDT parameters {self}")


@dataclass
class GBDTModel:
    """Boosted regression trees stored in heap layout (children of k at 2k+1, 2k+2)."""

    init: float
    feature: np.ndarray  # (trees, nodes) int32; -1 marks a leaf
    threshold: np.ndarray  # go left when x <= threshold
    value: np.ndarray  # leaf values, already scaled by the learning rate
    learning_rate: float
    depth: int
    train_loss: np.ndarray = field(default=None, repr=False)  # loss after 0..trees rounds

    def decision_function(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _predict_raw(X, self.init, self.feature, self.threshold, self.value)

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.decision_function(X))


def _sigmoid(f):
    return 0.5 * (1.0 + np.tanh(0.5 * f))


@numba.njit(cache=True)
def _log_loss(y, f):
    total = 0.0
    for i in range(y.shape[0]):
        # log(1 + exp(-m)) with margin m = +-f
        m = f[i] if y[i] > 0.5 else -f[i]
        total += max(-m, 0.0) + np.log1p(np.exp(-abs(m)))
    return total / y.shape[0]


@numba.njit(cache=True)
def _predict_raw(X, init, feature, threshold, value):
    n = X.shape[0]
    out = np.full(n, init)
    for t in range(feature.shape[0]):
        for i in range(n):
            k = 0
            while feature[t, k] >= 0:
                k = 2 * k + 1 if X[i, feature[t, k]] <= threshold[t, k] else 2 * k + 2
            out[i] += value[t, k]
    return out


@numba.njit(cache=True)
def _grow_tree(X, order, g, h, depth, min_leaf, feat, thr, val, node_of):
    """Grow one tree level by level on residuals `g`; leaf values are Newton steps."""
    n, p = X.shape
    n_nodes = feat.shape[0]
    for i in range(n):
        node_of[i] = 0
    feat[:] = -1
    thr[:] = 0.0
    val[:] = 0.0
    s_tot = np.zeros(n_nodes)
    c_tot = np.zeros(n_nodes)
    s_left = np.zeros(n_nodes)
    c_left = np.zeros(n_nodes)
    last = np.zeros(n_nodes)
    best_gain = np.zeros(n_nodes)
    best_feat = np.full(n_nodes, -1)
    best_thr = np.zeros(n_nodes)
    for d in range(depth):
        lo = 2**d - 1
        hi = 2 ** (d + 1) - 1
        s_tot[:] = 0.0
        c_tot[:] = 0.0
        any_active = False
        for i in range(n):
            k = node_of[i]
            if k >= lo:
                s_tot[k] += g[i]
                c_tot[k] += 1.0
                any_active = True
        if not any_active:
            break
        best_gain[:] = 1e-12
        best_feat[:] = -1
        for j in range(p):
            s_left[:] = 0.0
            c_left[:] = 0.0
            for r in range(n):
                i = order[r, j]
                k = node_of[i]
                if k < lo:
                    continue
                x = X[i, j]
                nl = c_left[k]
                if nl >= min_leaf and x > last[k] and c_tot[k] - nl >= min_leaf:
                    sl = s_left[k]
                    sr = s_tot[k] - sl
                    gain = sl * sl / nl + sr * sr / (c_tot[k] - nl) - s_tot[k] * s_tot[k] / c_tot[k]
                    if gain > best_gain[k]:
                        best_gain[k] = gain
                        best_feat[k] = j
                        best_thr[k] = 0.5 * (last[k] + x)
                        # midpoint can round onto the upper value for adjacent floats
                        if best_thr[k] >= x:
                            best_thr[k] = last[k]
                s_left[k] += g[i]
                c_left[k] += 1.0
                last[k] = x
        split_any = False
        for k in range(lo, hi):
            if best_feat[k] >= 0:
                feat[k] = best_feat[k]
                thr[k] = best_thr[k]
                split_any = True
        if not split_any:
            break
        for i in range(n):
            k = node_of[i]
            if k >= lo and feat[k] >= 0:
                node_of[i] = 2 * k + 1 if X[i, feat[k]] <= thr[k] else 2 * k + 2
    # leaf values
    sg = np.zeros(n_nodes)
    sh = np.zeros(n_nodes)
    for i in range(n):
        sg[node_of[i]] += g[i]
        sh[node_of[i]] += h[i]
    for k in range(n_nodes):
        if feat[k] < 0 and sh[k] > 1e-12:
            val[k] = sg[k] / sh[k]


@numba.njit(cache=True)
def _boost(X, y, order, n_trees, depth, lr, min_leaf, init):
    n = X.shape[0]
    n_nodes = 2 ** (depth + 1) - 1
    feature = np.full((n_trees, n_nodes), -1, dtype=np.int32)
    threshold = np.zeros((n_trees, n_nodes))
    value = np.zeros((n_trees, n_nodes))
    losses = np.zeros(n_trees + 1)
    f = np.full(n, init)
    g = np.empty(n)
    h = np.empty(n)
    node_of = np.zeros(n, dtype=np.int64)
    f_new = np.empty(n)
    losses[0] = _log_loss(y, f)
    for t in range(n_trees):
        for i in range(n):
            pr = 0.5 * (1.0 + np.tanh(0.5 * f[i]))
            g[i] = y[i] - pr
            h[i] = pr * (1.0 - pr)
        _grow_tree(X, order, g, h, depth, min_leaf, feature[t], threshold[t], value[t], node_of)
        step = lr
        loss = losses[t]
        for _ in range(40):
            for i in range(n):
                f_new[i] = f[i] + step * value[t, node_of[i]]
            loss = _log_loss(y, f_new)
            if loss <= losses[t]:
                break
            step *= 0.5
        if loss > losses[t]:
            step = 0.0
            loss = losses[t]
            for i in range(n):
                f_new[i] = f[i]
        for k in range(n_nodes):
            value[t, k] *= step
        f[:] = f_new
        losses[t + 1] = loss
    return feature, threshold, value, losses


def gbdt_train(X, y, params: GBDTParams | None = None, seed: int = 0) -> GBDTModel:
    """Logistic-loss gradient boosting with variance-reduction splits and Newton leaves.

    The initial score is the prior log-odds. Each round fits a tree to the
    residuals ``y - p``; a leaf predicts ``sum(g) / sum(h)`` with ``h = p(1-p)``.
    If a full learning-rate step would raise the training loss, the step is
    halved until it does not (or dropped), so the recorded training loss never
    increases. Training is deterministic; `seed` is accepted so the call
    signature matches the other learners.
    """
    params = params or GBDTParams()
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, p) with one label per row")
    if X.shape[0] < 2 or not ((y == 0).any() and (y == 1).any()):
        raise DataError("GBDT training needs both classes and at least two rows")
    if not np.isfinite(X).all():
        raise DataError("GBDT features must be finite")
    prior = y.mean()
    init = float(np.log(prior / (1.0 - prior)))
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable"))
    feat, thr, val, losses = _boost(X, y, order, params.trees, params.depth, params.learning_rate, params.min_leaf, init)
    return GBDTModel(init, feat, thr, val, params.learning_rate, params.depth, losses)


# --------------------------------------------------------------------------
# oversampling baselines


def _split_minority(data: LabeledDataset, k: int):
    if data.labels is None:
        raise DataError("labels are required")
    major, minor = _class_split(data.labels)
    min_rows = np.flatnonzero(data.labels == minor)
    if len(min_rows) < k + 1 and len(min_rows) != len(data.labels) - len(min_rows):
        raise DataError(f"minority class has {len(min_rows)} rows; need at least k+1 = {k + 1}")
    return major, minor, min_rows


def _append_synthetic(data: LabeledDataset, synth: np.ndarray, label: int) -> LabeledDataset:
    m = len(synth)
    return LabeledDataset(
        data.ids + [f"synthetic_{j}" for j in range(m)],
        np.vstack([data.X, synth.reshape(m, data.X.shape[1])]),
        data.feature_names,
        np.concatenate([data.labels, np.full(m, label)]),
    )


def _interpolate(Xmin, bases, nn_idx, rng):
    """One synthetic point per base: a random point between it and a random minority neighbour."""
    picks = nn_idx[bases, rng.integers(0, nn_idx.shape[1], size=len(bases))]
    u = rng.random(len(bases))[:, None]
    return Xmin[bases] + u * (Xmin[picks] - Xmin[bases])


def _minority_neighbours(Xmin, k):
    nn = NearestNeighbors(n_neighbors=k + 1).fit(Xmin)
    idx = nn.kneighbors(Xmin, return_distance=False)
    # drop each point itself; identical duplicates may displace it from column 0
    out = np.empty((len(Xmin), k), dtype=np.int64)
    for i, row in enumerate(idx):
        others = row[row != i]
        out[i] = others[:k]
    return out


def smote_oversample(data: LabeledDataset, k: int = 5, seed: int = 0) -> LabeledDataset:
    """Interpolate new minority rows until both classes have equal counts."""
    major, minor, min_rows = _split_minority(data, k)
    deficit = int((data.labels == major).sum()) - len(min_rows)
    if deficit == 0:
        return data
    rng = np.random.default_rng(seed)
    Xmin = data.X[min_rows]
    nn_idx = _minority_neighbours(Xmin, k)
    bases = rng.integers(0, len(min_rows), size=deficit)
    return _append_synthetic(data, _interpolate(Xmin, bases, nn_idx, rng), minor)


def adasyn_oversample(data: LabeledDataset, k: int = 5, seed: int = 0) -> LabeledDataset:
    """SMOTE-style oversampling weighted towards minority rows surrounded by the majority.

    Each minority row receives a share of the deficit proportional to the
    fraction of majority rows among its k nearest neighbours (in all data).
    """
    major, minor, min_rows = _split_minority(data, k)
    deficit = int((data.labels == major).sum()) - len(min_rows)
    if deficit == 0:
        return data
    rng = np.random.default_rng(seed)
    Xmin = data.X[min_rows]
    all_idx = NearestNeighbors(n_neighbors=k + 1).fit(data.X).kneighbors(Xmin, return_distance=False)
    ratio = np.array([
        np.mean(data.labels[[j for j in row if j != i][:k]] == major) for i, row in zip(min_rows, all_idx)
    ])
    weights = ratio / ratio.sum() if ratio.sum() > 0 else np.full(len(min_rows), 1.0 / len(min_rows))
    counts = np.rint(weights * deficit).astype(np.int64)
    bases = np.repeat(np.arange(len(min_rows)), counts)
    nn_idx = _minority_neighbours(Xmin, k)
    return _append_synthetic(data, _interpolate(Xmin, bases, nn_idx, rng), minor)


# --------------------------------------------------------------------------
# metrics


def auc_score(scores, labels) -> float:
    """Probability a random positive outscores a random negative; ties count 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes")
    ranks = stats.rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate(scores, labels, threshold: float = 0.5) -> dict:
    """AUC, accuracy (percent), PPV and FPR; a score >= threshold predicts class 1."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.size == 0:
        raise ValueError("scores and labels must be equal-length and nonempty")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary")
    pred = scores >= threshold
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    tn = int(np.sum(~pred & ~pos))
    return {
        "auc": auc_score(scores, labels),
        "accuracy": 100.0 * float(np.mean(pred == pos)),
        "ppv": tp / (tp + fp) if tp + fp else 0.0,
        "fpr": fp / (fp + tn) if fp + tn else 0.0,
    }


# --------------------------------------------------------------------------
# n-fold x i-iteration training


@dataclass
class Member:
    model: GBDTModel
    iteration: int
    fold: int
    subset: int


@dataclass
class Ensemble:
    members: list[Member]

    def predict_proba(self, X) -> np.ndarray:
        if not self.members:
            raise ValueError("empty ensemble")
        return np.mean([m.model.predict_proba(X) for m in self.members], axis=0)


@dataclass
class Metrics:
    raw: dict  # metric -> list of per-(iteration, fold) values
    evaluations: list  # (iteration, fold) provenance of each raw value

    def summary(self) -> dict:
        return {m: {"mean": float(np.mean(v)), "std": float(np.std(v))} for m, v in self.raw.items()}


def _training_sets(train: LabeledDataset, sampler: str, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """(X, y) pairs to fit one member on each."""
    if sampler == "rrs":
        return [(train.X[s.rows], train.labels[s.rows]) for s in balanced_subsets(train, seed)]
    k = min(5, int(np.bincount(train.labels, minlength=2).min()) - 1)
    if k < 1:
        raise DataError("oversampling needs at least two minority rows per training split")
    aug = (smote_oversample if sampler == "smote" else adasyn_oversample)(train, k=k, seed=seed)
    return [(aug.X, aug.labels)]


def _run_iteration(args):
    X, y, n_folds, k, seed, params, sampler, keep = args
    data = LabeledDataset([str(i) for i in range(len(y))], X, [f"f{j}" for j in range(X.shape[1])], y)
    split_seed = derive_seed(seed, k)
    folds = StratifiedKFold(n_folds, shuffle=True, random_state=split_seed).split(X, y)
    results = []
    for j, (tr, te) in enumerate(folds):
        train = data.subset(tr)
        members = []
        for s, (Xs, ys) in enumerate(_training_sets(train, sampler, derive_seed(seed, k, j))):
            members.append(Member(gbdt_train(Xs, ys, params, derive_seed(seed, k, j, s)), k, j, s))
        proba = np.mean([m.model.predict_proba(X[te]) for m in members], axis=0)
        results.append((j, evaluate(proba, y[te]), members if keep else []))
    return k, results


def train_ensemble(
    data: LabeledDataset,
    n: int = 5,
    i: int = 25,
    params: GBDTParams | None = None,
    seed: int = 0,
    sampler: str = "rrs",
    n_jobs: int = 1,
    keep_members: bool = True,
) -> tuple[Ensemble, Metrics]:
    """Repeated stratified n-fold training of balanced sub-sampling ensembles.

    Iteration k draws its split from ``derive_seed(seed, k)`` and fold j its
    subsets from ``derive_seed(seed, k, j)``, so results are identical for any
    `n_jobs`. Held-out rows of each fold are scored by the mean probability
    of that fold's members.
    """
    if sampler not in SAMPLERS:
        raise ValueError(f"unknown sampler {sampler!r}; choose from {SAMPLERS}")
    if n < 2 or i < 1:
        raise ValueError("need n >= 2 folds and i >= 1 iterations")
    if data.labels is None:
        raise DataError("labels are required")
    counts = np.bincount(data.labels, minlength=2)
    if counts.min() < n:
        raise DataError(f"{n}-fold stratified CV needs at least {n} rows per class; smallest class has {counts.min()}")
    if np.isnan(data.X).any():
        raise DataError("features contain missing values")
    params = params or GBDTParams()
    jobs = [(data.X, data.labels, n, k, seed, params, sampler, keep_members) for k in range(i)]
    if n_jobs > 1 and i > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            outputs = list(pool.map(_run_iteration, jobs))
    else:
        outputs = [_run_iteration(job) for job in jobs]
    raw = {m: [] for m in METRIC_NAMES}
    evals, members = [], []
    for k, results in sorted(outputs, key=lambda kr: kr[0]):
        for j, metrics, mem in results:
            evals.append((k, j))
            for m in METRIC_NAMES:
                raw[m].append(metrics[m])
            members.extend(mem)
    log.info("trained %d evaluations", len(evals))
    return Ensemble(members), Metrics(raw, evals)
