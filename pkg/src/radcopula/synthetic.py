"""Synthetic data for verification: fractal fields, labelled studies and dependent-censoring cohorts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import LabeledDataset
from .volume_io import MODALITIES, Mask, Volume


def fbm_1d(n: int, hurst: float, rng: np.random.Generator) -> np.ndarray:
    """Exact fractional Brownian motion path B(0..n-1) by circulant embedding of its increments.

    Increments are fractional Gaussian noise with autocovariance
    ``(|k+1|^2H - 2|k|^2H + |k-1|^2H) / 2``; the embedding eigenvalues are
    nonnegative for every H in (0, 1), so the sample is exact.
    """
    if not 0 < hurst < 1:
        raise ValueError("hurst must be in (0, 1)")
    if n < 2:
        raise ValueError("need at least two points")
    m = n - 1
    k = np.arange(m + 1, dtype=np.float64)
    h2 = 2.0 * hurst
    acov = 0.5 * (np.abs(k + 1) ** h2 - 2.0 * k**h2 + np.abs(k - 1) ** h2)
    row = np.concatenate([acov, acov[-2:0:-1]])
    lam = np.clip(np.fft.fft(row).real, 0.0, None)
    size = row.size
    z = rng.normal(size=size) + 1j * rng.normal(size=size)
    fgn = np.fft.fft(np.sqrt(lam / size) * z).real[:m]
    return np.concatenate([[0.0], np.cumsum(fgn)])


def fbm_field(shape, hurst: float, seed: int = 0) -> np.ndarray:
    """One fBm path along x, replicated over y and z.

    Increments along y and z vanish, so every axis-increment statistic
    scales as ``h^(2H)``.
    """
    rng = np.random.default_rng(seed)
    nx, ny, nz = shape
    path = fbm_1d(nx, hurst, rng)
    return np.broadcast_to(path[:, None, None], shape).copy()


def _fbm_texture(shape, hurst: float, seed: int) -> np.ndarray:
    """Independent standardized fBm rows along x (texture for synthetic studies)."""
    rng = np.random.default_rng(seed)
    nx, ny, nz = shape
    field = np.empty(shape)
    for j in range(ny):
        for k in range(nz):
            p = fbm_1d(nx, hurst, rng)
            field[:, j, k] = (p - p.mean()) / (p.std() or 1.0)
    return field


# --------------------------------------------------------------------------
# classification data


def classification_table(n_major: int = 143, n_minor: int = 15, n_features: int = 20, n_informative: int = 4,
                         separation: float = 4.0, seed: int = 0) -> LabeledDataset:
    """Feature table with `n_major` rBT rows (label 1) and `n_minor` RN rows (label 0).

    The first `n_informative` features are shifted by `separation` standard
    deviations in the majority class; the rest are pure noise.
    """
    if n_major < 1 or n_minor < 1 or not 0 <= n_informative <= n_features:
        raise ValueError("invalid class sizes or feature counts")
    rng = np.random.default_rng(seed)
    n = n_major + n_minor
    X = rng.normal(size=(n, n_features))
    labels = np.r_[np.ones(n_major, dtype=np.int64), np.zeros(n_minor, dtype=np.int64)]
    X[:n_major, :n_informative] += separation
    perm = rng.permutation(n)
    width = len(str(n))
    return LabeledDataset(
        [f"P{i:0{width}d}" for i in range(n)], X[perm],
        [f"feat_{j:02d}" for j in range(n_features)], labels[perm],
    )


def synthetic_study(label: int, shape=(24, 24, 8), seed: int = 0):
    """Four modality volumes and a nested ET / NCR / ED mask; rBT (1) gets rougher texture."""
    rng = np.random.default_rng(seed)
    nx, ny, nz = shape
    xx, yy, zz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    cx, cy, cz = (nx - 1) / 2 + rng.uniform(-1, 1), (ny - 1) / 2 + rng.uniform(-1, 1), (nz - 1) / 2
    r = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2 + (2.0 * (zz - cz)) ** 2)
    rad = min(nx, ny) / 2 - 2
    labels = np.zeros(shape, dtype=np.int64)
    labels[r <= rad] = 2  # edema
    labels[r <= 0.6 * rad] = 4  # enhancing
    labels[r <= 0.3 * rad] = 1  # necrosis
    hurst = 0.3 if label == 1 else 0.7
    volumes = {}
    for m, mod in enumerate(MODALITIES):
        tex = _fbm_texture(shape, hurst, seed * 10 + m)
        vox = 100.0 + 10.0 * m + 20.0 * (labels > 0) + 8.0 * tex
        volumes[mod] = Volume(vox, (1.0, 1.0, 1.0), mod)
    return volumes, Mask(labels, (1.0, 1.0, 1.0))


# --------------------------------------------------------------------------
# survival data


def clayton_pair(n: int, alpha: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """(u, log v) with (u, v) from a Clayton copula, via the conditional inverse.

    v is returned on the log scale because it underflows for large alpha.
    """
    u = rng.uniform(size=n)
    w = rng.uniform(size=n)
    if alpha == 0:
        return u, np.log(w)
    # v = ((w^{-alpha/(1+alpha)} - 1) u^{-alpha} + 1)^{-1/alpha}
    term = np.log(np.expm1(-(alpha / (1 + alpha)) * np.log(w))) - alpha * np.log(u)
    return u, -np.logaddexp(term, 0.0) / alpha


@dataclass
class SurvivalCohort:
    data: LabeledDataset  # time, censor and label (= censor) filled in
    latent_t: np.ndarray
    latent_u: np.ndarray
    planted: list[str]


def survival_cohort(n: int = 200, n_features: int = 30, n_signal: int = 3, alpha: float = 8.0, beta: float = 1.0,
                    gamma_signal: float = 1.0, n_decoy: int = 0, gamma_decoy: float = 1.5, scale_t: float = 365.0,
                    shape_t: float = 1.5, scale_u: float = 365.0, shape_u: float = 1.5, seed: int = 0) -> SurvivalCohort:
    """Dependent-censoring cohort from the Clayton/Weibull model.

    Features are standard normal. The first `n_signal` raise the death
    hazard with coefficient `beta` and the censoring hazard with
    `gamma_signal` (informative dropout: high-risk patients are lost to
    follow-up sooner). The next `n_decoy` act only on the censoring hazard
    with `gamma_decoy`. Latent (T, U) are joined by a Clayton copula on their
    survival functions; y = min(T, U) and delta = 1{T <= U}. Margins:
    ``S(t|x) = exp(-(t/scale)^shape e^{coef x})``.
    """
    if n_signal + n_decoy > n_features:
        raise ValueError("more planted features than features")
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, n_features))
    signal = X[:, :n_signal].sum(axis=1)
    lin_t = beta * signal
    lin_u = gamma_signal * signal + gamma_decoy * X[:, n_signal : n_signal + n_decoy].sum(axis=1)
    u, log_v = clayton_pair(n, alpha, rng)
    # S(t) = u  =>  t = scale * (-log u / e^{lin})^{1/shape}
    t_lat = scale_t * (-np.log(u) * np.exp(-lin_t)) ** (1.0 / shape_t)
    u_lat = scale_u * (-log_v * np.exp(-lin_u)) ** (1.0 / shape_u)
    time = np.minimum(t_lat, u_lat)
    event = (t_lat <= u_lat).astype(np.int64)
    width = len(str(n))
    names = [f"feat_{j:02d}" for j in range(n_features)]
    data = LabeledDataset([f"S{i:0{width}d}" for i in range(n)], X, names, event, time, event)
    return SurvivalCohort(data, t_lat, u_lat, names[:n_signal])
