"""Radiomic feature families and per-study feature-vector assembly.

All entropies are in bits and use ``0 * log 0 = 0``. Matrix families
(GTSDM, GLZSM, NGTDM) work on a :class:`QuantizedRegion`; histogram
statistics work on raw region intensities.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DataError
from .fractal import DEFAULT_MAX_LAG, DEFAULT_RADII, DEFAULT_SCALES, DEFAULT_WINDOW, TRANSFORM_FUNCS
from .volume_io import (
    DEFAULT_LEVELS,
    MODALITIES,
    TRANSFORMS,
    Mask,
    QuantizedRegion,
    Volume,
    extract_region,
    quantize,
)

log = logging.getLogger(__name__)

HIST_BINS = 32
NGTDM_EPS = 1e-12

HISTOGRAM_NAMES = (
    "Energy", "Entropy", "Kurtosis", "Max", "Mean", "Median", "Min", "Range", "Skewness", "Variance",
)
GTSDM_NAMES = (
    "AngularSecondMoment", "Contrast", "Correlation", "Variance", "InverseDifference",
    "InverseDifferenceMoment", "SumAverage", "SumVariance", "SumEntropy", "Entropy",
    "DifferenceVariance", "DifferenceEntropy", "InformationCorrelation1", "InformationCorrelation2",
    "ClusterProminence", "ClusterShade",
)
GLZSM_NAMES = (
    "SmallZoneEmphasis", "LargeZoneSizeEmphasis", "GrayLevelNonUniformity", "ZoneSizeNonUniformity",
    "ZoneSizePercentage", "LowGrayZoneEmphasis", "HighGrayZoneEmphasis", "LargeZoneLowGrayEmphasis",
    "LargeZoneHighGrayEmphasis", "SmallZoneLowGrayEmphasis", "SmallZoneHighGrayEmphasis",
)
NGTDM_NAMES = ("Coarseness", "Contrast", "Busyness", "Complexity", "Strength")
VOLUMETRIC_NAMES = ("vol_ET", "vol_ED", "vol_NCR", "vol_WT", "ratio_ET_WT", "ratio_ED_WT", "ratio_NCR_WT")
SPATIAL_NAMES = (
    "Area", "CentroidOffset", "Perimeter", "MajorAxisLength", "MinorAxisLength",
    "Eccentricity", "Orientation", "Solidity", "Extent",
)
HIST_REGIONS = ("ET", "ED", "NCR", "WT")

# the 13 unique unit displacements of the 26-neighbourhood
OFFSETS_13 = tuple(
    o for o in itertools.product((-1, 0, 1), repeat=3) if o > (0, 0, 0)
)


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p))) + 0.0  # no -0.0


# --------------------------------------------------------------------------
# histogram


def histogram_features(values) -> dict[str, float]:
    """First-order statistics of region intensities.

    ``Entropy`` and ``Energy`` (uniformity, sum of squared bin
    probabilities) use 32 equal-width bins over the region's range;
    ``Variance`` is the population variance and ``Kurtosis`` is the
    non-excess fourth standardized moment. Moments of a constant region are 0.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise DataError("empty region")
    mean = v.mean()
    d = v - mean
    var = float(np.mean(d * d))
    if var > 0:
        skew = float(np.mean(d**3) / var**1.5)
        kurt = float(np.mean(d**4) / var**2)
    else:
        skew = kurt = 0.0
    lo, hi = float(v.min()), float(v.max())
    if hi > lo:
        counts, _ = np.histogram(v, bins=HIST_BINS, range=(lo, hi))
    else:
        counts = np.array([v.size])
    p = counts / v.size
    return {
        "Energy": float(np.sum(p * p)),
        "Entropy": _entropy(p),
        "Kurtosis": kurt,
        "Max": hi,
        "Mean": float(mean),
        "Median": float(np.median(v)),
        "Min": lo,
        "Range": hi - lo,
        "Skewness": skew,
        "Variance": var,
    }


# --------------------------------------------------------------------------
# GTSDM / co-occurrence


def cooccurrence_matrix(q: QuantizedRegion, offsets=OFFSETS_13) -> np.ndarray:
    """Symmetrized co-occurrence matrix accumulated over all offsets, normalized to sum 1.

    Only pairs with both voxels inside the region are counted. Level ``k``
    maps to row/column ``k - 1``.
    """
    offsets = [tuple(int(c) for c in o) for o in offsets]
    if not offsets:
        raise ValueError("offsets must be nonempty")
    ng = q.n_levels
    pad = max(max(abs(c) for c in o) for o in offsets)
    g = np.pad(q.grid(), pad)
    core = tuple(slice(pad, n - pad) for n in g.shape)
    a = g[core]
    counts = np.zeros(ng * ng, dtype=np.int64)
    for o in offsets:
        b = g[tuple(slice(pad + d, n - pad + d) for d, n in zip(o, g.shape))]
        ok = (a > 0) & (b > 0)
        counts += np.bincount((a[ok] - 1) * ng + (b[ok] - 1), minlength=ng * ng)
    m = counts.reshape(ng, ng)
    m = m + m.T
    total = m.sum()
    if total == 0:
        raise DataError("no co-occurrence pairs")
    return m / total


def haralick_features(p: np.ndarray) -> dict[str, float]:
    ng = p.shape[0]
    lev = np.arange(1, ng + 1, dtype=np.float64)
    i, j = np.meshgrid(lev, lev, indexing="ij")
    px, py = p.sum(axis=1), p.sum(axis=0)
    mux, muy = float(lev @ px), float(lev @ py)
    sdx = np.sqrt(max(float((lev - mux) ** 2 @ px), 0.0))
    sdy = np.sqrt(max(float((lev - muy) ** 2 @ py), 0.0))

    k_sum = np.arange(2, 2 * ng + 1, dtype=np.float64)
    p_sum = np.bincount((i + j - 2).astype(np.int64).ravel(), weights=p.ravel(), minlength=2 * ng - 1)
    k_diff = np.arange(ng, dtype=np.float64)
    p_diff = np.bincount(np.abs(i - j).astype(np.int64).ravel(), weights=p.ravel(), minlength=ng)

    sum_avg = float(k_sum @ p_sum)
    diff_mean = float(k_diff @ p_diff)
    hxy = _entropy(p.ravel())
    hx, hy = _entropy(px), _entropy(py)
    pxpy = np.outer(px, py)
    nz = p > 0
    hxy1 = float(-np.sum(p[nz] * np.log2(pxpy[nz])))
    hxy2 = _entropy(pxpy.ravel())
    hmax = max(hx, hy)
    corr = float((np.sum(i * j * p) - mux * muy) / (sdx * sdy)) if sdx > 0 and sdy > 0 else 0.0
    cluster = i + j - mux - muy

    return {
        "AngularSecondMoment": float(np.sum(p * p)),
        "Contrast": float(np.sum((i - j) ** 2 * p)),
        "Correlation": corr,
        "Variance": float(np.sum((i - mux) ** 2 * p)),
        "InverseDifference": float(np.sum(p / (1.0 + np.abs(i - j)))),
        "InverseDifferenceMoment": float(np.sum(p / (1.0 + (i - j) ** 2))),
        "SumAverage": sum_avg,
        # uses SumAverage as the centre; Haralick's printed SumEntropy centre is a known erratum
        "SumVariance": float((k_sum - sum_avg) ** 2 @ p_sum),
        "SumEntropy": _entropy(p_sum),
        "Entropy": hxy,
        "DifferenceVariance": float((k_diff - diff_mean) ** 2 @ p_diff),
        "DifferenceEntropy": _entropy(p_diff),
        "InformationCorrelation1": (hxy - hxy1) / hmax if hmax > 0 else 0.0,
        "InformationCorrelation2": float(np.sqrt(1.0 - np.exp(-2.0 * max(hxy2 - hxy, 0.0)))),
        "ClusterProminence": float(np.sum(cluster**4 * p)),
        "ClusterShade": float(np.sum(cluster**3 * p)),
    }


def gtsdm_features(q: QuantizedRegion, offsets=OFFSETS_13) -> dict[str, float]:
    return haralick_features(cooccurrence_matrix(q, offsets))


# --------------------------------------------------------------------------
# GLZSM / size zones


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 26:
        return np.ones((3, 3, 3), dtype=bool)
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    raise ValueError("connectivity must be 6 or 26")


def size_zone_matrix(q: QuantizedRegion, connectivity: int = 26) -> np.ndarray:
    """``N[g - 1, s - 1]`` = number of zones of level g and size s."""
    g = q.grid()
    struct = _structure(connectivity)
    zones = []
    for level in np.unique(q.levels):
        lab, n = ndimage.label(g == level, structure=struct)
        sizes = np.bincount(lab.ravel())[1:]
        zones.extend((int(level), int(s)) for s in sizes)
    nmat = np.zeros((q.n_levels, max(s for _, s in zones)), dtype=np.int64)
    for level, s in zones:
        nmat[level - 1, s - 1] += 1
    return nmat


def glzsm_features(q: QuantizedRegion, connectivity: int = 26) -> dict[str, float]:
    """Gray-level size-zone features; zones are connected components of equal level."""
    nmat = size_zone_matrix(q, connectivity).astype(np.float64)
    nz = nmat.sum()
    i = np.arange(1, nmat.shape[0] + 1, dtype=np.float64)[:, None]
    s = np.arange(1, nmat.shape[1] + 1, dtype=np.float64)[None, :]
    i2, s2 = i * i, s * s
    return {
        "SmallZoneEmphasis": float(np.sum(nmat / s2) / nz),
        "LargeZoneSizeEmphasis": float(np.sum(nmat * s2) / nz),
        "GrayLevelNonUniformity": float(np.sum(nmat.sum(axis=1) ** 2) / nz),
        "ZoneSizeNonUniformity": float(np.sum(nmat.sum(axis=0) ** 2) / nz),
        "ZoneSizePercentage": float(nz / len(q)),
        "LowGrayZoneEmphasis": float(np.sum(nmat / i2) / nz),
        "HighGrayZoneEmphasis": float(np.sum(nmat * i2) / nz),
        "LargeZoneLowGrayEmphasis": float(np.sum(nmat * s2 / i2) / nz),
        "LargeZoneHighGrayEmphasis": float(np.sum(nmat * s2 * i2) / nz),
        "SmallZoneLowGrayEmphasis": float(np.sum(nmat / (s2 * i2)) / nz),
        "SmallZoneHighGrayEmphasis": float(np.sum(nmat * i2 / s2) / nz),
    }


# --------------------------------------------------------------------------
# NGTDM


def ngtdm(q: QuantizedRegion) -> tuple[np.ndarray, np.ndarray, int]:
    """Return ``(n, s, n_valid)``: per-level valid-voxel counts and sums of
    absolute differences from the in-region 26-neighbour mean."""
    g = np.pad(q.grid(), 1).astype(np.float64)
    inside = (g > 0).astype(np.float64)
    kernel = np.ones((3, 3, 3))
    kernel[1, 1, 1] = 0
    nsum = ndimage.convolve(g, kernel, mode="constant")
    ncount = ndimage.convolve(inside, kernel, mode="constant")
    valid = (g > 0) & (ncount > 0)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise DataError("no valid NGTDM voxels")
    lev = g[valid].astype(np.int64)
    diff = np.abs(g[valid] - nsum[valid] / ncount[valid])
    n = np.bincount(lev - 1, minlength=q.n_levels).astype(np.float64)
    s = np.bincount(lev - 1, weights=diff, minlength=q.n_levels)
    return n, s, n_valid


def ngtdm_features(q: QuantizedRegion) -> dict[str, float]:
    """Amadasun-King NGTDM features.

    Coarseness is ``1 / (1e-12 + sum p*s)``, so a region without any gray-tone
    difference reports 1e12.
    """
    n, s, nvp = ngtdm(q)
    p = n / nvp
    present = p > 0
    lev = np.arange(1, q.n_levels + 1, dtype=np.float64)[present]
    pp, sp = p[present], s[present]
    ngp = int(present.sum())
    ps = float(pp @ sp)
    ssum = float(sp.sum())
    di = lev[:, None] - lev[None, :]
    pi, pj = pp[:, None], pp[None, :]

    contrast = 0.0
    if ngp > 1:
        contrast = float(np.sum(pi * pj * di**2) / (ngp * (ngp - 1)) * ssum / nvp)
    bden = float(np.sum(np.abs(lev[:, None] * pi - lev[None, :] * pj)))
    busyness = ps / bden if bden > 0 else 0.0
    complexity = float(np.sum(np.abs(di) * (pi * sp[:, None] + pj * sp[None, :]) / (pi + pj)) / nvp)
    strength = float(np.sum((pi + pj) * di**2) / ssum) if ssum > 0 else 0.0
    return {
        "Coarseness": 1.0 / (NGTDM_EPS + ps),
        "Contrast": contrast,
        "Busyness": busyness,
        "Complexity": complexity,
        "Strength": strength,
    }


# --------------------------------------------------------------------------
# shape


def volumetric_features(mask: Mask, spacing=None) -> dict[str, float]:
    spacing = mask.spacing if spacing is None else spacing
    voxel = float(np.prod(spacing))
    counts = {r: int(mask.region(r).sum()) for r in ("ET", "ED", "NCR", "WT")}
    if counts["WT"] == 0:
        raise DataError("empty region WT")
    out = {f"vol_{r}": counts[r] * voxel for r in ("ET", "ED", "NCR", "WT")}
    for r in ("ET", "ED", "NCR"):
        out[f"ratio_{r}_WT"] = counts[r] / counts["WT"]
    return out


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns hull vertices counter-clockwise."""
    pts = sorted(set(map(tuple, points.tolist())))
    if len(pts) <= 2:
        return np.array(pts, dtype=np.float64)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=np.float64)


def _shoelace(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def slice_shape_features(sl: np.ndarray) -> dict[str, float]:
    """Nine 2D shape descriptors of a binary slice (pixel units)."""
    sl = np.asarray(sl, dtype=bool)
    u, v = np.nonzero(sl)
    area = float(len(u))
    cu, cv = u.mean(), v.mean()
    centre_u, centre_v = (sl.shape[0] - 1) / 2.0, (sl.shape[1] - 1) / 2.0

    padded = np.pad(sl, 1)
    core = padded[1:-1, 1:-1]
    perimeter = 0
    for du, dv in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb = padded[1 + du : padded.shape[0] - 1 + du, 1 + dv : padded.shape[1] - 1 + dv]
        perimeter += int(np.sum(core & ~nb))

    mu20 = float(np.mean((u - cu) ** 2))
    mu02 = float(np.mean((v - cv) ** 2))
    mu11 = float(np.mean((u - cu) * (v - cv)))
    half = 0.5 * (mu20 + mu02)
    root = np.hypot(0.5 * (mu20 - mu02), mu11)
    l1, l2 = half + root, max(half - root, 0.0)
    ecc = float(np.sqrt(1.0 - l2 / l1)) if l1 > 0 else 0.0

    corners = np.concatenate([np.stack([u + a, v + b], axis=1) for a in (0, 1) for b in (0, 1)])
    hull_area = _shoelace(_convex_hull(corners))
    bbox = (u.max() - u.min() + 1) * (v.max() - v.min() + 1)
    return {
        "Area": area,
        "CentroidOffset": float(np.hypot(cu - centre_u, cv - centre_v)),
        "Perimeter": float(perimeter),
        "MajorAxisLength": 4.0 * float(np.sqrt(l1)),
        "MinorAxisLength": 4.0 * float(np.sqrt(l2)),
        "Eccentricity": ecc,
        "Orientation": 0.5 * float(np.arctan2(2.0 * mu11, mu20 - mu02)),
        "Solidity": area / hull_area,
        "Extent": area / float(bbox),
    }


def spatial_features(mask: Mask, axis: str = "z") -> dict[str, float]:
    """Shape of the largest whole-tumour cross-section perpendicular to `axis`."""
    ax = "xyz".index(axis)
    wt = mask.region("WT")
    if not wt.any():
        raise DataError("empty region WT")
    other = tuple(a for a in range(3) if a != ax)
    areas = wt.sum(axis=other)
    k = int(np.argmax(areas))
    return slice_shape_features(np.take(wt, k, axis=ax))


# --------------------------------------------------------------------------
# per-study assembly


@dataclass
class ExtractionConfig:
    n_levels: int = DEFAULT_LEVELS
    window: int = DEFAULT_WINDOW
    scales: tuple[int, ...] = DEFAULT_SCALES
    max_lag: int = DEFAULT_MAX_LAG
    radii: tuple[int, ...] = DEFAULT_RADII
    connectivity: int = 26

    def transform(self, tag: str, volume: Volume) -> Volume:
        if tag == "ptpsa":
            return TRANSFORM_FUNCS[tag](volume, self.window, self.scales)
        if tag == "mbm":
            return TRANSFORM_FUNCS[tag](volume, self.window, self.max_lag)
        return TRANSFORM_FUNCS[tag](volume, self.radii)

    @property
    def margin(self) -> int:
        return self.window // 2 + max(self.max_lag, max(self.radii))


@dataclass
class Study:
    volumes: dict[str, Volume]
    mask: Mask
    patient_id: str = ""
    extra: dict = field(default_factory=dict)


def _family(prefix: str, names, compute) -> dict[str, float | None]:
    try:
        values = compute()
    except DataError as exc:
        log.warning("%s: feature family missing (%s)", prefix, exc)
        return {f"{prefix}_{n}": None for n in names}
    return {f"{prefix}_{n}": values[n] for n in names}


def _matrix_families(prefix: str, volume: Volume, mask: Mask, config: ExtractionConfig) -> dict:
    out = {}
    try:
        region = extract_region(volume, mask, "WT")
        q = quantize(region, config.n_levels)
    except DataError as exc:
        log.warning("%s: WT unavailable (%s)", prefix, exc)
        region = q = None

    def need(x):
        if x is None:
            raise DataError("empty region WT")
        return x

    out.update(_family(f"{prefix}_GTSDM", GTSDM_NAMES, lambda: gtsdm_features(need(q))))
    out.update(_family(f"{prefix}_GLZSM", GLZSM_NAMES, lambda: glzsm_features(need(q), config.connectivity)))
    out.update(_family(f"{prefix}_NGTDM", NGTDM_NAMES, lambda: ngtdm_features(need(q))))
    return out


def _crop_box(mask: Mask, margin: int, min_inplane: int) -> tuple[slice, slice, slice]:
    wt = np.argwhere(mask.region("WT"))
    if len(wt) == 0:
        return tuple(slice(0, n) for n in mask.dims)
    lo = wt.min(axis=0) - margin
    hi = wt.max(axis=0) + margin + 1
    box = []
    for d, n in enumerate(mask.dims):
        a, b = max(0, int(lo[d])), min(n, int(hi[d]))
        if d < 2 and b - a < min_inplane:
            # grow symmetrically so ptpsa's in-plane window fits
            extra = min_inplane - (b - a)
            a = max(0, a - (extra + 1) // 2)
            b = min(n, a + min_inplane)
            a = max(0, b - min_inplane)
        box.append(slice(a, b))
    return tuple(box)


def extract_feature_vector(study: Study, model: str = "NFRF", config: ExtractionConfig | None = None) -> dict:
    """Full named feature vector of one study, sorted by name.

    ``NFRF`` computes histogram statistics on every sub-region plus the
    three matrix families on the whole tumour for each modality, volumetric
    and spatial features. ``MRF`` adds histogram and matrix families on the
    ptpsa, mbm and holder maps of every modality. Features that cannot be
    computed are present with value ``None``.
    """
    config = config or ExtractionConfig()
    model = model.upper()
    if model not in ("MRF", "NFRF"):
        raise ValueError("model must be MRF or NFRF")
    missing = [m for m in MODALITIES if m not in study.volumes]
    if missing:
        raise DataError(f"study {study.patient_id!r} lacks modalities {missing}")
    mask = study.mask
    for m in MODALITIES:
        if study.volumes[m].dims != mask.dims:
            raise DataError(f"{m} dims {study.volumes[m].dims} do not match mask dims {mask.dims}")

    fv: dict[str, float | None] = {}
    for m in MODALITIES:
        vol = study.volumes[m]
        for r in HIST_REGIONS:
            fv.update(_family(f"{m}_Histogram_{r}", HISTOGRAM_NAMES,
                              lambda: histogram_features(extract_region(vol, mask, r).values)))
        fv.update(_matrix_families(m, vol, mask, config))

    fv.update(_family("Volumetric", VOLUMETRIC_NAMES, lambda: volumetric_features(mask)))
    for axis in "xyz":
        fv.update(_family(f"Spatial_{axis}", SPATIAL_NAMES, lambda: spatial_features(mask, axis)))

    if model == "MRF":
        box = _crop_box(mask, config.margin, config.window)
        sub_mask = Mask(mask.labels[box], mask.spacing)
        for m in MODALITIES:
            vol = study.volumes[m]
            sub = Volume(vol.voxels[box], vol.spacing, vol.modality)
            for tag in TRANSFORMS:
                prefix = f"{m}_{tag}"
                try:
                    tv = config.transform(tag, sub)
                except ValueError as exc:
                    log.warning("%s: transform failed (%s)", prefix, exc)
                    tv = None
                if tv is None:
                    for fam, names in (("Histogram_WT", HISTOGRAM_NAMES), ("GTSDM", GTSDM_NAMES),
                                       ("GLZSM", GLZSM_NAMES), ("NGTDM", NGTDM_NAMES)):
                        fv.update({f"{prefix}_{fam}_{n}": None for n in names})
                    continue
                fv.update(_family(f"{prefix}_Histogram_WT", HISTOGRAM_NAMES,
                                  lambda: histogram_features(extract_region(tv, sub_mask, "WT").values)))
                fv.update(_matrix_families(prefix, tv, sub_mask, config))

    return {k: fv[k] for k in sorted(fv)}
