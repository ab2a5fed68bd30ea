"""Voxel-wise fractal and regularity maps.

Each transform maps a volume onto the same grid:

* ``ptpsa``  local fractal dimension of the axial intensity surface from
  triangular-prism surface areas, in [2, 3];
* ``mbm``    local Hurst exponent of a multifractional Brownian field from
  the scaling of mean squared increments, in [0, 1];
* ``holder`` pointwise Hölder exponent from the scaling of local
  oscillation, in [0, 1].

Borders are handled by edge replication throughout.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .volume_io import Volume

HOLDER_EPS = 1e-12
DEFAULT_WINDOW = 9
DEFAULT_SCALES = (1, 2, 4)
DEFAULT_MAX_LAG = 4
DEFAULT_RADII = (1, 2, 3)


def _loglog_slope(x, ys):
    """Least-squares slope of ``ys[k]`` against ``x[k]`` along the first axis."""
    x = np.asarray(x, dtype=np.float64)
    xc = x - x.mean()
    ys = np.asarray(ys)
    yc = ys - ys.mean(axis=0)
    return np.tensordot(xc, yc, axes=(0, 0)) / np.dot(xc, xc)


def _wrap(volume: Volume, values, tag: str) -> Volume:
    return Volume(values, volume.spacing, volume.modality, tag)


def _prism_cell_areas(z: np.ndarray, s: int) -> np.ndarray:
    """Surface area of the four-triangle prism cap on every s-by-s cell.

    ``z`` is (X, Y, Z); the result has shape (X - s, Y - s, Z) and is indexed
    by the cell's lower corner.
    """
    a = z[:-s, :-s]  # (0, 0)
    b = z[s:, :-s]  # (s, 0)
    c = z[s:, s:]  # (s, s)
    d = z[:-s, s:]  # (0, s)
    e = 0.25 * (a + b + c + d)
    h = 0.5 * s
    total = np.zeros_like(a)
    # corners in counter-clockwise order; each triangle is (p, q, centre)
    corners = ((0.0, 0.0, a), (s, 0.0, b), (s, s, c), (0.0, s, d))
    for k in range(4):
        px, py, pz = corners[k]
        qx, qy, qz = corners[(k + 1) % 4]
        ux, uy, uz = qx - px, qy - py, qz - pz
        vx, vy, vz = h - px, h - py, e - pz
        cx = uy * vz - uz * vy
        cy = uz * vx - ux * vz
        cz = ux * vy - uy * vx
        total = total + 0.5 * np.sqrt(cx * cx + cy * cy + cz * cz)
    return total


def ptpsa_transform(
    volume: Volume,
    window: int = DEFAULT_WINDOW,
    scales=DEFAULT_SCALES,
    dynamic_range: float = 255.0,
) -> Volume:
    """Local fractal dimension by piecewise triangular prism surface area.

    For every voxel the axial ``window`` x ``window`` neighbourhood is tiled
    into cells of edge ``s`` for each scale; every cell contributes the area
    of four triangles joining its corner intensities to their mean at the
    centre. The fractal dimension is ``2 - slope`` of log area against log
    scale, clamped to [2, 3].

    Intensities are first mapped linearly onto ``[0, dynamic_range]`` using
    the volume's min and max, which makes the estimate independent of the
    scanner's intensity scale.
    """
    scales = [int(s) for s in scales]
    if len(scales) < 2:
        raise ValueError("ptpsa needs at least two scales to fit a slope")
    if window < 5 or window % 2 == 0:
        raise ValueError("window must be odd and >= 5")
    if any(b <= a for a, b in zip(scales, scales[1:])) or scales[0] < 1 or scales[-1] > window - 1:
        raise ValueError("scales must be strictly increasing integers in [1, window - 1]")
    nx, ny, _ = volume.dims
    if nx < window or ny < window:
        raise ValueError(f"in-plane dims {nx}x{ny} smaller than window {window}")

    v = volume.voxels
    lo, hi = v.min(), v.max()
    z = (v - lo) * (dynamic_range / (hi - lo)) if hi > lo else np.zeros_like(v)
    r = window // 2
    zp = np.pad(z, ((r, r), (r, r), (0, 0)), mode="edge")

    log_area = []
    for s in scales:
        n_cells = (window - 1) // s
        cells = _prism_cell_areas(zp, s)
        area = np.zeros(v.shape)
        for i in range(n_cells):
            for j in range(n_cells):
                area += cells[s * i : s * i + nx, s * j : s * j + ny]
        # rescale so a flat window always covers (window - 1)^2
        area *= ((window - 1) / (n_cells * s)) ** 2
        log_area.append(np.log(area))
    slope = _loglog_slope(np.log(scales), log_area)
    return _wrap(volume, np.clip(2.0 - slope, 2.0, 3.0), "ptpsa")


def _shift(a: np.ndarray, axis: int, k: int, pad: int) -> np.ndarray:
    """View of padded ``a`` displaced by ``k`` along ``axis`` and cropped by ``pad``."""
    sl = [slice(pad, a.shape[d] - pad) for d in range(3)]
    sl[axis] = slice(pad + k, a.shape[axis] - pad + k)
    return a[tuple(sl)]


def mbm_transform(volume: Volume, window: int = DEFAULT_WINDOW, max_lag: int = DEFAULT_MAX_LAG) -> Volume:
    """Local Hurst exponent of a multifractional Brownian motion model.

    ``G(h)`` is the mean squared increment ``|I(x + h e) - I(x)|^2`` over
    the six axis directions ``e`` and all positions of the cubic window;
    ``H = slope / 2`` of log G against log h, clamped to [0, 1]. Voxels with
    ``G == 0`` at every lag are perfectly smooth and get ``H = 1``.
    """
    if max_lag < 2:
        raise ValueError("max_lag must be >= 2")
    if window < 2 * max_lag + 1:
        raise ValueError("window must be >= 2 * max_lag + 1")
    v = volume.voxels
    r = window // 2
    pad = r + max_lag
    vp = np.pad(v, pad, mode="edge")
    centre = _shift(vp, 0, 0, max_lag)
    inner = tuple(slice(r, r + n) for n in v.shape)
    lags = np.arange(1, max_lag + 1)
    g = np.empty((max_lag,) + v.shape)
    for n, h in enumerate(lags):
        acc = np.zeros(centre.shape)
        for axis in range(3):
            for sign in (1, -1):
                d = _shift(vp, axis, sign * h, max_lag) - centre
                acc += d * d
        g[n] = ndimage.uniform_filter(acc / 6.0, size=window, mode="nearest")[inner]
    flat = np.all(g <= 0.0, axis=0)
    slope = _loglog_slope(np.log(lags), np.log(np.maximum(g, 1e-300)))
    hurst = np.clip(slope / 2.0, 0.0, 1.0)
    hurst[flat] = 1.0
    return _wrap(volume, hurst, "mbm")


def holder_transform(volume: Volume, radii=DEFAULT_RADII) -> Volume:
    """Pointwise Hölder exponent from oscillation scaling.

    ``osc_r`` is max - min over the cube of half-width r; the exponent is the
    slope of ``log(osc_r + 1e-12)`` against ``log r``, clamped to [0, 1].
    """
    radii = [int(r) for r in radii]
    if len(radii) < 2 or any(b <= a for a, b in zip(radii, radii[1:])) or radii[0] < 1:
        raise ValueError("radii must be >= 2 strictly increasing positive integers")
    v = volume.voxels
    logs = []
    for r in radii:
        size = 2 * r + 1
        osc = ndimage.maximum_filter(v, size=size, mode="nearest") - ndimage.minimum_filter(v, size=size, mode="nearest")
        logs.append(np.log(osc + HOLDER_EPS))
    slope = _loglog_slope(np.log(radii), logs)
    return _wrap(volume, np.clip(slope, 0.0, 1.0), "holder")


TRANSFORM_FUNCS = {
    "ptpsa": ptpsa_transform,
    "mbm": mbm_transform,
    "holder": holder_transform,
}
