"""Volume and mask loading, region extraction and gray-level quantization.

Arrays are indexed ``[x, y, z]`` with shape ``(nx, ny, nz)``. On disk the
payload is stored with x varying fastest (Fortran order of that shape), which
is also the NIfTI convention. "Row-major" voxel order in this package means
the same thing: x fastest, then y, then z.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

MODALITIES = ("T1", "T1C", "T2", "FLAIR")
TRANSFORMS = ("ptpsa", "mbm", "holder")
MASK_LABELS = (0, 1, 2, 4)
REGION_LABELS = {
    "NCR": (1,),
    "ED": (2,),
    "ET": (4,),
    "WT": (1, 2, 4),
}
DEFAULT_LEVELS = 64

_SIDECAR_DTYPES = {
    "f64": "<f8",
    "f32": "<f4",
    "i32": "<i4",
    "i16": "<i2",
    "u16": "<u2",
    "u8": "u1",
}

# NIfTI-1 datatype codes supported by the reader
_NIFTI_DTYPES = {
    2: "u1",
    4: "i2",
    8: "i4",
    16: "f4",
    64: "f8",
    512: "u2",
}


@dataclass
class Volume:
    voxels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    modality: str | None = None
    transform: str | None = None

    def __post_init__(self):
        vox = np.asarray(self.voxels, dtype=np.float64)
        if vox.ndim != 3 or min(vox.shape) < 1:
            raise DataError(f"volume must be 3D with positive dims, got shape {vox.shape}")
        bad = ~np.isfinite(vox)
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise DataError(f"non-finite voxel at index {idx}")
        self.voxels = vox
        self.spacing = _check_spacing(self.spacing)
        if self.modality is not None and self.modality not in MODALITIES:
            raise DataError(f"unknown modality {self.modality!r}")
        if self.transform is not None and self.transform not in TRANSFORMS:
            raise DataError(f"unknown transform {self.transform!r}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.voxels.shape)


@dataclass
class Mask:
    labels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 3:
            raise DataError(f"mask must be 3D, got shape {lab.shape}")
        if not np.all(np.isfinite(lab)) or not np.all(lab == np.round(lab)):
            raise DataError("mask labels must be integers")
        lab = lab.astype(np.int16)
        unexpected = np.setdiff1d(np.unique(lab), MASK_LABELS)
        if unexpected.size:
            raise DataError(f"mask contains labels outside {MASK_LABELS}: {unexpected.tolist()}")
        self.labels = lab
        self.spacing = _check_spacing(self.spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.labels.shape)

    def region(self, region: str) -> np.ndarray:
        """Boolean grid of voxels belonging to `region` (WT, ET, ED or NCR)."""
        try:
            labels = REGION_LABELS[region]
        except KeyError:
            raise DataError(f"unknown region {region!r}; expected one of {sorted(REGION_LABELS)}") from None
        return np.isin(self.labels, labels)


@dataclass
class Region:
    """Voxels of one labelled region, in x-fastest order."""

    coords: np.ndarray  # (n, 3) integer [x, y, z]
    values: np.ndarray  # (n,) float64
    region: str

    def __len__(self):
        return len(self.values)


@dataclass
class QuantizedRegion:
    coords: np.ndarray
    levels: np.ndarray  # (n,) ints in 1..n_levels
    n_levels: int
    region: str = "WT"
    _grid: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, 3)
        self.levels = np.asarray(self.levels, dtype=np.int64)
        if self.n_levels < 2:
            raise ValueError("n_levels must be >= 2")
        if self.levels.size == 0:
            raise DataError("empty region")
        if self.levels.min() < 1 or self.levels.max() > self.n_levels:
            raise ValueError("levels must lie in [1, n_levels]")

    def __len__(self):
        return len(self.levels)

    def grid(self) -> np.ndarray:
        """Dense bounding-box grid of levels; 0 marks voxels outside the region."""
        if self._grid is None:
            lo = self.coords.min(axis=0)
            shape = tuple(self.coords.max(axis=0) - lo + 1)
            g = np.zeros(shape, dtype=np.int64)
            c = self.coords - lo
            g[c[:, 0], c[:, 1], c[:, 2]] = self.levels
            self._grid = g
        return self._grid

    @classmethod
    def from_grid(cls, levels, n_levels: int, region: str = "WT") -> "QuantizedRegion":
        """Build from a dense grid where 0 means "not in region"."""
        levels = np.asarray(levels)
        if levels.ndim == 2:
            levels = levels[:, :, None]
        coords = _xfastest_nonzero(levels > 0)
        return cls(coords, levels[coords[:, 0], coords[:, 1], coords[:, 2]], n_levels, region)


def _check_spacing(spacing) -> tuple[float, float, float]:
    sp = tuple(float(s) for s in spacing)
    if len(sp) != 3 or not all(np.isfinite(s) and s > 0 for s in sp):
        raise DataError(f"spacing must be three positive numbers, got {spacing!r}")
    return sp


def _xfastest_nonzero(flags: np.ndarray) -> np.ndarray:
    # nonzero on the transposed (z, y, x) view yields x-fastest ordering
    z, y, x = np.nonzero(flags.transpose(2, 1, 0))
    return np.stack([x, y, z], axis=1).astype(np.int64)


# --------------------------------------------------------------------------
# file formats


def _sidecar_paths(path: Path) -> tuple[Path, Path]:
    if path.suffix == ".json":
        return path, path.with_suffix(".raw")
    if path.suffix == ".raw":
        return path.with_suffix(".json"), path
    raise DataError(f"{path}: expected a .json sidecar or .raw payload")


def _read_sidecar(path: Path) -> tuple[np.ndarray, dict]:
    meta_path, raw_path = _sidecar_paths(path)
    if not meta_path.exists():
        raise DataError(f"{meta_path}: file not found")
    if not raw_path.exists():
        raise DataError(f"{raw_path}: file not found")
    try:
        meta = json.loads(meta_path.read_text())
        dims = [int(d) for d in meta["dims"]]
        dtype = _SIDECAR_DTYPES[meta.get("dtype", "f64")]
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{meta_path}: malformed header ({exc})") from exc
    if len(dims) != 3 or min(dims) < 1:
        raise DataError(f"{meta_path}: malformed header (dims={dims})")
    payload = raw_path.read_bytes()
    expected = int(np.prod(dims)) * np.dtype(dtype).itemsize
    if len(payload) != expected:
        raise DataError(
            f"{raw_path}: size mismatch, header declares {int(np.prod(dims))} voxels "
            f"({expected} bytes) but payload has {len(payload)} bytes"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(dims, order="F")
    return data, meta


def _read_nifti(path: Path) -> tuple[np.ndarray, dict]:
    if not path.exists():
        raise DataError(f"{path}: file not found")
    raw = path.read_bytes()
    if path.suffix == ".gz":
        try:
            raw = gzip.decompress(raw)
        except OSError as exc:
            raise DataError(f"{path}: bad gzip stream ({exc})") from exc
    if len(raw) < 348:
        raise DataError(f"{path}: malformed header (file shorter than 348 bytes)")
    for endian in "<>":
        if struct.unpack(endian + "i", raw[:4])[0] == 348:
            break
    else:
        raise DataError(f"{path}: malformed header (sizeof_hdr != 348)")
    if raw[344:348] != b"n+1\x00":
        raise DataError(f"{path}: malformed header (magic {raw[344:348]!r}, expected single-file NIfTI-1)")
    dim = struct.unpack(endian + "8h", raw[40:56])
    datatype = struct.unpack(endian + "h", raw[70:72])[0]
    pixdim = struct.unpack(endian + "8f", raw[76:108])
    vox_offset = int(struct.unpack(endian + "f", raw[108:112])[0])
    slope, inter = struct.unpack(endian + "2f", raw[112:120])
    ndim = dim[0]
    if ndim < 1 or ndim > 7 or any(d != 1 for d in dim[4 : ndim + 1]):
        raise DataError(f"{path}: only 3D images are supported (dim={dim[: ndim + 1]})")
    dims = [max(1, d) for d in dim[1:4]]
    if datatype not in _NIFTI_DTYPES:
        raise DataError(f"{path}: unsupported NIfTI datatype code {datatype}")
    dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(endian)
    count = int(np.prod(dims))
    end = vox_offset + count * dtype.itemsize
    if vox_offset < 348 or end > len(raw):
        raise DataError(f"{path}: size mismatch, header declares {count} voxels but payload is truncated")
    data = np.frombuffer(raw[vox_offset:end], dtype=dtype).reshape(dims, order="F")
    if slope != 0 and np.isfinite(slope) and not (slope == 1 and inter == 0):
        data = data.astype(np.float64) * slope + inter
    spacing = tuple(abs(p) if p > 0 else 1.0 for p in pixdim[1:4])
    return data, {"dims": dims, "spacing": spacing}


def _read_any(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    name = path.name.lower()
    if name.endswith(".nii") or name.endswith(".nii.gz"):
        return _read_nifti(path)
    return _read_sidecar(path)


def load_volume(path, modality: str | None = None) -> Volume:
    """Read a scalar volume from a sidecar+raw pair or a NIfTI-1 file.

    The modality is taken from the sidecar when present, otherwise from the
    ``modality`` argument.
    """
    data, meta = _read_any(path)
    modality = meta.get("modality", modality)
    vox = np.asarray(data, dtype=np.float64)
    return Volume(vox, tuple(meta.get("spacing", (1.0, 1.0, 1.0))), modality, meta.get("transform"))


def load_mask(path) -> Mask:
    data, meta = _read_any(path)
    return Mask(np.asarray(data), tuple(meta.get("spacing", (1.0, 1.0, 1.0))))


def write_volume(volume: Volume | Mask, path) -> Path:
    """Write the canonical sidecar format; returns the JSON path.

    Volumes are stored as little-endian float64 (bit-exact round trip), masks
    as uint8.
    """
    path = Path(path)
    meta_path, raw_path = _sidecar_paths(path if path.suffix in (".json", ".raw") else path.with_suffix(".json"))
    if isinstance(volume, Mask):
        data, tag = volume.labels.astype("u1"), "u8"
        meta = {"dims": list(volume.dims), "spacing": list(volume.spacing), "dtype": tag, "kind": "mask"}
    else:
        data, tag = volume.voxels.astype("<f8"), "f64"
        meta = {"dims": list(volume.dims), "spacing": list(volume.spacing), "dtype": tag}
        if volume.modality is not None:
            meta["modality"] = volume.modality
        if volume.transform is not None:
            meta["transform"] = volume.transform
    meta_path.parent.mkdir(parents=True, exist_ok=True)
    meta_path.write_text(json.dumps(meta, sort_keys=True) + "\n")
    raw_path.write_bytes(np.asarray(data).tobytes(order="F"))
    return meta_path


# --------------------------------------------------------------------------
# regions


def extract_region(volume: Volume, mask: Mask, region: str) -> Region:
    """Voxels of `volume` inside `region`, x-fastest order.

    Raises ``DataError("empty region ...")`` when no voxel carries a matching
    label; callers decide whether that makes a feature missing.
    """
    if volume.dims != mask.dims:
        raise DataError(f"volume dims {volume.dims} do not match mask dims {mask.dims}")
    coords = _xfastest_nonzero(mask.region(region))
    if len(coords) == 0:
        raise DataError(f"empty region {region}")
    values = volume.voxels[coords[:, 0], coords[:, 1], coords[:, 2]]
    return Region(coords, values, region)


def quantize_values(values, n_levels: int = DEFAULT_LEVELS) -> np.ndarray:
    """Fixed-bin min-max quantization onto 1..n_levels."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise DataError("empty region")
    if n_levels < 2:
        raise ValueError("n_levels must be >= 2")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.ones(v.shape, dtype=np.int64)
    lev = 1 + np.floor(n_levels * (v - lo) / (hi - lo)).astype(np.int64)
    return np.minimum(lev, n_levels)


def quantize(region: Region, n_levels: int = DEFAULT_LEVELS) -> QuantizedRegion:
    return QuantizedRegion(region.coords, quantize_values(region.values, n_levels), n_levels, region.region)
