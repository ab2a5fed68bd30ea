"""Tabular per-patient dataset and the feature CSV format.

CSV layout: ``patient_id,label,time_days,censor`` followed by feature columns
in lexicographic order. Missing values are written as ``NA``; an empty
``time_days``/``censor`` cell means the row carries no survival data.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

ID_COLUMNS = ("patient_id", "label", "time_days", "censor")
MISSING = "NA"


@dataclass
class LabeledDataset:
    ids: list[str]
    X: np.ndarray  # (n, p); NaN marks a missing value
    feature_names: list[str]
    labels: np.ndarray | None = None  # 0 = RN, 1 = rBT
    time: np.ndarray | None = None  # days, > 0
    censor: np.ndarray | None = None  # 1 = death observed

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64).reshape(len(self.ids), -1)
        self.feature_names = list(self.feature_names)
        if self.X.shape[1] != len(self.feature_names):
            raise DataError("feature matrix width does not match feature names")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise DataError("duplicate feature names")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if not np.isin(self.labels, (0, 1)).all():
                raise DataError("labels must be binary (0/1)")
        if self.time is not None:
            self.time = np.asarray(self.time, dtype=np.float64)
        if self.censor is not None:
            self.censor = np.asarray(self.censor, dtype=np.int64)

    def __len__(self):
        return len(self.ids)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.X[:, self.feature_names.index(name)]
        except ValueError:
            raise DataError(f"unknown feature {name!r}") from None

    def subset(self, rows=None, features=None) -> "LabeledDataset":
        rows = np.arange(len(self)) if rows is None else np.asarray(rows)
        cols = (np.arange(len(self.feature_names)) if features is None
                else np.array([self.feature_names.index(f) for f in features], dtype=np.int64))
        pick = lambda a: None if a is None else a[rows]
        return LabeledDataset(
            [self.ids[i] for i in rows], self.X[np.ix_(rows, cols)],
            [self.feature_names[c] for c in cols], pick(self.labels), pick(self.time), pick(self.censor),
        )

    def complete_features(self) -> list[str]:
        """Names of features without missing values."""
        ok = ~np.isnan(self.X).any(axis=0)
        return [n for n, keep in zip(self.feature_names, ok) if keep]

    def survival_rows(self) -> np.ndarray:
        if self.time is None or self.censor is None:
            return np.zeros(len(self), dtype=bool)
        return np.isfinite(self.time) & (self.censor >= 0)


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return MISSING
    return repr(float(v))


def write_feature_csv(path, rows: list[dict], feature_names=None) -> None:
    """Write rows of ``{patient_id, label, time_days, censor, features: {...}}``."""
    if feature_names is None:
        feature_names = sorted({k for r in rows for k in r["features"]})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(ID_COLUMNS) + list(feature_names))
    for r in rows:
        time = r.get("time_days")
        censor = r.get("censor")
        w.writerow(
            [r["patient_id"], "" if r.get("label") is None else int(r["label"]),
             "" if time is None else _fmt(time), "" if censor is None else int(censor)]
            + [_fmt(r["features"].get(f)) for f in feature_names]
        )
    Path(path).write_text(buf.getvalue())


def write_dataset_csv(path, data: LabeledDataset) -> None:
    rows = []
    for i, pid in enumerate(data.ids):
        rows.append({
            "patient_id": pid,
            "label": None if data.labels is None else int(data.labels[i]),
            "time_days": None if data.time is None else float(data.time[i]),
            "censor": None if data.censor is None else int(data.censor[i]),
            "features": dict(zip(data.feature_names, data.X[i])),
        })
    write_feature_csv(path, rows, sorted(data.feature_names))


def read_feature_csv(path, require=("label",)) -> LabeledDataset:
    """Parse a feature CSV; `require` lists id columns that must be filled."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        for col in ("patient_id",) + tuple(require):
            if col not in header:
                raise DataError(f"{path}: missing required column {col!r}")
        idx = {c: header.index(c) for c in ID_COLUMNS if c in header}
        feat_cols = [i for i, c in enumerate(header) if c not in ID_COLUMNS]
        names = [header[i] for i in feat_cols]
        ids, labels, times, censors, X = [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            ids.append(row[idx["patient_id"]])
            labels.append(_parse_int(row, idx, "label", (0, 1), path, lineno, "label" in require))
            times.append(_parse_time(row, idx, path, lineno, "time_days" in require))
            censors.append(_parse_int(row, idx, "censor", (0, 1), path, lineno, "censor" in require))
            try:
                X.append([np.nan if row[i] in (MISSING, "") else float(row[i]) for i in feat_cols])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric feature value ({exc})") from None
    if not ids:
        raise DataError(f"{path}: no data rows")
    has = lambda vals: any(v is not None for v in vals)
    nan_or = lambda vals, miss: np.array([miss if v is None else v for v in vals])
    return LabeledDataset(
        ids, np.array(X, dtype=np.float64).reshape(len(ids), len(names)), names,
        nan_or(labels, 0) if has(labels) else None,
        nan_or(times, np.nan) if has(times) else None,
        nan_or(censors, -1) if has(censors) else None,
    )


def _parse_int(row, idx, col, allowed, path, lineno, required):
    if col not in idx or row[idx[col]] in ("", MISSING):
        if required:
            raise DataError(f"{path}:{lineno}: column {col!r} is empty")
        return None
    raw = row[idx[col]]
    try:
        val = int(float(raw))
    except ValueError:
        raise DataError(f"{path}:{lineno}: column {col!r} has non-numeric value {raw!r}") from None
    if val not in allowed or float(raw) != val:
        raise DataError(f"{path}:{lineno}: column {col!r} must be one of {allowed}, got {raw!r}")
    return val


def _parse_time(row, idx, path, lineno, required):
    if "time_days" not in idx or row[idx["time_days"]] in ("", MISSING):
        if required:
            raise DataError(f"{path}:{lineno}: column 'time_days' is empty")
        return None
    try:
        t = float(row[idx["time_days"]])
    except ValueError:
        raise DataError(f"{path}:{lineno}: non-numeric time_days") from None
    if not (np.isfinite(t) and t > 0):
        raise DataError(f"{path}:{lineno}: time_days must be > 0, got {t}")
    return t
