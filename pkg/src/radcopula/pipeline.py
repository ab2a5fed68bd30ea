"""End-to-end commands: extraction, classification, survival analysis, synthesis and bundling.

Every command is a pure function of its inputs, the config and the seed, and
writes sorted-key JSON reports and CSVs whose floats use ``repr`` so re-runs
are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import shutil
import warnings
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import ensemble, selection, survival
from .config import PipelineConfig
from .dataset import LabeledDataset, read_feature_csv, write_dataset_csv, write_feature_csv
from .errors import DataError
from .synthetic import classification_table, survival_cohort, synthetic_study
from .texture import Study, extract_feature_vector
from .volume_io import MODALITIES, load_mask, load_volume, write_volume

log = logging.getLogger(__name__)

MIN_SURVIVAL_ROWS = 10
_VOLUME_SUFFIXES = (".json", ".nii.gz", ".nii")


# --------------------------------------------------------------------------
# output helpers


def _schema(name: str) -> dict:
    return json.loads(resources.files("radcopula").joinpath("schemas", f"{name}.schema.json").read_text())


def write_report(path: Path, report: dict, schema: str) -> Path:
    jsonschema.validate(report, _schema(schema))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    return path


def _write_csv(path: Path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


def _provenance(command: str, config: PipelineConfig, seed: int) -> dict:
    return {"command": command, "seed": int(seed), "config_hash": config.digest(), "config": config.as_dict()}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# extract


def _find_volume(directory: Path, stem: str) -> Path:
    for suffix in _VOLUME_SUFFIXES:
        p = directory / f"{stem}{suffix}"
        if p.exists():
            return p
    raise DataError(f"no volume file for {stem} in {directory}")


def _extract_one(args):
    pid, volume_dir, mask_dir, model, extraction = args
    try:
        vols = {m: load_volume(_find_volume(volume_dir, f"{pid}_{m}"), m) for m in MODALITIES}
        mask = load_mask(_find_volume(mask_dir, f"{pid}_mask"))
        return pid, extract_feature_vector(Study(vols, mask, pid), model, extraction), None
    except (DataError, ValueError, OSError) as exc:
        return pid, None, str(exc)


def cmd_extract(config: PipelineConfig, output: Path, seed: int = 0, threads: int = 1) -> dict:
    """One feature row per patient listed in the clinical CSV; failed patients are skipped."""
    config.validate(check_paths=True)
    clinical = read_feature_csv(config.clinical, require=())
    jobs = [(pid, Path(config.volume_dir), Path(config.mask_dir), config.model.upper(), config.extraction())
            for pid in clinical.ids]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_extract_one, jobs))
    else:
        results = [_extract_one(j) for j in jobs]
    rows, failed = [], []
    for i, (pid, fv, err) in enumerate(results):
        if fv is None:
            log.warning("patient %s skipped: %s", pid, err)
            failed.append({"patient_id": pid, "error": err})
            continue
        rows.append({
            "patient_id": pid,
            "label": None if clinical.labels is None else int(clinical.labels[i]),
            "time_days": None if clinical.time is None or not np.isfinite(clinical.time[i]) else float(clinical.time[i]),
            "censor": None if clinical.censor is None or clinical.censor[i] < 0 else int(clinical.censor[i]),
            "features": fv,
        })
    if not rows:
        raise DataError("no patient could be processed")
    names = sorted(rows[0]["features"])
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    write_feature_csv(output, rows, names)
    return {"rows": len(rows), "features": len(names), "failed": failed, "output": str(output)}


# --------------------------------------------------------------------------
# classify


def _usable(data: LabeledDataset) -> LabeledDataset:
    feats = data.complete_features()
    dropped = len(data.feature_names) - len(feats)
    if dropped:
        log.warning("dropping %d features with missing values", dropped)
    feats = [f for f in feats if np.ptp(data.column(f)) > 0]
    if not feats:
        raise DataError("no complete, non-constant features")
    return data.subset(features=feats)


def _metric_block(metrics: ensemble.Metrics) -> dict:
    summ = metrics.summary()
    return {m: {"mean": summ[m]["mean"], "std": summ[m]["std"], "values": [float(v) for v in metrics.raw[m]]}
            for m in ensemble.METRIC_NAMES}


def classify(data: LabeledDataset, config: PipelineConfig, seed: int = 0, threads: int = 1) -> dict:
    data = _usable(data)
    if data.labels is None:
        raise DataError("missing required column 'label'")
    if len(data.feature_names) >= 2:
        ranked = selection.rank_by_f1_importance(data, cv=config.selection_cv, seed=seed)
    else:
        ranked = selection.RankedFeatures([(data.feature_names[0], 1.0)])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        top = selection.select_top(ranked, config.threshold)
    for w in caught:
        log.warning("%s", w.message)
    sig = selection.significance_filter(data, top, config.significance, config.test)
    chosen = [f for f, _ in sig]
    if not chosen:
        log.warning("no feature passed the significance filter; using the importance selection")
        chosen = top
    scores = dict(ranked.entries)
    tests = dict(sig)
    _, metrics = ensemble.train_ensemble(
        data.subset(features=chosen), n=config.folds, i=config.iterations, params=config.gbdt_params(),
        seed=seed, sampler=config.sampler, n_jobs=threads, keep_members=False,
    )
    counts = np.bincount(data.labels, minlength=2)
    return {
        "n_rows": len(data),
        "class_counts": {"0": int(counts[0]), "1": int(counts[1])},
        "ranking": [{"feature": f, "score": float(s)} for f, s in ranked.entries],
        "threshold": float(config.threshold),
        "selection": [
            {"feature": f, "score": float(scores[f]),
             "p_value": float(tests[f].p_value) if f in tests else None,
             "statistic": float(tests[f].statistic) if f in tests else None,
             "test": config.test}
            for f in chosen
        ],
        "sampler": config.sampler,
        "folds": config.folds,
        "iterations": config.iterations,
        "metrics": _metric_block(metrics),
        "evaluations": [list(e) for e in metrics.evaluations],
    }


def cmd_classify(features_csv, config: PipelineConfig, out_dir: Path, seed: int = 0, threads: int = 1) -> dict:
    data = read_feature_csv(features_csv, require=("label",))
    report = _provenance("classify", config, seed)
    report.update(classify(data, config, seed, threads))
    write_report(Path(out_dir) / "classify_report.json", report, "classify_report")
    return report


# --------------------------------------------------------------------------
# survival


def _curve_rows(good: survival.SurvivalCurve, poor: survival.SurvivalCurve):
    grid = np.union1d(good.times, poor.times)
    return [(t, g, p) for t, g, p in zip(grid, good(grid), poor(grid))]


def _separation_entry(time, event, X, names, fits, alpha, k, config, seed):
    use = fits if k is None else fits[:k]
    model = survival.PrognosticModel.from_fits(use, X, names)
    cols = [names.index(f) for f in model.features]
    sep = survival.curve_separation(time, event, model.pi_matrix(X[:, cols]), alpha, config.permutations, seed)
    return {"statistic": sep.statistic, "p_value": sep.p_value, "features": model.features}


def survival_analysis(data: LabeledDataset, config: PipelineConfig, out_dir: Path, seed: int = 0, threads: int = 1) -> dict:
    keep = np.flatnonzero(data.survival_rows())
    if len(keep) < MIN_SURVIVAL_ROWS:
        raise DataError(f"survival analysis needs at least {MIN_SURVIVAL_ROWS} rows with time and censor; have {len(keep)}")
    data = _usable(data.subset(keep))
    time, event, X, names = data.time, data.censor, data.X, data.feature_names
    out_dir = Path(out_dir)

    curve = survival.cv_c_index(time, event, X, names, config.alpha_grid, config.survival_folds, seed, config.p_threshold)
    alpha = curve.best_alpha
    model, chosen = survival.fit_prognostic_model(time, event, X, names, alpha, config.p_threshold)
    cols = [names.index(f) for f in model.features]
    pi = model.pi_matrix(X[:, cols])
    sep = survival.curve_separation(time, event, pi, alpha, config.permutations, seed)
    poor = sep.poor

    files = {}
    files["cindex_curve"] = _write_csv(out_dir / "cindex_curve.csv", ("alpha", "c_index"),
                                       [(float(a), c) for a, c in zip(curve.alphas, curve.c_mean)])
    good_d, poor_d = survival.group_curves(time, event, poor, alpha)
    good_i, poor_i = survival.group_curves(time, event, poor, 0.0)
    files["curves_dependent"] = _write_csv(out_dir / "curves_dependent.csv", ("t", "S_good", "S_poor"), _curve_rows(good_d, poor_d))
    files["curves_independent"] = _write_csv(out_dir / "curves_independent.csv", ("t", "S_good", "S_poor"), _curve_rows(good_i, poor_i))
    files["pi_groups"] = _write_csv(out_dir / "pi_groups.csv", ("patient_id", "pi", "group"),
                                    [(pid, float(v), "poor" if p else "good") for pid, v, p in zip(data.ids, pi, poor)])

    # feature-combination table: dependent (selected alpha) vs independent (alpha = 0) fits
    all_dep = survival.select_survival_features(time, event, X, names, alpha, config.p_threshold, keep_all=True)
    all_ind = all_dep if alpha == 0 else survival.select_survival_features(time, event, X, names, 0.0, config.p_threshold, keep_all=True)
    combos = []
    for k in list(config.top_k) + [None]:
        if k is not None and k > len(all_dep):
            continue
        combos.append({
            "k": "all" if k is None else int(k),
            "dependent": _separation_entry(time, event, X, names, all_dep, alpha, k, config, seed),
            "independent": _separation_entry(time, event, X, names, all_ind, 0.0, k, config, seed),
        })

    # dead/alive classification with the top-k dependent-fit features
    outcome = data.subset(features=data.feature_names)
    outcome.labels = event.copy()
    table_iv = []
    for k in config.top_k:
        if k > len(all_dep):
            continue
        feats = [f.feature for f in all_dep[:k]]
        entry = {"k": int(k), "features": feats}
        try:
            _, m = ensemble.train_ensemble(outcome.subset(features=feats), n=config.folds, i=config.survival_iterations,
                                           params=config.gbdt_params(), seed=seed, n_jobs=threads, keep_members=False)
            entry["metrics"] = _metric_block(m)
        except DataError as exc:
            entry["error"] = str(exc)
        table_iv.append(entry)

    return {
        "n_rows": len(data),
        "n_events": int(event.sum()),
        "alpha_grid": [float(a) for a in curve.alphas],
        "c_index_curve": [{"alpha": float(a), "c_index": float(c), "folds": [float(v) for v in f]}
                          for a, c, f in zip(curve.alphas, curve.c_mean, curve.c_folds)],
        "best_alpha": float(alpha),
        "kendall_tau": survival.clayton_tau(alpha),
        "selected": [{"feature": f.feature, "beta": f.beta, "se": f.se, "p_value": f.p_value} for f in chosen],
        "pi_threshold": float(np.median(pi)),
        "groups": {"good": int((~poor).sum()), "poor": int(poor.sum())},
        "separation": {"statistic": sep.statistic, "p_value": sep.p_value, "permutations": sep.n_permutations},
        "feature_combinations": combos,
        "dead_alive_classification": table_iv,
        "files": {k: p.name for k, p in files.items()},
    }


def cmd_survival(features_csv, config: PipelineConfig, out_dir: Path, seed: int = 0, threads: int = 1) -> dict:
    data = read_feature_csv(features_csv, require=("time_days", "censor"))
    report = _provenance("survival", config, seed)
    report.update(survival_analysis(data, config, out_dir, seed, threads))
    write_report(Path(out_dir) / "survival_report.json", report, "survival_report")
    return report


# --------------------------------------------------------------------------
# synth


def _parse_ratio(ratio: str) -> tuple[int, int]:
    try:
        a, b = (int(v) for v in ratio.split(":"))
    except ValueError:
        raise ValueError(f"imbalance must look like 143:15, got {ratio!r}") from None
    if a < 1 or b < 1:
        raise ValueError("class counts must be >= 1")
    return a, b


def cmd_synth(kind: str, out: Path, seed: int = 0, n: int = 200, imbalance: str = "143:15", features: int = 20,
              informative: int = 4, separation: float = 4.0, volumes: bool = False, alpha: float | None = None,
              tau: float | None = None, beta: float = 1.0, gamma: float = 1.0, signal: int = 3, shape=(24, 24, 8)) -> dict:
    """Write a synthetic dataset.

    ``classification`` writes a feature CSV with ``imbalance`` = "rBT:RN"
    counts, or (with ``volumes``) per-patient volumes, masks and a clinical
    CSV. ``survival`` writes a dependent-censoring feature CSV with ``label``
    equal to the death indicator.
    """
    out = Path(out)
    if kind == "classification":
        n_major, n_minor = _parse_ratio(imbalance)
        if volumes:
            out.mkdir(parents=True, exist_ok=True)
            (out / "volumes").mkdir(exist_ok=True)
            (out / "masks").mkdir(exist_ok=True)
            labels = np.r_[np.ones(n_major, dtype=int), np.zeros(n_minor, dtype=int)]
            labels = labels[np.random.default_rng(seed).permutation(len(labels))]
            width = len(str(len(labels)))
            rows = []
            for i, lab in enumerate(labels):
                pid = f"P{i:0{width}d}"
                vols, mask = synthetic_study(int(lab), shape, seed=ensemble.derive_seed(seed, i))
                for mod, vol in vols.items():
                    write_volume(vol, out / "volumes" / f"{pid}_{mod}.json")
                write_volume(mask, out / "masks" / f"{pid}_mask.json")
                rows.append({"patient_id": pid, "label": int(lab), "features": {}})
            write_feature_csv(out / "clinical.csv", rows, [])
            return {"kind": kind, "patients": len(labels), "output": str(out)}
        data = classification_table(n_major, n_minor, features, informative, separation, seed)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_dataset_csv(out, data)
        return {"kind": kind, "rows": len(data), "output": str(out)}
    if kind == "survival":
        if alpha is None:
            alpha = survival.clayton_alpha(0.8 if tau is None else tau)
        cohort = survival_cohort(n, features, signal, alpha=alpha, beta=beta, gamma_signal=gamma, seed=seed)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_dataset_csv(out, cohort.data)
        return {"kind": kind, "rows": n, "alpha": float(alpha), "planted": cohort.planted, "output": str(out)}
    raise ValueError(f"unknown synth kind {kind!r}")


# --------------------------------------------------------------------------
# report


def cmd_report(inputs, out_dir: Path) -> dict:
    """Copy the outputs of earlier commands into one directory with an index of file hashes."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for src in inputs:
        src = Path(src)
        if not src.exists():
            raise DataError(f"{src} does not exist")
        files = sorted(p for p in src.rglob("*") if p.is_file()) if src.is_dir() else [src]
        base = src if src.is_dir() else src.parent
        for f in files:
            rel = Path(src.name) / f.relative_to(base) if src.is_dir() else Path(f.name)
            dest = out_dir / rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            if dest.resolve() != f.resolve():
                shutil.copyfile(f, dest)
            entry = {"path": rel.as_posix(), "sha256": _sha256(dest), "bytes": dest.stat().st_size}
            if f.suffix == ".json":
                try:
                    cmd = json.loads(f.read_text()).get("command")
                except (json.JSONDecodeError, AttributeError):
                    cmd = None
                if isinstance(cmd, str):
                    entry["command"] = cmd
            entries.append(entry)
    entries.sort(key=lambda e: e["path"])
    index = {"command": "report", "files": entries}
    write_report(out_dir / "index.json", index, "report_index")
    return index
