"""Pipeline configuration in a flat ``key = value`` text format.

Example::

    # comments start with '#' or ';'
    model = mrf
    iterations = 25
    alpha_grid = 0, 0.5, 1, 2, 4, 8, 12, 18, 24

Unknown keys are rejected. List values are comma separated.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .ensemble import SAMPLERS, GBDTParams
from .errors import DataError
from .survival import DEFAULT_ALPHA_GRID, DEFAULT_PERMUTATIONS
from .texture import ExtractionConfig

_SECTION = "radcopula"


@dataclass
class PipelineConfig:
    # inputs
    volume_dir: str | None = None
    mask_dir: str | None = None
    clinical: str | None = None
    # extraction
    model: str = "mrf"
    n_levels: int = 64
    window: int = 9
    scales: tuple[int, ...] = (1, 2, 4)
    max_lag: int = 4
    radii: tuple[int, ...] = (1, 2, 3)
    connectivity: int = 26
    # selection
    threshold_mrf: float = 0.85
    threshold_nfrf: float = 0.80
    selection_cv: int = 5
    test: str = "mann-whitney"
    significance: float = 0.05
    # ensemble
    folds: int = 5
    iterations: int = 25
    sampler: str = "rrs"
    trees: int = 200
    depth: int = 4
    learning_rate: float = 0.1
    min_leaf: int = 2
    # survival
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    permutations: int = DEFAULT_PERMUTATIONS
    p_threshold: float = 0.05
    survival_folds: int = 5
    survival_iterations: int = 5
    top_k: tuple[int, ...] = (3, 5, 7, 10)

    def validate(self, check_paths: bool = False) -> "PipelineConfig":
        errors = []
        if self.model not in ("mrf", "nfrf"):
            errors.append("model must be mrf or nfrf")
        for name in ("threshold_mrf", "threshold_nfrf", "significance", "p_threshold"):
            if not 0 < getattr(self, name) <= 1:
                errors.append(f"{name} must be in (0, 1]")
        for name in ("folds", "selection_cv", "survival_folds"):
            if getattr(self, name) < 2:
                errors.append(f"{name} must be >= 2")
        for name in ("iterations", "survival_iterations", "permutations", "n_levels"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        if self.sampler not in SAMPLERS:
            errors.append(f"sampler must be one of {SAMPLERS}")
        if self.test not in ("t", "mann-whitney"):
            errors.append("test must be t or mann-whitney")
        if self.connectivity not in (6, 26):
            errors.append("connectivity must be 6 or 26")
        if not self.alpha_grid or min(self.alpha_grid) < 0:
            errors.append("alpha_grid must be nonempty with values >= 0")
        if any(k < 1 for k in self.top_k):
            errors.append("top_k values must be >= 1")
        try:
            self.gbdt_params()
        except ValueError as exc:
            errors.append(str(exc))
        if errors:
            raise ValueError("; ".join(errors))
        if check_paths:
            for name in ("volume_dir", "mask_dir", "clinical"):
                p = getattr(self, name)
                if p is None or not Path(p).exists():
                    raise DataError(f"{name} path {p!r} does not exist")
        return self

    @property
    def threshold(self) -> float:
        return self.threshold_mrf if self.model == "mrf" else self.threshold_nfrf

    def gbdt_params(self) -> GBDTParams:
        return GBDTParams(self.trees, self.depth, self.learning_rate, self.min_leaf)

    def extraction(self) -> ExtractionConfig:
        return ExtractionConfig(self.n_levels, self.window, tuple(self.scales), self.max_lag,
                                tuple(self.radii), self.connectivity)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; paths are excluded."""
        d = {k: v for k, v in self.as_dict().items() if k not in ("volume_dir", "mask_dir", "clinical")}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _coerce(name: str, raw: str):
    default = getattr(PipelineConfig(), name)
    kind = type(default) if default is not None else str
    try:
        if kind is tuple:
            item = type(default[0]) if default else float
            return tuple(item(v.strip()) for v in raw.split(",") if v.strip())
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ValueError(f"config key {name!r}: cannot parse {raw!r}") from None
    return raw.strip().lower() if name in ("model", "sampler", "test") else raw.strip()


def parse_config_text(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ValueError(f"malformed config: {exc}") from None
    cfg = dataclasses.replace(base) if base else PipelineConfig()
    for key, raw in parser.items(_SECTION):
        if key not in _FIELDS:
            raise ValueError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, raw))
    return cfg


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Read a config file (optional) and apply non-None overrides."""
    cfg = PipelineConfig()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise DataError(f"config file {p} not found")
        cfg = parse_config_text(p.read_text(), cfg)
    for key, val in (overrides or {}).items():
        if val is not None:
            setattr(cfg, key, val)
    return cfg.validate()
