"""Pipeline configuration: a flat key=value text format with typed fields.

Unknown keys are rejected; values are validated when coerced. The same keys
are accepted on the command line via repeated `--set key=value` flags.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple


class ConfigError(ValueError):
    """Bad configuration key, value, or combination."""


@dataclass
class PipelineConfig:
    workdir: str = "run"
    seed: int = 0
    workers: int = 1

    # corpus generation
    dim: int = 16
    n_speakers: int = 30
    n_phrases: int = 4
    n_utts_per_cell: int = 8
    phrase_strength: float = 1.0
    language_shift: float = 0.0
    noise_sigma: float = 0.4
    transcript_error_rate: float = 0.0
    train_fraction: float = 0.5
    dev_fraction: float = 0.2

    # trial generation
    task: str = "TD"  # TD | TI
    n_dev_trials: int = 300
    n_eval_trials: int = 600
    proportions: Tuple[float, ...] = ()  # empty: task default
    n_enroll: int = 3

    # extractor training
    strategy: str = "AAM_ONLY"
    epochs: int = 40
    lr_initial: float = 0.05
    lr_final: float = 1e-4
    hidden_dim: int = 24
    emb_dim: int = 12
    multitask_weight: float = 1.0
    contrastive_weight: float = 1.0
    pct_speakers_per_batch: int = 8
    aam_scale: float = 32.0
    aam_margin: float = 0.2

    # backends
    backends: Tuple[str, ...] = ("cosine", "plda")  # subset of cosine|plda|nplda
    plda_iters: int = 15
    nplda_lr: float = 5e-5
    nplda_epochs: int = 5
    nplda_alpha: float = 10.0

    # score normalization
    norm_backend: str = "cosine"
    n_top: int = 200
    language_dependent: bool = True
    use_lid: bool = True
    lid_epochs: int = 200
    lid_lr: float = 0.5

    # detection cost
    p_target: float = 0.01
    c_miss: float = 10.0
    c_fa: float = 1.0

    # phrase filter / fusion
    filter_floor: float = -1000.0
    grid_step: float = 0.1

    def validate(self) -> None:
        if self.task not in ("TD", "TI"):
            raise ConfigError(f"task must be TD or TI, got {self.task!r}")
        for backend in self.backends:
            if backend not in ("cosine", "plda", "nplda"):
                raise ConfigError(f"unknown backend {self.backend_err(backend)}")
        if self.norm_backend not in self.backends:
            raise ConfigError(
                f"norm_backend {self.norm_backend!r} is not among backends {self.backends}"
            )
        if not 0.0 < self.train_fraction < 1.0 or not 0.0 < self.dev_fraction < 1.0:
            raise ConfigError("split fractions must lie in (0, 1)")
        if self.train_fraction + self.dev_fraction >= 1.0:
            raise ConfigError("train_fraction + dev_fraction must leave room for eval")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @staticmethod
    def backend_err(backend: str) -> str:
        return f"{backend!r} (expected cosine, plda, or nplda)"


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _coerce(name: str, raw: str):
    field = _FIELDS.get(name)
    if field is None:
        raise ConfigError(f"unknown config key {name!r}")
    base = field.type
    try:
        if base == "int":
            return int(raw)
        if base == "float":
            return float(raw)
        if base == "bool":
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if base.startswith("Tuple"):
            if raw == "":
                return ()
            parts = [p for p in raw.split(",") if p != ""]
            if name in ("proportions",):
                return tuple(float(p) for p in parts)
            return tuple(parts)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def load_config(path: Optional[str] = None, overrides=(), seed: Optional[int] = None) -> PipelineConfig:
    """Build a config from an optional file plus --set overrides.

    File syntax: one `key = value` (or `key=value`) per line, '#' comments,
    blank lines ignored. A passed seed overrides everything.
    """
    cfg = PipelineConfig()
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for lineno, line in enumerate(text.split("\n"), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = stripped.partition("=")
            setattr(cfg, key.strip(), _coerce(key.strip(), value.strip()))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        setattr(cfg, key.strip(), _coerce(key.strip(), value.strip()))
    if seed is not None:
        cfg.seed = int(seed)
    cfg.validate()
    return cfg


def dump_config(cfg: PipelineConfig, exclude=("workers", "workdir")) -> list:
    """Deterministic key=value lines for manifests.

    Execution-only knobs (worker count, output location) are excluded so
    that runs differing only in where/how they execute produce identical
    manifests.
    """
    lines = []
    for name in sorted(_FIELDS):
        if name in exclude:
            continue
        value = getattr(cfg, name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{name}={value}")
    return lines
