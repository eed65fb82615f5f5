"""Pipeline configuration: strict JSON schema, defaults, canonical hash.

Unknown keys anywhere in the file are errors; silent typos in forensic
parameters are worse than a failed run. The config hash is the sha256 of
the canonical JSON rendering of the effective (defaults-filled) config and
is stamped into every artifact so stages can refuse mismatched inputs.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

from .errors import ConfigError, NoiseGridError
from .features import ExtractorConfig
from .mlp import TrainSpec
from .residuals import ResidualConfig


@dataclass(frozen=True)
class PathsConfig:
    run_dir: str = "run"
    corpus: str = "corpus"
    features: str = "features"
    model: str = "model.ngmlp"
    reports: str = "reports"
    sources: str = ""  # optional directory of user-supplied source images


@dataclass(frozen=True)
class SynthConfig:
    n_sources: int = 50
    image_size: tuple[int, int] = (256, 256)
    train_fraction: float = 0.8
    # one manipulation per source, cycling through this list
    type_cycle: tuple[str, ...] = ("R", "R", "J", "F", "B")

    def __post_init__(self):
        if self.n_sources < 2:
            raise ConfigError(f"need at least 2 source images, got {self.n_sources}")
        h, w = self.image_size
        if h < 64 or w < 64:
            raise ConfigError(f"image size must be at least 64x64, got {self.image_size}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train fraction must be in (0, 1), got {self.train_fraction}")
        if not self.type_cycle:
            raise ConfigError("type cycle must be non-empty")
        for t in self.type_cycle:
            if t not in ("R", "J", "F", "B"):
                raise ConfigError(f"type cycle entries must be R/J/F/B, got {t!r}")


@dataclass(frozen=True)
class EvalConfig:
    threshold: float = 0.5
    noi_tile: int = 8
    heatmaps: bool = False

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.noi_tile < 2 or self.noi_tile % 2 != 0:
            raise ConfigError(f"baseline tile must be even and >= 2, got {self.noi_tile}")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    hidden: tuple[int, ...] = (200, 200, 200, 200)
    train: TrainSpec = field(default_factory=TrainSpec)
    eval: EvalConfig = field(default_factory=EvalConfig)
    base_dir: str = "."  # where relative paths resolve; not part of the hash

    @property
    def feature_len(self) -> int:
        return len(self.extractor.residuals.generators) * self.extractor.segment_len


_SCHEMA = {
    "seed": None,
    "paths": ("run_dir", "corpus", "features", "model", "reports", "sources"),
    "synth": ("n_sources", "image_size", "train_fraction", "type_cycle"),
    "residuals": ("generators", "ela_quality", "median_window"),
    "extractor": ("patch_shape", "grid_shape", "bins", "k", "restarts", "nu", "tol"),
    "classifier": ("hidden",),
    "train": ("learning_rate", "batch_size", "epochs", "validation_fraction",
              "patience", "momentum"),
    "eval": ("threshold", "noi_tile", "heatmaps"),
}


def _section(obj: dict, name: str) -> dict:
    sec = obj.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be an object")
    allowed = _SCHEMA[name]
    unknown = sorted(set(sec) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {', '.join(unknown)}")
    return sec


def _pair(sec: dict, key: str, default) -> tuple[int, int]:
    v = sec.get(key, list(default))
    if not (isinstance(v, list) and len(v) == 2 and all(isinstance(x, int) for x in v)):
        raise ConfigError(f"{key} must be a pair of integers, got {v!r}")
    return (v[0], v[1])


def parse_config(obj: dict, base_dir: str = ".") -> PipelineConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = sorted(set(obj) - set(_SCHEMA))
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(unknown)}")

    seed = obj.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")

    try:
        psec = _section(obj, "paths")
        paths = PathsConfig(**{k: str(psec.get(k, getattr(PathsConfig, k)))
                               for k in _SCHEMA["paths"]})

        ssec = _section(obj, "synth")
        synth = SynthConfig(
            n_sources=ssec.get("n_sources", 50),
            image_size=_pair(ssec, "image_size", (256, 256)),
            train_fraction=ssec.get("train_fraction", 0.8),
            type_cycle=tuple(ssec.get("type_cycle", ["R", "R", "J", "F", "B"])),
        )

        rsec = _section(obj, "residuals")
        residuals = ResidualConfig(
            generators=tuple(rsec.get("generators", ResidualConfig.generators)),
            ela_quality=rsec.get("ela_quality", ResidualConfig.ela_quality),
            median_window=rsec.get("median_window", ResidualConfig.median_window),
        )

        xsec = _section(obj, "extractor")
        extractor = ExtractorConfig(
            patch_shape=_pair(xsec, "patch_shape", (6, 6)),
            grid_shape=_pair(xsec, "grid_shape", (5, 5)),
            bins=xsec.get("bins", ExtractorConfig.bins),
            k=xsec.get("k", ExtractorConfig.k),
            restarts=xsec.get("restarts", ExtractorConfig.restarts),
            nu=xsec.get("nu", ExtractorConfig.nu),
            tol=xsec.get("tol", ExtractorConfig.tol),
            residuals=residuals,
        )

        csec = _section(obj, "classifier")
        hidden = tuple(csec.get("hidden", [200, 200, 200, 200]))
        if not hidden or not all(isinstance(u, int) and u >= 1 for u in hidden):
            raise ConfigError(f"hidden layer widths must be positive integers, got {hidden!r}")

        tsec = _section(obj, "train")
        train = TrainSpec(
            learning_rate=tsec.get("learning_rate", TrainSpec.learning_rate),
            batch_size=tsec.get("batch_size", TrainSpec.batch_size),
            epochs=tsec.get("epochs", TrainSpec.epochs),
            validation_fraction=tsec.get("validation_fraction", TrainSpec.validation_fraction),
            patience=tsec.get("patience", TrainSpec.patience),
            momentum=tsec.get("momentum", TrainSpec.momentum),
        )

        esec = _section(obj, "eval")
        ev = EvalConfig(
            threshold=esec.get("threshold", EvalConfig.threshold),
            noi_tile=esec.get("noi_tile", EvalConfig.noi_tile),
            heatmaps=bool(esec.get("heatmaps", False)),
        )
    except ConfigError:
        raise
    except (NoiseGridError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid config value: {e}") from e

    return PipelineConfig(seed=seed, paths=paths, synth=synth, extractor=extractor,
                          hidden=hidden, train=train, eval=ev, base_dir=base_dir)


def load_config(path) -> PipelineConfig:
    try:
        with open(path) as f:
            obj = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    return parse_config(obj, base_dir=os.path.dirname(os.path.abspath(os.fspath(path))))


def effective_dict(cfg: PipelineConfig) -> dict:
    """The defaults-filled config as plain data (base_dir excluded)."""
    x = cfg.extractor
    return {
        "seed": cfg.seed,
        "paths": {k: getattr(cfg.paths, k) for k in _SCHEMA["paths"]},
        "synth": {
            "n_sources": cfg.synth.n_sources,
            "image_size": list(cfg.synth.image_size),
            "train_fraction": cfg.synth.train_fraction,
            "type_cycle": list(cfg.synth.type_cycle),
        },
        "residuals": {
            "generators": list(x.residuals.generators),
            "ela_quality": x.residuals.ela_quality,
            "median_window": x.residuals.median_window,
        },
        "extractor": {
            "patch_shape": list(x.patch_shape),
            "grid_shape": list(x.grid_shape),
            "bins": x.bins,
            "k": x.k,
            "restarts": x.restarts,
            "nu": x.nu,
            "tol": x.tol,
        },
        "classifier": {"hidden": list(cfg.hidden)},
        "train": {k: getattr(cfg.train, k) for k in _SCHEMA["train"]},
        "eval": {
            "threshold": cfg.eval.threshold,
            "noi_tile": cfg.eval.noi_tile,
            "heatmaps": cfg.eval.heatmaps,
        },
    }


def config_hash(cfg: PipelineConfig) -> str:
    """sha256 of the canonical effective config.

    Paths are excluded: two runs that differ only in where artifacts land
    produce identical content and must remain compatible.
    """
    hashed = {k: v for k, v in effective_dict(cfg).items() if k != "paths"}
    canon = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
