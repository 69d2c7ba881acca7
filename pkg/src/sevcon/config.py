"""Experiment configuration: one INI file with typed sections, strict key
checking, a stable config hash, and per-stage seed derivation."""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    """Bad or inconsistent configuration (CLI exit code 2)."""


@dataclass
class DataSection:
    image_side: int = 32
    n_stripes: int = 6
    stripe_contrast: float = 0.55
    noise_std: float = 0.03
    n_healthy: int = 600
    n_unlabeled: int = 2000
    severity_max: int = 4
    n_labeled_train: int = 100
    n_test_per_biomarker: int = 200
    n_multilabel_test: int = 400


@dataclass
class GradconSection:
    alpha: float = 0.03
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.02
    warmup_learning_rate: float = 0.07
    momentum: float = 0.9
    latent_dim: int = 32
    constraint_in_update: bool = True
    heldout_count: int = 64


@dataclass
class LabelingSection:
    n_bins: int = 250
    report_bins: str = "250,500,1000"
    extreme_report_k: int = 8

    def report_bin_list(self) -> list[int]:
        return [int(tok) for tok in self.report_bins.split(",") if tok.strip()]


@dataclass
class ContrastiveSection:
    tau: float = 0.07
    batch_size: int = 64
    epochs: int = 40
    learning_rate: float = 1e-3
    momentum: float = 0.9
    embedding_dim: int = 64
    projection_dim: int = 32
    crop_scale_min: float = 0.85
    crop_scale_max: float = 1.0
    flip_prob: float = 0.5
    brightness_jitter: float = 0.05
    contrast_jitter: float = 0.05
    normalize_mean: float = 0.5
    normalize_std: float = 0.5
    balanced_sampler: bool = False


@dataclass
class ProbeSection:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9


@dataclass
class BaselinesSection:
    classifier_epochs: int = 15
    classifier_batch_size: int = 64
    classifier_learning_rate: float = 1e-3
    classifier_momentum: float = 0.9
    odin_temperature: float = 1000.0
    odin_epsilon: float = 0.0014
    mahalanobis_epsilon: float = 1e-3


_SECTION_TYPES = {
    "data": DataSection,
    "gradcon": GradconSection,
    "labeling": LabelingSection,
    "contrastive": ContrastiveSection,
    "probe": ProbeSection,
    "baselines": BaselinesSection,
}


@dataclass
class ExperimentConfig:
    seed: int = 1
    data: DataSection = field(default_factory=DataSection)
    gradcon: GradconSection = field(default_factory=GradconSection)
    labeling: LabelingSection = field(default_factory=LabelingSection)
    contrastive: ContrastiveSection = field(default_factory=ContrastiveSection)
    probe: ProbeSection = field(default_factory=ProbeSection)
    baselines: BaselinesSection = field(default_factory=BaselinesSection)

    def _flat_items(self) -> list[tuple[str, str]]:
        items = [("experiment.seed", repr(self.seed))]
        for sec_name in _SECTION_TYPES:
            section = getattr(self, sec_name)
            for f in fields(section):
                items.append((f"{sec_name}.{f.name}", repr(getattr(section, f.name))))
        return sorted(items)

    def config_hash(self) -> str:
        h = hashlib.sha256()
        for key, value in self._flat_items():
            h.update(f"{key}={value}\n".encode())
        return h.hexdigest()[:16]

    def derive_seed(self, stage: str) -> int:
        digest = hashlib.sha256(f"{self.seed}:{stage}".encode()).digest()
        return int.from_bytes(digest[:8], "little")

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        parser["experiment"] = {"seed": str(self.seed)}
        for sec_name in _SECTION_TYPES:
            parser[sec_name] = {f.name: str(getattr(getattr(self, sec_name), f.name))
                                for f in fields(getattr(self, sec_name))}
        import io
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def save(self, path: Path):
        Path(path).write_text(self.to_ini())


def _convert(raw: str, typ, key: str):
    try:
        if typ is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"key {key}: cannot parse {raw!r} as {typ.__name__}") from None


def load_config(path: Path) -> ExperimentConfig:
    """Parse an INI config; unknown sections or keys are rejected."""
    parser = configparser.ConfigParser()
    text = Path(path).read_text()
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None

    cfg = ExperimentConfig()
    for sec_name in parser.sections():
        if sec_name == "experiment":
            for key, raw in parser["experiment"].items():
                if key != "seed":
                    raise ConfigError(f"unknown key experiment.{key}")
                cfg.seed = _convert(raw, int, "experiment.seed")
            continue
        if sec_name not in _SECTION_TYPES:
            raise ConfigError(f"unknown section [{sec_name}]")
        section = getattr(cfg, sec_name)
        known = {f.name: f.type for f in fields(section)}
        type_map = {f.name: type(getattr(section, f.name)) for f in fields(section)}
        for key, raw in parser[sec_name].items():
            if key not in known:
                raise ConfigError(f"unknown key {sec_name}.{key}")
            setattr(section, key, _convert(raw, type_map[key], f"{sec_name}.{key}"))
    return cfg
