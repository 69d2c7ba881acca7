"""Deterministic synthetic OCT-like image generator.

Images are horizontal layered stripes with noise; five lesion types stand in
for five biomarkers: fluid blob (bio_a), bright focus (bio_b), detachment
line (bio_c), thickening (bio_d), epiretinal band (bio_e). Ground-truth
severity is the total lesion count; the multi-hot biomarker vector marks
which lesion types are present.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import Array

LESION_TYPES = ("fluid_blob", "bright_focus", "detachment_line",
                "thickening", "epiretinal_band")
BIOMARKER_NAMES = ("bio_a", "bio_b", "bio_c", "bio_d", "bio_e")
N_BIOMARKERS = len(BIOMARKER_NAMES)

_MAGIC = b"SIMG"
_DTYPE_F64 = 1


@dataclass
class SynthConfig:
    image_side: int = 32
    n_stripes: int = 6
    stripe_contrast: float = 0.55
    noise_std: float = 0.03
    seed: int = 0


@dataclass
class GroundTruth:
    severity: int
    biomarkers: Array  # (5,) multi-hot int

    def __post_init__(self):
        present = int(np.asarray(self.biomarkers).sum()) > 0
        if (self.severity == 0) == present:
            raise ValueError("severity must be 0 exactly when no biomarker is present")


@dataclass
class Dataset:
    sample_ids: list[str]
    images: Array  # (N, 1, side, side)
    ground_truth: list[GroundTruth] | None = None

    def __len__(self):
        return len(self.sample_ids)

    def training_view(self) -> "Dataset":
        """The dataset as exposed to training code: no ground-truth fields."""
        return Dataset(list(self.sample_ids), self.images, None)

    def multihot(self) -> Array:
        if self.ground_truth is None:
            raise ValueError("dataset has no ground truth")
        return np.stack([gt.biomarkers for gt in self.ground_truth]).astype(np.float64)

    def severities(self) -> Array:
        if self.ground_truth is None:
            raise ValueError("dataset has no ground truth")
        return np.array([gt.severity for gt in self.ground_truth], dtype=np.int64)


@dataclass
class LabeledSplits:
    train: Dataset
    binary_tests: dict[str, Dataset]  # biomarker name -> balanced 50/50 set
    multilabel_test: Dataset


@dataclass
class Lesion:
    kind: int  # index into LESION_TYPES
    params: dict = field(default_factory=dict)


def _sample_seed(config_seed: int, namespace: str, index: int, stream: str) -> int:
    digest = hashlib.sha256(f"{config_seed}:{namespace}:{index}:{stream}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _render_structure(config: SynthConfig, rng: np.random.Generator) -> Array:
    side = config.image_side
    yy = np.arange(side)[:, None]
    xx = np.arange(side)[None, :]
    img = 0.05 + 0.10 * (yy / side) * np.ones((side, side))
    centers = np.linspace(side * 0.15, side * 0.85, config.n_stripes)
    tilt = rng.uniform(-1.0, 1.0)
    bow = rng.uniform(0.0, 1.5)
    for c in centers:
        offset = rng.uniform(-0.5, 0.5)
        width = rng.uniform(1.0, 1.3)
        gain = config.stripe_contrast * rng.uniform(0.85, 1.0)
        curve = (c + offset + tilt * (2 * xx / side - 1.0)
                 + bow * np.sin(np.pi * xx / side))
        img = img + gain * np.exp(-((yy - curve) ** 2) / (2 * width ** 2))
    img += rng.normal(0.0, config.noise_std, size=(side, side))
    return img


def _draw_lesion(kind: int, side: int, rng: np.random.Generator) -> Lesion:
    p: dict = {}
    if kind == 0:  # fluid_blob: dark ellipse
        p = {"cy": rng.uniform(0.25, 0.75) * side, "cx": rng.uniform(0.2, 0.8) * side,
             "ry": rng.uniform(2.5, 5.0), "rx": rng.uniform(3.0, 6.0),
             "value": rng.uniform(0.02, 0.08)}
    elif kind == 1:  # bright_focus: small bright disk
        p = {"cy": rng.uniform(0.2, 0.8) * side, "cx": rng.uniform(0.1, 0.9) * side,
             "r": rng.uniform(1.0, 2.0), "value": rng.uniform(0.85, 0.95)}
    elif kind == 2:  # detachment_line: thin bright arc across the width
        p = {"row": rng.uniform(0.3, 0.7) * side, "amp": rng.uniform(1.0, 3.0),
             "phase": rng.uniform(0.0, 2 * np.pi), "value": rng.uniform(0.8, 0.9)}
    elif kind == 3:  # thickening: brightened rectangular band
        p = {"y0": int(rng.integers(int(0.2 * side), int(0.7 * side))),
             "x0": int(rng.integers(0, side - side // 3)),
             "h": int(rng.integers(3, 6)), "w": side // 3 + int(rng.integers(0, side // 4)),
             "boost": rng.uniform(0.25, 0.4)}
    elif kind == 4:  # epiretinal_band: thin bright line near the top
        p = {"row": rng.uniform(0.04, 0.16) * side, "value": rng.uniform(0.8, 0.9)}
    else:
        raise ValueError(f"unknown lesion kind {kind}")
    return Lesion(kind, p)


def _apply_lesion(img: Array, lesion: Lesion) -> Array:
    side = img.shape[0]
    yy = np.arange(side)[:, None]
    xx = np.arange(side)[None, :]
    p = lesion.params
    out = img
    if lesion.kind == 0:
        d = ((yy - p["cy"]) / p["ry"]) ** 2 + ((xx - p["cx"]) / p["rx"]) ** 2
        mask = np.clip(1.5 * (1.0 - d), 0.0, 1.0)
        out = out * (1 - mask) + mask * p["value"]
    elif lesion.kind == 1:
        d = np.sqrt((yy - p["cy"]) ** 2 + (xx - p["cx"]) ** 2)
        mask = np.clip(p["r"] + 0.5 - d, 0.0, 1.0)
        out = out * (1 - mask) + mask * p["value"]
    elif lesion.kind == 2:
        curve = p["row"] + p["amp"] * np.sin(2 * np.pi * xx / side + p["phase"])
        mask = np.clip(1.2 - np.abs(yy - curve), 0.0, 1.0)
        out = out * (1 - mask) + mask * p["value"]
    elif lesion.kind == 3:
        out = out.copy()
        y0, x0 = p["y0"], p["x0"]
        out[y0:y0 + p["h"], x0:x0 + p["w"]] += p["boost"]
    elif lesion.kind == 4:
        mask = np.clip(1.2 - np.abs(yy - p["row"]), 0.0, 1.0) * np.ones((1, side))
        out = out * (1 - mask) + mask * p["value"]
    return out


def render_sample(config: SynthConfig, namespace: str, index: int,
                  lesions: list[Lesion]) -> Array:
    """Pure render of one sample; structure noise is independent of lesions,
    so the lesion-free render of the same (namespace, index) is comparable."""
    structure_rng = np.random.default_rng(_sample_seed(config.seed, namespace, index, "structure"))
    img = _render_structure(config, structure_rng)
    for lesion in lesions:
        img = _apply_lesion(img, lesion)
    return np.clip(img, 0.0, 1.0)[None]


def _lesions_to_gt(lesions: list[Lesion]) -> GroundTruth:
    bio = np.zeros(N_BIOMARKERS, dtype=np.int64)
    for lesion in lesions:
        bio[lesion.kind] = 1
    return GroundTruth(severity=len(lesions), biomarkers=bio)


def _make_samples(config: SynthConfig, namespace: str,
                  lesion_lists: list[list[Lesion]]) -> Dataset:
    ids = [f"{namespace}_{i:05d}" for i in range(len(lesion_lists))]
    images = np.stack([render_sample(config, namespace, i, lesions)
                       for i, lesions in enumerate(lesion_lists)])
    gts = [_lesions_to_gt(lesions) for lesions in lesion_lists]
    return Dataset(ids, images, gts)


def _random_lesions(config: SynthConfig, namespace: str, index: int,
                    kinds: list[int]) -> list[Lesion]:
    rng = np.random.default_rng(_sample_seed(config.seed, namespace, index, "lesions"))
    return [_draw_lesion(k, config.image_side, rng) for k in kinds]


def generate_healthy(n: int, config: SynthConfig) -> Dataset:
    return _make_samples(config, "healthy", [[] for _ in range(n)])


def generate_unlabeled(n: int, severity_max: int, config: SynthConfig) -> Dataset:
    """Severities uniform over {0..severity_max}; lesion types independent
    per lesion. Ground truth rides along but training code should consume
    ``training_view()``."""
    lesion_lists = []
    for i in range(n):
        rng = np.random.default_rng(_sample_seed(config.seed, "unlabeled", i, "plan"))
        k = int(rng.integers(0, severity_max + 1))
        kinds = [int(rng.integers(0, N_BIOMARKERS)) for _ in range(k)]
        lesion_lists.append(_random_lesions(config, "unlabeled", i, kinds))
    return _make_samples(config, "unlabeled", lesion_lists)


def _mixed_plan(config: SynthConfig, namespace: str, i: int, severity_max: int) -> list[Lesion]:
    rng = np.random.default_rng(_sample_seed(config.seed, namespace, i, "plan"))
    k = int(rng.integers(0, severity_max + 1))
    kinds = [int(rng.integers(0, N_BIOMARKERS)) for _ in range(k)]
    return _random_lesions(config, namespace, i, kinds)


def generate_labeled_splits(n_train: int, n_test_per_biomarker: int,
                            config: SynthConfig, severity_max: int = 4,
                            n_multilabel_test: int | None = None) -> LabeledSplits:
    """Labeled train set, five balanced binary test sets (50/50 biomarker
    present/absent), and a multi-label test set, all id-disjoint."""
    if n_test_per_biomarker % 2 != 0:
        raise ValueError("n_test_per_biomarker must be even for balanced sets")
    train = _make_samples(config, "train",
                          [_mixed_plan(config, "train", i, severity_max)
                           for i in range(n_train)])

    binary_tests: dict[str, Dataset] = {}
    half = n_test_per_biomarker // 2
    for j, name in enumerate(BIOMARKER_NAMES):
        ns = f"test_{name}"
        lesion_lists = []
        for i in range(n_test_per_biomarker):
            rng = np.random.default_rng(_sample_seed(config.seed, ns, i, "plan"))
            others = [t for t in range(N_BIOMARKERS) if t != j]
            if i < half:  # positives: biomarker j plus 0-2 other lesions
                kinds = [j] + [others[int(rng.integers(0, len(others)))]
                               for _ in range(int(rng.integers(0, 3)))]
            else:  # negatives: 0-3 lesions, never type j
                kinds = [others[int(rng.integers(0, len(others)))]
                         for _ in range(int(rng.integers(0, 4)))]
            lesion_lists.append(_random_lesions(config, ns, i, kinds))
        binary_tests[name] = _make_samples(config, ns, lesion_lists)

    n_ml = n_multilabel_test if n_multilabel_test is not None else 2 * n_test_per_biomarker
    ml = _make_samples(config, "test_multilabel",
                       [_mixed_plan(config, "test_multilabel", i, severity_max)
                        for i in range(n_ml)])
    return LabeledSplits(train, binary_tests, ml)


# ---------------------------------------------------------------------------
# On-disk format
# ---------------------------------------------------------------------------


def write_image(path: Path, image: Array):
    side = image.shape[-1]
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IB", side, _DTYPE_F64))
        f.write(np.ascontiguousarray(image[0], dtype="<f8").tobytes())


def read_image(path: Path) -> Array:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        side, code = struct.unpack("<IB", f.read(5))
        if code != _DTYPE_F64:
            raise ValueError(f"{path}: unsupported dtype code {code}")
        data = np.frombuffer(f.read(8 * side * side), dtype="<f8")
    return data.reshape(1, side, side).astype(np.float64)


def save_dataset(directory: Path, dataset: Dataset, meta: dict):
    """manifest.json + one binary image per sample; ground truth, when
    present, goes to labels.csv (a separate file from the manifest)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"format_version": 1, "sample_ids": dataset.sample_ids, **meta}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    for sid, i in zip(dataset.sample_ids, range(len(dataset))):
        write_image(directory / f"{sid}.bin", dataset.images[i])
    if dataset.ground_truth is not None:
        with open(directory / "labels.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["sample_id", *BIOMARKER_NAMES, "severity"])
            for sid, gt in zip(dataset.sample_ids, dataset.ground_truth):
                writer.writerow([sid, *(int(b) for b in gt.biomarkers), gt.severity])


def load_dataset(directory: Path, with_ground_truth: bool = True) -> Dataset:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    ids = manifest["sample_ids"]
    images = np.stack([read_image(directory / f"{sid}.bin") for sid in ids])
    gts = None
    labels_path = directory / "labels.csv"
    if with_ground_truth and labels_path.exists():
        rows = {}
        with open(labels_path, newline="") as f:
            for row in csv.DictReader(f):
                bio = np.array([int(row[b]) for b in BIOMARKER_NAMES], dtype=np.int64)
                rows[row["sample_id"]] = GroundTruth(int(row["severity"]), bio)
        gts = [rows[sid] for sid in ids]
    return Dataset(ids, images, gts)
