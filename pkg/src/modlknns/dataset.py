"""Noisy multi-label datasets: synthetic generation, CSV I/O, seeded splits."""
from __future__ import annotations

import csv
import enum
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class ConfigError(ValueError):
    pass


class ParseError(ValueError):
    pass


class SplitError(ValueError):
    pass


class RawLabel(enum.IntEnum):
    NEGATIVE = 0
    POSITIVE = 1
    UNCERTAIN = 2
    UNMENTIONED = 3


_TOKEN_TO_LABEL = {"1": RawLabel.POSITIVE, "0": RawLabel.NEGATIVE,
                   "-1": RawLabel.UNCERTAIN, "": RawLabel.UNMENTIONED,
                   "1.0": RawLabel.POSITIVE, "0.0": RawLabel.NEGATIVE,
                   "-1.0": RawLabel.UNCERTAIN}
_LABEL_TO_TOKEN = {RawLabel.POSITIVE: "1", RawLabel.NEGATIVE: "0",
                   RawLabel.UNCERTAIN: "-1", RawLabel.UNMENTIONED: ""}


@dataclass(frozen=True)
class Dataset:
    """Column-oriented store of samples.

    ``raw_labels`` holds :class:`RawLabel` codes as a small-int grid.
    ``true_probs`` is only present for synthetic data.
    """

    ids: np.ndarray
    features: np.ndarray
    raw_labels: np.ndarray
    class_names: tuple[str, ...]
    true_probs: Optional[np.ndarray] = None
    provenance: str = ""

    def __post_init__(self):
        n = len(self.ids)
        if len(self.class_names) < 1:
            raise ConfigError("a dataset needs at least one class")
        if self.features.shape[0] != n or self.raw_labels.shape != (n, len(self.class_names)):
            raise ConfigError("ids, features and labels disagree on sample count")
        if len(np.unique(self.ids)) != n:
            raise ConfigError("sample ids must be unique")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.ids[rows], self.features[rows], self.raw_labels[rows],
                       self.class_names,
                       None if self.true_probs is None else self.true_probs[rows],
                       self.provenance)

    def clean_labels(self) -> np.ndarray:
        """Noise-free binary labels (synthetic data only)."""
        if self.true_probs is None:
            raise ConfigError("clean labels need true_probs; this dataset was loaded from CSV")
        return (self.true_probs >= 0.5).astype(np.float64)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.ids.astype("<i8"), self.features.astype("<f8"),
                    self.raw_labels.astype("<i1")):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update("\x1f".join(self.class_names).encode())
        return h.hexdigest()

    def equals(self, other: "Dataset") -> bool:
        return (self.class_names == other.class_names
                and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.raw_labels, other.raw_labels))


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 1000
    D: int = 32
    C: int = 5
    flip_rate: float = 0.1
    uncertain_fraction: float = 0.0
    separation: float = 3.0
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_samples", "D", "C"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        for name in ("flip_rate", "uncertain_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be a probability, got {v}")
        if self.flip_rate + self.uncertain_fraction > 1.0:
            raise ConfigError("flip_rate + uncertain_fraction must not exceed 1")
        if not self.separation > 0:
            raise ConfigError("separation must be positive")


def generate_synthetic(config: SynthConfig) -> Dataset:
    """Gaussian features with one random prototype direction per class.

    The clean label of class ``c`` is ``sigmoid(separation * <x, u_c>) >= 0.5``.
    Each label slot is flipped with probability ``flip_rate`` and, independently,
    replaced by Uncertain with probability ``uncertain_fraction``.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    n, D, C = config.n_samples, config.D, config.C
    prototypes = rng.standard_normal((D, C))
    prototypes /= np.linalg.norm(prototypes, axis=0, keepdims=True)
    features = rng.standard_normal((n, D))
    logits = config.separation * (features @ prototypes)
    true_probs = 1.0 / (1.0 + np.exp(-logits))
    clean = true_probs >= 0.5
    flip = rng.random((n, C)) < config.flip_rate
    noisy = clean ^ flip
    raw = np.where(noisy, RawLabel.POSITIVE, RawLabel.NEGATIVE).astype(np.int8)
    uncertain = rng.random((n, C)) < config.uncertain_fraction
    raw[uncertain] = RawLabel.UNCERTAIN
    return Dataset(np.arange(n, dtype=np.int64), features, raw,
                   tuple(f"class_{c}" for c in range(C)), true_probs,
                   f"synthetic:{config}")


def write_csv(dataset: Dataset, path, true_probs_path=None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *[f"f{j}" for j in range(dataset.n_features)], *dataset.class_names])
        for i in range(len(dataset)):
            w.writerow([int(dataset.ids[i]),
                        *[repr(float(v)) for v in dataset.features[i]],
                        *[_LABEL_TO_TOKEN[RawLabel(int(v))] for v in dataset.raw_labels[i]]])
    if true_probs_path is not None:
        if dataset.true_probs is None:
            raise ConfigError("dataset has no true_probs to export")
        with Path(true_probs_path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", *dataset.class_names])
            for i in range(len(dataset)):
                w.writerow([int(dataset.ids[i]), *[repr(float(v)) for v in dataset.true_probs[i]]])


def load_csv(path) -> Dataset:
    """Read ``id, f0..f{D-1}, <class columns>`` with CheXpert label tokens."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: missing header row")
    header = rows[0]
    if not header or header[0] != "id":
        raise ParseError(f"{path}: first column must be 'id'")
    D = 0
    while D + 1 < len(header) and header[D + 1] == f"f{D}":
        D += 1
    class_names = tuple(header[1 + D:])
    if not class_names:
        raise ParseError(f"{path}: no label columns in header")
    width = len(header)
    ids, feats, labels = [], [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise ParseError(f"{path}: row {r} has {len(row)} fields, expected {width}")
        try:
            ids.append(int(row[0]))
            feats.append([float(v) for v in row[1:1 + D]])
        except ValueError as exc:
            raise ParseError(f"{path}: row {r}: {exc}") from None
        lab = []
        for c, tok in enumerate(row[1 + D:]):
            tok = tok.strip()
            if tok not in _TOKEN_TO_LABEL:
                raise ParseError(
                    f"{path}: row {r}, column {class_names[c]!r}: unknown label token {tok!r}")
            lab.append(_TOKEN_TO_LABEL[tok])
        labels.append(lab)
    n = len(ids)
    return Dataset(np.asarray(ids, dtype=np.int64),
                   np.asarray(feats, dtype=np.float64).reshape(n, D),
                   np.asarray(labels, dtype=np.int8).reshape(n, len(class_names)),
                   class_names, None, str(path))


def split_sizes(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment; ties go to the earlier part."""
    quotas = [f * n for f in fractions]
    sizes = [math.floor(q) for q in quotas]
    short = n - sum(sizes)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[:short]:
        sizes[i] += 1
    return sizes


def split(dataset: Dataset, fractions=(0.7, 0.1, 0.2), seed: int = 0):
    """Seeded random train/valid/test partition."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise SplitError(f"need three positive fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"fractions must sum to 1, got {sum(fractions)}")
    n = len(dataset)
    if n < 3:
        raise SplitError(f"need at least 3 samples to split, got {n}")
    sizes = split_sizes(n, fractions)
    perm = np.random.default_rng(seed).permutation(n)
    a, b = sizes[0], sizes[0] + sizes[1]
    return (dataset.subset(np.sort(perm[:a])), dataset.subset(np.sort(perm[a:b])),
            dataset.subset(np.sort(perm[b:])))
