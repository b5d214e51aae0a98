"""INI experiment configuration: parsing, validation and snapshots.

Example::

    [dataset]
    source = synthetic
    n_samples = 4000
    D = 32
    C = 5
    flip_rate = 0.2
    uncertain_fraction = 0.15
    split = 0.7, 0.1, 0.2

    [train]
    lambda = 0.1
    gamma = 0.1
    K = 9

    [eval]
    seeds = 0, 1, 2, 3, 4

Every key is optional; omitted keys take the defaults below.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .dataset import SynthConfig, split_sizes
from .evaluation import ARMS
from .labelkit import LabelPolicy, PolicyError
from .modelzoo import DEFAULT_REFERENCE_LAYOUTS, DEFAULT_TARGET_LAYOUT

SCHEMA = {
    "dataset": {"source", "path", "n_samples", "d", "c", "flip_rate", "uncertain_fraction",
                "separation", "seed", "split"},
    "zoo": {"references", "target"},
    "train": {"lambda", "gamma", "k", "sigma", "policy", "lr", "beta1", "beta2", "batch_size",
              "epochs", "lr_decay", "decay_every", "stop_neighbor_grad"},
    "eval": {"arms", "k_values", "seeds", "truth"},
    "output": {"dir"},
}


class ConfigInvalid(ValueError):
    def __init__(self, diagnostics: list[str]):
        super().__init__("\n".join(diagnostics))
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class ExperimentConfig:
    source: str = "synthetic"
    csv_path: Optional[str] = None
    synth: SynthConfig = field(default_factory=lambda: SynthConfig(
        n_samples=4000, D=32, C=5, flip_rate=0.2, uncertain_fraction=0.15))
    split: tuple[float, float, float] = (0.7, 0.1, 0.2)
    references: tuple = tuple((n, tuple(h), a) for n, h, a in DEFAULT_REFERENCE_LAYOUTS)
    target: tuple = (DEFAULT_TARGET_LAYOUT[0], tuple(DEFAULT_TARGET_LAYOUT[1]),
                     DEFAULT_TARGET_LAYOUT[2])
    train: dict = field(default_factory=dict)
    arms: tuple[str, ...] = ARMS
    k_values: tuple[int, ...] = (3, 5, 7, 9, 11)
    seeds: tuple[int, ...] = (0,)
    truth: str = "clean"
    out_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return {
            "dataset": {"source": self.source, "path": self.csv_path,
                        "synth": vars(self.synth), "split": list(self.split)},
            "zoo": {"references": [[n, list(h), a] for n, h, a in self.references],
                    "target": [self.target[0], list(self.target[1]), self.target[2]]},
            "train": train_config_dict(self),
            "eval": {"arms": list(self.arms), "k_values": list(self.k_values),
                     "seeds": list(self.seeds), "truth": self.truth},
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _line_of(text: str, section: str, key: str) -> int:
    current = None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"\[(.+)\]", s)
        if m:
            current = m.group(1).strip().lower()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s, re.I):
            return i
    return 0


def _layout(text: str) -> tuple:
    """``name:64x32:relu`` -> ``("name", (64, 32), "relu")``."""
    name, widths, act = (p.strip() for p in text.split(":"))
    return name, tuple(int(w) for w in widths.split("x")), act


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip())


_TRAIN_CASTS = {"lambda": float, "gamma": float, "k": int, "sigma": float, "lr": float,
                "beta1": float, "beta2": float, "batch_size": int, "epochs": int,
                "lr_decay": float, "decay_every": int}


def parse_config(path, check_files: bool = True) -> ExperimentConfig:
    """Parse and fully validate; raises :class:`ConfigInvalid` listing every problem."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None)
    diags: list[str] = []
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigInvalid([f"{path}: {exc}"]) from None

    def bad(section, key, msg):
        line = _line_of(text, section, key)
        where = f"{path}:{line}" if line else str(path)
        diags.append(f"{where}: {section}.{key}: {msg}")

    for section in parser.sections():
        if section not in SCHEMA:
            diags.append(f"{path}: unknown section [{section}]")
            continue
        for key in parser[section]:
            if key not in SCHEMA[section]:
                bad(section, key, "unknown key")

    cfg = ExperimentConfig()
    get = lambda s, k: parser.get(s, k, fallback=None) if parser.has_section(s) else None

    def convert(section, key, fn, current):
        raw = get(section, key)
        if raw is None:
            return current
        try:
            return fn(raw)
        except (ValueError, TypeError) as exc:
            bad(section, key, f"cannot parse {raw!r} ({exc})")
            return current

    source = convert("dataset", "source", str.strip, cfg.source)
    if source not in ("synthetic", "csv"):
        bad("dataset", "source", f"must be 'synthetic' or 'csv', got {source!r}")
    csv_path = get("dataset", "path")
    synth_kw = {}
    for key, attr, fn in (("n_samples", "n_samples", int), ("d", "D", int), ("c", "C", int),
                          ("flip_rate", "flip_rate", float),
                          ("uncertain_fraction", "uncertain_fraction", float),
                          ("separation", "separation", float), ("seed", "seed", int)):
        synth_kw[attr] = convert("dataset", key, fn, getattr(cfg.synth, attr))
    synth = SynthConfig(**synth_kw)
    try:
        synth.validate()
    except ValueError as exc:
        bad("dataset", "synthetic", str(exc))
    fractions = convert("dataset", "split", _floats, cfg.split)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        bad("dataset", "split", f"need three positive fractions summing to 1, got {fractions}")

    references = convert("zoo", "references",
                         lambda t: tuple(_layout(p) for p in t.split(",") if p.strip()),
                         cfg.references)
    target = convert("zoo", "target", _layout, cfg.target)
    names = [r[0] for r in references] + [target[0]]
    if not references:
        bad("zoo", "references", "at least one reference is required")
    if len(set(names)) != len(names):
        bad("zoo", "references", f"model names must be unique: {names}")
    for n, h, a in (*references, target):
        if not h or any(w < 1 for w in h):
            bad("zoo", "references", f"{n}: hidden widths must be positive and non-empty")
        if a not in ("relu", "tanh"):
            bad("zoo", "references", f"{n}: activation must be relu or tanh, got {a!r}")

    train: dict = {}
    for key, fn in _TRAIN_CASTS.items():
        v = convert("train", key, fn, None)
        if v is not None:
            train[key] = v
    for key in ("lambda", "gamma"):
        if key in train and not train[key] >= 0:
            bad("train", key, f"must be non-negative, got {train[key]}")
    for key in ("k", "batch_size", "epochs", "decay_every"):
        if key in train and train[key] < 1:
            bad("train", key, f"must be a positive integer, got {train[key]}")
    for key in ("sigma", "lr", "lr_decay"):
        if key in train and not train[key] > 0:
            bad("train", key, f"must be positive, got {train[key]}")
    for key in ("beta1", "beta2"):
        if key in train and not 0 <= train[key] < 1:
            bad("train", key, f"must lie in [0, 1), got {train[key]}")
    if get("train", "policy") is not None:
        try:
            train["policy"] = str(LabelPolicy.parse(get("train", "policy")))
        except (PolicyError, ValueError) as exc:
            bad("train", "policy", str(exc))
    if get("train", "stop_neighbor_grad") is not None:
        try:
            train["stop_neighbor_grad"] = parser.getboolean("train", "stop_neighbor_grad")
        except ValueError as exc:
            bad("train", "stop_neighbor_grad", str(exc))

    arms = convert("eval", "arms",
                   lambda t: tuple(a.strip() for a in t.split(",") if a.strip()), cfg.arms)
    unknown_arms = [a for a in arms if a not in ARMS]
    if unknown_arms:
        bad("eval", "arms", f"unknown arms {unknown_arms}; choose from {list(ARMS)}")
    if "B" not in arms:
        bad("eval", "arms", "the baseline arm 'B' is required for comparisons")
    k_values = convert("eval", "k_values", _ints, cfg.k_values)
    if any(k < 1 for k in k_values):
        bad("eval", "k_values", f"K values must be positive, got {k_values}")
    seeds = convert("eval", "seeds", _ints, cfg.seeds)
    if not seeds:
        bad("eval", "seeds", "at least one seed is required")
    truth = convert("eval", "truth", str.strip, cfg.truth)
    if truth not in ("clean", "labels"):
        bad("eval", "truth", f"must be 'clean' or 'labels', got {truth!r}")
    out_dir = get("output", "dir") or cfg.out_dir

    n_total = None
    if source == "csv":
        if not csv_path:
            bad("dataset", "path", "required when source = csv")
        elif check_files:
            p = Path(csv_path)
            if not p.is_absolute():
                p = path.parent / p
            if not p.exists():
                bad("dataset", "path", f"file not found: {p}")
            else:
                csv_path = str(p)
                with p.open(encoding="utf-8") as fh:
                    n_total = max(sum(1 for _ in fh) - 1, 0)
        if truth == "clean":
            truth = "labels"
    else:
        n_total = synth.n_samples

    if n_total is not None and len(fractions) == 3 and not diags:
        n_train = split_sizes(n_total, fractions)[0]
        K = train.get("k", 9)
        if n_train < 2:
            bad("dataset", "split", f"train split has {n_train} samples; need at least 2")
        elif K > n_train - 1:
            bad("train", "K", f"K={K} needs at least {K + 1} training samples but the train "
                              f"split has {n_train}; set K <= {n_train - 1} (it would be clamped)")
        for k in k_values:
            if k > n_train - 1 and n_train >= 2:
                bad("eval", "k_values", f"K={k} exceeds the {n_train - 1} available neighbors")

    if diags:
        raise ConfigInvalid(diags)
    return ExperimentConfig(source, csv_path, synth, tuple(fractions), tuple(references),
                            tuple(target), train, tuple(arms), tuple(k_values), tuple(seeds),
                            truth, out_dir)


def validate(path) -> list[str]:
    """Diagnostics for ``path``; an empty list means the config is valid."""
    try:
        parse_config(path)
    except ConfigInvalid as exc:
        return exc.diagnostics
    except OSError as exc:
        return [f"{path}: {exc}"]
    return []


def write_snapshot(cfg: ExperimentConfig, path) -> None:
    """Re-emit the resolved configuration as INI (all defaults spelled out)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser["dataset"] = {
        "source": cfg.source,
        **({"path": cfg.csv_path} if cfg.csv_path else {}),
        "n_samples": str(cfg.synth.n_samples), "D": str(cfg.synth.D), "C": str(cfg.synth.C),
        "flip_rate": repr(cfg.synth.flip_rate),
        "uncertain_fraction": repr(cfg.synth.uncertain_fraction),
        "separation": repr(cfg.synth.separation), "seed": str(cfg.synth.seed),
        "split": ", ".join(repr(f) for f in cfg.split),
    }
    fmt = lambda l: f"{l[0]}:{'x'.join(str(w) for w in l[1])}:{l[2]}"
    parser["zoo"] = {"references": ", ".join(fmt(r) for r in cfg.references),
                     "target": fmt(cfg.target)}
    tc = train_config_dict(cfg)
    parser["train"] = {k: str(v) for k, v in tc.items()}
    parser["eval"] = {"arms": ", ".join(cfg.arms),
                      "k_values": ", ".join(str(k) for k in cfg.k_values),
                      "seeds": ", ".join(str(s) for s in cfg.seeds), "truth": cfg.truth}
    parser["output"] = {"dir": cfg.out_dir}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        parser.write(fh)


def train_config_dict(cfg: ExperimentConfig) -> dict:
    """Train section with defaults filled in, keyed as in the INI file."""
    from .trainer import TrainConfig

    d = TrainConfig()
    out = {"lambda": d.lam, "gamma": d.gamma, "k": d.K, "sigma": d.sigma,
           "policy": str(d.policy), "lr": d.lr, "beta1": d.beta1, "beta2": d.beta2,
           "batch_size": d.batch_size, "epochs": d.epochs, "lr_decay": d.lr_decay,
           "decay_every": d.decay_every, "stop_neighbor_grad": d.stop_neighbor_grad}
    out.update(cfg.train)
    return out
