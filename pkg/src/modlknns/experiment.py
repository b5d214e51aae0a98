"""End-to-end experiment runs: stage 1, distillation, ablation arms, reports."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import diffcore as dc
from .config import ExperimentConfig, parse_config, train_config_dict, write_snapshot
from .dataset import Dataset, generate_synthetic, load_csv, split
from .diffcore import ChecksumError
from .evaluation import (ARMS, EvalReport, ablation_report, ensemble_evaluate, evaluate,
                         write_k_sweep)
from .labelkit import (LabelPolicy, ResolvedTargets, read_soft_labels, resolve,
                       write_soft_labels)
from .modelzoo import ModelSpec, Zoo, param_count, zoo_from_layouts
from .neighborhood import build_neighbor_pool, read_pool, write_pool
from .trainer import TrainConfig, TrainResult, distill_setup, train_reference, train_target

log = logging.getLogger(__name__)

ARM_WEIGHTS = {"B": (False, False), "B+MODL": (True, False), "B+KNNS": (False, True),
               "B+MODL+KNNS": (True, True)}


class MissingArtifacts(RuntimeError):
    pass


@dataclass
class SeedData:
    seed: int
    train: Dataset
    valid: Dataset
    test: Dataset
    truth: ResolvedTargets
    zoo: Zoo
    config: TrainConfig


@dataclass
class LoadedModel:
    """Parameters restored from a checkpoint, exposing the estimator surface."""

    spec: ModelSpec
    params: dc.Parameters

    @property
    def n_params_(self) -> int:
        return param_count(self.spec)

    def predict_proba(self, X) -> np.ndarray:
        return dc.forward(self.spec, self.params, X)


def make_train_config(cfg: ExperimentConfig, seed: int, **override) -> TrainConfig:
    t = train_config_dict(cfg)
    tc = TrainConfig(lam=t["lambda"], gamma=t["gamma"], K=t["k"], sigma=t["sigma"],
                     policy=LabelPolicy.parse(t["policy"]), lr=t["lr"], beta1=t["beta1"],
                     beta2=t["beta2"], batch_size=t["batch_size"], epochs=t["epochs"],
                     lr_decay=t["lr_decay"], decay_every=t["decay_every"], seed=seed,
                     stop_neighbor_grad=bool(t["stop_neighbor_grad"]))
    return replace(tc, **override)


def prepare_seed(cfg: ExperimentConfig, seed: int) -> SeedData:
    if cfg.source == "synthetic":
        data = generate_synthetic(replace(cfg.synth, seed=cfg.synth.seed + seed))
    else:
        data = load_csv(cfg.csv_path)
    train, valid, test = split(data, cfg.split, seed)
    tc = make_train_config(cfg, seed)
    if cfg.truth == "clean":
        truth = ResolvedTargets(test.clean_labels(), np.ones(test.raw_labels.shape, bool))
    else:
        truth = resolve(test.raw_labels, tc.policy, seed)
    zoo = zoo_from_layouts(data.n_features, data.n_classes, cfg.references, cfg.target, seed)
    return SeedData(seed, train, valid, test, truth, zoo, tc)


def stage1_key(sd: SeedData, spec: ModelSpec) -> str:
    tc = sd.config
    train_part = {k: v for k, v in tc.to_dict().items()
                  if k not in ("lam", "gamma", "K", "sigma", "stop_neighbor_grad")}
    payload = json.dumps({"train": sd.train.content_hash(), "valid": sd.valid.content_hash(),
                          "spec": spec.to_dict(), "config": train_part}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:32]


def _train_reference_job(args):
    train, valid, spec, tc = args
    return train_reference(train, spec, tc, valid).params


def stage1(cfg: ExperimentConfig, sd: SeedData, seed_dir: Path, cache_dir: Path,
           workers: int = 1) -> list[LoadedModel]:
    """Train (or reuse) every reference for one seed."""
    cache_dir.mkdir(parents=True, exist_ok=True)
    models: list[Optional[LoadedModel]] = []
    todo = []
    for spec in sd.zoo.references:
        cached = cache_dir / f"{stage1_key(sd, spec)}.ckpt"
        params = None
        if cached.exists():
            try:
                params = dc.load_checkpoint(cached, spec)
                log.info("stage-1 cache hit: seed %d %s", sd.seed, spec.name)
            except (ChecksumError, ValueError):
                log.warning("stage-1 cache entry %s unreadable; retraining", cached)
        if params is None:
            todo.append((len(models), spec, cached))
            models.append(None)
        else:
            models.append(LoadedModel(spec, params))
    jobs = [(sd.train, sd.valid, spec, sd.config) for _, spec, _ in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trained = list(pool.map(_train_reference_job, jobs))
    else:
        trained = [_train_reference_job(j) for j in jobs]
    for (i, spec, cached), params in zip(todo, trained):
        log.info("stage-1 trained: seed %d %s", sd.seed, spec.name)
        dc.save_checkpoint(cached, spec, params)
        models[i] = LoadedModel(spec, params)
    for m in models:
        dc.save_checkpoint(seed_dir / "references" / f"{m.spec.name}.ckpt", m.spec, m.params)
    return models


def soft_and_pool(sd: SeedData, refs: Sequence[LoadedModel], seed_dir: Path, K: int):
    """Load the persisted soft labels and pool, rebuilding whichever is missing."""
    soft_path = seed_dir / "soft_labels.bin"
    pool_path = seed_dir / f"pool_K{K}.bin"
    soft = pool = None
    if soft_path.exists():
        try:
            soft = read_soft_labels(soft_path)
        except ChecksumError:
            log.warning("%s corrupted; recomputing", soft_path)
    if soft is None:
        results = [TrainResult(m.spec, m.params, [], None, -1, float("nan")) for m in refs]
        soft, pool = distill_setup(results, sd.train, replace(sd.config, K=K),
                                   soft_path=soft_path, pool_path=pool_path)
        return soft, pool
    if pool_path.exists():
        try:
            pool = read_pool(pool_path)
        except ChecksumError:
            log.warning("%s corrupted; rebuilding", pool_path)
    if pool is None:
        pool = build_neighbor_pool(soft, K, sd.config.sigma, ids=sd.train.ids)
        write_pool(pool, pool_path)
    return soft, pool


def train_arm(sd: SeedData, arm: str, soft, pool, K: Optional[int] = None) -> TrainResult:
    use_m, use_k = ARM_WEIGHTS[arm]
    tc = sd.config
    tc = replace(tc, lam=tc.lam if use_m else 0.0, gamma=tc.gamma if use_k else 0.0,
                 K=K or tc.K)
    return train_target(sd.train, sd.zoo.target, soft, pool, tc, sd.valid)


def _metrics_row(seed, model, report: EvalReport):
    return [seed, model, report.param_count, f"{report.mean_auc:.12f}", report.n_undefined,
            *["" if a is None else f"{a:.12f}" for a in report.per_class_auc]]


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    tmp.replace(path)


class Manifest:
    def __init__(self, out: Path, cfg: ExperimentConfig):
        self.path = out / "manifest.json"
        self.data = {"config_sha256": cfg.digest(), "seeds": list(cfg.seeds),
                     "completed": [], "status": "running"}

    def done(self, artifact: Path, root: Path) -> None:
        self.data["completed"].append(str(artifact.relative_to(root)))
        self.flush()

    def flush(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        dc.atomic_write(self.path, (json.dumps(self.data, indent=2) + "\n").encode())


def run(config_path, out: Optional[str] = None, seeds: Optional[Sequence[int]] = None,
        workers: int = 1) -> Path:
    """Full pipeline; returns the populated output directory."""
    cfg = parse_config(config_path)
    if seeds is not None:
        cfg = replace(cfg, seeds=tuple(seeds))
    root = Path(out or cfg.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    write_snapshot(cfg, root / "config.ini")
    manifest = Manifest(root, cfg)
    manifest.flush()
    K = make_train_config(cfg, 0).K
    reports: dict[str, list[EvalReport]] = {arm: [] for arm in cfg.arms}
    metrics, ensemble_rows = [], []
    try:
        for seed in cfg.seeds:
            sd = prepare_seed(cfg, seed)
            seed_dir = root / f"seed_{seed}"
            refs = stage1(cfg, sd, seed_dir, root / "cache" / "stage1", workers)
            manifest.done(seed_dir / "references", root)
            for m in refs:
                metrics.append(_metrics_row(seed, m.spec.name,
                                            evaluate(m, sd.test.features, sd.truth,
                                                     sd.test.class_names)))
            soft, pool = soft_and_pool(sd, refs, seed_dir, K)
            manifest.done(seed_dir / "soft_labels.bin", root)
            ens = ensemble_evaluate(refs, sd.test.features, sd.truth, sd.test.class_names)
            ens.write(seed_dir / "eval", "ensemble")
            metrics.append(_metrics_row(seed, "ensemble", ens))
            for arm in cfg.arms:
                result = train_arm(sd, arm, soft, pool)
                tag = arm.replace("+", "_")
                dc.save_checkpoint(seed_dir / "arms" / f"{tag}.ckpt", result.spec, result.params)
                result.log.write_csv(seed_dir / "logs" / f"{tag}.csv")
                report = evaluate(result, sd.test.features, sd.truth, sd.test.class_names)
                report.write(seed_dir / "eval", tag)
                reports[arm].append(report)
                metrics.append(_metrics_row(seed, arm, report))
                manifest.done(seed_dir / "arms" / f"{tag}.ckpt", root)
            target_report = reports.get("B+MODL+KNNS", reports[cfg.arms[-1]])[-1]
            ensemble_rows.append([seed, param_count(sd.zoo.target), ens.param_count,
                                  f"{target_report.mean_auc:.12f}", f"{ens.mean_auc:.12f}"])
        classes = sd.test.class_names
        _write_csv(root / "metrics.csv",
                   ["seed", "model", "param_count", "mean_auc", "undefined_classes",
                    *classes], metrics)
        _write_csv(root / "ensemble_comparison.csv",
                   ["seed", "target_params", "ensemble_params", "target_mean_auc",
                    "ensemble_mean_auc"], ensemble_rows)
        if set(ARMS) <= set(cfg.arms):
            ablation_report(reports).write_csv(root / "ablation.csv")
        manifest.data["status"] = "complete"
    except BaseException:
        manifest.data["status"] = "failed"
        raise
    finally:
        manifest.flush()
    return root


def sweep_k(config_path, out: Optional[str] = None, seeds: Optional[Sequence[int]] = None,
            workers: int = 1, k_values: Optional[Sequence[int]] = None) -> list[tuple[int, float]]:
    """Mean AUC improvement of B+MODL+KNNS over B for each K, averaged over seeds."""
    cfg = parse_config(config_path)
    if seeds is not None:
        cfg = replace(cfg, seeds=tuple(seeds))
    k_values = tuple(k_values or cfg.k_values)
    root = Path(out or cfg.out_dir)
    root.mkdir(parents=True, exist_ok=True)
    gains = {k: [] for k in k_values}
    rows = []
    for seed in cfg.seeds:
        sd = prepare_seed(cfg, seed)
        seed_dir = root / f"seed_{seed}"
        refs = stage1(cfg, sd, seed_dir, root / "cache" / "stage1", workers)
        soft, _ = soft_and_pool(sd, refs, seed_dir, sd.config.K)
        base = evaluate(train_arm(sd, "B", soft, None), sd.test.features, sd.truth).mean_auc
        for k in k_values:
            _, pool = soft_and_pool(sd, refs, seed_dir, k)
            auc = evaluate(train_arm(sd, "B+MODL+KNNS", soft, pool, K=k),
                           sd.test.features, sd.truth).mean_auc
            gains[k].append(auc - base)
            rows.append([seed, k, f"{base:.12f}", f"{auc:.12f}", f"{auc - base:.12f}"])
    table = [(k, float(np.mean(gains[k]))) for k in k_values]
    _write_csv(root / "k_sweep_runs.csv", ["seed", "K", "baseline_auc", "auc", "improvement"],
               rows)
    write_k_sweep(table, root / "k_sweep.csv")
    return table


def _read_csv(path: Path) -> list[dict]:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def report(out_dir) -> str:
    """Human-readable summary of a populated output directory."""
    root = Path(out_dir)
    needed = {"metrics.csv": "run", "ensemble_comparison.csv": "run"}
    missing = [f"{name} (produced by `modlknns {cmd}`)" for name, cmd in needed.items()
               if not (root / name).exists()]
    if missing:
        raise MissingArtifacts(f"{root} is missing: " + "; ".join(missing))
    lines = [f"Results in {root}", ""]
    metrics = _read_csv(root / "metrics.csv")
    by_arm: dict[str, list[float]] = {}
    for r in metrics:
        if r["model"] in ARMS or r["model"] == "ensemble":
            by_arm.setdefault(r["model"], []).append(float(r["mean_auc"]))
    base = by_arm.get("B")
    lines.append("Ablation (test mean AUC, %)")
    lines.append(f"{'arm':<14}{'mean':>8}{'std':>8}{'Δ vs B':>9}{'wins':>7}")
    for arm in ARMS:
        if arm not in by_arm:
            continue
        v = np.array(by_arm[arm])
        std = v.std(ddof=1) if len(v) > 1 else 0.0
        delta = (v - np.array(base)).mean() if base else 0.0
        wins = int((v > np.array(base)).sum()) if base else 0
        lines.append(f"{arm:<14}{100 * v.mean():>8.2f}{100 * std:>8.2f}{100 * delta:>+9.2f}"
                     f"{wins:>5}/{len(v)}")
    lines.append("")
    comp = _read_csv(root / "ensemble_comparison.csv")
    t_auc = np.mean([float(r["target_mean_auc"]) for r in comp])
    e_auc = np.mean([float(r["ensemble_mean_auc"]) for r in comp])
    lines.append("Single target vs reference ensemble")
    lines.append(f"{'model':<22}{'mean AUC':>10}{'params':>10}")
    lines.append(f"{'B+MODL+KNNS target':<22}{100 * t_auc:>10.2f}{int(comp[0]['target_params']):>10}")
    lines.append(f"{'6-reference ensemble':<22}{100 * e_auc:>10.2f}{int(comp[0]['ensemble_params']):>10}")
    lines.append("")
    if (root / "k_sweep.csv").exists():
        lines.append("K sweep (mean AUC improvement over B, %)")
        for r in _read_csv(root / "k_sweep.csv"):
            lines.append(f"  K={int(r['K']):<4}{100 * float(r['mean_improvement']):>+8.2f}")
    else:
        lines.append("K sweep: not run (use `modlknns sweep-k`)")
    return "\n".join(lines) + "\n"
