"""Config-driven experiment runner: datasets, training, evaluation, sweeps.

A run is described by one JSON config (every knob explicit, so two configs
diff cleanly). ``run_experiment`` writes, under the output directory: the
resolved config snapshot (with its hash and the dataset hash), one
subdirectory per seed holding the training log CSV, final checkpoints and
the metrics report, plus an aggregate summary with per-metric median and
IQR across seeds. Seeds are independent jobs; the ``MTAL_THREADS``
environment variable caps how many run in parallel.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import checkpoint as checkpoint_io
from .adversary import combo_width
from .errors import ConfigurationError, MtalError, TrainingAbortError
from .losses import LabelBundle, LossWeights
from .metrics import ComboGrid, MetricsReport, build_report
from .models import Discriminator, Recognizer
from .synthgen import Dataset, default_attribute_world, default_landmark_world, generate, split
from .trainer import TrainConfig, train

DEFAULT_CONFIG = {
    "mode": "landmark",
    "dataset": {
        "path": None,
        "n_samples": 6000,
        "train_fraction": 5.0 / 6.0,
        "gen_seed": 20240,
    },
    "world": {},
    "model": {
        "trunk": [128, 128],
        "discriminator_hidden": [64, 32],
    },
    "train": {
        "batch_size": 32,
        "outer_steps": 5000,
        "inner_steps": 1,
        "lr_recognizer": 0.2,
        "lr_discriminator": 0.1,
        "momentum": 0.0,
        "sampling": "replacement",
        "paired_discriminator_batches": False,
        "eval_every": 0,
        "checkpoint_every": 0,
        "weights": {
            "landmark": 1.0,
            "visibility": 1.0,
            "pose": 1.0,
            "gender": 1.0,
            "attributes": 1.0,
            "adversarial": 0.1,
        },
    },
    "subset": "all",
    "grid": {
        "landmark_bins": 4,
        "pose_bins": None,
        "threshold": 0.5,
    },
    "nme_normalizer": "box_sqrt_area",
    "standardize_features": True,
    "seeds": [1, 2, 3, 4, 5],
}

ABLATION_SUBSETS = {
    "landmark": ("none", "l", "lv", "lvg", "lvp", "all"),
    "attribute": ("none", "attr"),
}


def _deep_merge(base, override):
    if isinstance(base, dict) and isinstance(override, dict):
        out = dict(base)
        for key, value in override.items():
            if key in base:
                out[key] = _deep_merge(base[key], value)
            else:
                out[key] = value
        return out
    return override


def resolve_config(user_config: dict) -> dict:
    """Defaults + user overrides, with the degenerate 'none' subset normalized."""
    cfg = _deep_merge(DEFAULT_CONFIG, user_config or {})
    if cfg["mode"] not in ("landmark", "attribute"):
        raise ConfigurationError(f"unknown mode '{cfg['mode']}'")
    if not cfg["seeds"]:
        raise ConfigurationError("seed list must be nonempty")
    if cfg["subset"] == "none":
        # No adversary: force the degenerate schedule so 'none' is exactly
        # pure multi-task training.
        cfg["train"] = dict(cfg["train"])
        cfg["train"]["inner_steps"] = 0
        cfg["train"]["weights"] = dict(cfg["train"]["weights"], adversarial=0.0)
    if cfg["mode"] == "attribute" and cfg["subset"] not in ("none", "attr"):
        raise ConfigurationError(f"subset '{cfg['subset']}' is invalid in attribute mode")
    if cfg["mode"] == "landmark" and cfg["subset"] == "attr":
        raise ConfigurationError("subset 'attr' is invalid in landmark mode")
    path = cfg["dataset"].get("path")
    if path is not None and not Path(path).exists():
        raise ConfigurationError(f"dataset path does not exist: {path} (field dataset.path)")
    return cfg


def config_hash(resolved: dict) -> str:
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def build_world(cfg: dict):
    overrides = dict(cfg.get("world", {}))
    if cfg["mode"] == "landmark":
        return default_landmark_world(**overrides)
    return default_attribute_world(**overrides)


def resolve_data(cfg: dict):
    """Returns (train_set, test_set, dataset_hash). Never mutates inputs."""
    ds_cfg = cfg["dataset"]
    if ds_cfg.get("path"):
        full = Dataset.load(ds_cfg["path"])
        if full.mode != cfg["mode"]:
            raise ConfigurationError(
                f"dataset at {ds_cfg['path']} has mode '{full.mode}', config says '{cfg['mode']}'"
            )
    else:
        world = build_world(cfg)
        full = generate(world, int(ds_cfg["n_samples"]), int(ds_cfg["gen_seed"]))
    digest = hashlib.sha256(full.to_text().encode()).hexdigest()[:16]
    train_set, test_set = split(full, float(ds_cfg["train_fraction"]), int(ds_cfg["gen_seed"]))
    return train_set, test_set, digest


def build_models(cfg: dict, train_set: Dataset, seed: int):
    r_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
    pose_kind = "discrete" if train_set.discrete_pose else "continuous"
    recognizer = Recognizer(
        in_dim=train_set.features.shape[1],
        trunk=cfg["model"]["trunk"],
        mode=cfg["mode"],
        m=train_set.m,
        pose_kind=pose_kind,
        pose_bins=train_set.pose_width if train_set.discrete_pose else 13,
        n_attributes=train_set.n_attributes,
        rng=r_rng,
    )
    discriminator = None
    if cfg["subset"] != "none":
        d_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(2,)))
        width = combo_width(
            cfg["subset"], m=train_set.m,
            pose_width=(train_set.pose_width if cfg["mode"] == "landmark" else 0),
            n_attributes=train_set.n_attributes,
        )
        discriminator = Discriminator(width, cfg["model"]["discriminator_hidden"], d_rng)
    return recognizer, discriminator


def make_train_config(cfg: dict, seed: int) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        batch_size=int(t["batch_size"]),
        outer_steps=int(t["outer_steps"]),
        inner_steps=int(t["inner_steps"]),
        lr_recognizer=float(t["lr_recognizer"]),
        lr_discriminator=float(t["lr_discriminator"]),
        momentum=float(t["momentum"]),
        weights=LossWeights(**t["weights"]),
        subset=cfg["subset"],
        seed=seed,
        eval_every=int(t["eval_every"]),
        checkpoint_every=int(t["checkpoint_every"]),
        paired_discriminator_batches=bool(t["paired_discriminator_batches"]),
        sampling=t["sampling"],
    )


def make_grid(cfg: dict, pose_kind: str, pose_width: int) -> ComboGrid:
    g = cfg["grid"]
    pose_bins = g.get("pose_bins")
    if pose_bins is None:
        pose_bins = pose_width if pose_kind == "discrete" else 6
    return ComboGrid.for_mode(
        cfg["mode"], pose_kind=pose_kind, pose_bins=int(pose_bins),
        landmark_bins=int(g["landmark_bins"]), threshold=float(g["threshold"]),
    )


def predict(recognizer: Recognizer, features: np.ndarray, batch: int = 512) -> LabelBundle:
    """Forward the whole matrix in chunks; plain ndarray bundle out."""
    chunks = []
    for start in range(0, features.shape[0], batch):
        pred = recognizer.forward(features[start:start + batch])
        chunks.append({name: getattr(pred, name) for name in pred.field_names()})
    merged = {
        name: np.concatenate([c[name].data for c in chunks], axis=0)
        for name in chunks[0]
    }
    return LabelBundle(**merged)


def evaluate_recognizer(recognizer: Recognizer, test_set: Dataset, cfg: dict,
                        hash_text: str) -> MetricsReport:
    pose_kind = "discrete" if test_set.discrete_pose else "continuous"
    grid = make_grid(cfg, pose_kind, test_set.pose_width)
    pred = predict(recognizer, test_set.features)
    return build_report(
        pred, test_set.labels, mode=cfg["mode"], grid=grid, pose_kind=pose_kind,
        nme_normalizer=cfg["nme_normalizer"], config_hash=hash_text,
    )


def run_seed(resolved: dict, seed: int, seed_dir, data=None) -> dict:
    """Train and evaluate one seed; writes trainlog/checkpoints/metrics."""
    seed_dir = Path(seed_dir)
    seed_dir.mkdir(parents=True, exist_ok=True)
    if data is None:
        train_set, test_set, _ = resolve_data(resolved)
    else:
        train_set, test_set = data
    hash_text = config_hash(resolved)

    recognizer, discriminator = build_models(resolved, train_set, seed)
    if resolved["standardize_features"]:
        recognizer.set_standardizer(
            train_set.features.mean(axis=0), train_set.features.std(axis=0))
    cfg_t = make_train_config(resolved, seed)
    try:
        _, _, log = train(train_set, recognizer, discriminator, cfg_t,
                          out_dir=seed_dir, config_hash=hash_text)
    except TrainingAbortError as exc:
        (seed_dir / "FAILED").write_text(f"seed {seed}: {exc}\n")
        raise
    log.save_csv(seed_dir / "trainlog.csv")
    checkpoint_io.save(seed_dir / "recognizer.mtal", recognizer, hash_text)
    if discriminator is not None:
        checkpoint_io.save(seed_dir / "discriminator.mtal", discriminator, hash_text)
    report = evaluate_recognizer(recognizer, test_set, resolved, hash_text)
    (seed_dir / "metrics.json").write_text(report.to_json(), encoding="ascii")
    result = report.to_dict()
    result["seed"] = seed
    result["subset"] = resolved["subset"]
    result["warnings"] = list(log.warnings)
    return result


def _seed_job(resolved_json: str, seed: int, seed_dir: str) -> dict:
    return run_seed(json.loads(resolved_json), seed, seed_dir)


SUMMARY_METRICS = (
    "nme_percent", "mae", "visibility_accuracy", "pose_accuracy",
    "gender_accuracy", "attribute_accuracy_mean", "combo_js_divergence",
)


def summarize(per_seed: list) -> dict:
    """Median and IQR per metric across seeds."""
    summary = {}
    for key in SUMMARY_METRICS:
        values = [r[key] for r in per_seed if r.get(key) is not None]
        if not values:
            continue
        arr = np.asarray(values, dtype=np.float64)
        summary[key] = {
            "median": float(np.median(arr)),
            "iqr": float(np.percentile(arr, 75) - np.percentile(arr, 25)),
            "values": [float(v) for v in arr],
        }
    return summary


def _write_summary(out_dir: Path, resolved: dict, hash_text: str, dataset_hash: str,
                   per_seed: list) -> dict:
    summary = {
        "config_hash": hash_text,
        "dataset_hash": dataset_hash,
        "subset": resolved["subset"],
        "mode": resolved["mode"],
        "seeds": resolved["seeds"],
        "metrics": summarize(per_seed),
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="ascii")
    header = "seed,subset," + ",".join(MetricsReport.CSV_COLUMNS)
    rows = [header]
    for r in per_seed:
        report = MetricsReport(**{k: r.get(k) for k in MetricsReport.__dataclass_fields__})
        rows.append(f"{r['seed']},{r['subset']}," + report.csv_row())
    (out_dir / "summary.csv").write_text("\n".join(rows) + "\n", encoding="ascii")
    return summary


def run_experiment(user_config: dict, out_dir) -> dict:
    """Full multi-seed run; returns the summary dict."""
    resolved = resolve_config(user_config)
    hash_text = config_hash(resolved)
    train_set, test_set, dataset_hash = resolve_data(resolved)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    snapshot = dict(resolved)
    snapshot["config_hash"] = hash_text
    snapshot["dataset_hash"] = dataset_hash
    (out_dir / "config.json").write_text(
        json.dumps(snapshot, sort_keys=True, indent=2) + "\n", encoding="ascii")

    seeds = [int(s) for s in resolved["seeds"]]
    workers = int(os.environ.get("MTAL_THREADS", "1"))
    per_seed = []
    try:
        if workers > 1 and len(seeds) > 1:
            resolved_json = json.dumps(resolved)
            with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
                futures = [
                    pool.submit(_seed_job, resolved_json, seed, str(out_dir / f"seed_{seed}"))
                    for seed in seeds
                ]
                per_seed = [f.result() for f in futures]
        else:
            for seed in seeds:
                per_seed.append(run_seed(resolved, seed, out_dir / f"seed_{seed}",
                                         data=(train_set, test_set)))
    except TrainingAbortError as exc:
        (out_dir / "FAILED").write_text(str(exc) + "\n", encoding="ascii")
        raise
    return _write_summary(out_dir, resolved, hash_text, dataset_hash, per_seed)


def run_ablation(user_config: dict, out_dir, subsets=None) -> dict:
    """Sweep label subsets over shared seeds; one run directory per subset."""
    base = resolve_config(user_config)
    if subsets is None:
        subsets = ABLATION_SUBSETS[base["mode"]]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = {}
    for subset in subsets:
        sub_cfg = _deep_merge(base, {"subset": subset})
        results[subset] = run_experiment(sub_cfg, out_dir / f"subset_{subset}")
    comparison = {
        "mode": base["mode"],
        "seeds": base["seeds"],
        "subsets": {name: r["metrics"] for name, r in results.items()},
    }
    (out_dir / "ablation.json").write_text(
        json.dumps(comparison, sort_keys=True, indent=2) + "\n", encoding="ascii")
    lines = ["subset,metric,median,iqr"]
    for name, r in results.items():
        for metric, stats in r["metrics"].items():
            lines.append(f"{name},{metric},{stats['median']!r},{stats['iqr']!r}")
    (out_dir / "ablation.csv").write_text("\n".join(lines) + "\n", encoding="ascii")
    return comparison


def evaluate_checkpoint(checkpoint_path, dataset_path, user_config=None) -> MetricsReport:
    """Re-evaluate a saved recognizer on a dataset file."""
    model, ckpt_hash = checkpoint_io.load(checkpoint_path)
    if not isinstance(model, Recognizer):
        raise ConfigurationError("eval needs a recognizer checkpoint")
    full = Dataset.load(dataset_path)
    cfg = _deep_merge(DEFAULT_CONFIG, user_config or {})
    cfg["mode"] = full.mode
    return evaluate_recognizer(model, full, cfg, ckpt_hash)


def collect_reports(run_dirs) -> list:
    """Gather summary.json files under the given run directories."""
    found = []
    for root in run_dirs:
        root = Path(root)
        if not root.exists():
            raise ConfigurationError(f"run directory does not exist: {root}")
        for path in sorted(root.rglob("summary.json")):
            found.append(json.loads(path.read_text()))
    return found
