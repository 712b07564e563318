"""Evaluation metrics and the label-combination divergence diagnostic.

NME and MAE follow the usual landmark conventions: only landmarks visible in
the ground truth count, NME divides each sample's mean point error by a
per-sample face size and reports a percentage, MAE pools the raw point
errors over every visible landmark. The face-size normalizer is a config
choice (sqrt of box area by default) and is recorded in every report.

The distribution diagnostic discretizes predicted and ground-truth label
combinations onto a fixed grid and measures the Jensen-Shannon divergence
between the two empirical distributions (natural log, so the value lives in
[0, ln 2]); empirical estimates use add-one smoothing over the union
support.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DimensionError, UndefinedMetricError
from .losses import LabelBundle

LN2 = float(np.log(2.0))

# Pose breakdown mirrors the usual absolute-yaw bands.
YAW_BANDS = ((0.0, 30.0), (30.0, 60.0), (60.0, 90.0))


# ---------------------------------------------------------------------------
# landmark errors
# ---------------------------------------------------------------------------

def _landmark_errors(pred: LabelBundle, truth: LabelBundle):
    p = np.asarray(pred.landmarks, dtype=np.float64)
    t = np.asarray(truth.landmarks, dtype=np.float64)
    v = np.asarray(truth.visibility, dtype=np.float64)
    if p.shape != t.shape or t.shape[1] != 2 * v.shape[1]:
        raise DimensionError(
            f"landmark shapes do not agree: predicted {p.shape}, truth {t.shape}, "
            f"visibility {v.shape}"
        )
    dx = p[:, 0::2] - t[:, 0::2]
    dy = p[:, 1::2] - t[:, 1::2]
    return np.sqrt(dx * dx + dy * dy), v  # (batch, m) point errors, visibility mask


def nme(pred: LabelBundle, truth: LabelBundle, face_sizes) -> float:
    """Normalized mean error in percent.

    Per sample: mean Euclidean error over visible landmarks, divided by that
    sample's face size. Samples with no visible landmark are excluded; if
    every sample is excluded the metric is undefined.
    """
    errors, vis = _landmark_errors(pred, truth)
    sizes = np.asarray(face_sizes, dtype=np.float64).reshape(-1)
    if sizes.shape[0] != errors.shape[0]:
        raise DimensionError(f"face_sizes has {sizes.shape[0]} entries for {errors.shape[0]} samples")
    if np.any(sizes <= 0.0):
        raise ConfigurationError("face sizes must be positive")
    counts = vis.sum(axis=1)
    included = counts > 0
    if not included.any():
        raise UndefinedMetricError("nme is undefined: no sample has a visible landmark")
    per_sample = (errors * vis).sum(axis=1)[included] / counts[included]
    return float(np.mean(per_sample / sizes[included]) * 100.0)


def mae(pred: LabelBundle, truth: LabelBundle) -> float:
    """Mean Euclidean point error pooled over all visible landmarks."""
    errors, vis = _landmark_errors(pred, truth)
    total_visible = vis.sum()
    if total_visible == 0:
        raise UndefinedMetricError("mae is undefined: no visible landmarks")
    return float((errors * vis).sum() / total_visible)


def accuracy(preds, truths, kind: str) -> float:
    """binary: threshold at 0.5; multiclass: row argmax match."""
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.size == 0:
        raise UndefinedMetricError("accuracy of an empty prediction set is undefined")
    if p.shape != t.shape:
        raise DimensionError(f"prediction shape {p.shape} != truth shape {t.shape}")
    if kind == "binary":
        return float(np.mean((p > 0.5) == (t > 0.5)))
    if kind == "multiclass":
        return float(np.mean(np.argmax(p, axis=1) == np.argmax(t, axis=1)))
    raise ConfigurationError(f"unknown accuracy kind '{kind}'")


def pose_degree_error(preds, truths):
    """Per-angle mean absolute degrees, returned as (roll, pitch, yaw)."""
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 2 or p.shape[1] != 3:
        raise DimensionError(f"continuous pose expects matching (batch, 3); got {p.shape} and {t.shape}")
    err = np.abs(p - t).mean(axis=0)
    return float(err[0]), float(err[1]), float(err[2])


# ---------------------------------------------------------------------------
# combo discretization and divergence
# ---------------------------------------------------------------------------

@dataclass
class ComboGrid:
    """Discretization grid for label combinations.

    Continuous values use half-open [lo, hi) bins: a value exactly on an
    interior edge belongs to the bin that starts there, and the top edge
    closes the last bin.
    """

    fields: tuple = ("landmarks", "visibility", "pose", "gender")
    landmark_bins: int = 4
    landmark_range: tuple = (0.0, 1.0)
    pose_kind: str = "discrete"
    pose_bins: int = 13           # continuous default would be 6
    pose_range: tuple = (-90.0, 90.0)
    threshold: float = 0.5

    @classmethod
    def for_mode(cls, mode: str, pose_kind: str = "discrete", pose_bins: Optional[int] = None,
                 **overrides) -> "ComboGrid":
        if mode == "attribute":
            grid = cls(fields=("attributes",))
        else:
            if pose_bins is None:
                pose_bins = 13 if pose_kind == "discrete" else 6
            grid = cls(pose_kind=pose_kind, pose_bins=pose_bins)
        for key, value in overrides.items():
            if not hasattr(grid, key):
                raise ConfigurationError(f"unknown grid option '{key}'")
            setattr(grid, key, value)
        return grid

    def to_dict(self) -> dict:
        return {
            "fields": list(self.fields),
            "landmark_bins": self.landmark_bins,
            "landmark_range": list(self.landmark_range),
            "pose_kind": self.pose_kind,
            "pose_bins": self.pose_bins,
            "pose_range": list(self.pose_range),
            "threshold": self.threshold,
        }


def uniform_bin(values: np.ndarray, lo: float, hi: float, nbins: int) -> np.ndarray:
    """Half-open uniform binning; the top edge folds into the last bin."""
    width = (hi - lo) / nbins
    idx = np.floor((np.asarray(values, dtype=np.float64) - lo) / width).astype(np.int64)
    return np.clip(idx, 0, nbins - 1)


def discretize_combo(bundle: LabelBundle, grid: ComboGrid):
    """Map each sample's labels onto the grid; one hashable tuple per row."""
    columns = []
    for name in grid.fields:
        value = getattr(bundle, name)
        if value is None:
            raise ConfigurationError(f"bundle is missing field '{name}' named by the grid")
        value = np.asarray(value.data if hasattr(value, "data") else value, dtype=np.float64)
        if name == "landmarks":
            lo, hi = grid.landmark_range
            columns.append(uniform_bin(value, lo, hi, grid.landmark_bins))
        elif name in ("visibility", "gender", "attributes"):
            columns.append((value > grid.threshold).astype(np.int64))
        elif name == "pose":
            if grid.pose_kind == "discrete":
                columns.append(np.argmax(value, axis=1).reshape(-1, 1))
            else:
                yaw = value[:, 2]
                lo, hi = grid.pose_range
                columns.append(uniform_bin(yaw, lo, hi, grid.pose_bins).reshape(-1, 1))
        else:
            raise ConfigurationError(f"grid cannot discretize field '{name}'")
    stacked = np.concatenate(columns, axis=1)
    return [tuple(int(v) for v in row) for row in stacked]


def js_divergence_pmf(p, q) -> float:
    """Exact JS divergence (natural log) between two aligned pmf vectors."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    m = 0.5 * (p + q)

    def kl(a, b):
        mask = a > 0.0
        return float(np.sum(a[mask] * np.log(a[mask] / b[mask])))

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def js_divergence(samples_a, samples_b) -> float:
    """JS divergence between two empirical tuple distributions.

    Uses add-one smoothing over the union support, so disjoint supports
    approach (but never reach) ln 2.
    """
    a, b = list(samples_a), list(samples_b)
    if not a or not b:
        raise UndefinedMetricError("js_divergence needs two nonempty sample sets")
    count_a, count_b = Counter(a), Counter(b)
    support = sorted(set(count_a) | set(count_b))
    u = len(support)
    pa = np.array([count_a.get(s, 0) + 1 for s in support], dtype=np.float64)
    pb = np.array([count_b.get(s, 0) + 1 for s in support], dtype=np.float64)
    return js_divergence_pmf(pa / (len(a) + u), pb / (len(b) + u))


# ---------------------------------------------------------------------------
# face sizes and reports
# ---------------------------------------------------------------------------

def face_sizes_from_boxes(boxes: np.ndarray, normalizer: str,
                          truth: Optional[LabelBundle] = None,
                          inter_ocular=(0, 1)) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    if normalizer == "box_sqrt_area":
        return np.sqrt(boxes[:, 0] * boxes[:, 1])
    if normalizer == "box_diagonal":
        return np.sqrt(boxes[:, 0] ** 2 + boxes[:, 1] ** 2)
    if normalizer == "inter_ocular":
        if truth is None:
            raise ConfigurationError("inter_ocular normalizer needs ground-truth landmarks")
        t = np.asarray(truth.landmarks, dtype=np.float64)
        i, j = inter_ocular
        d = np.hypot(t[:, 2 * i] - t[:, 2 * j], t[:, 2 * i + 1] - t[:, 2 * j + 1])
        return np.maximum(d, 1e-12)
    raise ConfigurationError(f"unknown nme normalizer '{normalizer}'")


def _yaw_magnitude(truth: LabelBundle, pose_kind: str, pose_range=(-90.0, 90.0)) -> np.ndarray:
    pose = np.asarray(truth.pose, dtype=np.float64)
    if pose_kind == "continuous":
        return np.abs(pose[:, 2])
    lo, hi = pose_range
    k = pose.shape[1]
    centers = lo + (np.arange(k) + 0.5) * (hi - lo) / k
    return np.abs(centers[np.argmax(pose, axis=1)])


@dataclass
class MetricsReport:
    mode: str
    sample_count: int
    config_hash: str
    nme_normalizer: Optional[str] = None
    nme_percent: Optional[float] = None
    mae: Optional[float] = None
    visibility_accuracy: Optional[float] = None
    pose_accuracy: Optional[float] = None
    pose_degree_error: Optional[dict] = None
    gender_accuracy: Optional[float] = None
    attribute_accuracy_mean: Optional[float] = None
    attribute_accuracy_per: Optional[list] = None
    combo_js_divergence: Optional[float] = None
    pose_bin_breakdown: Optional[list] = None
    grid: Optional[dict] = None

    def to_dict(self) -> dict:
        return {k: v for k, v in vars(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    CSV_COLUMNS = (
        "config_hash", "mode", "sample_count", "nme_percent",
        "nme_0_30", "nme_30_60", "nme_60_90", "mae", "visibility_accuracy",
        "pose_accuracy", "gender_accuracy", "attribute_accuracy_mean",
        "combo_js_divergence",
    )

    def csv_row(self) -> str:
        def fmt(v):
            return "" if v is None else (v if isinstance(v, str) else repr(float(v)))

        per_band = {band["band"]: band.get("nme_percent") for band in (self.pose_bin_breakdown or [])}
        cells = [
            self.config_hash, self.mode, str(self.sample_count), fmt(self.nme_percent),
            fmt(per_band.get("[0,30]")), fmt(per_band.get("(30,60]")), fmt(per_band.get("(60,90]")),
            fmt(self.mae), fmt(self.visibility_accuracy), fmt(self.pose_accuracy),
            fmt(self.gender_accuracy), fmt(self.attribute_accuracy_mean),
            fmt(self.combo_js_divergence),
        ]
        return ",".join(cells)


def _landmark_band_metrics(pred, truth, sizes, members) -> dict:
    sub_pred = LabelBundle(landmarks=np.asarray(pred.landmarks)[members],
                           visibility=np.asarray(pred.visibility)[members],
                           pose=np.asarray(pred.pose)[members],
                           gender=np.asarray(pred.gender)[members])
    sub_truth = LabelBundle(landmarks=np.asarray(truth.landmarks)[members],
                            visibility=np.asarray(truth.visibility)[members],
                            pose=np.asarray(truth.pose)[members],
                            gender=np.asarray(truth.gender)[members])
    vis = np.asarray(sub_truth.visibility)
    out = {
        "sample_count": int(members.sum()),
        "nme_sample_count": int(np.count_nonzero(vis.sum(axis=1) > 0)),
        "visible_count": int(vis.sum()),
    }
    if out["sample_count"] == 0:
        return out
    out["nme_percent"] = nme(sub_pred, sub_truth, sizes[members]) if out["nme_sample_count"] else None
    out["mae"] = mae(sub_pred, sub_truth) if out["visible_count"] else None
    out["visibility_accuracy"] = accuracy(sub_pred.visibility, sub_truth.visibility, "binary")
    out["gender_accuracy"] = accuracy(sub_pred.gender, sub_truth.gender, "binary")
    return out


def build_report(pred: LabelBundle, truth: LabelBundle, *, mode: str,
                 grid: ComboGrid, pose_kind: str = "discrete",
                 face_boxes=None, nme_normalizer: str = "box_sqrt_area",
                 inter_ocular=(0, 1), config_hash: str = "unspecified") -> MetricsReport:
    """Assemble the full per-task + distribution report for one model."""
    pred_combo = discretize_combo(pred, grid)
    truth_combo = discretize_combo(truth, grid)
    js = js_divergence(pred_combo, truth_combo)

    if mode == "attribute":
        p = np.asarray(pred.attributes)
        t = np.asarray(truth.attributes)
        per = [accuracy(p[:, j], t[:, j], "binary") for j in range(t.shape[1])]
        return MetricsReport(
            mode=mode, sample_count=t.shape[0], config_hash=config_hash,
            attribute_accuracy_mean=float(np.mean(per)), attribute_accuracy_per=per,
            combo_js_divergence=js, grid=grid.to_dict(),
        )

    n = np.asarray(truth.landmarks).shape[0]
    if face_boxes is None:
        face_boxes = np.ones((n, 2))
    sizes = face_sizes_from_boxes(face_boxes, nme_normalizer, truth, inter_ocular)

    if pose_kind == "continuous":
        roll, pitch, yaw = pose_degree_error(pred.pose, truth.pose)
        pose_acc = None
        pose_err = {"roll": roll, "pitch": pitch, "yaw": yaw}
    else:
        pose_acc = accuracy(pred.pose, truth.pose, "multiclass")
        pose_err = None

    yaw_mag = _yaw_magnitude(truth, pose_kind)
    bands = []
    labels = ("[0,30]", "(30,60]", "(60,90]")
    for label, (lo, hi) in zip(labels, YAW_BANDS):
        members = (yaw_mag > lo) & (yaw_mag <= hi) if lo > 0 else (yaw_mag <= hi)
        band = {"band": label}
        band.update(_landmark_band_metrics(pred, truth, sizes, members))
        bands.append(band)

    return MetricsReport(
        mode=mode, sample_count=n, config_hash=config_hash,
        nme_normalizer=nme_normalizer,
        nme_percent=nme(pred, truth, sizes),
        mae=mae(pred, truth),
        visibility_accuracy=accuracy(pred.visibility, truth.visibility, "binary"),
        pose_accuracy=pose_acc,
        pose_degree_error=pose_err,
        gender_accuracy=accuracy(pred.gender, truth.gender, "binary"),
        combo_js_divergence=js,
        pose_bin_breakdown=bands,
        grid=grid.to_dict(),
    )
