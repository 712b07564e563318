"""Synthetic face-analysis worlds with a known joint label distribution.

Two world kinds:

* landmark worlds: a rigid m-point 3-D face template (with per-gender shape
  offsets) is rotated by a pose draw and projected orthographically into the
  unit square. Landmark visibility is geometric: a point is visible iff its
  outward normal still faces the camera after rotation, so visibility is a
  deterministic function of pose. Features are the (noisy) projected
  coordinates, a few pose/gender cue channels, and pure-noise distractors;
  coordinates of occluded landmarks are replaced by uninformative noise, the
  way an occluded landmark carries no appearance evidence.

* attribute worlds: binary attributes are thresholded linear scores of a
  shared standard-normal latent vector, which fixes their pairwise
  correlations in closed form (for unit loading rows and zero thresholds,
  corr(a_i, a_j) = (2/pi) * arcsin(rho) where rho is the loading-row cosine).
  Groups of mutually exclusive attributes are set by argmax over the group's
  scores. Features are a noisy linear mixture of the latents plus
  distractors.

Labels are exact functions of the per-sample latent draw; only features carry
noise. Each sample uses its own counter-based random stream (seed, index), so
generation order and worker partitioning cannot change the output.

Positive yaw turns the face's left side (template x < 0) away from the
camera, which sits on the +z axis.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DimensionError
from .losses import LabelBundle, bundle_rows

# 5-point template: left eye, right eye, nose tip, left mouth corner, right
# mouth corner, all within the half-unit sphere so every rotated projection
# stays inside the unit square after the +0.5 shift.
TEMPLATE_5 = np.array([
    [-0.16, 0.12, 0.12],
    [0.16, 0.12, 0.12],
    [0.00, -0.02, 0.22],
    [-0.12, -0.22, 0.10],
    [0.12, -0.22, 0.10],
])

# Outward normals: eyes tilted 30 degrees to their side, mouth corners 20.
_S30, _C30 = np.sin(np.radians(30.0)), np.cos(np.radians(30.0))
_S20, _C20 = np.sin(np.radians(20.0)), np.cos(np.radians(20.0))
NORMALS_5 = np.array([
    [-_S30, 0.0, _C30],
    [_S30, 0.0, _C30],
    [0.0, 0.0, 1.0],
    [-_S20, 0.0, _C20],
    [_S20, 0.0, _C20],
])

# Shape offsets applied when gender == 1: eyes slightly closer, mouth wider
# and lower, nose a touch lower.
GENDER_OFFSETS_5 = np.array([
    [0.010, -0.006, 0.0],
    [-0.010, -0.006, 0.0],
    [0.000, -0.010, 0.0],
    [-0.014, -0.012, 0.0],
    [0.014, -0.012, 0.0],
])


@dataclass
class WorldSpec:
    """Everything that defines a synthetic world's joint distribution."""

    mode: str = "landmark"

    # landmark mode
    m: int = 5
    template: Optional[np.ndarray] = None            # (m, 3)
    normals: Optional[np.ndarray] = None             # (m, 3), unit rows
    gender_offsets: Optional[np.ndarray] = None      # (m, 3)
    gender_prior: float = 0.5
    yaw_range: tuple = (-90.0, 90.0)
    pitch_range: tuple = (0.0, 0.0)
    roll_range: tuple = (0.0, 0.0)
    discrete_pose: bool = True
    pose_bins: int = 13
    visibility_threshold: float = 0.0
    feature_noise: float = 0.03
    occluded_noise: float = 0.25
    cue_noise: float = 0.3
    gender_cue_strength: float = 0.3
    nuisance_width: int = 8

    # attribute mode
    n_attributes: int = 0
    latent_factors: int = 0
    loadings: Optional[np.ndarray] = None            # (n, factors)
    thresholds: Optional[np.ndarray] = None          # (n,)
    label_noise: float = 0.0
    exclusive_groups: tuple = ()
    feature_mixing: Optional[np.ndarray] = None      # (core_width, factors)
    designed_correlations: tuple = ()                # ((i, j, corr), ...)

    def validate(self):
        if self.mode == "landmark":
            for name in ("template", "normals", "gender_offsets"):
                arr = getattr(self, name)
                if arr is None or arr.shape != (self.m, 3):
                    raise ConfigurationError(f"landmark world needs {name} of shape ({self.m}, 3)")
            if len(np.unique(self.template, axis=0)) != self.m:
                raise ConfigurationError("template points must be distinct")
            if not 0.0 <= self.gender_prior <= 1.0:
                raise ConfigurationError("gender_prior must lie in [0, 1]")
            if self.discrete_pose and self.pose_bins < 2:
                raise ConfigurationError("discrete pose needs at least 2 bins")
        elif self.mode == "attribute":
            n, f = self.n_attributes, self.latent_factors
            if self.loadings is None or self.loadings.shape != (n, f):
                raise ConfigurationError(f"attribute world needs loadings of shape ({n}, {f})")
            if np.any(np.all(self.loadings == 0.0, axis=1)):
                raise ConfigurationError("loading matrix has an all-zero row")
            if self.thresholds is None or self.thresholds.shape != (n,):
                raise ConfigurationError(f"thresholds must have shape ({n},)")
            if self.feature_mixing is None or self.feature_mixing.shape[1] != f:
                raise ConfigurationError("feature_mixing must have one column per latent factor")
            cross = self.loadings @ self.loadings.T
            off = cross[~np.eye(n, dtype=bool)]
            if not (np.any(off > 0) and np.any(off < 0)):
                raise ConfigurationError(
                    "loadings must induce at least one positive and one negative "
                    "cross-attribute coupling"
                )
        else:
            raise ConfigurationError(f"unknown world mode '{self.mode}'")
        for name in ("feature_noise", "occluded_noise", "cue_noise", "label_noise"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")

    # -- derived widths ----------------------------------------------------
    def pose_width(self) -> int:
        return self.pose_bins if self.discrete_pose else 3

    def label_width(self) -> int:
        if self.mode == "landmark":
            return 2 * self.m + self.m + self.pose_width() + 1
        return self.n_attributes

    def feature_width(self) -> int:
        if self.mode == "landmark":
            return 2 * self.m + 3 + self.nuisance_width
        return self.feature_mixing.shape[0] + self.nuisance_width

    def spec_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(vars(self)):
            value = getattr(self, name)
            h.update(name.encode())
            if isinstance(value, np.ndarray):
                h.update(np.ascontiguousarray(value, dtype=np.float64).tobytes())
            else:
                h.update(repr(value).encode())
        return h.hexdigest()[:16]


def default_landmark_world(**overrides) -> WorldSpec:
    spec = WorldSpec(
        mode="landmark",
        template=TEMPLATE_5.copy(),
        normals=NORMALS_5.copy(),
        gender_offsets=GENDER_OFFSETS_5.copy(),
    )
    for key, value in overrides.items():
        if not hasattr(spec, key):
            raise ConfigurationError(f"unknown world option '{key}'")
        setattr(spec, key, value)
    spec.validate()
    return spec


def default_attribute_world(n_attributes=12, target_corr=-0.6, **overrides) -> WorldSpec:
    """12 attributes over 4 latent factors; attributes 0/1 hit ``target_corr``
    exactly by the arcsine law, attributes 8..11 form one exclusive group."""
    if n_attributes != 12:
        raise ConfigurationError("the default attribute world is defined for n_attributes=12")
    factors = 4
    rho = np.sin(target_corr * np.pi / 2.0)
    loadings = np.zeros((n_attributes, factors))
    loadings[0] = [1.0, 0.0, 0.0, 0.0]
    loadings[1] = [rho, np.sqrt(1.0 - rho * rho), 0.0, 0.0]
    loadings[2] = [0.7, 0.0, np.sqrt(1.0 - 0.49), 0.0]
    loadings[3] = [0.0, 1.0, 0.0, 0.0]
    loadings[4] = [0.0, 0.0, 0.6, 0.8]
    loadings[5] = [0.0, -0.5, 0.0, np.sqrt(1.0 - 0.25)]
    loadings[6] = [0.0, 0.0, 0.0, 1.0]
    loadings[7] = [0.5, -0.5, 0.5, -0.5]
    s = np.sqrt(0.5)
    loadings[8] = [s, s, 0.0, 0.0]
    loadings[9] = [-s, s, 0.0, 0.0]
    loadings[10] = [0.0, -s, s, 0.0]
    loadings[11] = [0.0, 0.0, -s, s]
    thresholds = np.array([0.0, 0.0, 0.0, 0.25, -0.25, 0.5, 0.0, 0.25,
                           0.0, 0.0, 0.0, 0.0])
    # Fixed mixing from latents to the informative feature block; the
    # constant seed makes the world a pure function of its options.
    mix_rng = np.random.default_rng(0xA77121)
    feature_mixing = mix_rng.normal(0.0, 0.7, size=(16, factors))
    spec = WorldSpec(
        mode="attribute",
        n_attributes=n_attributes,
        latent_factors=factors,
        loadings=loadings,
        thresholds=thresholds,
        exclusive_groups=((8, 9, 10, 11),),
        feature_mixing=feature_mixing,
        designed_correlations=((0, 1, float(target_corr)),
                               (0, 2, float(2.0 / np.pi * np.arcsin(0.7)))),
        feature_noise=0.35,
    )
    for key, value in overrides.items():
        if not hasattr(spec, key):
            raise ConfigurationError(f"unknown world option '{key}'")
        setattr(spec, key, value)
    spec.validate()
    return spec


# ---------------------------------------------------------------------------
# deterministic label maps (latent draw -> labels)
# ---------------------------------------------------------------------------

def rotation_matrix(roll_deg: float, pitch_deg: float, yaw_deg: float) -> np.ndarray:
    """R = Rz(roll) @ Rx(pitch) @ Ry(yaw), positive yaw hiding the left side."""
    r, p, y = np.radians([roll_deg, pitch_deg, yaw_deg])
    cy, sy = np.cos(y), np.sin(y)
    cp, sp = np.cos(p), np.sin(p)
    cr, sr = np.cos(r), np.sin(r)
    ry = np.array([[cy, 0.0, -sy], [0.0, 1.0, 0.0], [sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    rz = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    return rz @ rx @ ry


def yaw_bin_index(yaw_deg: float, pose_bins: int, yaw_range=(-90.0, 90.0)) -> int:
    lo, hi = yaw_range
    width = (hi - lo) / pose_bins
    return min(pose_bins - 1, max(0, int(np.floor((yaw_deg - lo) / width))))


def landmark_labels_from_latents(spec: WorldSpec, gender: int, yaw: float,
                                 pitch: float = 0.0, roll: float = 0.0):
    """Exact labels for one landmark-world sample.

    Returns (landmarks (2m,), visibility (m,), pose, gender (1,)), where pose
    is a one-hot row in discrete mode or (roll, pitch, yaw) degrees.
    """
    points = spec.template + gender * spec.gender_offsets
    rot = rotation_matrix(roll, pitch, yaw)
    rotated = points @ rot.T
    coords = np.empty(2 * spec.m)
    coords[0::2] = rotated[:, 0] + 0.5
    coords[1::2] = rotated[:, 1] + 0.5
    normal_z = (spec.normals @ rot.T)[:, 2]
    visibility = (normal_z > spec.visibility_threshold).astype(np.float64)
    if spec.discrete_pose:
        pose = np.zeros(spec.pose_bins)
        pose[yaw_bin_index(yaw, spec.pose_bins, spec.yaw_range)] = 1.0
    else:
        pose = np.array([roll, pitch, yaw])
    return coords, visibility, pose, np.array([float(gender)])


def attribute_labels_from_latents(spec: WorldSpec, latents: np.ndarray,
                                  label_noise_draw: Optional[np.ndarray] = None) -> np.ndarray:
    """Exact attribute labels for one attribute-world latent draw."""
    scores = spec.loadings @ latents
    if spec.label_noise > 0.0:
        scores = scores + spec.label_noise * label_noise_draw
    attrs = (scores > spec.thresholds).astype(np.float64)
    for group in spec.exclusive_groups:
        group = list(group)
        attrs[group] = 0.0
        attrs[group[int(np.argmax(scores[group]))]] = 1.0
    return attrs


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

@dataclass
class Sample:
    features: np.ndarray
    labels: LabelBundle


@dataclass
class Dataset:
    """Ordered samples as column arrays, plus provenance."""

    mode: str
    features: np.ndarray          # (N, F)
    labels: LabelBundle           # batch arrays
    spec_hash: str
    seed: int
    m: int = 0
    pose_width: int = 0
    discrete_pose: bool = True
    n_attributes: int = 0
    latents: Optional[np.ndarray] = None   # regeneration record, not persisted

    def __len__(self):
        return self.features.shape[0]

    def sample(self, i: int) -> Sample:
        row = bundle_rows(self.labels, slice(i, i + 1))
        flat = LabelBundle(**{
            name: (None if getattr(row, name) is None else getattr(row, name)[0])
            for name in ("landmarks", "visibility", "pose", "gender", "attributes")
        })
        return Sample(features=self.features[i], labels=flat)

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            mode=self.mode,
            features=self.features[idx],
            labels=bundle_rows(self.labels, idx),
            spec_hash=self.spec_hash,
            seed=self.seed,
            m=self.m,
            pose_width=self.pose_width,
            discrete_pose=self.discrete_pose,
            n_attributes=self.n_attributes,
            latents=None if self.latents is None else self.latents[idx],
        )

    # -- persistence --------------------------------------------------------
    def header_line(self) -> str:
        pose_kind = "discrete" if self.discrete_pose else "continuous"
        fields = [
            f"mode={self.mode}", f"m={self.m}", f"pose_width={self.pose_width}",
            f"pose_kind={pose_kind}", f"n_attributes={self.n_attributes}",
            f"feature_width={self.features.shape[1]}", f"spec={self.spec_hash}",
            f"seed={self.seed}",
        ]
        return "\t".join(fields)

    def label_matrix(self) -> np.ndarray:
        if self.mode == "landmark":
            return np.concatenate(
                [self.labels.landmarks, self.labels.visibility, self.labels.pose,
                 self.labels.gender], axis=1)
        return self.labels.attributes

    def to_text(self) -> str:
        lines = [self.header_line()]
        labels = self.label_matrix()
        for i in range(len(self)):
            row = [repr(float(v)) for v in self.features[i]]
            row += [repr(float(v)) for v in labels[i]]
            lines.append("\t".join(row))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path, "r", encoding="ascii") as fh:
            header = fh.readline().strip()
            meta = {}
            for part in header.split("\t"):
                if "=" not in part:
                    raise ConfigurationError(f"bad dataset header field '{part}'")
                key, value = part.split("=", 1)
                meta[key] = value
            rows = [line.split("\t") for line in fh.read().splitlines() if line]
        mode = meta["mode"]
        m = int(meta["m"])
        pose_width = int(meta["pose_width"])
        n_attr = int(meta["n_attributes"])
        feat_width = int(meta["feature_width"])
        data = np.array([[float(v) for v in row] for row in rows])
        if data.ndim != 2 or data.shape[1] != feat_width + (
                2 * m + m + pose_width + 1 if mode == "landmark" else n_attr):
            raise DimensionError(f"dataset rows have width {data.shape}, header disagrees")
        features = data[:, :feat_width]
        rest = data[:, feat_width:]
        if mode == "landmark":
            labels = LabelBundle(
                landmarks=rest[:, :2 * m],
                visibility=rest[:, 2 * m:3 * m],
                pose=rest[:, 3 * m:3 * m + pose_width],
                gender=rest[:, 3 * m + pose_width:],
            )
        else:
            labels = LabelBundle(attributes=rest)
        return cls(
            mode=mode, features=features, labels=labels, spec_hash=meta["spec"],
            seed=int(meta["seed"]), m=m, pose_width=pose_width,
            discrete_pose=meta["pose_kind"] == "discrete", n_attributes=n_attr,
        )


def _sample_rng(seed: int, index: int):
    # Counter-based per-index stream: output is a function of (seed, index)
    # alone, never of generation order or worker layout.
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def generate_landmark_world(spec: WorldSpec, n_samples: int, seed: int) -> Dataset:
    """Draw a landmark-world dataset of ``n_samples`` i.i.d. samples."""
    spec.validate()
    if spec.mode != "landmark":
        raise ConfigurationError("generate_landmark_world needs a landmark-mode spec")
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1; refusing to build an empty dataset")
    m = spec.m
    feat_width = spec.feature_width()
    features = np.empty((n_samples, feat_width))
    landmarks = np.empty((n_samples, 2 * m))
    visibility = np.empty((n_samples, m))
    pose = np.empty((n_samples, spec.pose_width()))
    gender = np.empty((n_samples, 1))
    latents = np.empty((n_samples, 4))  # (gender, yaw, pitch, roll)

    for i in range(n_samples):
        rng = _sample_rng(seed, i)
        g = int(rng.random() < spec.gender_prior)
        yaw = rng.uniform(*spec.yaw_range)
        pitch = rng.uniform(*spec.pitch_range)
        roll = rng.uniform(*spec.roll_range)
        latents[i] = (g, yaw, pitch, roll)
        coords, vis, pose_row, g_row = landmark_labels_from_latents(spec, g, yaw, pitch, roll)
        landmarks[i], visibility[i], pose[i], gender[i] = coords, vis, pose_row, g_row

        coord_feat = coords.copy()
        hidden = np.where(vis == 0.0)[0]
        for j in hidden:
            coord_feat[2 * j:2 * j + 2] = 0.5 + rng.normal(0.0, spec.occluded_noise, size=2)
        coord_feat = coord_feat + rng.normal(0.0, spec.feature_noise, size=2 * m)
        yaw_rad = np.radians(yaw)
        cues = np.array([np.sin(yaw_rad), np.cos(yaw_rad),
                         (2.0 * g - 1.0) * spec.gender_cue_strength])
        cues = cues + rng.normal(0.0, spec.cue_noise, size=3)
        nuisance = rng.standard_normal(spec.nuisance_width)
        features[i] = np.concatenate([coord_feat, cues, nuisance])

    labels = LabelBundle(landmarks=landmarks, visibility=visibility, pose=pose, gender=gender)
    return Dataset(
        mode="landmark", features=features, labels=labels, spec_hash=spec.spec_hash(),
        seed=seed, m=m, pose_width=spec.pose_width(), discrete_pose=spec.discrete_pose,
        latents=latents,
    )


def generate_attribute_world(spec: WorldSpec, n_samples: int, seed: int) -> Dataset:
    """Draw an attribute-world dataset of ``n_samples`` i.i.d. samples."""
    spec.validate()
    if spec.mode != "attribute":
        raise ConfigurationError("generate_attribute_world needs an attribute-mode spec")
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1; refusing to build an empty dataset")
    n, f = spec.n_attributes, spec.latent_factors
    core_width = spec.feature_mixing.shape[0]
    features = np.empty((n_samples, core_width + spec.nuisance_width))
    attributes = np.empty((n_samples, n))
    latent_width = f + (n if spec.label_noise > 0.0 else 0)
    latents = np.empty((n_samples, latent_width))

    for i in range(n_samples):
        rng = _sample_rng(seed, i)
        z = rng.standard_normal(f)
        noise_draw = rng.standard_normal(n) if spec.label_noise > 0.0 else None
        latents[i, :f] = z
        if noise_draw is not None:
            latents[i, f:] = noise_draw
        attributes[i] = attribute_labels_from_latents(spec, z, noise_draw)
        core = spec.feature_mixing @ z + rng.normal(0.0, spec.feature_noise, size=core_width)
        nuisance = rng.standard_normal(spec.nuisance_width)
        features[i] = np.concatenate([core, nuisance])

    labels = LabelBundle(attributes=attributes)
    return Dataset(
        mode="attribute", features=features, labels=labels, spec_hash=spec.spec_hash(),
        seed=seed, n_attributes=n, latents=latents,
    )


def generate(spec: WorldSpec, n_samples: int, seed: int) -> Dataset:
    if spec.mode == "landmark":
        return generate_landmark_world(spec, n_samples, seed)
    return generate_attribute_world(spec, n_samples, seed)


def split(dataset: Dataset, train_fraction: float, seed: int):
    """Disjoint, exhaustive, seed-deterministic train/test split."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError(f"train_fraction {train_fraction} must lie in (0, 1)")
    n = len(dataset)
    n_train = int(round(train_fraction * n))
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.take(perm[:n_train]), dataset.take(perm[n_train:])
