"""The multi-task recognizer and the label-combination discriminator.

Both are plain fully-connected stacks over the tensor core. The recognizer
has a shared trunk read by every task head; the discriminator is a
feed-forward binary classifier with two hidden layers. Weight init is
uniform in [-r, r] with r = sqrt(6 / (fan_in + fan_out)); biases start at
zero. Passing ``rng=None`` builds an all-zero model (handy in tests).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DimensionError
from .losses import LabelBundle
from .tensor import Tensor, clamp_probs, linear, relu, sigmoid, softmax


def glorot_uniform(fan_in: int, fan_out: int, rng) -> np.ndarray:
    if rng is None:
        return np.zeros((fan_in, fan_out))
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=(fan_in, fan_out))


class Linear:
    def __init__(self, fan_in: int, fan_out: int, rng):
        self.weights = Tensor(glorot_uniform(fan_in, fan_out, rng), requires_grad=True)
        self.bias = Tensor(np.zeros(fan_out), requires_grad=True)

    def __call__(self, x):
        return linear(x, self.weights, self.bias)


class Recognizer:
    """Shared trunk plus per-task heads.

    mode "landmark": landmark (2m linear), visibility (m sigmoid), pose
    (3 linear in continuous mode, K softmax in discrete mode) and gender
    (1 sigmoid) heads. mode "attribute": a single n-sigmoid head.

    Inputs are standardized per feature with ``input_mean``/``input_std``
    (identity until set); this stands in for image-scale batch
    normalization, which has no place at this scale.
    """

    def __init__(self, in_dim, trunk=(128, 128), mode="landmark", m=5,
                 pose_kind="discrete", pose_bins=13, n_attributes=0, rng=None):
        if mode not in ("landmark", "attribute"):
            raise ConfigurationError(f"unknown recognizer mode '{mode}'")
        if mode == "landmark" and pose_kind not in ("continuous", "discrete"):
            raise ConfigurationError(f"unknown pose kind '{pose_kind}'")
        if mode == "attribute" and n_attributes < 1:
            raise ConfigurationError("attribute mode requires n_attributes >= 1")
        self.in_dim = int(in_dim)
        self.trunk_widths = tuple(int(w) for w in trunk)
        self.mode = mode
        self.m = int(m)
        self.pose_kind = pose_kind
        self.pose_bins = int(pose_bins)
        self.n_attributes = int(n_attributes)
        self.input_mean = np.zeros(self.in_dim)
        self.input_std = np.ones(self.in_dim)

        self.trunk = []
        width = self.in_dim
        for w in self.trunk_widths:
            self.trunk.append(Linear(width, w, rng))
            width = w
        self.heads = {}
        if mode == "landmark":
            self.heads["landmarks"] = Linear(width, 2 * self.m, rng)
            self.heads["visibility"] = Linear(width, self.m, rng)
            pose_out = 3 if pose_kind == "continuous" else self.pose_bins
            self.heads["pose"] = Linear(width, pose_out, rng)
            self.heads["gender"] = Linear(width, 1, rng)
        else:
            self.heads["attributes"] = Linear(width, self.n_attributes, rng)

    head_order = ("landmarks", "visibility", "pose", "gender", "attributes")

    def set_standardizer(self, mean, std):
        mean = np.asarray(mean, dtype=np.float64).reshape(-1)
        std = np.asarray(std, dtype=np.float64).reshape(-1)
        if mean.shape != (self.in_dim,) or std.shape != (self.in_dim,):
            raise DimensionError(
                f"standardizer shapes {mean.shape}/{std.shape} do not match input width "
                f"({self.in_dim},)"
            )
        self.input_mean = mean.copy()
        self.input_std = np.maximum(std, 1e-8)

    def forward(self, x: np.ndarray) -> LabelBundle:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(
                f"recognizer input shape {x.shape} does not match expected "
                f"(batch, {self.in_dim})"
            )
        h = Tensor((x - self.input_mean) / self.input_std)
        for layer in self.trunk:
            h = relu(layer(h))
        if self.mode == "landmark":
            pose_raw = self.heads["pose"](h)
            pose = pose_raw if self.pose_kind == "continuous" else softmax(pose_raw)
            return LabelBundle(
                landmarks=self.heads["landmarks"](h),
                visibility=clamp_probs(sigmoid(self.heads["visibility"](h))),
                pose=pose,
                gender=clamp_probs(sigmoid(self.heads["gender"](h))),
            )
        return LabelBundle(attributes=clamp_probs(sigmoid(self.heads["attributes"](h))))

    def named_parameters(self):
        out = []
        for i, layer in enumerate(self.trunk):
            out.append((f"trunk{i}.weights", layer.weights))
            out.append((f"trunk{i}.bias", layer.bias))
        for name in self.head_order:
            if name in self.heads:
                out.append((f"head_{name}.weights", self.heads[name].weights))
                out.append((f"head_{name}.bias", self.heads[name].bias))
        return out

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def output_width(self) -> int:
        if self.mode == "landmark":
            pose_out = 3 if self.pose_kind == "continuous" else self.pose_bins
            return 2 * self.m + self.m + pose_out + 1
        return self.n_attributes

    def meta(self) -> dict:
        return {
            "kind": "recognizer",
            "mode": self.mode,
            "in_dim": self.in_dim,
            "trunk": list(self.trunk_widths),
            "m": self.m,
            "pose_kind": self.pose_kind,
            "pose_bins": self.pose_bins,
            "n_attributes": self.n_attributes,
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "Recognizer":
        return cls(
            in_dim=meta["in_dim"], trunk=meta["trunk"], mode=meta["mode"], m=meta["m"],
            pose_kind=meta["pose_kind"], pose_bins=meta["pose_bins"],
            n_attributes=meta["n_attributes"], rng=None,
        )

    def state_arrays(self):
        """(name, array) pairs persisted by checkpoints, in declaration order."""
        return [("input_mean", self.input_mean), ("input_std", self.input_std)] + [
            (name, t.data) for name, t in self.named_parameters()
        ]

    def load_state_arrays(self, arrays: dict) -> None:
        self.set_standardizer(arrays["input_mean"], arrays["input_std"])
        for name, t in self.named_parameters():
            a = arrays[name]
            if a.shape != t.data.shape:
                raise DimensionError(
                    f"checkpoint array {name} has shape {a.shape}, model expects {t.data.shape}"
                )
            t.data = a.copy()


class Discriminator:
    """Two-hidden-layer feed-forward binary classifier over label combos.

    The sigmoid output is clamped to [1e-12, 1 - 1e-12] so downstream logs
    are always finite.
    """

    def __init__(self, in_width, hidden=(64, 32), rng=None):
        if len(hidden) != 2:
            raise ConfigurationError(f"discriminator takes exactly two hidden widths, got {hidden}")
        self.in_width = int(in_width)
        self.hidden = tuple(int(h) for h in hidden)
        self.layers = []
        width = self.in_width
        for h in self.hidden:
            self.layers.append(Linear(width, h, rng))
            width = h
        self.out_layer = Linear(width, 1, rng)

    def forward(self, combo) -> Tensor:
        combo_data = combo.data if isinstance(combo, Tensor) else np.asarray(combo)
        if combo_data.ndim != 2 or combo_data.shape[1] != self.in_width:
            raise DimensionError(
                f"discriminator input shape {combo_data.shape} does not match expected "
                f"(batch, {self.in_width})"
            )
        h = combo if isinstance(combo, Tensor) else Tensor(combo_data)
        for layer in self.layers:
            h = relu(layer(h))
        return clamp_probs(sigmoid(self.out_layer(h)))

    def named_parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            out.append((f"hidden{i}.weights", layer.weights))
            out.append((f"hidden{i}.bias", layer.bias))
        out.append(("out.weights", self.out_layer.weights))
        out.append(("out.bias", self.out_layer.bias))
        return out

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def meta(self) -> dict:
        return {"kind": "discriminator", "in_width": self.in_width, "hidden": list(self.hidden)}

    @classmethod
    def from_meta(cls, meta: dict) -> "Discriminator":
        return cls(in_width=meta["in_width"], hidden=meta["hidden"], rng=None)

    def state_arrays(self):
        return [(name, t.data) for name, t in self.named_parameters()]

    def load_state_arrays(self, arrays: dict) -> None:
        for name, t in self.named_parameters():
            a = arrays[name]
            if a.shape != t.data.shape:
                raise DimensionError(
                    f"checkpoint array {name} has shape {a.shape}, model expects {t.data.shape}"
                )
            t.data = a.copy()
