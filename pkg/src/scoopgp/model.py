"""Reward model: a shared dense feature extractor feeding a scalar mean
head and a GP embedding head.

Observations are small oriented image patches (appearance channels plus
a height channel); actions contribute depth and stiffness as raw
features, while position and yaw are consumed by patch extraction. The
mean head predicts standardized reward; the kernel head embeds inputs
for the residual GP.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gp
from . import tensor as T

DEPTH_MIN = 0.03
DEPTH_MAX = 0.08
N_YAW = 8
STIFF_SOFT = 0
STIFF_HARD = 1

_DEPTH_MID = 0.5 * (DEPTH_MIN + DEPTH_MAX)
_DEPTH_HALF = 0.5 * (DEPTH_MAX - DEPTH_MIN)


@dataclass(frozen=True)
class TrajectoryConstants:
    """Fixed scoop-trajectory parameters, recorded with every dataset."""

    attack_angle_deg: float = 135.0
    drag_length_m: float = 0.06
    closing_angle_deg: float = 190.0
    lift_height_m: float = 0.02
    linear_stiffness_soft: float = 250.0
    linear_stiffness_hard: float = 750.0
    torsion_stiffness_soft: float = 6.0
    torsion_stiffness_hard: float = 20.0

    def to_dict(self) -> dict:
        return {
            "attack_angle_deg": self.attack_angle_deg,
            "drag_length_m": self.drag_length_m,
            "closing_angle_deg": self.closing_angle_deg,
            "lift_height_m": self.lift_height_m,
            "linear_stiffness_soft": self.linear_stiffness_soft,
            "linear_stiffness_hard": self.linear_stiffness_hard,
            "torsion_stiffness_soft": self.torsion_stiffness_soft,
            "torsion_stiffness_hard": self.torsion_stiffness_hard,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryConstants":
        return cls(**d)


@dataclass
class ScoopAction:
    """One parameterized scoop: start position, yaw index, depth, stiffness."""

    x: float
    y: float
    yaw: int
    depth: float
    stiffness: int

    def validate(self, extent: tuple[float, float] | None = None) -> None:
        if not 0 <= self.yaw < N_YAW:
            raise ValueError(f"yaw index {self.yaw} outside 0..{N_YAW - 1}")
        if not DEPTH_MIN <= self.depth <= DEPTH_MAX:
            raise ValueError(f"depth {self.depth} outside [{DEPTH_MIN}, {DEPTH_MAX}]")
        if self.stiffness not in (STIFF_SOFT, STIFF_HARD):
            raise ValueError(f"stiffness {self.stiffness} must be 0 (soft) or 1 (hard)")
        if extent is not None:
            ex, ey = extent
            if not (0.0 <= self.x <= ex and 0.0 <= self.y <= ey):
                raise ValueError(f"({self.x}, {self.y}) outside terrain extent {extent}")

    @property
    def yaw_angle(self) -> float:
        return self.yaw * (2.0 * math.pi / N_YAW)

    def vector(self) -> np.ndarray:
        """Numeric encoding used by the task-distance cost."""
        return np.array(
            [self.x, self.y, self.yaw_angle, self.depth, float(self.stiffness)]
        )

    def to_dict(self) -> dict:
        return {
            "x": self.x,
            "y": self.y,
            "yaw": self.yaw,
            "depth": self.depth,
            "stiffness": self.stiffness,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScoopAction":
        return cls(d["x"], d["y"], int(d["yaw"]), d["depth"], int(d["stiffness"]))


@dataclass
class Observation:
    """Oriented local patch: appearance channels plus one height channel.

    The patch's left edge sits at the scoop start and its horizontal axis
    runs along the scoop direction.
    """

    patch: np.ndarray  # (channels, height, width)

    def validate(self) -> None:
        if self.patch.ndim != 3:
            raise ValueError(f"patch must be (C, H, W), got shape {self.patch.shape}")
        if not np.all(np.isfinite(self.patch)):
            raise ValueError("patch contains non-finite values")
        appearance = self.patch[:-1]
        if appearance.size and (appearance.min() < -1e-9 or appearance.max() > 1.0 + 1e-9):
            raise ValueError("appearance channels must lie in [0, 1]")


def flip_patch(patch: np.ndarray) -> np.ndarray:
    """Flip across the axis perpendicular to the scoop direction."""
    return np.flip(patch, axis=1).copy()


@dataclass(frozen=True)
class Architecture:
    """Layer widths for the extractor and the two heads."""

    channels: int = 4
    patch_h: int = 16
    patch_w: int = 16
    extractor_widths: tuple[int, ...] = (64, 64)
    mean_widths: tuple[int, ...] = (32,)
    kernel_widths: tuple[int, ...] = (32,)
    embed_dim: int = 16

    @property
    def patch_size(self) -> int:
        return self.channels * self.patch_h * self.patch_w

    @property
    def input_dim(self) -> int:
        return self.patch_size + 2  # + depth, stiffness

    @property
    def feature_dim(self) -> int:
        return self.extractor_widths[-1]

    def to_dict(self) -> dict:
        return {
            "channels": self.channels,
            "patch_h": self.patch_h,
            "patch_w": self.patch_w,
            "extractor_widths": list(self.extractor_widths),
            "mean_widths": list(self.mean_widths),
            "kernel_widths": list(self.kernel_widths),
            "embed_dim": self.embed_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(
            channels=d["channels"],
            patch_h=d["patch_h"],
            patch_w=d["patch_w"],
            extractor_widths=tuple(d["extractor_widths"]),
            mean_widths=tuple(d["mean_widths"]),
            kernel_widths=tuple(d["kernel_widths"]),
            embed_dim=d["embed_dim"],
        )


def feature_vector(arch: Architecture, obs: Observation, act: ScoopAction) -> np.ndarray:
    """Flattened patch plus normalized depth and the stiffness flag."""
    if obs.patch.shape != (arch.channels, arch.patch_h, arch.patch_w):
        raise T.ShapeError(
            f"patch shape {obs.patch.shape} does not match architecture "
            f"({arch.channels}, {arch.patch_h}, {arch.patch_w})"
        )
    depth_norm = (act.depth - _DEPTH_MID) / _DEPTH_HALF
    return np.concatenate([obs.patch.ravel(), [depth_norm, float(act.stiffness)]])


def flip_permutation(arch: Architecture) -> np.ndarray:
    """Column permutation turning a feature row into its flipped-patch twin."""
    idx = np.arange(arch.patch_size).reshape(arch.channels, arch.patch_h, arch.patch_w)
    flipped = idx[:, ::-1, :].ravel()
    return np.concatenate([flipped, [arch.patch_size, arch.patch_size + 1]])


def _segment_layers(arch: Architecture, segment: str) -> list[tuple[int, int]]:
    if segment == "extractor":
        dims = [arch.input_dim, *arch.extractor_widths]
    elif segment == "mean":
        dims = [arch.feature_dim, *arch.mean_widths, 1]
    elif segment == "kernel":
        dims = [arch.feature_dim, *arch.kernel_widths, arch.embed_dim]
    else:
        raise ValueError(segment)
    return list(zip(dims[:-1], dims[1:]))


def init_segment_weights(
    arch: Architecture, segment: str, rng: np.random.Generator
) -> dict[str, T.Tensor]:
    """He-init hidden layers; Xavier final layers; zero final mean layer."""
    weights: dict[str, T.Tensor] = {}
    layers = _segment_layers(arch, segment)
    for i, (fan_in, fan_out) in enumerate(layers):
        last = i == len(layers) - 1
        if segment == "mean" and last:
            w = np.zeros((fan_in, fan_out))
        elif last and segment != "extractor":
            w = rng.normal(scale=math.sqrt(1.0 / fan_in), size=(fan_in, fan_out))
        else:
            w = rng.normal(scale=math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        name_w = f"{segment}.{i}.w"
        name_b = f"{segment}.{i}.b"
        weights[name_w] = T.Tensor(w, requires_grad=True, name=name_w)
        weights[name_b] = T.Tensor(np.zeros((1, fan_out)), requires_grad=True, name=name_b)
    return weights


def dense_chain(
    X: T.Tensor, layers: list[tuple[T.Tensor, T.Tensor]], relu_last: bool
) -> T.Tensor:
    """Sequential dense layers; bias rows broadcast via a ones column."""
    h = X
    for i, (w, b) in enumerate(layers):
        ones = T.Tensor(np.ones((h.shape[0], 1)))
        h = T.add(T.matmul(h, w), T.matmul(ones, b))
        if relu_last or i < len(layers) - 1:
            h = T.relu(h)
    return h


class DeepGPModel:
    """Extractor + mean head (+ optional kernel head and GP hyperparameters).

    Rewards are standardized with the stored normalization constants
    before any GP math and de-standardized on output. Prediction is pure
    and never mutates weights.
    """

    def __init__(
        self,
        arch: Architecture,
        weights: dict[str, T.Tensor],
        kp: gp.KernelParams,
        reward_mean: float = 0.0,
        reward_std: float = 1.0,
        has_kernel: bool = True,
    ):
        self.arch = arch
        self.weights = weights
        self.kp = kp
        self.reward_mean = reward_mean
        self.reward_std = reward_std
        self.has_kernel = has_kernel
        self._check_dims()

    @classmethod
    def init(cls, arch: Architecture, seed: int, has_kernel: bool = True) -> "DeepGPModel":
        rng = np.random.default_rng(seed)
        weights = init_segment_weights(arch, "extractor", rng)
        weights.update(init_segment_weights(arch, "mean", rng))
        if has_kernel:
            weights.update(init_segment_weights(arch, "kernel", rng))
        return cls(arch, weights, gp.KernelParams(), has_kernel=has_kernel)

    def _check_dims(self) -> None:
        for segment in ("extractor", "mean") + (("kernel",) if self.has_kernel else ()):
            for i, (fan_in, fan_out) in enumerate(_segment_layers(self.arch, segment)):
                w = self.weights[f"{segment}.{i}.w"]
                if w.shape != (fan_in, fan_out):
                    raise T.ShapeError(
                        f"{segment}.{i}.w has shape {w.shape}, expected {(fan_in, fan_out)}"
                    )

    def segment_params(self, segment: str) -> list[T.Tensor]:
        n_layers = len(_segment_layers(self.arch, segment))
        return [
            self.weights[f"{segment}.{i}.{kind}"]
            for i in range(n_layers)
            for kind in ("w", "b")
        ]

    def _layers(self, segment: str) -> list[tuple[T.Tensor, T.Tensor]]:
        n_layers = len(_segment_layers(self.arch, segment))
        return [
            (self.weights[f"{segment}.{i}.w"], self.weights[f"{segment}.{i}.b"])
            for i in range(n_layers)
        ]

    # tape-able forwards (run them under an active Tape to record grads)
    def extractor_t(self, X: T.Tensor) -> T.Tensor:
        return dense_chain(X, self._layers("extractor"), relu_last=True)

    def mean_t(self, F: T.Tensor) -> T.Tensor:
        return dense_chain(F, self._layers("mean"), relu_last=False)

    def kernel_t(self, F: T.Tensor) -> T.Tensor:
        if not self.has_kernel:
            raise RuntimeError("model has no kernel head")
        raw = dense_chain(F, self._layers("kernel"), relu_last=False)
        # soft unit-normalization: bounded embedding distances keep the
        # RBF alive on out-of-distribution inputs instead of saturating
        # to zero; the 1e-4 smoothing keeps the gradient finite when a
        # raw embedding happens to sit near the origin
        sq = T.reshape(T.reduce("sum", T.square(raw), axis=1), (raw.shape[0], 1))
        inv_norm = T.div(T.Tensor(1.0), T.exp(T.mul(T.log(T.add(sq, T.Tensor(1e-4))), T.Tensor(0.5))))
        return T.mul(raw, T.matmul(inv_norm, T.Tensor(np.ones((1, self.arch.embed_dim)))))

    # numpy conveniences over the same forward code
    def extract_batch(self, X: np.ndarray) -> np.ndarray:
        return self.extractor_t(T.Tensor(X)).data

    def mean_batch(self, X: np.ndarray) -> np.ndarray:
        """Standardized mean predictions for a feature matrix."""
        return self.mean_t(T.Tensor(self.extract_batch(X))).data[:, 0]

    def embed_batch(self, X: np.ndarray) -> np.ndarray:
        return self.kernel_t(T.Tensor(self.extract_batch(X))).data

    def feature_vector(self, obs: Observation, act: ScoopAction) -> np.ndarray:
        return feature_vector(self.arch, obs, act)

    def extract_features(self, obs: Observation, act: ScoopAction) -> np.ndarray:
        """Shared feature embedding of one observation-action pair."""
        return self.extract_batch(self.feature_vector(obs, act)[None, :])[0]

    def predict_mean(self, obs: Observation, act: ScoopAction) -> float:
        """Mean-head reward prediction, de-standardized."""
        x = self.feature_vector(obs, act)[None, :]
        return float(self.mean_batch(x)[0] * self.reward_std + self.reward_mean)

    def predict(self, obs: Observation, act: ScoopAction, support=()) -> gp.GPPosterior:
        """Mean prediction plus GP residual correction from the support set."""
        means, variances = self.predict_batch([(obs, act)], support)
        return gp.GPPosterior(mean=float(means[0]), variance=float(variances[0]))

    def predict_batch(self, candidates, support=()) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized predict over [(obs, act)] candidates; reward units."""
        Xq = np.stack([self.feature_vector(o, a) for o, a in candidates])
        Fq = self.extract_batch(Xq)
        mq = self.mean_t(T.Tensor(Fq)).data[:, 0]
        if not self.has_kernel:
            means = mq * self.reward_std + self.reward_mean
            return means, np.zeros_like(means)
        support = list(support)
        if not support:
            prior = self.kp.outputscale + self.kp.noise**2
            means = mq * self.reward_std + self.reward_mean
            return means, np.full_like(means, prior * self.reward_std**2)
        Xs = np.stack([self.feature_vector(o, a) for o, a, _ in support])
        rewards = np.array([r for _, _, r in support], dtype=np.float64)
        Fs = self.extract_batch(Xs)
        ms = self.mean_t(T.Tensor(Fs)).data[:, 0]
        resid = (rewards - self.reward_mean) / self.reward_std - ms
        Zs = self.kernel_t(T.Tensor(Fs)).data
        Zq = self.kernel_t(T.Tensor(Fq)).data
        g_mean, g_var = gp.posterior_batch(Zs, resid, Zq, self.kp)
        means = (mq + g_mean) * self.reward_std + self.reward_mean
        variances = g_var * self.reward_std**2
        return means, variances

    def copy_weight_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.weights.items()}
