"""Pixel-wise pose weights for metal artifact reduction.

Metal and object masks are thresholded from an initial reconstruction,
moved into each pose, and turned into a distortion image
``D_k = A^T A b_metal / (A^T A b_object + eps)``. A per-voxel softmax of
``-alpha * T_k^-1 D_k`` across poses gives weight maps that sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, InvalidWeightsError
from .geometry import PoseTransform, Volume, apply_inverse, apply_transform
from .projector import ScanGeometry, gram_apply

SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MaskPair:
    metal: Volume
    object: Volume
    tau_metal: float
    tau_object: float


@dataclass(frozen=True, eq=False)
class DistortionImage:
    values: Volume
    epsilon: float


@dataclass(frozen=True, eq=False)
class WeightSet:
    """Diagonals of ``M_0 .. M_{K-1}`` stacked as an array ``(K, nx, ny, nz)``."""

    diagonals: np.ndarray
    alpha: float = 0.0
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        d = np.ascontiguousarray(self.diagonals, dtype=np.float64)
        if d.ndim == 3:
            d = d[:, :, :, None]
        if d.ndim != 4 or d.shape[0] < 1:
            raise InvalidWeightsError(f"weight diagonals must be (K, nx, ny, nz), got {d.shape}")
        check_partition(d)
        d.flags.writeable = False
        object.__setattr__(self, "diagonals", d)

    @property
    def n_poses(self) -> int:
        return self.diagonals.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.diagonals.shape[1:]

    def volume(self, k: int) -> Volume:
        return Volume(self.diagonals[k], self.spacing)

    @classmethod
    def uniform(cls, n_poses: int, dims, spacing=(1.0, 1.0, 1.0)) -> "WeightSet":
        """``M_k = I / K``."""
        if n_poses < 1:
            raise ConfigError("need at least one pose")
        return cls(np.full((n_poses, *dims), 1.0 / n_poses), 0.0, spacing)


def check_partition(diagonals: np.ndarray) -> None:
    if not np.all(np.isfinite(diagonals)):
        raise InvalidWeightsError("weights contain non-finite values")
    if np.any(diagonals < 0) or np.any(diagonals > 1 + SUM_TOL):
        raise InvalidWeightsError("weights must lie in [0, 1]")
    err = np.max(np.abs(diagonals.sum(axis=0) - 1.0))
    if err > SUM_TOL:
        raise InvalidWeightsError(f"weights do not sum to one per voxel (max error {err:.3e})")


def normalize_weights(raw, spacing=(1.0, 1.0, 1.0), alpha: float = 0.0) -> WeightSet:
    """Rescale nonnegative per-pose maps so they sum to one at every voxel."""
    raw = np.asarray(raw, dtype=np.float64)
    if np.any(raw < 0):
        raise InvalidWeightsError("raw weights must be nonnegative")
    total = raw.sum(axis=0)
    if np.any(total <= 0):
        raise InvalidWeightsError("raw weights vanish at some voxel")
    return WeightSet(raw / total, alpha, spacing)


def make_masks(x0: Volume, tau_metal: float, tau_object: float) -> MaskPair:
    """Binary masks ``x0 > tau_metal`` and ``x0 > tau_object``."""
    if not tau_object > 0:
        raise ConfigError(f"tau_object must be positive, got {tau_object}")
    if not tau_metal > tau_object:
        raise ConfigError(
            f"tau_metal ({tau_metal}) must exceed tau_object ({tau_object})"
        )
    metal = (x0.values > tau_metal).astype(np.float64)
    obj = (x0.values > tau_object).astype(np.float64)
    return MaskPair(x0.with_values(metal), x0.with_values(obj), tau_metal, tau_object)


def _binarize(v: Volume) -> Volume:
    vals = v.values
    if np.all((vals == 0) | (vals == 1)):
        return v
    return v.with_values((vals >= 0.5).astype(np.float64))


def pose_masks(m: MaskPair, t: PoseTransform) -> MaskPair:
    """Move both masks into pose ``t``; interpolated masks are re-binarised at 0.5."""
    metal = _binarize(apply_transform(t, m.metal))
    obj = _binarize(apply_transform(t, m.object))
    return MaskPair(metal, obj, m.tau_metal, m.tau_object)


def distortion_image(g: ScanGeometry, posed: MaskPair, epsilon: float,
                     relative: bool = False) -> DistortionImage:
    """Per-voxel ratio of metal to object back-projected path lengths.

    With ``relative=True`` the regulariser is ``epsilon`` times the median of
    the positive denominator entries.
    """
    if not epsilon > 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    num = gram_apply(g, posed.metal).values
    den = gram_apply(g, posed.object).values
    eps = epsilon
    if relative:
        positive = den[den > 0]
        if positive.size:
            eps = epsilon * float(np.median(positive))
    d = num / (den + eps)
    return DistortionImage(posed.metal.with_values(d), eps)


def softmax_weights(distortions: Sequence[DistortionImage], transforms: Sequence[PoseTransform],
                    alpha: float) -> WeightSet:
    """``M_k = softmax_k(-alpha * T_k^-1 D_k)`` evaluated voxel by voxel."""
    if len(distortions) == 0:
        raise ConfigError("softmax weights need at least one distortion image")
    if len(distortions) != len(transforms):
        raise ConfigError("one transform per distortion image is required")
    if alpha < 0:
        raise ConfigError(f"alpha must be nonnegative, got {alpha}")
    back = np.stack([apply_inverse(t, d.values).values for d, t in zip(distortions, transforms)])
    logits = -alpha * back
    logits -= logits.max(axis=0, keepdims=True)
    e = np.exp(logits)
    return WeightSet(e / e.sum(axis=0, keepdims=True), alpha, distortions[0].values.spacing)


def postprocess_fuse(recons: Sequence[Volume], transforms: Sequence[PoseTransform],
                     weights: WeightSet) -> Volume:
    """``sum_k M_k T_k^-1 x_k`` for reconstructions ``x_k`` in their own poses."""
    if not (len(recons) == len(transforms) == weights.n_poses):
        raise DimensionError("recons, transforms and weights must cover the same poses")
    common = [apply_inverse(t, x).values for x, t in zip(recons, transforms)]
    for c in common:
        if c.shape != weights.dims:
            raise DimensionError(f"reconstruction grid {c.shape} does not match weights {weights.dims}")
    # anchored on pose 0 so equal inputs fuse to themselves exactly
    out = common[0].copy()
    for k in range(1, len(common)):
        out += weights.diagonals[k] * (common[k] - common[0])
    return Volume(out, recons[0].spacing)


def pixel_weights(x0: Volume, geometries: Sequence[ScanGeometry],
                  transforms: Sequence[PoseTransform], tau_metal: float, tau_object: float,
                  alpha: float, epsilon: float, relative_epsilon: bool = False) -> WeightSet:
    """Masks, per-pose distortion images and softmax weights from ``x0``."""
    masks = make_masks(x0, tau_metal, tau_object)
    distortions = [
        distortion_image(g, pose_masks(masks, t), epsilon, relative_epsilon)
        for g, t in zip(geometries, transforms)
    ]
    return softmax_weights(distortions, transforms, alpha)


def pixel_weighted_postprocess(recons: Sequence[Volume], transforms: Sequence[PoseTransform],
                               geometries: Sequence[ScanGeometry], x0: Volume,
                               tau_metal: float, tau_object: float, alpha: float,
                               epsilon: float, relative_epsilon: bool = False) -> Volume:
    """Pixel-weighted fusion of per-pose reconstructions.

    ``x0`` (common frame) locates the metal; ``recons[k]`` lives in pose ``k``.
    """
    w = pixel_weights(x0, geometries, transforms, tau_metal, tau_object, alpha,
                      epsilon, relative_epsilon)
    return postprocess_fuse(recons, transforms, w)
