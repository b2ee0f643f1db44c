"""Raster volumes and rigid pose transforms.

Voxel ``(i, j, k)`` of a volume with dims ``(nx, ny, nz)`` and spacing
``(sx, sy, sz)`` sits at the physical position::

    ((i - (nx - 1) / 2) * sx, (j - (ny - 1) / 2) * sy, (k - (nz - 1) / 2) * sz)

so every grid is centred on the origin and rotations act about the grid
centre. A 2-D image is the ``nz == 1`` case of the same code path.

A :class:`PoseTransform` maps an object from the common reconstruction frame
to a posed frame: ``(T x)(p) = x(R^T (p - t))``. Samples that fall outside
the grid read as 0.0 (air).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .errors import DimensionError, InvalidTransformError, NonFiniteError, UndefinedRatioError

TRILINEAR = "trilinear"
EXACT_LATTICE = "exact-lattice"
INTERPOLATIONS = (TRILINEAR, EXACT_LATTICE)

_LATTICE_TOL = 1e-9
_AXES = {"x": 0, "y": 1, "z": 2}


def _as_triple(values, name) -> tuple[float, float, float]:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size != 3:
        raise DimensionError(f"{name} must have 3 entries, got {arr.size}")
    return tuple(float(a) for a in arr)


@dataclass(frozen=True, eq=False)
class Volume:
    """Dense attenuation map (mm^-1) on a regular grid.

    ``values`` has shape ``(nx, ny, nz)`` in C order; ``spacing`` is the voxel
    pitch in mm along each axis.
    """

    values: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 2:
            values = values[:, :, None]
        if values.ndim != 3:
            raise DimensionError(f"volume values must be 3-D, got shape {values.shape}")
        spacing = _as_triple(self.spacing, "spacing")
        if min(spacing) <= 0:
            raise DimensionError(f"spacing must be strictly positive, got {spacing}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteError("volume contains non-finite values")
        values = np.ascontiguousarray(values)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def voxel_volume(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def with_values(self, values) -> "Volume":
        """Same grid, new values."""
        return Volume(values, self.spacing)

    def same_grid(self, other: "Volume") -> bool:
        return self.dims == other.dims and self.spacing == other.spacing

    @property
    def grid(self) -> "Grid":
        return Grid(self.dims, self.spacing)

    @classmethod
    def zeros(cls, dims, spacing=(1.0, 1.0, 1.0)) -> "Volume":
        return cls(np.zeros(tuple(int(d) for d in dims)), spacing)


@dataclass(frozen=True)
class Grid:
    """Voxel lattice without values: integer dims and spacing in mm."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise DimensionError(f"grid dims must be 3 positive integers, got {self.dims}")
        spacing = _as_triple(self.spacing, "spacing")
        if min(spacing) <= 0:
            raise DimensionError(f"spacing must be strictly positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    def zeros(self) -> Volume:
        return Volume(np.zeros(self.dims), self.spacing)


def grid_coordinates(dims, spacing) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Physical voxel-centre coordinates along each axis, in mm."""
    return tuple((np.arange(n) - (n - 1) / 2.0) * s for n, s in zip(dims, spacing))


def lattice_rotation(matrix) -> np.ndarray | None:
    """Return ``matrix`` as an integer signed permutation, or None if it is not one."""
    m = np.asarray(matrix, dtype=float)
    r = np.rint(m)
    if np.max(np.abs(m - r)) > _LATTICE_TOL:
        return None
    r = r.astype(np.int64)
    if not (np.all(np.abs(r).sum(axis=0) == 1) and np.all(np.abs(r).sum(axis=1) == 1)):
        return None
    return r


def lattice_rotations() -> list[np.ndarray]:
    """All 24 proper rotations that map the cubic lattice onto itself."""
    from itertools import permutations, product

    out = []
    for perm in permutations(range(3)):
        for signs in product((1, -1), repeat=3):
            m = np.zeros((3, 3), dtype=np.int64)
            for row, (col, s) in enumerate(zip(perm, signs)):
                m[row, col] = s
            if round(np.linalg.det(m)) == 1:
                out.append(m)
    return out


@dataclass(frozen=True)
class PoseTransform:
    """Rigid map from the common frame to a posed frame.

    ``rotation`` is an axis-angle vector (unit axis times angle in radians),
    ``translation`` is in mm. ``exact-lattice`` interpolation is only valid for
    90-degree multiples and integer-voxel shifts and then permutes voxels
    without any arithmetic.
    """

    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    interpolation: str = TRILINEAR
    _matrix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_triple(self.rotation, "rotation"))
        object.__setattr__(self, "translation", _as_triple(self.translation, "translation"))
        if self.interpolation not in INTERPOLATIONS:
            raise InvalidTransformError(
                f"interpolation must be one of {INTERPOLATIONS}, got {self.interpolation!r}"
            )
        matrix = Rotation.from_rotvec(self.rotation).as_matrix()
        lattice = lattice_rotation(matrix)
        if lattice is not None:
            # snap so that compositions stay exact
            matrix = lattice.astype(float)
        elif self.interpolation == EXACT_LATTICE:
            raise InvalidTransformError(
                f"rotation {self.rotation} is not a multiple of 90 degrees about the grid axes"
            )
        matrix.flags.writeable = False
        object.__setattr__(self, "_matrix", matrix)

    @classmethod
    def identity(cls, interpolation: str = EXACT_LATTICE) -> "PoseTransform":
        return cls(interpolation=interpolation)

    @classmethod
    def from_matrix(cls, matrix, translation=(0.0, 0.0, 0.0), interpolation=TRILINEAR):
        matrix = np.asarray(matrix, dtype=float)
        if abs(np.linalg.det(matrix) - 1.0) > 1e-12 or not np.allclose(
            matrix @ matrix.T, np.eye(3), atol=1e-12
        ):
            raise InvalidTransformError("matrix is not a proper rotation")
        rotvec = Rotation.from_matrix(matrix).as_rotvec()
        return cls(tuple(rotvec), translation, interpolation)

    @classmethod
    def about_axis(cls, axis: str, angle: float, translation=(0.0, 0.0, 0.0),
                   interpolation=TRILINEAR) -> "PoseTransform":
        """Rotation by ``angle`` radians about grid axis ``"x"``, ``"y"`` or ``"z"``."""
        vec = np.zeros(3)
        vec[_AXES[axis]] = angle
        return cls(tuple(vec), translation, interpolation)

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def is_lattice_rotation(self) -> bool:
        return lattice_rotation(self._matrix) is not None

    def inverse(self) -> "PoseTransform":
        rt = self._matrix.T
        return PoseTransform.from_matrix(rt, tuple(-rt @ np.asarray(self.translation)),
                                         self.interpolation)

    def compose(self, inner: "PoseTransform") -> "PoseTransform":
        """Transform equivalent to applying ``inner`` first, then ``self``."""
        matrix = self._matrix @ inner.matrix
        translation = self._matrix @ np.asarray(inner.translation) + np.asarray(self.translation)
        mode = EXACT_LATTICE if (self.interpolation == inner.interpolation == EXACT_LATTICE) else TRILINEAR
        return PoseTransform.from_matrix(matrix, tuple(translation), mode)


def _lattice_shift(t: PoseTransform, spacing) -> np.ndarray | None:
    shift = np.asarray(t.translation) / np.asarray(spacing)
    k = np.rint(shift)
    if np.max(np.abs(shift - k)) > _LATTICE_TOL:
        return None
    return k.astype(np.int64)


def _lattice_plan(t: PoseTransform, v: Volume):
    """(axes, flips, shift) for a voxel permutation, or None if not lattice-aligned."""
    r = lattice_rotation(t.matrix)
    if r is None:
        return None
    axes = [int(np.flatnonzero(r[b])[0]) for b in range(3)]
    for b, a in enumerate(axes):
        if v.dims[a] != v.dims[b] or v.spacing[a] != v.spacing[b]:
            return None
    shift = _lattice_shift(t, v.spacing)
    if shift is None:
        return None
    flips = tuple(b for b in range(3) if r[b, axes[b]] < 0)
    return axes, flips, shift


def _shift_zero_fill(arr: np.ndarray, shift) -> np.ndarray:
    out = np.zeros_like(arr)
    src, dst = [], []
    for n, k in zip(arr.shape, shift):
        k = int(k)
        if abs(k) >= n:
            return out
        src.append(slice(max(0, -k), n - max(0, k)))
        dst.append(slice(max(0, k), n - max(0, -k)))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _apply_lattice(plan, values: np.ndarray) -> np.ndarray:
    axes, flips, shift = plan
    out = np.transpose(values, axes)
    if flips:
        out = np.flip(out, axis=flips)
    if np.any(shift):
        out = _shift_zero_fill(out, shift)
    return np.ascontiguousarray(out)


def _apply_trilinear(t: PoseTransform, v: Volume) -> np.ndarray:
    s = np.asarray(v.spacing)
    c = (np.asarray(v.dims) - 1) / 2.0
    rt = t.matrix.T
    # input index = M @ output index + offset
    m = rt * s[None, :] / s[:, None]
    offset = c - m @ c - (rt @ np.asarray(t.translation)) / s
    return ndimage.affine_transform(v.values, m, offset=offset, order=1,
                                    mode="grid-constant", cval=0.0)


def apply_transform(t: PoseTransform, v: Volume) -> Volume:
    """Resample ``v`` into the posed frame of ``t`` on the same grid.

    Lattice-aligned parameters are always applied as a voxel permutation,
    which is what trilinear interpolation evaluates to at lattice points.
    """
    plan = _lattice_plan(t, v)
    if plan is not None:
        return v.with_values(_apply_lattice(plan, v.values))
    if t.interpolation == EXACT_LATTICE:
        raise InvalidTransformError(
            f"transform {t} is not lattice-aligned on a grid with dims {v.dims} "
            f"and spacing {v.spacing}"
        )
    return v.with_values(_apply_trilinear(t, v))


def apply_inverse(t: PoseTransform, v: Volume) -> Volume:
    """Resample ``v`` from the posed frame back to the common frame."""
    return apply_transform(t.inverse(), v)


def _sorted_norm(values: np.ndarray) -> float:
    # summing in sorted order makes the result independent of voxel order
    a = np.sort(np.abs(values.ravel()))
    return float(np.sqrt(np.sum(a * a)))


def transform_norm_ratio(t: PoseTransform, v: Volume) -> float:
    """``||T v|| / ||v||``; exactly 1.0 for lattice permutations."""
    n = _sorted_norm(v.values)
    if n == 0.0:
        raise UndefinedRatioError("norm ratio is undefined for a zero volume")
    return _sorted_norm(apply_transform(t, v).values) / n

