"""Parallel-beam ray-driven projector and its exact adjoint.

Rays rotate about the volume z axis. Detector row ``r`` images slice
``k = r`` of the volume, so the 3-D operator is one 2-D system matrix
applied to every slice, and the row pitch equals the volume z spacing.

For view angle ``theta`` the detector axis is ``e = (cos theta, sin theta)``
and rays travel along ``d = (-sin theta, cos theta)``; detector column ``c``
sits at offset ``u_c = (c - (n_cols - 1) / 2) * det_pitch`` along ``e``.
Each matrix entry is the exact intersection length (mm) of a ray with a
voxel, found by Siddon-style plane crossings. Backprojection multiplies by
the transpose of the same matrix, so adjointness holds by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, InvalidWeightsError, NonFiniteError
from .geometry import Grid, Volume

WEIGHT_FLOOR = 1e-4
WEIGHT_CEIL = 1.0


@dataclass(frozen=True)
class ScanGeometry:
    """Parallel-beam scan: view angles (radians) and a flat detector."""

    angles: tuple[float, ...]
    n_det_rows: int
    n_det_cols: int
    det_pitch: float
    beam: str = "parallel"

    def __post_init__(self):
        angles = tuple(float(a) for a in np.atleast_1d(np.asarray(self.angles, dtype=float)))
        if len(angles) == 0:
            raise DimensionError("scan geometry needs at least one view")
        a = np.asarray(angles)
        if np.any(a < 0) or np.any(a >= 2 * np.pi):
            raise DimensionError("view angles must lie in [0, 2*pi)")
        if np.any(np.diff(a) <= 0):
            raise DimensionError("view angles must be strictly increasing")
        if self.beam != "parallel":
            raise DimensionError(f"only parallel beam is supported, got {self.beam!r}")
        if self.n_det_rows < 1 or self.n_det_cols < 1 or not self.det_pitch > 0:
            raise DimensionError("detector counts and pitch must be positive")
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "n_det_rows", int(self.n_det_rows))
        object.__setattr__(self, "n_det_cols", int(self.n_det_cols))
        object.__setattr__(self, "det_pitch", float(self.det_pitch))

    @property
    def n_views(self) -> int:
        return len(self.angles)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_views, self.n_det_rows, self.n_det_cols)

    @classmethod
    def uniform(cls, n_views, n_det_rows, n_det_cols, det_pitch, arc=np.pi, start=0.0):
        """``n_views`` equally spaced angles over ``arc`` radians, endpoint excluded."""
        angles = start + np.arange(n_views) * (arc / n_views)
        return cls(tuple(angles), n_det_rows, n_det_cols, det_pitch)


@dataclass(frozen=True, eq=False)
class Sinogram:
    """Line integrals ``values`` and diagonal noise weights ``weights``,
    both shaped ``(n_views, n_det_rows, n_det_cols)``."""

    geometry: ScanGeometry
    values: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        weights = np.ones_like(values) if self.weights is None else \
            np.ascontiguousarray(self.weights, dtype=np.float64)
        if values.shape != self.geometry.shape or weights.shape != self.geometry.shape:
            raise DimensionError(
                f"sinogram shape {values.shape} / weights {weights.shape} do not match "
                f"geometry {self.geometry.shape}"
            )
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(weights))):
            raise NonFiniteError("sinogram contains non-finite entries")
        if np.any(weights < 0):
            raise InvalidWeightsError("sinogram weights must be nonnegative")
        values.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    def with_weights(self, weights) -> "Sinogram":
        return Sinogram(self.geometry, self.values, weights)


def transmission_weights(values) -> np.ndarray:
    """Default noise weights ``exp(-y)`` clamped to ``[1e-4, 1]``."""
    return np.clip(np.exp(-np.asarray(values, dtype=float)), WEIGHT_FLOOR, WEIGHT_CEIL)


def _siddon_matrix(nx, ny, sx, sy, angles, n_cols, pitch) -> sp.csr_matrix:
    xs = (np.arange(nx + 1) - nx / 2.0) * sx
    ys = (np.arange(ny + 1) - ny / 2.0) * sy
    u = (np.arange(n_cols) - (n_cols - 1) / 2.0) * pitch
    rows, cols, vals = [], [], []

    def crossings(planes, origin, step):
        # plane-crossing parameters plus the slab [lo, hi] the ray spends inside
        if abs(step) > 1e-15:
            t = (planes[None, :] - origin[:, None]) / step
            return t, t.min(axis=1), t.max(axis=1)
        inside = (origin > planes[0]) & (origin < planes[-1])
        lo = np.where(inside, -np.inf, np.inf)
        hi = np.where(inside, np.inf, -np.inf)
        return None, lo, hi

    for view, theta in enumerate(angles):
        c, s = np.cos(theta), np.sin(theta)
        dx, dy = -s, c
        ox, oy = u * c, u * s
        tx, xlo, xhi = crossings(xs, ox, dx)
        ty, ylo, yhi = crossings(ys, oy, dy)
        t0 = np.maximum(xlo, ylo)
        t1 = np.minimum(xhi, yhi)
        hit = t1 > t0
        if not np.any(hit):
            continue
        t0, t1 = t0[hit], t1[hit]
        parts = [t0[:, None], t1[:, None]]
        if tx is not None:
            parts.append(tx[hit])
        if ty is not None:
            parts.append(ty[hit])
        t = np.clip(np.concatenate(parts, axis=1), t0[:, None], t1[:, None])
        t.sort(axis=1)
        length = np.diff(t, axis=1)
        mid = 0.5 * (t[:, 1:] + t[:, :-1])
        keep = length > 1e-12 * min(sx, sy)
        ray = np.broadcast_to(np.flatnonzero(hit)[:, None], length.shape)[keep]
        mid = mid[keep]
        i = np.floor((ox[ray] + mid * dx - xs[0]) / sx).astype(np.int64)
        j = np.floor((oy[ray] + mid * dy - ys[0]) / sy).astype(np.int64)
        i = np.clip(i, 0, nx - 1)
        j = np.clip(j, 0, ny - 1)
        rows.append(view * n_cols + ray)
        cols.append(i * ny + j)
        vals.append(length[keep])

    n_rays = len(angles) * n_cols
    if not rows:
        return sp.csr_matrix((n_rays, nx * ny))
    a = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_rays, nx * ny),
    ).tocsr()
    a.sum_duplicates()
    return a


class SystemMatrix:
    """Cached 2-D system matrix and its transpose for one geometry/grid pair."""

    def __init__(self, geometry: ScanGeometry, grid: Grid):
        nx, ny, nz = grid.dims
        sx, sy, _ = grid.spacing
        if geometry.n_det_rows != nz:
            raise DimensionError(
                f"detector rows ({geometry.n_det_rows}) must equal volume nz ({nz})"
            )
        a = np.asarray(geometry.angles)
        half_footprint = np.abs(np.cos(a)) * nx * sx / 2 + np.abs(np.sin(a)) * ny * sy / 2
        half_detector = geometry.n_det_cols * geometry.det_pitch / 2
        if np.max(half_footprint) > half_detector * (1 + 1e-9):
            raise DimensionError(
                f"detector width {2 * half_detector:.4g} mm does not span the volume "
                f"footprint {2 * np.max(half_footprint):.4g} mm"
            )
        self.geometry = geometry
        self.grid = grid
        self.matrix = _siddon_matrix(nx, ny, sx, sy, geometry.angles,
                                     geometry.n_det_cols, geometry.det_pitch)
        self.matrix_t = self.matrix.T.tocsr()

    def forward(self, values: np.ndarray) -> np.ndarray:
        nx, ny, nz = self.grid.dims
        g = self.geometry
        out = self.matrix @ values.reshape(nx * ny, nz)
        return np.ascontiguousarray(out.reshape(g.n_views, g.n_det_cols, nz).transpose(0, 2, 1))

    def adjoint(self, values: np.ndarray) -> np.ndarray:
        nx, ny, nz = self.grid.dims
        g = self.geometry
        flat = np.ascontiguousarray(values.transpose(0, 2, 1)).reshape(g.n_views * g.n_det_cols, nz)
        return (self.matrix_t @ flat).reshape(nx, ny, nz)

    def dense(self) -> np.ndarray:
        """Full 3-D matrix, rows in sinogram order and columns in volume order.

        Only for small test problems.
        """
        nx, ny, nz = self.grid.dims
        n = nx * ny * nz
        eye = np.eye(n).reshape(n, nx, ny, nz)
        return np.stack([self.forward(e).ravel() for e in eye], axis=1)


@lru_cache(maxsize=16)
def system_matrix(geometry: ScanGeometry, grid: Grid) -> SystemMatrix:
    """Build (or fetch from cache) the operator for ``geometry`` on ``grid``."""
    return SystemMatrix(geometry, grid)


def project(g: ScanGeometry, v: Volume) -> Sinogram:
    """Forward projection ``A v`` with unit weights."""
    op = system_matrix(g, v.grid)
    return Sinogram(g, op.forward(v.values))


def backproject(g: ScanGeometry, s: Sinogram | np.ndarray, grid: Grid) -> Volume:
    """Adjoint ``A^T s`` on ``grid``. Weights of ``s`` are not applied."""
    values = s.values if isinstance(s, Sinogram) else np.asarray(s, dtype=float)
    if values.shape != g.shape:
        raise DimensionError(f"sinogram shape {values.shape} does not match geometry {g.shape}")
    op = system_matrix(g, grid)
    return Volume(op.adjoint(values), grid.spacing)


def gram_apply(g: ScanGeometry, v: Volume, weights=None) -> Volume:
    """``A^T diag(weights) A v``; unit weights when ``weights`` is None."""
    op = system_matrix(g, v.grid)
    y = op.forward(v.values)
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != g.shape:
            raise DimensionError(f"weights shape {weights.shape} does not match {g.shape}")
        if np.any(weights < 0):
            raise InvalidWeightsError("gram weights must be nonnegative")
        y = y * weights
    return Volume(op.adjoint(y), v.spacing)
