"""MACE agents: data-fitting proximal maps and prior/denoiser agents.

Every agent is a callable ``Volume -> Volume``. Pose agents wrap the
conjugate proximal map ``T^-1 F(T v; y)`` so that the proximal solver only
ever sees the scanner's own coordinate frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import fft, ndimage

from .errors import ConfigError, DimensionError, SolverError
from .geometry import PoseTransform, Volume, apply_inverse, apply_transform
from .projector import ScanGeometry, Sinogram, system_matrix

_DIVERGENCE_RUN = 10


@dataclass(frozen=True)
class ProxParams:
    """Proximal strength ``sigma`` and CG stopping rule."""

    sigma: float = 1.0
    cg_tol: float = 1e-6
    cg_max_iters: int = 200

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if not 0 < self.cg_tol < 1:
            raise ConfigError(f"cg_tol must lie in (0, 1), got {self.cg_tol}")
        if self.cg_max_iters < 1:
            raise ConfigError(f"cg_max_iters must be >= 1, got {self.cg_max_iters}")


@dataclass
class CGInfo:
    iterations: int = 0
    residuals: list[float] = field(default_factory=list)
    converged: bool = False


def conjugate_gradient(apply_a: Callable[[np.ndarray], np.ndarray], b: np.ndarray,
                       x0: np.ndarray, tol: float, max_iters: int) -> tuple[np.ndarray, CGInfo]:
    """Solve ``A x = b`` for symmetric positive (semi)definite ``A``.

    Stops when ``||r|| <= tol * ||b||`` or after ``max_iters`` iterations.
    Raises :class:`SolverError` when the residual grows for 10 consecutive
    iterations.
    """
    info = CGInfo()
    x = np.array(x0, dtype=np.float64, copy=True)
    bnorm = np.sqrt(np.vdot(b, b).real)
    if bnorm == 0.0:
        info.converged = True
        return np.zeros_like(x), info
    r = b - apply_a(x)
    rr = np.vdot(r, r).real
    info.residuals.append(np.sqrt(rr) / bnorm)
    if info.residuals[-1] <= tol:
        info.converged = True
        return x, info
    p = r.copy()
    growth = 0
    for it in range(1, max_iters + 1):
        ap = apply_a(p)
        pap = np.vdot(p, ap).real
        if pap <= 0:
            # search direction in the null space: nothing further to gain
            break
        step = rr / pap
        x += step * p
        r -= step * ap
        rr_new = np.vdot(r, r).real
        res = np.sqrt(rr_new) / bnorm
        growth = growth + 1 if res > info.residuals[-1] else 0
        info.residuals.append(res)
        info.iterations = it
        if not np.isfinite(res) or growth >= _DIVERGENCE_RUN:
            raise SolverError(
                f"conjugate gradient diverged at iteration {it} (relative residual {res:.3e})",
                diagnostics={"residuals": list(info.residuals), "iteration": it},
            )
        if res <= tol:
            info.converged = True
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, info


def prox_data(v: Volume, y: Sinogram, g: ScanGeometry, p: ProxParams) -> Volume:
    """Minimiser of ``1/2 ||y - A x||^2_W + 1/(2 sigma^2) ||x - v||^2``.

    ``W`` is ``diag(y.weights)``. Solved with CG on the normal equations,
    warm-started at ``v``.
    """
    if y.geometry != g:
        raise DimensionError("sinogram geometry does not match the scan geometry")
    op = system_matrix(g, v.grid)
    w = y.weights
    inv_s2 = 1.0 / p.sigma**2

    def normal(x):
        return op.adjoint(w * op.forward(x)) + inv_s2 * x

    b = op.adjoint(w * y.values) + inv_s2 * v.values
    x, _ = conjugate_gradient(normal, b, v.values, p.cg_tol, p.cg_max_iters)
    return v.with_values(x)


def wls_reconstruct(y: Sinogram, grid, iterations: int = 30, tol: float = 1e-8) -> Volume:
    """Weighted least squares ``argmin 1/2 ||y - A x||^2_W`` by CG from zero.

    The iteration count acts as the only regulariser.
    """
    op = system_matrix(y.geometry, grid)
    w = y.weights

    def normal(x):
        return op.adjoint(w * op.forward(x))

    b = op.adjoint(w * y.values)
    x, _ = conjugate_gradient(normal, b, np.zeros(grid.dims), tol, iterations)
    return Volume(x, grid.spacing)


def prox_conjugate(v: Volume, agent: "PoseAgent", p: ProxParams) -> Volume:
    """``T^-1 F(T v; y)`` computed literally as that composition."""
    posed = apply_transform(agent.transform, v)
    fitted = prox_data(posed, agent.sinogram, agent.sinogram.geometry, p)
    return apply_inverse(agent.transform, fitted)


def _neumann_eigenvalues(dims) -> np.ndarray:
    total = np.zeros(dims)
    for axis, n in enumerate(dims):
        lam = 2.0 - 2.0 * np.cos(np.pi * np.arange(n) / n)
        shape = [1, 1, 1]
        shape[axis] = n
        total = total + lam.reshape(shape)
    return total


def prox_prior(v: Volume, lam: float, p: ProxParams) -> Volume:
    """Minimiser of ``lam/2 ||D x||^2 + 1/(2 sigma^2) ||x - v||^2``.

    ``D`` stacks forward differences along each axis inside the grid, so
    ``D^T D`` is the Neumann Laplacian and is diagonalised by the DCT-II.
    """
    if lam < 0:
        raise ConfigError(f"prior weight must be nonnegative, got {lam}")
    if lam == 0:
        return v.with_values(v.values.copy())
    inv_s2 = 1.0 / p.sigma**2
    coeffs = fft.dctn(v.values, type=2, norm="ortho")
    coeffs *= inv_s2 / (inv_s2 + lam * _neumann_eigenvalues(v.dims))
    return v.with_values(fft.idctn(coeffs, type=2, norm="ortho"))


def gaussian_smoother(values: np.ndarray, scale: float) -> np.ndarray:
    """Separable Gaussian of standard deviation ``scale`` voxels (reflecting edges)."""
    return ndimage.gaussian_filter(values, sigma=scale, mode="reflect", truncate=4.0)


def denoise(v: Volume, scale: float, denoiser: Callable | None = None) -> Volume:
    """Apply a plug-and-play denoiser; ``scale == 0`` is the identity."""
    if scale < 0:
        raise ConfigError(f"denoiser scale must be nonnegative, got {scale}")
    if scale == 0:
        return v.with_values(v.values.copy())
    fn = denoiser or gaussian_smoother
    return v.with_values(fn(v.values, scale))


class PoseAgent:
    """Data-fitting agent for one pose: conjugate proximal map."""

    kind = "conjugate-prox"

    def __init__(self, sinogram: Sinogram, transform: PoseTransform, params: ProxParams):
        self.sinogram = sinogram
        self.transform = transform
        self.params = params

    def __call__(self, v: Volume) -> Volume:
        return prox_conjugate(v, self, self.params)

    def __repr__(self):
        return f"PoseAgent(transform={self.transform!r}, sigma={self.params.sigma})"


class QuadraticPriorAgent:
    kind = "quadratic-prior-prox"

    def __init__(self, lam: float, params: ProxParams):
        self.lam = lam
        self.params = params

    def __call__(self, v: Volume) -> Volume:
        return prox_prior(v, self.lam, self.params)

    def __repr__(self):
        return f"QuadraticPriorAgent(lam={self.lam}, sigma={self.params.sigma})"


class DenoiserAgent:
    """Plug-and-play prior agent; swap ``denoiser`` for any ``(values, scale) -> values``."""

    kind = "smoothing-denoiser"

    def __init__(self, scale: float, denoiser: Callable | None = None):
        self.scale = scale
        self.denoiser = denoiser

    def __call__(self, v: Volume) -> Volume:
        return denoise(v, self.scale, self.denoiser)

    def __repr__(self):
        return f"DenoiserAgent(scale={self.scale})"


def identity_agent(v: Volume) -> Volume:
    """Proximal map of the zero function."""
    return v
