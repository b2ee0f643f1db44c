"""Pixel-weighted multi-agent consensus equilibrium.

The state stacks ``K + 1`` candidate reconstructions: ``K`` data agents and
one prior agent last. ``G_M`` replaces every component by the weighted
average ``1/(1+beta) sum_k M_k x_k + beta/(1+beta) x_K``, and the
equilibrium ``F(w) = G_M(w)`` is found by Mann iteration on
``(2 G_M - I)(2 F - I)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, DivergenceError, InvalidWeightsError, NonFiniteError
from .geometry import Volume
from .weights import SUM_TOL, WeightSet

Agent = Callable[[Volume], Volume]


@dataclass(frozen=True, eq=False)
class MaceState:
    """``components`` has shape ``(K + 1, nx, ny, nz)``; the prior component is last."""

    components: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        c = np.asarray(self.components, dtype=np.float64)
        if c.ndim != 4 or c.shape[0] < 2:
            raise DimensionError(f"MACE state must be (K+1, nx, ny, nz) with K >= 1, got {c.shape}")
        object.__setattr__(self, "components", c)

    @classmethod
    def replicate(cls, x: Volume, n: int) -> "MaceState":
        return cls(np.repeat(x.values[None], n, axis=0), x.spacing)

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    def component(self, i: int) -> Volume:
        return Volume(self.components[i], self.spacing)


@dataclass(frozen=True)
class ConsensusConfig:
    beta: float = 1.0
    rho: float = 0.5
    max_iters: int = 50
    stop_tol: float = 1e-4
    weight_set: WeightSet | None = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if not 0 < self.rho < 1:
            raise ConfigError(f"rho must lie in (0, 1), got {self.rho}")
        if not self.stop_tol > 0:
            raise ConfigError(f"stop_tol must be positive, got {self.stop_tol}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass
class MaceDiagnostics:
    """Per-iteration Mann residuals and agent change norms ``||F_i(w_i) - w_i||``."""

    residuals: list[float] = field(default_factory=list)
    agent_changes: list[list[float]] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    equilibrium_residual: float = float("nan")

    def table(self) -> str:
        n = len(self.agent_changes[0]) if self.agent_changes else 0
        head = ["iter", "mann_residual"] + [f"agent_{i}" for i in range(n)]
        lines = ["\t".join(head)]
        for it, (res, ch) in enumerate(zip(self.residuals, self.agent_changes), start=1):
            lines.append("\t".join([str(it), f"{res:.6e}"] + [f"{c:.6e}" for c in ch]))
        lines.append(f"# equilibrium_residual\t{self.equilibrium_residual:.6e}")
        return "\n".join(lines) + "\n"


def apply_F(state: MaceState, agents: Sequence[Agent]) -> MaceState:
    """Apply agent ``i`` to component ``i``."""
    if len(agents) != state.n_components:
        raise ConfigError(
            f"{len(agents)} agents supplied for a state with {state.n_components} components"
        )
    out = np.empty_like(state.components)
    for i, agent in enumerate(agents):
        out[i] = agent(state.component(i)).values
    return MaceState(out, state.spacing)


def _diagonals(weights: WeightSet | None, state: MaceState) -> np.ndarray:
    k = state.n_components - 1
    dims = state.components.shape[1:]
    if weights is None:
        return np.full((k, 1, 1, 1), 1.0 / k)
    d = weights.diagonals
    if d.shape[0] != k or d.shape[1:] != dims:
        raise DimensionError(
            f"weight set {d.shape} does not match {k} data components of shape {dims}"
        )
    if np.max(np.abs(d.sum(axis=0) - 1.0)) > SUM_TOL or np.any(d < 0):
        raise InvalidWeightsError("weights must be nonnegative and sum to one per voxel")
    return d


def _average(components: np.ndarray, diag: np.ndarray, beta: float) -> np.ndarray:
    # x_K + 1/(1+beta) sum_k M_k (x_k - x_K) equals the weighted average
    # whenever sum_k M_k = I, and reproduces a consensus state exactly
    prior = components[-1]
    acc = np.zeros_like(prior)
    for k in range(components.shape[0] - 1):
        acc += diag[k] * (components[k] - prior)
    return prior + acc / (1.0 + beta)


def weighted_average(state: MaceState, weights: WeightSet | None, beta: float) -> Volume:
    """Pixel-weighted average of the state; ``weights=None`` means ``M_k = I / K``."""
    if not beta > 0:
        raise ConfigError(f"beta must be positive, got {beta}")
    return Volume(_average(state.components, _diagonals(weights, state), beta), state.spacing)


def apply_G(state: MaceState, weights: WeightSet | None, beta: float) -> MaceState:
    xbar = weighted_average(state, weights, beta)
    return MaceState.replicate(xbar, state.n_components)


def solve_mace(x0: Volume, agents: Sequence[Agent], cfg: ConsensusConfig,
               equilibrium_check: bool = True,
               callback: Callable[[int, float], None] | None = None) -> tuple[Volume, MaceDiagnostics]:
    """Mann iteration for the pixel-weighted MACE equilibrium.

    Each pass computes ``x = F(w)``, ``z = G_M(2x - w)`` and
    ``w += 2 rho (z - x)``, stopping once ``||w_new - w|| / ||w|| <= stop_tol``.
    Returns ``xbar_M(x)`` from the last pass. When ``equilibrium_check`` is set,
    ``||F(w) - G_M(w)|| / ||w||`` at the final ``w`` is stored in the diagnostics
    (one extra agent sweep).
    """
    n = len(agents)
    if n < 2:
        raise ConfigError("MACE needs at least one data agent and one prior agent")
    w = MaceState.replicate(x0, n)
    diag = _diagonals(cfg.weight_set, w)
    beta = cfg.beta
    info = MaceDiagnostics()
    x = w
    for it in range(1, cfg.max_iters + 1):
        try:
            x = apply_F(w, agents)
        except NonFiniteError as exc:
            raise DivergenceError(f"agent produced non-finite values at iteration {it}", iteration=it) from exc
        xc = x.components
        wc = w.components
        z = _average(2.0 * xc - wc, diag, beta)
        w_new = wc + 2.0 * cfg.rho * (z[None] - xc)
        if not np.all(np.isfinite(w_new)):
            raise DivergenceError(f"non-finite MACE state at iteration {it}", iteration=it)
        step = float(np.linalg.norm(w_new - wc))
        scale = float(np.linalg.norm(wc))
        res = step / scale if scale > 0 else step
        info.residuals.append(res)
        info.agent_changes.append([float(np.linalg.norm(xc[i] - wc[i])) for i in range(n)])
        info.iterations = it
        w = MaceState(w_new, w.spacing)
        if callback is not None:
            callback(it, res)
        if res <= cfg.stop_tol:
            info.converged = True
            break
    xstar = Volume(_average(x.components, diag, beta), x0.spacing)
    if equilibrium_check:
        fw = apply_F(w, agents).components
        gw = _average(w.components, diag, beta)
        wn = float(np.linalg.norm(w.components))
        gap = float(np.linalg.norm(fw - gw[None]))
        info.equilibrium_residual = gap / wn if wn > 0 else gap
    return xstar, info
