"""Simulation and the six reconstruction methods of the comparison grid.

Methods
-------
``wls-single``
    Weighted least squares from one pose (CG iterations as regulariser).
``pnp-single``
    Plug-and-play from one pose: MACE with one data agent and the denoiser,
    solved in that pose's own frame and mapped back to the common frame.
``avg`` / ``pw-avg``
    Unweighted / pixel-weighted fusion of the single-pose PnP results.
``mpf-baseline`` / ``mpf-pixelweighted``
    Multi-pose MACE with ``M_k = I/K`` / softmax distortion weights.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

from .agents import DenoiserAgent, PoseAgent, wls_reconstruct
from .config import ExperimentConfig
from .errors import ConfigError
from .geometry import Grid, PoseTransform, Volume, apply_inverse
from .io import read_sinogram, write_sinogram, write_volume
from .mace import ConsensusConfig, MaceDiagnostics, solve_mace
from .projector import Sinogram
from .simulate import acquire, build_phantom
from .weights import WeightSet, pixel_weights, postprocess_fuse

METHODS = ("wls-single", "pnp-single", "avg", "pw-avg", "mpf-baseline", "mpf-pixelweighted")
SINGLE_POSE_METHODS = ("wls-single", "pnp-single")


@dataclass(frozen=True)
class Simulation:
    truth: Volume
    labels: Volume
    sinograms: tuple[Sinogram, ...]


@dataclass
class MethodResult:
    """A reconstruction in the common frame plus bookkeeping.

    ``runtime`` and ``iterations`` include any single-pose runs the method
    builds on.
    """

    method: str
    volume: Volume
    runtime: float
    iterations: int
    pose: int | None = None
    diagnostics: MaceDiagnostics | None = None

    @property
    def label(self) -> str:
        return self.method if self.pose is None else f"{self.method}_pose{self.pose}"


def sinogram_name(k: int) -> str:
    return f"pose_{k}.sin"


def recon_name(method: str, pose: int | None = None) -> str:
    return f"recon_{method}.vol" if pose is None else f"recon_{method}_pose{pose}.vol"


def simulate(cfg: ExperimentConfig) -> Simulation:
    """Phantom, labels and one noisy sinogram per pose; pose ``k`` uses seed ``(seed, k)``."""
    truth, labels = build_phantom(cfg.phantom)
    mats = cfg.phantom.materials
    sins = tuple(
        acquire(labels, mats, cfg.phantom.spectrum, p.geometry, p.transform, cfg.dose, (cfg.seed, k))
        for k, p in enumerate(cfg.poses)
    )
    return Simulation(truth, labels, sins)


def write_simulation(sim: Simulation, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [write_volume(out / "truth.vol", sim.truth), write_volume(out / "labels.vol", sim.labels)]
    paths += [write_sinogram(out / sinogram_name(k), s) for k, s in enumerate(sim.sinograms)]
    return paths


def load_sinograms(cfg: ExperimentConfig, out_dir) -> tuple[Sinogram, ...]:
    out = Path(out_dir)
    sins = []
    for k, pose in enumerate(cfg.poses):
        path = out / sinogram_name(k)
        if not path.exists():
            raise ConfigError(f"{path}: sinogram for pose {k} not found (run 'simulate' first)")
        s = read_sinogram(path)
        if s.geometry != pose.geometry:
            raise ConfigError(f"{path}: scan geometry does not match pose {k} of {cfg.source}")
        sins.append(s)
    return tuple(sins)


class Experiment:
    """Runs the comparison methods on one set of sinograms, caching shared stages."""

    def __init__(self, cfg: ExperimentConfig, sinograms):
        if len(sinograms) != cfg.n_poses:
            raise ConfigError(f"{cfg.n_poses} poses configured but {len(sinograms)} sinograms given")
        self.cfg = cfg
        self.sinograms = tuple(sinograms)
        self.grid = Grid(cfg.phantom.dims, cfg.phantom.spacing)
        self._wls: dict[int, tuple[Volume, float]] = {}
        self._pnp: dict[int, tuple[Volume, MaceDiagnostics, float]] = {}
        self._weights: tuple[WeightSet, float] | None = None

    @property
    def transforms(self) -> list[PoseTransform]:
        return [p.transform for p in self.cfg.poses]

    def _check_pose(self, k: int) -> int:
        if not 0 <= k < self.cfg.n_poses:
            raise ConfigError(f"pose {k} out of range for {self.cfg.n_poses} configured poses")
        return k

    def _wls_pose_frame(self, k: int) -> tuple[Volume, float]:
        if k not in self._wls:
            t0 = time.perf_counter()
            x = wls_reconstruct(self.sinograms[k], self.grid, iterations=self.cfg.wls_iters)
            self._wls[k] = (x, time.perf_counter() - t0)
        return self._wls[k]

    def initial(self) -> Volume:
        """Pose-0 WLS image in the common frame; starts MACE and locates the metal."""
        return apply_inverse(self.transforms[0], self._wls_pose_frame(0)[0])

    def wls_single(self, k: int = 0) -> MethodResult:
        self._check_pose(k)
        x, dt = self._wls_pose_frame(k)
        common = apply_inverse(self.transforms[k], x)
        return MethodResult("wls-single", common, dt, self.cfg.wls_iters, pose=k)

    def _consensus(self, n_data: int, weights: WeightSet | None) -> ConsensusConfig:
        c = self.cfg.consensus
        return ConsensusConfig(c.beta_for(n_data), c.rho, c.max_iters, c.stop_tol, weights)

    def _prior(self) -> DenoiserAgent:
        return DenoiserAgent(self.cfg.denoiser_scale)

    def _pnp_pose_frame(self, k: int) -> tuple[Volume, MaceDiagnostics, float]:
        if k not in self._pnp:
            x0, dt_wls = self._wls_pose_frame(k)
            t0 = time.perf_counter()
            agent = PoseAgent(self.sinograms[k], PoseTransform.identity(), self.cfg.prox)
            x, diag = solve_mace(x0, [agent, self._prior()], self._consensus(1, None))
            self._pnp[k] = (x, diag, dt_wls + time.perf_counter() - t0)
        return self._pnp[k]

    def pnp_single(self, k: int = 0) -> MethodResult:
        self._check_pose(k)
        x, diag, dt = self._pnp_pose_frame(k)
        common = apply_inverse(self.transforms[k], x)
        return MethodResult("pnp-single", common, dt, diag.iterations, pose=k, diagnostics=diag)

    def _pnp_pose_frames(self) -> tuple[list[Volume], float, int]:
        runs = [self._pnp_pose_frame(k) for k in range(self.cfg.n_poses)]
        return [r[0] for r in runs], sum(r[2] for r in runs), sum(r[1].iterations for r in runs)

    def pose_frame_pnp(self) -> list[Volume]:
        """Single-pose PnP images in their own pose frames (inputs to the fusions)."""
        vols, _, _ = self._pnp_pose_frames()
        return vols

    def pixel_weights(self) -> WeightSet:
        if self._weights is None:
            w = self.cfg.weighting
            t0 = time.perf_counter()
            ws = pixel_weights(
                self.initial(),
                [p.geometry for p in self.cfg.poses],
                self.transforms,
                w.tau_metal,
                w.tau_object,
                w.alpha,
                w.epsilon,
                w.epsilon_relative,
            )
            self._weights = (ws, time.perf_counter() - t0)
        return self._weights[0]

    def _fuse(self, method: str, weights: WeightSet, extra: float) -> MethodResult:
        vols, dt, its = self._pnp_pose_frames()
        t0 = time.perf_counter()
        x = postprocess_fuse(vols, self.transforms, weights)
        return MethodResult(method, x, dt + extra + time.perf_counter() - t0, its)

    def avg(self) -> MethodResult:
        g = self.grid
        return self._fuse("avg", WeightSet.uniform(self.cfg.n_poses, g.dims, g.spacing), 0.0)

    def pw_avg(self) -> MethodResult:
        ws = self.pixel_weights()
        return self._fuse("pw-avg", ws, self._weights[1])

    def _mpf(self, method: str, weights: WeightSet | None, extra: float) -> MethodResult:
        x0 = self.initial()
        t0 = time.perf_counter()
        agents = [PoseAgent(s, t, self.cfg.prox) for s, t in zip(self.sinograms, self.transforms)]
        x, diag = solve_mace(x0, agents + [self._prior()], self._consensus(len(agents), weights))
        dt = self._wls_pose_frame(0)[1] + extra + time.perf_counter() - t0
        return MethodResult(method, x, dt, diag.iterations, diagnostics=diag)

    def mpf_baseline(self) -> MethodResult:
        return self._mpf("mpf-baseline", None, 0.0)

    def mpf_pixelweighted(self) -> MethodResult:
        ws = self.pixel_weights()
        return self._mpf("mpf-pixelweighted", ws, self._weights[1])

    def run(self, method: str, pose: int = 0) -> MethodResult:
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
        if method == "wls-single":
            return self.wls_single(pose)
        if method == "pnp-single":
            return self.pnp_single(pose)
        return getattr(self, method.replace("-", "_"))()

    def run_all(self) -> list[MethodResult]:
        """Every method, single-pose ones for every pose."""
        out = []
        for m in METHODS:
            if m in SINGLE_POSE_METHODS:
                out += [self.run(m, k) for k in range(self.cfg.n_poses)]
            else:
                out.append(self.run(m))
        return out
