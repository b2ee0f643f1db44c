"""Experiment configuration read from a nested YAML file.

The shipped reference experiment lives in ``mpfusion/data/reference.yaml``;
:func:`reference_config_path` locates it. Every semantic error is reported
as :class:`ConfigError` naming the file and the offending key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .agents import ProxParams
from .errors import ConfigError
from .geometry import PoseTransform
from .projector import ScanGeometry
from .simulate import Disk, Material, PhantomSpec, Spectrum


@dataclass(frozen=True)
class PoseConfig:
    name: str
    transform: PoseTransform
    geometry: ScanGeometry


@dataclass(frozen=True)
class ConsensusSettings:
    """Mann-iteration settings; ``beta=None`` means ``1/K`` for K data agents."""

    beta: float | None = None
    rho: float = 0.5
    max_iters: int = 50
    stop_tol: float = 1e-4

    def beta_for(self, n_poses: int) -> float:
        return 1.0 / n_poses if self.beta is None else self.beta


@dataclass(frozen=True)
class WeightingParams:
    tau_metal: float
    tau_object: float
    alpha: float = 4.0
    epsilon: float = 1e-6
    epsilon_relative: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    phantom: PhantomSpec
    poses: tuple[PoseConfig, ...]
    dose: float
    seed: int
    prox: ProxParams
    consensus: ConsensusSettings
    denoiser_scale: float
    wls_iters: int
    weighting: WeightingParams
    output_dir: Path
    source: str = "<dict>"

    def __post_init__(self):
        if len(self.poses) == 0:
            raise ConfigError(f"{self.source}: at least one pose is required")

    @property
    def n_poses(self) -> int:
        return len(self.poses)

    def with_overrides(self, seed: int | None = None, output_dir=None) -> "ExperimentConfig":
        changes: dict[str, Any] = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if output_dir is not None:
            changes["output_dir"] = Path(output_dir)
        return replace(self, **changes) if changes else self


def reference_config_path() -> Path:
    return Path(str(resources.files("mpfusion") / "data" / "reference.yaml"))


class _Section:
    """Dictionary view that remembers its key path for error messages."""

    def __init__(self, data, path: str, source: str):
        if not isinstance(data, dict):
            raise ConfigError(f"{source}: section {path or '<root>'!r} must be a mapping")
        self.data = data
        self.path = path
        self.source = source

    def _where(self, key: str) -> str:
        return f"{self.source}: {self.path + '.' if self.path else ''}{key}"

    def section(self, key: str, required: bool = True) -> "_Section":
        if key not in self.data:
            if required:
                raise ConfigError(f"{self._where(key)}: missing section")
            return _Section({}, self._child(key), self.source)
        return _Section(self.data[key], self._child(key), self.source)

    def _child(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def get(self, key: str, cast, default=..., count: int | None = None):
        if key not in self.data or self.data[key] is None and default is not ...:
            if default is ...:
                raise ConfigError(f"{self._where(key)}: missing value")
            return default
        raw = self.data[key]
        try:
            if count is not None:
                if not isinstance(raw, (list, tuple)) or len(raw) != count:
                    raise ValueError(f"expected a list of {count} values")
                return tuple(cast(x) for x in raw)
            return cast(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{self._where(key)}: {exc}") from exc

    def items(self, key: str) -> list["_Section"]:
        raw = self.data.get(key, [])
        if raw is None:
            raw = []
        if not isinstance(raw, list):
            raise ConfigError(f"{self._where(key)}: expected a list")
        return [_Section(r, f"{self._child(key)}[{i}]", self.source) for i, r in enumerate(raw)]

    def wrap(self, fn, *args, **kwargs):
        # re-raise constructor errors with the section's location
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            raise ConfigError(f"{self.source}: {self.path}: {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{self.source}: {self.path}: {exc}") from exc


def _bool(x) -> bool:
    if isinstance(x, bool):
        return x
    raise ValueError(f"expected true or false, got {x!r}")


def _scan(sec: _Section) -> ScanGeometry:
    arc = math.radians(sec.get("arc_degrees", float, 180.0))
    return sec.wrap(
        ScanGeometry.uniform,
        sec.get("n_views", int),
        sec.get("n_det_rows", int),
        sec.get("n_det_cols", int),
        sec.get("det_pitch", float),
        arc=arc,
        start=math.radians(sec.get("start_degrees", float, 0.0)),
    )


def _pose(sec: _Section, default_scan: ScanGeometry | None, index: int) -> PoseConfig:
    name = sec.get("name", str, f"pose_{index}")
    interp = sec.get("interpolation", str, "exact-lattice")
    translation = sec.get("translation", float, (0.0, 0.0, 0.0), count=3)
    if "rotvec" in sec.data:
        t = sec.wrap(PoseTransform, sec.get("rotvec", float, count=3), translation, interp)
    else:
        t = sec.wrap(
            PoseTransform.about_axis,
            sec.get("axis", str, "z"),
            math.radians(sec.get("angle_degrees", float, 0.0)),
            translation,
            interp,
        )
    if "scan" in sec.data:
        g = _scan(sec.section("scan"))
    elif default_scan is not None:
        g = default_scan
    else:
        raise ConfigError(f"{sec.source}: {sec.path}: no scan geometry (add a top-level 'scan' section)")
    return PoseConfig(name, t, g)


def _phantom(sec: _Section, root: _Section, seed: int) -> PhantomSpec:
    spec_sec = root.section("spectrum")
    spectrum = spec_sec.wrap(
        Spectrum,
        spec_sec.get("energies_kev", lambda v: tuple(float(x) for x in v)),
        spec_sec.get("fractions", lambda v: tuple(float(x) for x in v)),
    )
    mats = root.section("materials")
    body = sec.section("body")
    body_name = body.get("material", str)
    metal_name = sec.get("metal_material", str)
    materials = {}
    for name in (body_name, metal_name):
        if name not in mats.data:
            raise ConfigError(f"{mats.source}: materials.{name}: material is not defined")
        materials[name] = mats.wrap(
            Material, name, mats.get(name, float, count=spectrum.n_bins)
        )
    disks = tuple(
        d.wrap(
            Disk,
            d.get("center", float, count=3),
            d.get("radius", float),
            d.get("thickness", float),
            d.get("axis", str, "z"),
        )
        for d in sec.items("disks")
    )
    return sec.wrap(
        PhantomSpec,
        dims=sec.get("dims", int, count=3),
        spacing=sec.get("spacing", float, count=3),
        spectrum=spectrum,
        body_material=materials[body_name],
        metal_material=materials[metal_name],
        body_shape=body.get("shape", str, "cylinder"),
        body_radius=body.get("radius", float, 7.0),
        body_height=body.get("height", float, 12.0),
        body_half_extents=body.get("half_extents", float, (6.0, 6.0, 6.0), count=3),
        disks=disks,
        seed=seed,
    )


def config_from_dict(data: dict, source: str = "<dict>", base_dir: Path | None = None) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from parsed YAML content."""
    root = _Section(data, "", source)
    sim = root.section("simulation")
    seed = sim.get("seed", int, 0)
    dose = sim.get("dose", float)
    if not dose > 0:
        raise ConfigError(f"{source}: simulation.dose must be positive, got {dose}")
    phantom = _phantom(root.section("phantom"), root, seed)
    default_scan = _scan(root.section("scan")) if "scan" in root.data else None
    poses = tuple(_pose(p, default_scan, i) for i, p in enumerate(root.items("poses")))
    if not poses:
        raise ConfigError(f"{source}: poses: at least one pose is required")

    rec = root.section("reconstruction")
    px = rec.section("prox", required=False)
    prox = px.wrap(
        ProxParams,
        px.get("sigma", float, 1.0),
        px.get("cg_tol", float, 1e-6),
        px.get("cg_max_iters", int, 200),
    )
    cs = rec.section("consensus", required=False)
    beta = cs.get("beta", float, None)
    consensus = ConsensusSettings(
        beta, cs.get("rho", float, 0.5), cs.get("max_iters", int, 50), cs.get("stop_tol", float, 1e-4)
    )
    if beta is not None and not beta > 0:
        raise ConfigError(f"{source}: reconstruction.consensus.beta must be positive or null")
    if not 0 < consensus.rho < 1:
        raise ConfigError(f"{source}: reconstruction.consensus.rho must lie in (0, 1)")
    if consensus.max_iters < 1 or not consensus.stop_tol > 0:
        raise ConfigError(f"{source}: reconstruction.consensus needs max_iters >= 1 and stop_tol > 0")
    denoiser_scale = rec.get("denoiser_scale", float, 1.0)
    if denoiser_scale < 0:
        raise ConfigError(f"{source}: reconstruction.denoiser_scale must be nonnegative")
    wls_iters = rec.get("wls_iters", int, 20)
    if wls_iters < 1:
        raise ConfigError(f"{source}: reconstruction.wls_iters must be >= 1")

    ws = root.section("weighting")
    weighting = WeightingParams(
        ws.get("tau_metal", float),
        ws.get("tau_object", float),
        ws.get("alpha", float, 4.0),
        ws.get("epsilon", float, 1e-6),
        ws.get("epsilon_relative", _bool, True),
    )
    if not weighting.tau_metal > weighting.tau_object > 0:
        raise ConfigError(f"{source}: weighting needs tau_metal > tau_object > 0")
    if weighting.alpha < 0 or not weighting.epsilon > 0:
        raise ConfigError(f"{source}: weighting needs alpha >= 0 and epsilon > 0")

    out = Path(root.get("output_dir", str, "mpf_out"))
    if not out.is_absolute() and base_dir is not None:
        out = base_dir / out
    return ExperimentConfig(
        phantom=phantom,
        poses=poses,
        dose=dose,
        seed=seed,
        prox=prox,
        consensus=consensus,
        denoiser_scale=denoiser_scale,
        wls_iters=wls_iters,
        weighting=weighting,
        output_dir=out,
        source=source,
    )


def load_config(path=None) -> ExperimentConfig:
    """Read a YAML experiment file; ``None`` loads the shipped reference.

    A relative ``output_dir`` is taken relative to the current directory.
    """
    path = reference_config_path() if path is None else Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror or exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        raise ConfigError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}") from exc
    if data is None:
        raise ConfigError(f"{path}: config file is empty")
    return config_from_dict(data, str(path))
