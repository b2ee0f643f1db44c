"""Synthetic phantoms and polychromatic multi-pose acquisitions.

The phantom is a plastic body holding flat metal disks (label map:
0 air, 1 plastic, 2 metal). Acquisition mixes per-energy-bin transmissions,
so the log-converted data no longer follow a single linear model through
metal. That mismatch is what produces streak artifacts in linear
reconstructions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .geometry import PoseTransform, Volume, apply_transform, grid_coordinates
from .projector import ScanGeometry, Sinogram, system_matrix, transmission_weights

AIR, PLASTIC, METAL = 0, 1, 2
_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}
TRANSMISSION_FLOOR = 1e-8


@dataclass(frozen=True)
class Spectrum:
    """Discrete x-ray spectrum: bin energies (keV) and photon fractions."""

    bin_energies: tuple[float, ...]
    bin_fractions: tuple[float, ...]

    def __post_init__(self):
        e = tuple(float(x) for x in self.bin_energies)
        f = tuple(float(x) for x in self.bin_fractions)
        if len(e) == 0 or len(e) != len(f):
            raise ConfigError("spectrum needs matching, nonempty energy and fraction lists")
        if any(x < 0 for x in f) or abs(sum(f) - 1.0) > 1e-12:
            raise ConfigError(f"spectrum fractions must be nonnegative and sum to 1, got {f}")
        if any(b <= a for a, b in zip(e, e[1:])):
            raise ConfigError("spectrum energies must be strictly increasing")
        object.__setattr__(self, "bin_energies", e)
        object.__setattr__(self, "bin_fractions", f)

    @property
    def n_bins(self) -> int:
        return len(self.bin_energies)

    @property
    def mean_energy(self) -> float:
        return float(np.dot(self.bin_energies, self.bin_fractions))


@dataclass(frozen=True)
class Material:
    """Linear attenuation (mm^-1) at each spectrum bin."""

    name: str
    attenuation: tuple[float, ...]

    def __post_init__(self):
        mu = tuple(float(x) for x in self.attenuation)
        if any(x < 0 for x in mu):
            raise ConfigError(f"material {self.name!r} has negative attenuation")
        object.__setattr__(self, "attenuation", mu)

    def at_energy(self, spectrum: Spectrum, energy: float) -> float:
        """Attenuation interpolated linearly in energy between bins."""
        if len(self.attenuation) != spectrum.n_bins:
            raise ConfigError(
                f"material {self.name!r} has {len(self.attenuation)} bins, spectrum has {spectrum.n_bins}"
            )
        return float(np.interp(energy, spectrum.bin_energies, self.attenuation))


AIR_MATERIAL_NAME = "air"


@dataclass(frozen=True)
class Disk:
    """Disk whose symmetry axis is the grid axis ``axis``; centre and sizes in mm."""

    center: tuple[float, float, float]
    radius: float
    thickness: float
    axis: str = "z"

    def __post_init__(self):
        if self.axis not in _AXIS_INDEX:
            raise ConfigError(f"disk axis must be 'x', 'y' or 'z', got {self.axis!r}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def half_extents(self) -> tuple[float, float, float]:
        ext = [self.radius] * 3
        ext[_AXIS_INDEX[self.axis]] = self.thickness / 2
        return tuple(ext)

    def contains(self, X, Y, Z) -> np.ndarray:
        rel = [X - self.center[0], Y - self.center[1], Z - self.center[2]]
        a = _AXIS_INDEX[self.axis]
        along = rel.pop(a)
        return (rel[0] ** 2 + rel[1] ** 2 <= self.radius**2) & (np.abs(along) <= self.thickness / 2)


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    spectrum: Spectrum
    body_material: Material
    metal_material: Material
    body_shape: str = "cylinder"
    body_radius: float = 7.0
    body_height: float = 12.0
    body_half_extents: tuple[float, float, float] = (6.0, 6.0, 6.0)
    disks: tuple[Disk, ...] = field(default_factory=tuple)
    seed: int = 0

    def __post_init__(self):
        if self.body_shape not in ("cylinder", "box"):
            raise ConfigError(f"body shape must be 'cylinder' or 'box', got {self.body_shape!r}")
        for d in self.disks:
            if not (d.radius > 0 and d.thickness > 0):
                raise ConfigError(f"disk radius and thickness must be positive: {d}")
            if not self._inside(d):
                raise ConfigError(f"disk {d} does not lie inside the body")

    def _inside(self, d: Disk) -> bool:
        # conservative: tests the disk's bounding box (exact for z-axis disks in a cylinder)
        cx, cy, cz = (abs(c) for c in d.center)
        ex, ey, ez = d.half_extents()
        if self.body_shape == "cylinder":
            if d.axis == "z":
                radial = np.hypot(cx, cy) + d.radius
            else:
                radial = np.hypot(cx + ex, cy + ey)
            return radial <= self.body_radius and cz + ez <= self.body_height / 2
        hx, hy, hz = self.body_half_extents
        return cx + ex <= hx and cy + ey <= hy and cz + ez <= hz

    @property
    def materials(self) -> list[Material]:
        """Materials indexed by label."""
        air = Material(AIR_MATERIAL_NAME, (0.0,) * self.spectrum.n_bins)
        return [air, self.body_material, self.metal_material]


def build_phantom(spec: PhantomSpec) -> tuple[Volume, Volume]:
    """Reference volume at the spectrum's mean energy and its label map.

    A voxel belongs to a shape when its centre does. Labels are returned as
    a float volume holding 0, 1 or 2.
    """
    x, y, z = grid_coordinates(spec.dims, spec.spacing)
    X, Y, Z = np.meshgrid(x, y, z, indexing="ij")
    labels = np.zeros(spec.dims, dtype=np.int8)
    if spec.body_shape == "cylinder":
        body = (X**2 + Y**2 <= spec.body_radius**2) & (np.abs(Z) <= spec.body_height / 2)
    else:
        hx, hy, hz = spec.body_half_extents
        body = (np.abs(X) <= hx) & (np.abs(Y) <= hy) & (np.abs(Z) <= hz)
    labels[body] = PLASTIC
    for d in spec.disks:
        labels[d.contains(X, Y, Z)] = METAL
    e = spec.spectrum.mean_energy
    mu = np.array([m.at_energy(spec.spectrum, e) for m in spec.materials])
    return Volume(mu[labels], spec.spacing), Volume(labels.astype(np.float64), spec.spacing)


def attenuation_map(labels: Volume, materials: Sequence[Material], bin_index: int) -> Volume:
    lab = np.rint(labels.values).astype(np.int64)
    if lab.min() < 0 or lab.max() >= len(materials):
        raise ConfigError(f"label map uses labels up to {lab.max()} but only {len(materials)} materials")
    mu = np.array([m.attenuation[bin_index] for m in materials])
    return labels.with_values(mu[lab])


def acquire(labels: Volume, materials: Sequence[Material], spectrum: Spectrum,
            g: ScanGeometry, t: PoseTransform, dose: float, seed) -> Sinogram:
    """Simulate one posed, polychromatic, noisy scan.

    Each bin's attenuation map is moved into the pose, projected, and turned
    into transmission; bins are mixed by photon fraction and log-converted.
    Transmission is clamped at 1e-8 before the log. Gaussian noise of variance
    ``1 / (dose * transmission)`` is added (``dose = inf`` disables it), and
    weights follow :func:`mpfusion.projector.transmission_weights`.

    ``seed`` is an int or a sequence of ints; view ``j`` draws its noise
    from ``default_rng([*seed, j])``.
    """
    if not dose > 0:
        raise ConfigError(f"dose must be positive, got {dose}")
    for m in materials:
        if len(m.attenuation) != spectrum.n_bins:
            raise ConfigError(f"material {m.name!r} does not match the spectrum's bin count")
    op = system_matrix(g, labels.grid)
    transmission = np.zeros(g.shape)
    for b, frac in enumerate(spectrum.bin_fractions):
        posed = apply_transform(t, attenuation_map(labels, materials, b))
        transmission += frac * np.exp(-op.forward(posed.values))
    transmission = np.maximum(transmission, TRANSMISSION_FLOOR)
    y = -np.log(transmission)
    if np.isfinite(dose):
        entropy = [int(s) for s in np.atleast_1d(seed)]
        noise = np.empty(g.shape)
        for view in range(g.n_views):
            rng = np.random.default_rng([*entropy, view])
            noise[view] = rng.standard_normal(g.shape[1:])
        y = y + noise / np.sqrt(dose * transmission)
    return Sinogram(g, y, transmission_weights(y))

