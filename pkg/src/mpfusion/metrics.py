"""Ground-truth error metrics over simulator label regions.

Regions come from the label map (1 plastic, 2 metal), never from
thresholded reconstructions, so the evaluation does not share the mask
rule used to build the weights.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError
from .geometry import Volume
from .simulate import METAL, PLASTIC


@dataclass(frozen=True)
class MethodMetrics:
    masked_rmse: float
    metal_rmse: float
    global_rmse: float
    runtime: float = math.nan
    iterations: int | None = None


@dataclass
class MetricsReport:
    """Per-method metrics keyed by method label, in insertion order."""

    methods: dict[str, MethodMetrics] = field(default_factory=dict)

    def to_text(self) -> str:
        head = f"{'method':<28}{'masked_rmse':>14}{'metal_rmse':>14}{'global_rmse':>14}{'runtime_s':>11}{'iters':>7}"
        lines = [head]
        for name, m in self.methods.items():
            iters = "-" if m.iterations is None else str(m.iterations)
            runtime = "-" if math.isnan(m.runtime) else f"{m.runtime:.2f}"
            lines.append(
                f"{name:<28}{m.masked_rmse:>14.6e}{m.metal_rmse:>14.6e}{m.global_rmse:>14.6e}"
                f"{runtime:>11}{iters:>7}"
            )
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        return {name: {k: clean(v) for k, v in asdict(m).items()} for name, m in self.methods.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _rmse(diff: np.ndarray, region: np.ndarray) -> float:
    if not region.any():
        return math.nan
    return float(np.sqrt(np.mean(diff[region] ** 2)))


def method_metrics(truth: Volume, labels: Volume, recon: Volume,
                   runtime: float = math.nan, iterations: int | None = None) -> MethodMetrics:
    """Masked (plastic only), metal and global RMSE; an empty region gives NaN."""
    for name, v in (("labels", labels), ("reconstruction", recon)):
        if not truth.same_grid(v):
            raise DimensionError(f"{name} grid {v.dims} / {v.spacing} does not match truth {truth.dims} / {truth.spacing}")
    lab = np.rint(labels.values).astype(np.int64)
    diff = recon.values - truth.values
    return MethodMetrics(
        _rmse(diff, lab == PLASTIC),
        _rmse(diff, lab == METAL),
        float(np.sqrt(np.mean(diff**2))),
        float(runtime),
        iterations,
    )


def compute_metrics(truth: Volume, labels: Volume, recons: dict[str, Volume],
                    runtimes: dict[str, float] | None = None,
                    iterations: dict[str, int] | None = None) -> MetricsReport:
    runtimes = runtimes or {}
    iterations = iterations or {}
    report = MetricsReport()
    for name, v in recons.items():
        report.methods[name] = method_metrics(
            truth, labels, v, runtimes.get(name, math.nan), iterations.get(name)
        )
    return report
