"""Experiment result records shared by the Monte Carlo modules."""
from __future__ import annotations

import math
from dataclasses import dataclass, field


class DegeneracyError(RuntimeError):
    """Raised when an importance-sampling ensemble has too few effective samples."""


CSV_COLUMNS = [
    "experiment",
    "eps",
    "kappa",
    "t",
    "x1",
    "x2",
    "estimate",
    "stderr",
    "ess",
    "n_paths",
    "n_noise",
    "seed",
]


@dataclass
class ExperimentReport:
    """A single Monte Carlo estimate with its uncertainty and provenance."""

    experiment: str
    estimate: float
    stderr: float
    ess: float = math.nan
    n_paths: int = 0
    n_noise: int = 0
    seed: int = 0
    params: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def csv_row(self):
        p = self.params
        return [
            self.experiment,
            float(p.get("eps", math.nan)),
            float(p.get("kappa", math.nan)),
            float(p.get("t", math.nan)),
            float(p.get("x1", math.nan)),
            float(p.get("x2", math.nan)),
            float(self.estimate),
            float(self.stderr),
            float(self.ess),
            self.n_paths,
            self.n_noise,
            self.seed,
        ]

    def within(self, target: float, n_se: float = 3.0) -> bool:
        return abs(self.estimate - target) <= n_se * self.stderr
