"""Plain value types shared by the simulator, dataset and model code."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .physics import MaterialParams

HEAVY = 0
LIGHT = 1
CLASS_NAMES = {HEAVY: "heavy", LIGHT: "light"}


@dataclass(frozen=True)
class ScenarioParams:
    initial_position: tuple
    initial_euler: tuple
    initial_linear_velocity: tuple
    initial_angular_velocity: tuple
    material: MaterialParams
    class_label: int
    seed: int


@dataclass(frozen=True, eq=False)
class Trajectory:
    samples: np.ndarray
    frame_rate: float
    label: int | None = None
    scenario_seed: int | None = None
    z_only: bool = False
    source: str | None = field(default=None, compare=False)

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError("samples must have shape (n, 3)")
        if len(arr) < 2:
            raise ValueError("a trajectory needs at least 2 samples")
        if not np.all(np.isfinite(arr)):
            raise ValueError("trajectory samples must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (np.array_equal(self.samples, other.samples)
                and self.frame_rate == other.frame_rate
                and self.label == other.label
                and self.scenario_seed == other.scenario_seed
                and self.z_only == other.z_only)

    @property
    def duration(self) -> float:
        return (len(self.samples) - 1) / self.frame_rate

    def with_samples(self, samples) -> "Trajectory":
        return Trajectory(samples, self.frame_rate, self.label, self.scenario_seed,
                          self.z_only, self.source)
