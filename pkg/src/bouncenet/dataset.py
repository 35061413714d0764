"""Scenario sampling, corpus generation, storage and input preparation."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .physics import MaterialParams, SimConfig, simulate_trajectory
from .records import CLASS_NAMES, HEAVY, LIGHT, ScenarioParams, Trajectory

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
STD_FLOOR = 1e-8
SPLITS = ("train", "test")
DIMS = {"xyz": (0, 1, 2), "z": (2,)}


class TrajectoryFormatError(ValueError):
    """A trajectory file could not be parsed."""


@dataclass(frozen=True)
class GeneratorConfig:
    light_restitution: tuple = (0.60, 0.85)
    light_mass: tuple = (0.05, 0.3)
    heavy_restitution: tuple = (0.05, 0.30)
    heavy_mass: tuple = (2.0, 8.0)
    friction: tuple = (0.3, 0.7)
    height: tuple = (0.5, 3.0)
    horizontal: tuple = (-1.0, 1.0)
    euler: tuple = (0.0, 2.0 * math.pi)
    horizontal_speed: tuple = (-3.0, 3.0)
    vertical_speed: tuple = (-1.0, 1.0)
    angular_speed: tuple = (-6.0, 6.0)
    half_extent: float = 0.1

    def ranges_for(self, label: int) -> tuple[tuple, tuple]:
        """(restitution range, mass range) for a class label."""
        if label == HEAVY:
            return self.heavy_restitution, self.heavy_mass
        if label == LIGHT:
            return self.light_restitution, self.light_mass
        raise ValueError(f"invalid class label {label!r}; expected 0 (heavy) or 1 (light)")

    @classmethod
    def null_signal(cls, **overrides) -> "GeneratorConfig":
        """Both labels share the light material ranges (no learnable signal)."""
        base = cls(**overrides)
        return cls(**{**asdict(base), "heavy_restitution": base.light_restitution,
                      "heavy_mass": base.light_mass})

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def sim_config_to_dict(cfg: SimConfig) -> dict:
    return asdict(cfg)


def config_hash(gen_config: GeneratorConfig, sim_config: SimConfig) -> str:
    blob = json.dumps({"generator": gen_config.to_dict(), "sim": sim_config_to_dict(sim_config)},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def sample_scenario(label: int, rng_seed: int,
                    gen_config: GeneratorConfig | None = None) -> ScenarioParams:
    """Draw the initial conditions and material of one trajectory.

    Kinematics come from a label-independent stream, so the two labels with
    the same seed start identically and differ only in material.
    """
    gen_config = gen_config or GeneratorConfig()
    restitution_range, mass_range = gen_config.ranges_for(label)
    kin = np.random.default_rng([int(rng_seed), 0])
    mat = np.random.default_rng([int(rng_seed), 1, int(label)])

    x, y = kin.uniform(*gen_config.horizontal, size=2)
    z = kin.uniform(*gen_config.height)
    euler = kin.uniform(*gen_config.euler, size=3)
    vx, vy = kin.uniform(*gen_config.horizontal_speed, size=2)
    vz = kin.uniform(*gen_config.vertical_speed)
    omega = kin.uniform(*gen_config.angular_speed, size=3)

    material = MaterialParams(
        mass=float(mat.uniform(*mass_range)),
        restitution=float(mat.uniform(*restitution_range)),
        friction_coeff=float(mat.uniform(*gen_config.friction)),
        half_extent=gen_config.half_extent,
    )
    return ScenarioParams(
        initial_position=(float(x), float(y), float(z)),
        initial_euler=tuple(float(a) for a in euler),
        initial_linear_velocity=(float(vx), float(vy), float(vz)),
        initial_angular_velocity=tuple(float(w) for w in omega),
        material=material,
        class_label=int(label),
        seed=int(rng_seed),
    )


def scenario_seed(master_seed: int, split: str, label: int, index: int) -> int:
    ss = np.random.SeedSequence([int(master_seed), SPLITS.index(split), int(label), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# CSV storage
# ---------------------------------------------------------------------------

def write_trajectory_csv(traj: Trajectory, path) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("frame,x,y,z\n")
        for i, (x, y, z) in enumerate(traj.samples.tolist()):
            fh.write(f"{i},{x!r},{y!r},{z!r}\n")


def _parse_rows(path: Path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                values = [float(c) for c in row]
            except ValueError:
                if lineno == 1 and not rows:
                    continue  # header
                raise TrajectoryFormatError(f"{path}:{lineno}: non-numeric value in {row!r}")
            if not all(math.isfinite(v) for v in values):
                raise TrajectoryFormatError(f"{path}:{lineno}: non-finite value in {row!r}")
            rows.append((lineno, values))
    return rows


def read_trajectory_csv(path, frame_rate: float, label=None, seed=None) -> Trajectory:
    """Read a ``frame,x,y,z`` file written by :func:`write_trajectory_csv`."""
    path = Path(path)
    rows = _parse_rows(path)
    for lineno, values in rows:
        if len(values) != 4:
            raise TrajectoryFormatError(f"{path}:{lineno}: expected 4 columns, got {len(values)}")
    samples = np.array([v[1:] for _, v in rows], dtype=np.float64).reshape(-1, 3)
    if len(samples) < 2:
        raise TrajectoryFormatError(f"{path}: fewer than 2 samples")
    return Trajectory(samples, frame_rate, label, seed)


def load_external_trajectory(path, frame_rate: float) -> Trajectory:
    """Parse a tracked trajectory for inference.

    Accepted layouts (optional non-numeric header row): one column ``z``,
    three columns ``x,y,z``, or four columns ``frame,x,y,z``.  A z-only file
    gets ``x = y = 0`` and ``z_only=True``.
    """
    path = Path(path)
    rows = _parse_rows(path)
    if len(rows) < 2:
        raise TrajectoryFormatError(f"{path}: fewer than 2 samples")
    width = len(rows[0][1])
    if width not in (1, 3, 4):
        raise TrajectoryFormatError(f"{path}:{rows[0][0]}: expected 1, 3 or 4 columns, got {width}")
    for lineno, values in rows:
        if len(values) != width:
            raise TrajectoryFormatError(
                f"{path}:{lineno}: expected {width} columns, got {len(values)}")
    data = np.array([v for _, v in rows], dtype=np.float64)
    if width == 1:
        samples = np.zeros((len(data), 3))
        samples[:, 2] = data[:, 0]
    else:
        samples = data[:, -3:]
    return Trajectory(samples, frame_rate, z_only=(width == 1), source=str(path))


# ---------------------------------------------------------------------------
# manifest and generation
# ---------------------------------------------------------------------------

@dataclass
class DatasetManifest:
    root: Path
    master_seed: int
    config_hash: str
    frame_rate: float
    gen_config: GeneratorConfig
    sim_config: SimConfig
    entries: list = field(default_factory=list)

    @property
    def counts(self) -> dict:
        out = {s: {HEAVY: 0, LIGHT: 0} for s in SPLITS}
        for e in self.entries:
            out[e["split"]][e["label"]] += 1
        return out

    def split_entries(self, split: str) -> list:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [e for e in self.entries if e["split"] == split]

    def load_split(self, split: str) -> list[Trajectory]:
        return [read_trajectory_csv(self.root / e["path"], self.frame_rate, e["label"], e["seed"])
                for e in self.split_entries(split)]

    def to_dict(self) -> dict:
        counts = {s: {str(k): v for k, v in c.items()} for s, c in self.counts.items()}
        return {
            "version": MANIFEST_VERSION,
            "master_seed": self.master_seed,
            "config_hash": self.config_hash,
            "frame_rate": self.frame_rate,
            "counts": counts,
            "generator": self.gen_config.to_dict(),
            "sim": sim_config_to_dict(self.sim_config),
            "entries": self.entries,
        }

    def write(self) -> Path:
        path = self.root / MANIFEST_NAME
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        if d.get("version") != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {d.get('version')!r}")
        return cls(root=path.parent, master_seed=d["master_seed"], config_hash=d["config_hash"],
                   frame_rate=d["frame_rate"], gen_config=GeneratorConfig.from_dict(d["generator"]),
                   sim_config=SimConfig(**d["sim"]), entries=d["entries"])

    def verify(self) -> None:
        """Check the manifest against the files on disk and split hygiene."""
        seen = {}
        for e in self.entries:
            if not (self.root / e["path"]).is_file():
                raise FileNotFoundError(self.root / e["path"])
            key = e["seed"]
            if key in seen and seen[key] != e["split"]:
                raise ValueError(f"seed {key} appears in both splits")
            seen[key] = e["split"]
        if config_hash(self.gen_config, self.sim_config) != self.config_hash:
            raise ValueError("config hash does not match generator/sim config")


def _simulate_job(job):
    label, seed, gen_config, sim_config, out_path = job
    traj = simulate_trajectory(sample_scenario(label, seed, gen_config), sim_config)
    write_trajectory_csv(traj, out_path)
    return len(traj)


def generate_dataset(n_per_class_train: int, n_per_class_test: int, master_seed: int,
                     out_dir, gen_config: GeneratorConfig | None = None,
                     sim_config: SimConfig | None = None, workers: int = 1) -> DatasetManifest:
    """Simulate and write a balanced two-class corpus plus its manifest."""
    if n_per_class_train < 1 or n_per_class_test < 1:
        raise ValueError("per-class counts must be >= 1")
    gen_config = gen_config or GeneratorConfig()
    sim_config = sim_config or SimConfig()
    root = Path(out_dir)
    jobs, entries = [], []
    for split, n in (("train", n_per_class_train), ("test", n_per_class_test)):
        (root / split).mkdir(parents=True, exist_ok=True)
        for index in range(n):
            for label in (HEAVY, LIGHT):
                seed = scenario_seed(master_seed, split, label, index)
                rel = f"{split}/{CLASS_NAMES[label]}_{index:05d}.csv"
                jobs.append((label, seed, gen_config, sim_config, root / rel))
                entries.append({"path": rel, "label": label, "seed": seed, "split": split})

    train_seeds = {e["seed"] for e in entries if e["split"] == "train"}
    if any(e["seed"] in train_seeds for e in entries if e["split"] == "test"):
        raise RuntimeError("seed collision between splits")

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            lengths = list(pool.map(_simulate_job, jobs, chunksize=16))
    else:
        lengths = [_simulate_job(j) for j in jobs]
    for e, n in zip(entries, lengths):
        e["n_frames"] = n

    manifest = DatasetManifest(root, int(master_seed), config_hash(gen_config, sim_config),
                               sim_config.frame_rate, gen_config, sim_config, entries)
    manifest.write()
    log.info("wrote %d trajectories to %s", len(entries), root)
    return manifest


# ---------------------------------------------------------------------------
# normalization and input preparation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormalizationStats:
    std: tuple

    def __post_init__(self):
        std = tuple(float(s) for s in self.std)
        if len(std) != 3 or not all(s > 0 and math.isfinite(s) for s in std):
            raise ValueError("need 3 positive finite standard deviations")
        object.__setattr__(self, "std", std)

    @classmethod
    def unit(cls) -> "NormalizationStats":
        return cls((1.0, 1.0, 1.0))


def compute_normalization(trajectories) -> NormalizationStats:
    """Population std per dimension, pooled over every training frame."""
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("cannot compute normalization from an empty corpus")
    frames = np.concatenate([t.samples for t in trajectories], axis=0)
    std = np.maximum(frames.std(axis=0, ddof=0), STD_FLOOR)
    return NormalizationStats(tuple(std))


def normalize(trajectory: Trajectory, stats: NormalizationStats) -> Trajectory:
    # division only, no centering
    return trajectory.with_samples(trajectory.samples / np.asarray(stats.std))


def prepare_sequence(trajectory: Trajectory, target_len: int, dims: str = "xyz"):
    """Truncate or zero-pad to ``target_len`` frames; returns (array, true_len)."""
    if target_len < 1:
        raise ValueError("target_len must be >= 1")
    if dims not in DIMS:
        raise ValueError(f"dims must be one of {sorted(DIMS)}")
    samples = trajectory.samples
    if len(samples) == 0:
        raise ValueError("empty trajectory")
    true_len = min(len(samples), target_len)
    out = np.zeros((target_len, len(DIMS[dims])))
    out[:true_len] = samples[:true_len, DIMS[dims]]
    return out, true_len


def prepare_batch(trajectories, stats: NormalizationStats, target_len: int, dims: str = "xyz"):
    """Stack normalized sequences: (inputs (N, T, D), lengths (N,), labels (N,))."""
    seqs, lengths, labels = [], [], []
    for t in trajectories:
        x, n = prepare_sequence(normalize(t, stats), target_len, dims)
        seqs.append(x)
        lengths.append(n)
        labels.append(-1 if t.label is None else t.label)
    return np.stack(seqs), np.array(lengths, dtype=np.int64), np.array(labels, dtype=np.int64)


def default_workers() -> int:
    return max(1, min(4, os.cpu_count() or 1))
