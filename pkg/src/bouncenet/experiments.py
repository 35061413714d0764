"""Dimensionality ablation and accuracy-vs-length sweep drivers."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import DatasetManifest
from .training import TrainConfig, TrainingError, evaluate_trajectories, train_on

log = logging.getLogger(__name__)

DIM_ABLATION = "dim-ablation"
LENGTH_SWEEP = "length-sweep"
EXPERIMENTS = (DIM_ABLATION, LENGTH_SWEEP)

ABLATION_LEARNING_RATES = (3e-4, 1e-3, 3e-3)
ABLATION_WINDOWS = (32, 64, None)
SWEEP_LENGTHS = (10, 25, 50, 75, 100, 120, 160, 200)
DEFAULT_SEEDS = (0, 1, 2)

ROW_FIELDS = ("experiment", "dims", "target_len", "seed", "learning_rate",
              "truncation_window", "test_accuracy", "train_seconds")
PLOT_FIELDS = ("x", "mean_accuracy", "std_accuracy", "n")


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReportRow:
    experiment: str
    dims: str
    target_len: int
    seed: int
    learning_rate: float
    truncation_window: int | None
    test_accuracy: float
    train_seconds: float

    def __post_init__(self):
        if not 0.0 <= self.test_accuracy <= 1.0:
            raise ValueError(f"accuracy {self.test_accuracy} outside [0, 1]")

    def to_csv(self) -> list:
        window = "full" if self.truncation_window is None else str(self.truncation_window)
        return [self.experiment, self.dims, str(self.target_len), str(self.seed),
                repr(self.learning_rate), window, repr(self.test_accuracy),
                repr(self.train_seconds)]

    @classmethod
    def from_csv(cls, rec: dict) -> "ReportRow":
        window = rec["truncation_window"]
        return cls(rec["experiment"], rec["dims"], int(rec["target_len"]), int(rec["seed"]),
                   float(rec["learning_rate"]), None if window == "full" else int(window),
                   float(rec["test_accuracy"]), float(rec["train_seconds"]))


@dataclass
class ExperimentReport:
    experiment: str
    dataset_hash: str
    config_hash: str
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def x_key(self, row: ReportRow):
        return row.target_len if self.experiment == LENGTH_SWEEP else row.dims

    def summary(self) -> list:
        """``(x, mean, std, n)`` per distinct x, in first-appearance order."""
        groups: dict = {}
        for r in self.rows:
            groups.setdefault(self.x_key(r), []).append(r.test_accuracy)
        return [(x, float(np.mean(v)), float(np.std(v)), len(v)) for x, v in groups.items()]

    def accuracies(self, x) -> list:
        return [r.test_accuracy for r in self.rows if self.x_key(r) == x]

    def mean_accuracy(self, x) -> float:
        acc = self.accuracies(x)
        return float(np.mean(acc)) if acc else float("nan")

    @property
    def stem(self) -> str:
        return f"{self.experiment}_{self.dataset_hash}"


def hash_config(config: TrainConfig) -> str:
    blob = json.dumps(asdict(config), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _hyper_json(config: TrainConfig) -> str:
    return json.dumps(config.hyperparameters(), sort_keys=True)


# one process-level cache so pool workers read each split once
_SPLITS: dict = {}


def _splits(root: str):
    if root not in _SPLITS:
        manifest = DatasetManifest.load(root)
        _SPLITS[root] = (manifest.load_split("train"), manifest.load_split("test"))
    return _SPLITS[root]


def _run_cell(job):
    """Train one configuration; return (val acc, test acc, seconds)."""
    root, config = job
    train_trajs, test_trajs = _splits(root)
    result = train_on(train_trajs, config)
    test = evaluate_trajectories(result.checkpoint, test_trajs)
    return result.best_val_acc, test.accuracy, result.seconds


def _map(jobs, workers: int, describe):
    """Run cells serially or on a bounded pool; failures name their cell."""
    results = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell, j) for j in jobs]
            for job, fut in zip(jobs, futures):
                try:
                    results.append(fut.result())
                except TrainingError as exc:
                    raise ExperimentError(f"{describe(job[1])}: {exc}") from exc
        return results
    for job in jobs:
        try:
            results.append(_run_cell(job))
        except TrainingError as exc:
            raise ExperimentError(f"{describe(job[1])}: {exc}") from exc
        log.info("%s done", describe(job[1]))
    return results


def _describe(config: TrainConfig) -> str:
    window = "full" if config.truncation_window is None else config.truncation_window
    return (f"dims={config.dims} lr={config.learning_rate} window={window} "
            f"target_len={config.target_len} seed={config.seed}")


def _require_splits(manifest: DatasetManifest):
    counts = manifest.counts
    if not sum(counts["train"].values()) or not sum(counts["test"].values()):
        raise ExperimentError("manifest needs both a train and a test split")


def run_dimension_ablation(manifest: DatasetManifest, base: TrainConfig, seeds=DEFAULT_SEEDS,
                           learning_rates=ABLATION_LEARNING_RATES, windows=ABLATION_WINDOWS,
                           workers: int = 1) -> ExperimentReport:
    """Grid-search on z only, then train xyz with the selected settings."""
    _require_splits(manifest)
    root = str(manifest.root)
    seeds = list(seeds)
    grid = [(lr, w) for lr in learning_rates for w in windows]
    z_jobs = [(root, replace(base, dims="z", learning_rate=lr, truncation_window=w, seed=s))
              for s in seeds for lr, w in grid]
    z_results = _map(z_jobs, workers, _describe)

    selected, grid_log = [], []
    for k, seed in enumerate(seeds):
        cells = z_results[k * len(grid):(k + 1) * len(grid)]
        # first grid point wins ties
        best = int(np.argmax([c[0] for c in cells]))
        selected.append(z_jobs[k * len(grid) + best][1])
        grid_log.append([{"learning_rate": lr, "truncation_window": w, "val_accuracy": c[0]}
                         for (lr, w), c in zip(grid, cells)])

    xyz_jobs = [(root, replace(cfg, dims="xyz")) for cfg in selected]
    xyz_results = _map(xyz_jobs, workers, _describe)

    rows, protocol = [], []
    for k, seed in enumerate(seeds):
        zc, xc = selected[k], xyz_jobs[k][1]
        z_hyper, x_hyper = _hyper_json(zc), _hyper_json(xc)
        if z_hyper != x_hyper:
            raise ExperimentError("xyz run does not reuse the z-selected hyperparameters")
        protocol.append({"seed": seed, "z_selected": z_hyper, "xyz_used": x_hyper})
        _, z_test, z_secs = z_results[k * len(grid) + grid.index(
            (zc.learning_rate, zc.truncation_window))]
        _, x_test, x_secs = xyz_results[k]
        for cfg, acc, secs in ((zc, z_test, z_secs), (xc, x_test, x_secs)):
            rows.append(ReportRow(DIM_ABLATION, cfg.dims, cfg.target_len, seed, cfg.learning_rate,
                                  cfg.truncation_window, acc, secs))
    meta = {
        "seeds": seeds,
        "grid": grid_log,
        "protocol": protocol,
        "protocol_fidelity": all(p["z_selected"] == p["xyz_used"] for p in protocol),
        "base_config": asdict(base),
    }
    return ExperimentReport(DIM_ABLATION, manifest.config_hash, hash_config(base), rows, meta)


def run_length_sweep(manifest: DatasetManifest, base: TrainConfig, lengths=SWEEP_LENGTHS,
                     seeds=DEFAULT_SEEDS, workers: int = 1) -> ExperimentReport:
    """One model per (length, seed); everything else fixed."""
    _require_splits(manifest)
    lengths, seeds = [int(n) for n in lengths], list(seeds)
    if not lengths or min(lengths) < 1:
        raise ExperimentError("lengths must all be >= 1")
    jobs = [(str(manifest.root), replace(base, target_len=n, seed=s))
            for n in lengths for s in seeds]
    results = _map(jobs, workers, _describe)
    rows = [ReportRow(LENGTH_SWEEP, cfg.dims, cfg.target_len, cfg.seed, cfg.learning_rate,
                      cfg.truncation_window, test, secs)
            for (_, cfg), (_, test, secs) in zip(jobs, results)]
    meta = {"seeds": seeds, "lengths": lengths, "base_config": asdict(base)}
    return ExperimentReport(LENGTH_SWEEP, manifest.config_hash, hash_config(base), rows, meta)


def emit_report(report: ExperimentReport, out_dir) -> dict:
    """Write ``<stem>.csv``, ``<stem>_plot.csv`` and ``<stem>.json`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"table": out / f"{report.stem}.csv", "plot": out / f"{report.stem}_plot.csv",
             "meta": out / f"{report.stem}.json"}
    if not report.rows:
        log.warning("report %s has no rows; writing headers only", report.experiment)
    with open(paths["table"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in report.rows:
            w.writerow(r.to_csv())
    with open(paths["plot"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_FIELDS)
        for x, mean, std, n in report.summary():
            w.writerow([x, repr(mean), repr(std), n])
    with open(paths["meta"], "w", encoding="utf-8") as fh:
        json.dump({"experiment": report.experiment, "dataset_hash": report.dataset_hash,
                   "config_hash": report.config_hash, "metadata": report.metadata},
                  fh, indent=1, sort_keys=True)
        fh.write("\n")
    return paths


def parse_report(table_path) -> ExperimentReport:
    """Inverse of :func:`emit_report`, given the table CSV path."""
    table_path = Path(table_path)
    meta_path = table_path.with_suffix(".json")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    with open(table_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ROW_FIELDS:
            raise ValueError(f"{table_path}: unexpected columns {reader.fieldnames}")
        rows = [ReportRow.from_csv(rec) for rec in reader]
    return ExperimentReport(meta["experiment"], meta["dataset_hash"], meta["config_hash"], rows,
                            meta["metadata"])
