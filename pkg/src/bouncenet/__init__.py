"""Heavy vs. light cube classification from simulated bounce trajectories.

``physics`` simulates a rigid cube dropped onto a ground plane, ``dataset``
turns that into labeled trajectory corpora, ``nn`` is a numpy peephole LSTM
with hand-written BPTT, ``training`` fits and evaluates it, ``experiments``
runs the dimensionality ablation and the length sweep.
"""

from .dataset import (DatasetManifest, GeneratorConfig, NormalizationStats, compute_normalization,
                      generate_dataset, load_external_trajectory)
from .physics import MaterialParams, RigidBodyState, SimConfig, simulate_trajectory, step
from .records import CLASS_NAMES, HEAVY, LIGHT, ScenarioParams, Trajectory
from .training import Checkpoint, TrainConfig, evaluate, predict, train

__version__ = "0.1.0"
