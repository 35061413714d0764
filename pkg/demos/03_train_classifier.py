"""
Telling heavy from light cubes
==============================

Generate a small labeled corpus, train the 2-layer LSTM on the full xyz
track and on height alone, and compare test accuracy. This is a scaled-down
run; expect a few minutes on one core.
"""

import tempfile

from bouncenet.dataset import generate_dataset
from bouncenet.training import TrainConfig, evaluate, train

out = tempfile.mkdtemp(prefix="bouncenet_demo_")
manifest = generate_dataset(400, 200, 7, out)
print("corpus:", manifest.counts)

for dims in ("z", "xyz"):
    config = TrainConfig(dims=dims, epochs=30, early_stop_patience=8)
    result = train(manifest, config)
    best = result.checkpoint
    print(f"{dims}: best epoch {best.epoch}, val acc {best.val_acc:.3f}")
    print(f"{dims}: test acc {evaluate(best, manifest).accuracy:.3f}")
