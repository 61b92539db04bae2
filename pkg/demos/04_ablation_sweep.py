"""A miniature ablation sweep over selection mode and branch count.

Mirrors the structure of the strategy/mode and dictionary-size studies:
every cell trains with repeated seeds and the summary reports the median
Recall@1 per cell. `diablo ablate --axes mode,N --n 2,4` is the CLI
equivalent. Set DIABLO_THREADS to parallelize cells.

Run:  python demos/04_ablation_sweep.py   (takes a minute or two)
"""

import tempfile
from pathlib import Path

from diablo import harness
from diablo.config import ModelConfig, RunConfig, SyntheticSpec, TrainConfig

base = RunConfig(
    seed=0,
    synthetic=SyntheticSpec(num_classes=8, samples_per_class=10, image_size=16,
                            noise_std=0.1, jitter=2, seed=0),
    model=ModelConfig(branches=4, embedding_size=32, patch_grid=(4, 4),
                      feature_channels=16),
    train=TrainConfig(epochs=6, classes_per_batch=3, samples_per_class=3,
                      batches_per_epoch=5),
)

with tempfile.TemporaryDirectory() as tmp:
    result = harness.ablate(base, axes=["mode", "N"], branch_values=(2, 4),
                            seeds=3, out_dir=Path(tmp) / "sweep")

    print(f"\n{'cell':<38} {'median R@1':>10} {'iqr':>8}")
    for name, fields, r1s, median, spread in result.cells:
        print(f"{name:<38} {median:>10.3f} {spread:>8.3f}")

    print("\nper-cell seeds live in", result.out_dir)
    print((Path(result.out_dir) / "summary.csv").read_text())
