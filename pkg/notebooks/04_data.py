"""
Reading MedMNIST archives
=========================

The loader reads ``.npz`` files with the standard library zip reader and a
small ``.npy`` header parser. A synthetic archive stands in for BloodMNIST.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from cct import data as D

tmp = Path(tempfile.mkdtemp())
path = tmp / "synthetic.npz"
D.write_synthetic_archive(path, sizes=(512, 64, 128), seed=0)

# %%
bundle = D.load_npz(path)
for name in D.SPLITS:
    split = bundle.split(name)
    print(f"{name:5s} {len(split):4d} images, class counts {np.bincount(split.labels, minlength=8)}")
print("pixel range", bundle.train.images.min(), bundle.train.images.max())

# %% the training split gives up 10% as a validation holdout
fit, val = D.holdout_split(bundle.train, 0.1, seed=0)
print("fit", len(fit), "validation", len(val))
fit_idx, val_idx = D.holdout_indices(11959, 0.1, 0)
print("the full training split would become", fit_idx.size, "/", val_idx.size)

# %% random crop (2 px padding) and horizontal flip, drawn per image
batch = bundle.train.images[:4]
aug = D.augment(batch, seed=0)
print("augmented", aug.shape, "changed pixels per image", (aug != batch).reshape(4, -1).mean(axis=1).round(2))

# %% mini-batches follow a fresh permutation each epoch
sizes = [len(x) for x, _ in D.batches(fit, batch_size=64, seed=0, epoch=1)]
print("batch sizes", sizes)
