"""
Training and checkpoints
========================

A short run of a narrow model on synthetic data, then a checkpoint round trip.
The real run uses the default config on BloodMNIST (75 epochs).
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from cct import data as D
from cct.model import CctConfig
from cct.training import evaluate_split, load_checkpoint, save_checkpoint, train

tmp = Path(tempfile.mkdtemp())
D.write_synthetic_archive(tmp / "synthetic.npz", sizes=(512, 64, 128), seed=0)
bundle = D.load_npz(tmp / "synthetic.npz")

cfg = CctConfig(embed_dim=32, num_heads=2, ffn_hidden=64, num_encoder_layers=2, epochs=25, seed=0)

# %%
ck, log = train(cfg, bundle, on_epoch=lambda r: print(
    f"epoch {r.epoch}: train_acc {r.train_acc:.3f} val_acc {r.val_acc:.3f} ({r.wall_seconds:.1f}s)"))
print(f"best checkpoint: epoch {ck.epoch}, val_acc {ck.best_val_accuracy:.3f}")

# %% checkpoints are a flat binary file with a trailing checksum
save_checkpoint(ck, tmp / "model.cct")
back = load_checkpoint(tmp / "model.cct")
print("round trip identical:", all(np.array_equal(ck.params[k], back.params[k]) for k in ck.params))
print("test loss / accuracy:", evaluate_split(back.to_model(), back.config, bundle.test))

# %%
print(log.to_csv(timing=False))
