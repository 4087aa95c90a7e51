"""
The ``cct`` command
===================

The same steps as the other scripts, driven through the command line entry
point. From a shell this is ``cct train ...``, ``cct eval ...`` and so on.
"""

# %%
import tempfile
from pathlib import Path

from cct import data as D
from cct.cli import main

tmp = Path(tempfile.mkdtemp())
D.write_synthetic_archive(tmp / "synthetic.npz", sizes=(256, 32, 96), seed=0)
(tmp / "small.cfg").write_text("embed_dim=32\nnum_heads=2\nffn_hidden=64\nnum_encoder_layers=2\n")
run = tmp / "run"

# %%
main(["train", "--data", str(tmp / "synthetic.npz"), "--config", str(tmp / "small.cfg"),
      "--out", str(run), "--epochs", "3", "--seed", "7"])

# %%
main(["eval", "--checkpoint", str(run / "checkpoint.cct"), "--data", str(tmp / "synthetic.npz")])

# %%
main(["predict", "--checkpoint", str(run / "checkpoint.cct"), "--npz", str(tmp / "synthetic.npz"), "--index", "0"])

# %%
main(["plot", str(run)])
print(sorted(p.name for p in run.iterdir()))
