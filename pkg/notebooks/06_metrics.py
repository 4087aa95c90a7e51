"""
Evaluation reports
==================

Classification report, top-k accuracy and one-vs-rest ROC curves from a
matrix of class probabilities.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from cct import metrics as M
from cct.data import CLASS_NAMES
from cct.plots import roc_svg

rng = np.random.default_rng(0)
true = rng.integers(0, 8, 400)
logits = rng.normal(size=(400, 8))
logits[np.arange(400), true] += 2.5  # a decent but imperfect classifier
probs = M.softmax_np(logits)

# %%
ev = M.evaluate_scores(probs, true, CLASS_NAMES)
print(M.format_report(ev.report))
print(f"top-1 {ev.top1:.4f}  top-2 {ev.top2:.4f}")

# %% AUC per class and after flattening all (sample, class) pairs
for i, curve in enumerate(ev.roc.per_class):
    print(f"class {i} AUC {curve.auc:.4f}")
print(f"micro-average AUC {ev.roc.micro.auc:.4f}")

# %% reports and the ROC plot land in a directory
out = Path(tempfile.mkdtemp())
M.write_reports(ev, out)
curves = [(f"class {i}", c.fpr, c.tpr, c.auc) for i, c in enumerate(ev.roc.per_class)]
curves.append(("micro-average", ev.roc.micro.fpr, ev.roc.micro.tpr, ev.roc.micro.auc))
(out / "roc.svg").write_text(roc_svg(curves))
print(sorted(p.name for p in out.iterdir()))
