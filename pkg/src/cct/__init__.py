"""Compact Convolutional Transformer for 8-class blood-cell images, in numpy."""

from .data import CLASS_NAMES, DatasetBundle, Split, load_npz
from .metrics import classification_report, confusion_matrix, multiclass_roc, roc_curve, topk_accuracy
from .model import CctConfig, forward, init_params, param_count
from .nn import DropState
from .tensor import Tensor, float64_mode, grad_check, no_grad
from .training import AdamW, Checkpoint, label_smoothed_ce, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
