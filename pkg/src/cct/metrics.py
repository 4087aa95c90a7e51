"""Classification metrics: confusion matrix, per-class report, top-k, ROC/AUC."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np


def _check_labels(labels, k: int, what: str) -> np.ndarray:
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"{what} labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    return labels


def argmax_lowest(scores: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    return np.asarray(scores).argmax(axis=1)


def confusion_matrix(true, pred, k: int) -> np.ndarray:
    """counts[t, p]: rows are true classes, columns predicted classes."""
    true = _check_labels(true, k, "true")
    pred = _check_labels(pred, k, "predicted")
    if true.shape != pred.shape:
        raise ValueError(f"true and predicted label counts differ: {true.size} vs {pred.size}")
    return np.bincount(true * k + pred, minlength=k * k).reshape(k, k).astype(np.uint64)


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    degenerate: bool = False


@dataclass
class ClassReport:
    classes: list[ClassMetrics]
    accuracy: float
    total: int
    macro: ClassMetrics
    weighted: ClassMetrics


def _safe_div(num: float, den: float) -> tuple[float, bool]:
    return (num / den, False) if den else (0.0, True)


def classification_report(cm: np.ndarray) -> ClassReport:
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    if total == 0:
        raise ValueError("classification report needs at least one sample")
    tp = np.diag(cm)
    pred_tot = cm.sum(axis=0)
    true_tot = cm.sum(axis=1)
    rows = []
    for i in range(cm.shape[0]):
        p, dp = _safe_div(float(tp[i]), float(pred_tot[i]))
        r, dr = _safe_div(float(tp[i]), float(true_tot[i]))
        f, df = _safe_div(2 * p * r, p + r)
        rows.append(ClassMetrics(p, r, f, int(true_tot[i]), dp or dr or df))
    k = len(rows)
    P = np.array([c.precision for c in rows])
    R = np.array([c.recall for c in rows])
    F = np.array([c.f1 for c in rows])
    w = true_tot / total
    macro = ClassMetrics(float(P.sum() / k), float(R.sum() / k), float(F.sum() / k), total)
    weighted = ClassMetrics(float(P @ w), float(R @ w), float(F @ w), total)
    return ClassReport(rows, float(tp.sum()) / total, total, macro, weighted)


def topk_accuracy(scores, true, k: int) -> float:
    """Share of rows whose true label is among the ``k`` best scores.

    Equal scores rank the lower class index first.
    """
    scores = np.asarray(scores)
    K = scores.shape[1]
    if not 1 <= k <= K:
        raise ValueError(f"k must be in [1, {K}], got {k}")
    true = _check_labels(true, K, "true")
    # rank of the true class = #classes strictly better + #equal classes with lower index
    s_true = scores[np.arange(len(true)), true][:, None]
    idx = np.arange(K)[None, :]
    better = (scores > s_true) | ((scores == s_true) & (idx < true[:, None]))
    return float((better.sum(axis=1) < k).mean()) if len(true) else 0.0


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def roc_curve(scores, is_positive) -> RocCurve:
    """One ROC curve over descending distinct thresholds, AUC by trapezoids.

    The first point is (0, 0) at threshold +inf. Tied scores form one step,
    which makes the AUC equal to the pair-counting statistic with half
    credit for ties.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    pos = np.asarray(is_positive, dtype=bool).reshape(-1)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative sample")
    order = np.argsort(-scores, kind="mergesort")
    s, p = scores[order], pos[order]
    last = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tps = np.cumsum(p)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, s[last]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1])) / 2.0)
    return RocCurve(thresholds, fpr, tpr, auc)


@dataclass
class MulticlassRoc:
    per_class: list[RocCurve | None]
    micro: RocCurve


def multiclass_roc(scores, true) -> MulticlassRoc:
    scores = np.asarray(scores, dtype=np.float64)
    K = scores.shape[1]
    true = _check_labels(true, K, "true")
    onehot = np.zeros_like(scores, dtype=bool)
    onehot[np.arange(len(true)), true] = True
    # a class absent from (or filling) the sample has no ROC curve
    per_class = [
        roc_curve(scores[:, c], onehot[:, c]) if 0 < onehot[:, c].sum() < len(true) else None
        for c in range(K)
    ]
    micro = roc_curve(scores.reshape(-1), onehot.reshape(-1))
    return MulticlassRoc(per_class, micro)


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# full evaluation + file emission


@dataclass
class EvalReport:
    report: ClassReport
    confusion: np.ndarray
    top1: float
    top2: float
    roc: MulticlassRoc
    class_names: tuple[str, ...] = field(default=())


def evaluate_scores(probs, true, class_names=()) -> EvalReport:
    probs = np.asarray(probs)
    K = probs.shape[1]
    cm = confusion_matrix(true, argmax_lowest(probs), K)
    return EvalReport(
        report=classification_report(cm),
        confusion=cm,
        top1=topk_accuracy(probs, true, 1),
        top2=topk_accuracy(probs, true, min(2, K)),
        roc=multiclass_roc(probs, true),
        class_names=tuple(class_names),
    )


def format_report(rep: ClassReport) -> str:
    """Text table with class rows, then accuracy / macro / weighted rows."""
    lines = [f"{'':>14}{'precision':>10}{'recall':>10}{'f1-score':>10}{'support':>10}", ""]
    for i, c in enumerate(rep.classes):
        lines.append(f"{i:>14}{c.precision:>10.2f}{c.recall:>10.2f}{c.f1:>10.2f}{c.support:>10}")
    lines.append("")
    lines.append(f"{'accuracy':>14}{'':>10}{'':>10}{rep.accuracy:>10.4f}{rep.total:>10}")
    for label, m in (("macro avg", rep.macro), ("weighted avg", rep.weighted)):
        lines.append(f"{label:>14}{m.precision:>10.2f}{m.recall:>10.2f}{m.f1:>10.2f}{m.support:>10}")
    return "\n".join(lines) + "\n"


def report_dict(ev: EvalReport) -> dict:
    rep = ev.report
    return {
        "accuracy": rep.accuracy,
        "top1_accuracy": ev.top1,
        "top2_accuracy": ev.top2,
        "total": rep.total,
        "classes": [dict(asdict(c), index=i, name=(ev.class_names[i] if i < len(ev.class_names) else str(i)))
                    for i, c in enumerate(rep.classes)],
        "macro_avg": asdict(rep.macro),
        "weighted_avg": asdict(rep.weighted),
        "auc": {"per_class": [r.auc if r is not None else None for r in ev.roc.per_class], "micro": ev.roc.micro.auc},
        "confusion_matrix": ev.confusion.astype(int).tolist(),
    }


def _write_roc_csv(path: str, curve: RocCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, p in zip(curve.thresholds, curve.fpr, curve.tpr):
            w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])


def write_reports(ev: EvalReport, out_dir: str) -> list[str]:
    """Emit report.json, report.txt, confusion.csv and the ROC CSVs."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def path(name):
        p = os.path.join(out_dir, name)
        written.append(p)
        return p

    with open(path("report.json"), "w") as fh:
        json.dump(report_dict(ev), fh, indent=2)
        fh.write("\n")
    with open(path("report.txt"), "w") as fh:
        fh.write(format_report(ev.report))
    with open(path("confusion.csv"), "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(ev.confusion.astype(int).tolist())
    for i, curve in enumerate(ev.roc.per_class):
        if curve is None:
            continue
        _write_roc_csv(path(f"roc_class_{i}.csv"), curve)
    _write_roc_csv(path("roc_micro.csv"), ev.roc.micro)
    return written


def read_roc_csv(path: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return tuple(np.array([float(r[k]) for r in rows]) for k in ("threshold", "fpr", "tpr"))
