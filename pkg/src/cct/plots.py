"""Dependency-free SVG charts for training curves and ROC curves."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#000000")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class _Panel:
    """Maps data coordinates into a rectangle of the canvas."""

    def __init__(self, x0, y0, w, h, xlim, ylim):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.xlim, self.ylim = xlim, ylim

    def px(self, x, y):
        (xa, xb), (ya, yb) = self.xlim, self.ylim
        fx = (x - xa) / (xb - xa) if xb != xa else 0.5
        fy = (y - ya) / (yb - ya) if yb != ya else 0.5
        return self.x0 + fx * self.w, self.y0 + self.h - fy * self.h

    def frame(self, title: str, xlabel: str, ylabel: str) -> list[str]:
        x0, y0, w, h = self.x0, self.y0, self.w, self.h
        out = [
            f'<rect x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(w)}" height="{_fmt(h)}" fill="none" stroke="#333"/>',
            f'<text x="{_fmt(x0 + w / 2)}" y="{_fmt(y0 - 10)}" text-anchor="middle" font-size="14">{escape(title)}</text>',
            f'<text x="{_fmt(x0 + w / 2)}" y="{_fmt(y0 + h + 35)}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
            f'<text x="{_fmt(x0 - 45)}" y="{_fmt(y0 + h / 2)}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 {_fmt(x0 - 45)} {_fmt(y0 + h / 2)})">{escape(ylabel)}</text>',
        ]
        for i in range(5):
            fx = self.xlim[0] + (self.xlim[1] - self.xlim[0]) * i / 4
            fy = self.ylim[0] + (self.ylim[1] - self.ylim[0]) * i / 4
            px, _ = self.px(fx, self.ylim[0])
            _, py = self.px(self.xlim[0], fy)
            out.append(f'<text x="{_fmt(px)}" y="{_fmt(y0 + h + 15)}" text-anchor="middle" font-size="10">{fx:.3g}</text>')
            out.append(f'<text x="{_fmt(x0 - 5)}" y="{_fmt(py + 3)}" text-anchor="end" font-size="10">{fy:.3g}</text>')
        return out

    def polyline(self, xs, ys, color: str, label: str, dashed: bool = False) -> str:
        pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in (self.px(x, y) for x, y in zip(xs, ys)))
        dash = ' stroke-dasharray="5,3"' if dashed else ""
        return (f'<polyline data-series="{escape(label)}" points="{pts}" fill="none" '
                f'stroke="{color}" stroke-width="1.5"{dash}/>')

    def legend(self, entries) -> list[str]:
        out = []
        for i, (label, color) in enumerate(entries):
            y = self.y0 + 15 + 15 * i
            x = self.x0 + self.w - 150
            out.append(f'<line x1="{_fmt(x)}" y1="{_fmt(y - 4)}" x2="{_fmt(x + 20)}" y2="{_fmt(y - 4)}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text class="legend" x="{_fmt(x + 25)}" y="{_fmt(y)}" font-size="11">{escape(label)}</text>')
        return out


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">')
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>', *body, "</svg>"]) + "\n"


def _limits(values, pad=0.05):
    lo, hi = float(np.min(values)), float(np.max(values))
    span = hi - lo or 1.0
    return lo - pad * span, hi + pad * span


def training_curves_svg(epochs, train_loss, val_loss, train_acc, val_acc) -> str:
    """Two panels: loss (left) and accuracy (right) against epoch."""
    if len(epochs) == 0:
        raise ValueError("no epochs to plot")
    xlim = (min(epochs), max(epochs)) if len(epochs) > 1 else (epochs[0] - 1, epochs[0] + 1)
    body = []
    for k, (title, ylabel, tr, va) in enumerate((("Loss", "loss", train_loss, val_loss),
                                                 ("Accuracy", "accuracy", train_acc, val_acc))):
        panel = _Panel(70 + 430 * k, 40, 340, 260, xlim, _limits(list(tr) + list(va)))
        body += panel.frame(title, "epoch", ylabel)
        body.append(panel.polyline(epochs, tr, COLORS[0], f"train {ylabel}"))
        body.append(panel.polyline(epochs, va, COLORS[1], f"validation {ylabel}"))
        body += panel.legend([(f"train {ylabel}", COLORS[0]), (f"validation {ylabel}", COLORS[1])])
    return _svg(860, 350, body)


def roc_svg(curves) -> str:
    """Overlay of ``(label, fpr, tpr, auc)`` curves with the chance diagonal."""
    if not curves:
        raise ValueError("no ROC curves to plot")
    panel = _Panel(70, 40, 420, 420, (0.0, 1.0), (0.0, 1.0))
    body = panel.frame("Receiver operating characteristic", "false positive rate", "true positive rate")
    body.append(panel.polyline([0, 1], [0, 1], "#bbbbbb", "chance", dashed=True))
    entries = []
    for i, (label, fpr, tpr, auc) in enumerate(curves):
        color = COLORS[i % len(COLORS)]
        body.append(panel.polyline(fpr, tpr, color, label))
        entries.append((f"{label} (AUC = {auc:.4f})", color))
    legend_panel = _Panel(520, 40, 330, 420, (0, 1), (0, 1))
    body += legend_panel.legend(entries)
    return _svg(860, 500, body)
