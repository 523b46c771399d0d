"""Confusion matrix, per-class precision/recall/F1 and report writers."""
import csv
import io
from dataclasses import dataclass

import numpy as np

from .exceptions import InputError


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalReport:
    confusion: np.ndarray
    per_class: list
    accuracy: float
    macro: ClassScores
    weighted: ClassScores
    # class indices whose precision or recall had a zero denominator
    undefined: tuple = ()

    def to_csv(self, class_names=None):
        names = class_names or [str(k) for k in range(len(self.per_class))]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "precision", "recall", "f1", "support"])
        for name, s in zip(names, self.per_class):
            w.writerow([name, f"{s.precision:.6f}", f"{s.recall:.6f}", f"{s.f1:.6f}", s.support])
        for label, s in (("macro avg", self.macro), ("weighted avg", self.weighted)):
            w.writerow([label, f"{s.precision:.6f}", f"{s.recall:.6f}", f"{s.f1:.6f}", s.support])
        return buf.getvalue()


def confusion_matrix(y_true, y_pred, n_classes):
    """``cm[i, j]`` counts samples of true class ``i`` predicted as ``j``."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise InputError(f"confusion_matrix: shapes {y_true.shape} and {y_pred.shape}")
    for arr, what in ((y_true, "y_true"), (y_pred, "y_pred")):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise InputError(f"confusion_matrix: {what} has labels outside [0, {n_classes})")
    flat = np.bincount(y_true * n_classes + y_pred, minlength=n_classes * n_classes)
    return flat.reshape(n_classes, n_classes)


def _safe_div(num, den):
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def classification_report(confusion):
    cm = np.asarray(confusion)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise InputError(f"classification_report: need a square matrix, got {cm.shape}")
    if (cm < 0).any():
        raise InputError("classification_report: negative counts")
    total = int(cm.sum())
    if total == 0:
        raise InputError("classification_report: confusion matrix is all zeros")
    tp = np.diag(cm).astype(np.float64)
    col = cm.sum(axis=0).astype(np.float64)
    row = cm.sum(axis=1).astype(np.float64)
    precision = _safe_div(tp, col)
    recall = _safe_div(tp, row)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    support = cm.sum(axis=1).astype(np.int64)
    per_class = [ClassScores(float(p), float(r), float(f), int(s))
                 for p, r, f, s in zip(precision, recall, f1, support)]
    macro = ClassScores(float(precision.mean()), float(recall.mean()), float(f1.mean()), total)
    wts = support / total
    weighted = ClassScores(float(precision @ wts), float(recall @ wts), float(f1 @ wts), total)
    undefined = tuple(int(k) for k in np.flatnonzero((col == 0) | (row == 0)))
    return EvalReport(cm, per_class, float(tp.sum() / total), macro, weighted, undefined)


def confusion_to_csv(confusion, class_names=None):
    cm = np.asarray(confusion)
    names = class_names or [str(k) for k in range(cm.shape[0])]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred"] + list(names))
    for name, row in zip(names, cm):
        w.writerow([name] + [int(v) for v in row])
    return buf.getvalue()


def _escape(text):
    return (str(text).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace('"', "&quot;"))


def confusion_heatmap_svg(confusion, class_names=None, title="Confusion matrix", cell=28):
    """Standalone SVG heatmap, coloured by row-normalized counts and annotated."""
    cm = np.asarray(confusion)
    k = cm.shape[0]
    names = class_names or [str(i) for i in range(k)]
    rates = _safe_div(cm.astype(np.float64), cm.sum(axis=1, keepdims=True).astype(np.float64))
    left, top = 130, 130
    width, height = left + k * cell + 20, top + k * cell + 40
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{_escape(title)}</text>',
        f'<text x="{left + k * cell / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="11">Predicted</text>',
        f'<text x="14" y="{top + k * cell / 2:.1f}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 14 {top + k * cell / 2:.1f})">True</text>',
    ]
    for i in range(k):
        y = top + i * cell
        out.append(f'<text x="{left - 4}" y="{y + cell * 0.65:.1f}" text-anchor="end" '
                   f'font-size="9">{_escape(names[i])}</text>')
        x = left + i * cell + cell * 0.6
        out.append(f'<text x="{x:.1f}" y="{top - 4}" font-size="9" '
                   f'transform="rotate(-60 {x:.1f} {top - 4})">{_escape(names[i])}</text>')
        for j in range(k):
            rate = rates[i, j]
            # white -> dark blue
            r = int(round(255 - 247 * rate))
            g = int(round(255 - 207 * rate))
            b = int(round(255 - 148 * rate))
            out.append(f'<rect x="{left + j * cell}" y="{y}" width="{cell}" height="{cell}" '
                       f'fill="rgb({r},{g},{b})" stroke="#ccc" stroke-width="0.5"/>')
            if cm[i, j]:
                colour = "#fff" if rate > 0.5 else "#000"
                out.append(f'<text x="{left + j * cell + cell / 2:.1f}" y="{y + cell * 0.62:.1f}" '
                           f'text-anchor="middle" font-size="8" fill="{colour}">{int(cm[i, j])}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
