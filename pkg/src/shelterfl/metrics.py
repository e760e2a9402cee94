"""Confusion-matrix metrics and the report tables built from them.

Axis order everywhere is transitional, episodic, chronic. Any 0/0 ratio is
reported as 0.
"""

from __future__ import annotations

import csv
import io
import logging
from typing import Mapping, Sequence

import numpy as np

from .domain import Label, N_CLASSES

logger = logging.getLogger(__name__)

CLASS_NAMES = tuple(str(lab) for lab in Label)


def confusion_matrix(y_true, y_pred) -> np.ndarray:
    """3x3 counts, rows = true label, columns = predicted label."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("label vectors differ in length")
    return np.bincount(y_true * N_CLASSES + y_pred, minlength=N_CLASSES**2).reshape(N_CLASSES, N_CLASSES)


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def per_class_metrics(cm) -> dict[str, np.ndarray]:
    cm = np.asarray(cm)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    if np.any(predicted == 0) or np.any(actual == 0):
        logger.debug("0/0 metric for classes %s", np.flatnonzero((predicted == 0) | (actual == 0)).tolist())
    precision = _safe_div(tp, predicted)
    recall = _safe_div(tp, actual)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return {"precision": precision, "recall": recall, "f1": f1, "support": actual.astype(np.int64)}


def macro_metrics(cm) -> dict[str, float]:
    pc = per_class_metrics(cm)
    return {k: float(np.mean(pc[k])) for k in ("precision", "recall", "f1")}


def weighted_metrics(cm) -> dict[str, float]:
    """Support-weighted averages of the per-class values."""
    pc = per_class_metrics(cm)
    support = pc["support"].astype(np.float64)
    if support.sum() == 0:
        return {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    w = support / support.sum()
    return {k: float(np.dot(w, pc[k])) for k in ("precision", "recall", "f1")}


def summarize(cm) -> dict:
    """Everything reported for one confusion matrix, as plain Python values."""
    pc = per_class_metrics(cm)
    return {
        "n": int(np.asarray(cm).sum()),
        "confusion": np.asarray(cm).astype(int).tolist(),
        "macro": macro_metrics(cm),
        "weighted": weighted_metrics(cm),
        "per_class": {
            name: {k: float(pc[k][i]) for k in ("precision", "recall", "f1")}
            for i, name in enumerate(CLASS_NAMES)
        },
    }


def agency_confusions(y_true, y_pred, agency_ids) -> dict[str, np.ndarray]:
    """Slice one pooled evaluation into per-agency confusion matrices."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    agency_ids = np.asarray(agency_ids)
    return {
        str(a): confusion_matrix(y_true[agency_ids == a], y_pred[agency_ids == a])
        for a in sorted(set(agency_ids.tolist()))
    }


def pool(cms) -> np.ndarray:
    total = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for cm in cms:
        total += np.asarray(cm, dtype=np.int64)
    return total


def per_agency_report(
    confusions: Mapping[str, np.ndarray], client_counts: Mapping[str, int] | None = None
) -> list[dict]:
    """One row per agency: client count, test count, macro precision/recall/F1.

    Rows are sorted by agency id (numerically when ids are numbers).
    """
    rows = []
    for agency in sorted(confusions, key=agency_sort_key):
        cm = confusions[agency]
        m = macro_metrics(cm)
        rows.append(
            {
                "agency": agency,
                "clients": int(client_counts[agency]) if client_counts else int(np.sum(cm)),
                "n_test": int(np.sum(cm)),
                **m,
            }
        )
    return rows


def agency_sort_key(a: str):
    return (0, int(a), a) if a.isdigit() else (1, 0, a)


# -- table rendering ----------------------------------------------------------


def format_table(rows: Sequence[dict], columns: Sequence[str], floatfmt: str = "{:.4f}") -> str:
    """Aligned plain-text table."""

    def cell(v):
        if isinstance(v, float):
            return floatfmt.format(v)
        return str(v)

    body = [[cell(r[c]) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) if body else len(c) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(v.rjust(w) for v, w in zip(b, widths)) for b in body)
    return "\n".join(lines) + "\n"


def to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    return buf.getvalue()
