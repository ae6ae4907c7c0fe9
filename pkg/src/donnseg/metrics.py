"""Output binarization and binary segmentation metrics.

Dataset-level figures are the mean of per-sample metrics (not pooled pixel
counts). Foreground-only IoU is reported, consistent with precision/recall
over the positive class.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError

# Published full-scale reference results for this architecture (480x480,
# deep stacks, 500 epochs). Kept as documented targets; the desk-scale test
# suite does not reproduce them.
REFERENCE_RESULTS = {
    "cityscapes_rgb_mse_iou": 0.70,
    "cityscapes_rgb_bce_iou": 0.66,
    "cityscapes_rgb_dice_iou": 0.66,
    "cityscapes_gray_mse_iou": 0.36,
    "cityscapes_rgb_iou": 0.71,
    "cityscapes_rgb_f1": 0.83,
    "cityscapes_rgb_precision": 0.79,
    "cityscapes_rgb_recall": 0.88,
    "cityscapes_unet_iou": 0.87,
    "indoor_track_iou": 0.80,
}


@dataclass(frozen=True)
class ConfusionCounts:
    """Pixel counts of a binary prediction against a binary ground truth."""

    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def _as_values(x):
    return x.values if hasattr(x, "values") else np.asarray(x)


def _check_binary(arr, name):
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0/1 values")


def otsu_threshold(values, bins=256):
    """Otsu's threshold (maximum between-class variance) on a histogram."""
    hist, edges = np.histogram(values, bins=bins)
    centers = (edges[:-1] + edges[1:]) / 2.0
    weight = hist.astype(np.float64)
    total = weight.sum()
    cum_w = np.cumsum(weight)
    cum_m = np.cumsum(weight * centers)
    mean_total = cum_m[-1] / total
    w0 = cum_w
    w1 = total - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = cum_m / w0
        mu1 = (cum_m[-1] - cum_m) / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
    between[~np.isfinite(between)] = -1.0
    return float(centers[int(np.argmax(between))])


def binarize_output(i_det, method="fixed"):
    """Min-max normalize an intensity pattern and threshold it.

    ``method="fixed"`` thresholds at 0.5, ``method="otsu"`` picks the Otsu
    threshold instead. A constant map cannot be normalized and yields an
    all-zero mask with a warning.
    """
    values = _as_values(i_det)
    lo = float(values.min())
    hi = float(values.max())
    if hi == lo:
        warnings.warn("constant intensity map; binarized output is all zeros", stacklevel=2)
        return np.zeros(values.shape, dtype=np.uint8)
    norm = (values - lo) / (hi - lo)
    if method == "fixed":
        thresh = 0.5
    elif method == "otsu":
        thresh = otsu_threshold(norm)
    else:
        raise ValueError(f"unknown binarization method {method!r}")
    return (norm > thresh).astype(np.uint8)


def confusion(pred, gt):
    """Confusion counts between two binary masks of identical shape."""
    pred = _as_values(pred)
    gt = _as_values(gt)
    if pred.shape != gt.shape:
        raise GridMismatchError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    _check_binary(pred, "pred")
    _check_binary(gt, "gt")
    p = pred.astype(bool)
    g = gt.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(np.count_nonzero(~p & ~g))
    return ConfusionCounts(tp, fp, fn, tn)


def iou(pred, gt):
    """Intersection over union of the positive class; 1.0 when both are empty."""
    c = confusion(pred, gt)
    union = c.tp + c.fp + c.fn
    if union == 0:
        return 1.0
    return c.tp / union


def prf1(pred, gt):
    """(precision, recall, f1). Empty-vs-empty counts as a perfect match;
    any other 0/0 ratio resolves to 0.0."""
    c = confusion(pred, gt)
    pred_empty = c.tp + c.fp == 0
    gt_empty = c.tp + c.fn == 0
    precision = (1.0 if gt_empty else 0.0) if pred_empty else c.tp / (c.tp + c.fp)
    recall = (1.0 if pred_empty else 0.0) if gt_empty else c.tp / (c.tp + c.fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def format_eval_report(rows, header_lines=()):
    """Render per-sample metric rows plus their mean as a TSV report."""
    out = []
    for line in header_lines:
        out.append(f"# {line}")
    out.append("sample\tiou\tprecision\trecall\tf1")
    for name, vals in rows:
        out.append(
            f"{name}\t{vals['iou']:.6f}\t{vals['precision']:.6f}"
            f"\t{vals['recall']:.6f}\t{vals['f1']:.6f}"
        )
    def mean(key):
        return sum(v[key] for _, v in rows) / len(rows)
    out.append(
        f"mean\t{mean('iou'):.6f}\t{mean('precision'):.6f}"
        f"\t{mean('recall'):.6f}\t{mean('f1'):.6f}"
    )
    return "\n".join(out) + "\n"
