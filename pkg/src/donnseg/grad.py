"""Reverse-mode gradients of scalar losses with respect to all mask phases.

The adjoints are derived by hand: spectral propagation back-propagates with
the conjugated transfer function, phase modulation ``f -> f*e^{i*theta}`` has
parameter gradient ``Im(conj(f*e^{i*theta}) * cotangent)``, the intensity
``|f|^2`` turns a real cotangent g into the complex cotangent ``2*g*f``, and
skip junctions fan the cotangent into both branches.

Losses act on the detector pattern normalized by its per-sample maximum
(floored at 1e-12). That normalizer is differentiated exactly: the division
contributes ``g/M`` and the maximum pixel additionally collects
``-sum(g*P)/M``, which is the almost-everywhere derivative of ``I/max(I)``.
Central finite differences over the identical pipeline serve as the oracle.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import GridMismatchError
from .field import field_from_amplitude
from .metrics import binarize_output, iou
from .model import _channel_backward, _channel_forward

NORM_FLOOR = 1e-12
BCE_EPS = 1e-7
DICE_SMOOTH = 1.0

LOSS_KINDS = ("mse", "bce", "dice", "wbce")


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise GridMismatchError(f"shapes differ: {a.shape} vs {b.shape}")


def _check_binary_gt(gt):
    if not np.isin(gt, (0, 1)).all():
        raise ValueError("ground truth must contain only 0/1 values")


def normalize_detector(i_det):
    """Scale a detector pattern by its maximum (floored) into [0, 1]."""
    from .field import IntensityMap

    scale = max(float(i_det.values.max()), NORM_FLOOR)
    return IntensityMap(i_det.grid, i_det.values / scale)


def _loss_and_grad(p, gt, kind, pos_weight):
    """Loss value plus d loss / dP for a normalized pattern ``p``."""
    n = p.size
    if kind == "mse":
        r = p - gt
        return float(np.mean(r * r)), (2.0 / n) * r
    if kind in ("bce", "wbce"):
        w = float(pos_weight)
        if not w > 0:
            raise ValueError(f"pos_weight must be positive, got {pos_weight!r}")
        pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
        loss = -np.mean(w * gt * np.log(pc) + (1.0 - gt) * np.log1p(-pc))
        grad = (-w * gt / pc + (1.0 - gt) / (1.0 - pc)) / n
        inside = (p > BCE_EPS) & (p < 1.0 - BCE_EPS)
        return float(loss), np.where(inside, grad, 0.0)
    if kind == "dice":
        a = 2.0 * float(np.sum(p * gt)) + DICE_SMOOTH
        b = float(np.sum(p)) + float(np.sum(gt)) + DICE_SMOOTH
        loss = 1.0 - a / b
        grad = (a - 2.0 * gt * b) / (b * b)
        return float(loss), grad
    raise ValueError(f"unknown loss {kind!r}; expected one of {LOSS_KINDS}")


def loss_mse(p_map, gt):
    """Mean squared error between a normalized pattern and a binary mask."""
    gt = np.asarray(gt, dtype=np.float64)
    _check_same_shape(p_map.values, gt)
    _check_binary_gt(gt)
    return _loss_and_grad(p_map.values, gt, "mse", 1.0)[0]


def loss_bce(p_map, gt, pos_weight=1.0):
    """(Weighted) binary cross-entropy; the pattern is clamped away from {0, 1}."""
    gt = np.asarray(gt, dtype=np.float64)
    _check_same_shape(p_map.values, gt)
    _check_binary_gt(gt)
    return _loss_and_grad(p_map.values, gt, "bce", pos_weight)[0]


def loss_dice(p_map, gt):
    """Soft Dice loss with smoothing 1.0 (zero on exact binary agreement)."""
    gt = np.asarray(gt, dtype=np.float64)
    _check_same_shape(p_map.values, gt)
    _check_binary_gt(gt)
    return _loss_and_grad(p_map.values, gt, "dice", 1.0)[0]


def auto_pos_weight(gt):
    """Negatives-to-positives ratio of a mask (1.0 for an empty mask)."""
    pos = int(np.count_nonzero(gt))
    neg = gt.size - pos
    if pos == 0 or neg == 0:
        return 1.0
    return neg / pos


def _detector_forward(model, channel_values):
    """Raw three-channel forward; returns (I_det, per-channel outputs, tapes)."""
    side = model.grid.side_px
    total = np.zeros((side, side), dtype=np.float64)
    outs = []
    tapes = []
    for values, ch in zip(channel_values, model.channels):
        out, tape = _channel_forward(values, ch, model.pad_factor)
        _kernels.intensity_accumulate(total, out)
        outs.append(out)
        tapes.append(tape)
    return total, outs, tapes


def _normalized_loss(i_det, gt, kind, pos_weight):
    """Normalize, evaluate the loss, and return the cotangent of I_det."""
    raw_max = float(i_det.max())
    scale = max(raw_max, NORM_FLOOR)
    p = i_det / scale
    loss, g_p = _loss_and_grad(p, gt, kind, pos_weight)
    g_i = g_p / scale
    if raw_max > NORM_FLOOR:
        flat = int(np.argmax(i_det))
        g_i.flat[flat] -= float(np.sum(g_p * p)) / scale
    return loss, g_i


def _sample_loss_grads(model, channel_values, gt, kind, pos_weight):
    i_det, outs, tapes = _detector_forward(model, channel_values)
    loss, g_i = _normalized_loss(i_det, gt, kind, pos_weight)
    grads = [
        _channel_backward(2.0 * g_i * out, tape, ch, model.pad_factor)
        for out, tape, ch in zip(outs, tapes, model.channels)
    ]
    return loss, grads, i_det


def _validate_sample_inputs(model, fields, gt):
    for f, ch in zip(fields, model.channels):
        if f.grid != ch.grid:
            raise GridMismatchError(f"field grid {f.grid} does not match channel grid {ch.grid}")
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape != (model.grid.side_px, model.grid.side_px):
        raise GridMismatchError(
            f"ground truth shape {gt.shape} does not match grid side {model.grid.side_px}"
        )
    _check_binary_gt(gt)
    return gt


def backward(model, r, g, b, gt, loss="mse", pos_weight=1.0):
    """Loss and exact reverse-mode gradients for one sample.

    Returns ``(loss_value, grads)`` where ``grads[channel][layer]`` is
    d loss / d theta for the corresponding mask.
    """
    gt = _validate_sample_inputs(model, (r, g, b), gt)
    values = [f.values for f in (r, g, b)]
    loss_value, grads, _ = _sample_loss_grads(model, values, gt, loss, pos_weight)
    return loss_value, grads


def forward_loss(model, r, g, b, gt, loss="mse", pos_weight=1.0):
    """Loss of one sample through the identical pipeline used by ``backward``."""
    gt = _validate_sample_inputs(model, (r, g, b), gt)
    i_det, _, _ = _detector_forward(model, [f.values for f in (r, g, b)])
    return _normalized_loss(i_det, gt, loss, pos_weight)[0]


def finite_diff_grad(model, fields, gt, loss, coords, h=1e-5, pos_weight=1.0):
    """Central-difference gradients at selected (channel, layer, row, col)
    coordinates. Each coordinate costs two forward passes, so at most 100
    coordinates are accepted."""
    coords = list(coords)
    if len(coords) > 100:
        raise ValueError(f"at most 100 coordinates per call, got {len(coords)}")
    gt = _validate_sample_inputs(model, fields, gt)
    values = [f.values for f in fields]
    estimates = []
    for c, l, i, j in coords:
        theta = model.channels[c].masks[l].theta
        original = theta[i, j]
        try:
            theta[i, j] = original + h
            up = _normalized_loss(_detector_forward(model, values)[0], gt, loss, pos_weight)[0]
            theta[i, j] = original - h
            down = _normalized_loss(_detector_forward(model, values)[0], gt, loss, pos_weight)[0]
        finally:
            theta[i, j] = original
        estimates.append((up - down) / (2.0 * h))
    return estimates


def gradient_rel_error(analytic, estimate, floor=1e-6):
    """Relative disagreement |a - b| / max(|a|, |b|, floor); the floor keeps
    coordinates with (near-)zero true gradient from dividing by rounding noise."""
    return abs(analytic - estimate) / max(abs(analytic), abs(estimate), floor)


@dataclass
class OptimState:
    """Adaptive-moment optimizer state, shape-congruent with the model phases."""

    m: list
    v: list
    step: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_optim(model, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
    zeros = lambda: [
        [np.zeros_like(mask.theta) for mask in ch.masks] for ch in model.channels
    ]
    return OptimState(m=zeros(), v=zeros(), lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def optim_step(model, grads, state):
    """Apply one optimizer step in place; returns (model, state)."""
    state.step += 1
    for c, ch in enumerate(model.channels):
        for l, mask in enumerate(ch.masks):
            g = grads[c][l]
            if g.shape != mask.theta.shape:
                raise GridMismatchError(
                    f"gradient shape {g.shape} does not match mask shape {mask.theta.shape}"
                )
            _kernels.adam_update(
                mask.theta, state.m[c][l], state.v[c][l], g,
                state.lr, state.beta1, state.beta2, state.eps, state.step,
            )
    return model, state


def _encode_channels(model, sample):
    enc = model.encoding == "sqrt"
    return [
        field_from_amplitude(plane, ch.grid, sqrt_amplitude=enc).values
        for plane, ch in zip((sample.r, sample.g, sample.b), model.channels)
    ]


def train_epoch(
    model,
    samples,
    state,
    *,
    loss="mse",
    batch_size=64,
    epoch=0,
    seed=0,
    pos_weight="auto",
    workers=1,
):
    """One epoch: per-batch mean gradients, one optimizer step per batch.

    Sample order is shuffled deterministically from (seed, epoch). Per-sample
    passes may run on a thread pool; the batch reduction always sums in sample
    order, so results do not depend on the worker count.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("train_epoch requires a non-empty dataset")
    order = np.random.default_rng([seed, epoch]).permutation(len(samples))

    def run_one(idx):
        sample = samples[idx]
        gt = np.asarray(sample.gt, dtype=np.float64)
        w = auto_pos_weight(gt) if pos_weight == "auto" else float(pos_weight)
        values = _encode_channels(model, sample)
        return _sample_loss_grads(model, values, gt, loss, w)

    total_loss = 0.0
    total_iou = 0.0
    for start in range(0, len(order), batch_size):
        batch = order[start : start + batch_size]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run_one, batch))
        else:
            results = [run_one(idx) for idx in batch]
        acc = None
        for idx, (loss_value, grads, i_det) in zip(batch, results):
            total_loss += loss_value
            gt_mask = np.asarray(samples[idx].gt).astype(np.uint8)
            total_iou += iou(binarize_output(i_det), gt_mask)
            if acc is None:
                acc = grads
            else:
                for c in range(3):
                    for l in range(len(acc[c])):
                        acc[c][l] += grads[c][l]
        scale = 1.0 / len(batch)
        for c in range(3):
            for l in range(len(acc[c])):
                acc[c][l] *= scale
        optim_step(model, acc, state)
    n = len(samples)
    return model, state, {"mean_loss": total_loss / n, "train_iou": total_iou / n}
