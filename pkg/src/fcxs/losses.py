"""Class-frequency-weighted training objectives.

Given a minibatch with total pixel count c and per-class pixel counts
c_l, the weight ratios are r_l = c_l / c and the loss multiplies each
class distance by 1/r_l, so scarce classes (clavicles) contribute on
par with dominant ones (lungs).

Two distance functions are supported, each tied to an output head and a
ground-truth encoding:

* cross entropy -- softmax head, disjoint 4-channel 'entropy' encoding;
  the per-class distance is the masked mean log probability
  (1/c) * sum_x chi_l(x) * log p_l(x), with probabilities clamped to
  [1e-7, 1 - 1e-7] so an unlucky zero never produces NaN.
* dice          -- sigmoid head, overlapping 3-channel 'dice' encoding;
  the per-class distance is the soft overlap
  2 * sum(chi_l * p_l) / sum(chi_l + p_l), which works on real-valued
  maps and needs no thresholding inside the training loop.

Both distances are negated and weight-summed into the scalar loss
L = -sum_l w_l * d_l, differentiable end to end.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import ops
from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

PROB_CLAMP = 1e-7
DISTANCES = ("cross_entropy", "dice")


@dataclass(frozen=True)
class LossConfig:
    """Distance choice plus whether inverse class-frequency weights apply."""

    distance: str = "dice"
    weighted: bool = True

    def __post_init__(self):
        if self.distance not in DISTANCES:
            raise ConfigError(f"unknown distance {self.distance!r}; expected one of {DISTANCES}")

    @property
    def head(self) -> str:
        return "softmax" if self.distance == "cross_entropy" else "sigmoid"

    @property
    def encoding(self) -> str:
        return "entropy" if self.distance == "cross_entropy" else "dice"

    def validate_pairing(self, arch_config) -> None:
        if arch_config.head != self.head:
            raise ConfigError(
                f"loss distance {self.distance!r} requires a {self.head} head, "
                f"but the architecture uses {arch_config.head!r}"
            )

    def to_dict(self) -> dict:
        return {"distance": self.distance, "weighted": self.weighted}


def _as_channel_stack(ground_truths) -> np.ndarray:
    if isinstance(ground_truths, np.ndarray):
        chi = ground_truths
    else:
        chi = np.stack([gt.channels for gt in ground_truths])
    if chi.ndim != 4:
        raise ShapeError(f"expected stacked ground truth (N,L,H,W), got shape {chi.shape}")
    return chi


def class_weights(ground_truths) -> np.ndarray:
    """Per-class pixel fractions r_l = c_l / c over a batch.

    A class absent from the whole batch gets its count clamped to one
    pixel (with a warning) so the inverse weight stays finite.
    """
    chi = _as_channel_stack(ground_truths)
    total = float(chi.shape[0] * chi.shape[2] * chi.shape[3])
    counts = chi.sum(axis=(0, 2, 3)).astype(np.float64)
    absent = counts == 0
    if absent.any():
        warnings.warn(
            f"classes {np.flatnonzero(absent).tolist()} absent from batch; "
            "clamping their pixel count to 1",
            stacklevel=2,
        )
        counts[absent] = 1.0
    return counts / total


def distance_cross_entropy(p: Tensor, ground_truth, l: int) -> Tensor:
    """Masked mean log-probability for class l (a non-positive scalar)."""
    chi = _as_channel_stack(ground_truth)
    _check_match(p, chi, l)
    selector = np.zeros(p.shape, dtype=p.data.dtype)
    selector[:, l] = chi[:, l]
    c_total = float(chi.shape[0] * chi.shape[2] * chi.shape[3])
    clamped = T.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return T.mul(T.tsum(T.mul(T.log(clamped), Tensor(selector))), 1.0 / c_total)


def distance_dice(p: Tensor, ground_truth, l: int) -> Tensor:
    """Soft Dice overlap for class l, in [0, 1]; empty-vs-empty counts as 1."""
    chi = _as_channel_stack(ground_truth)
    _check_match(p, chi, l)
    selector = np.zeros(p.shape, dtype=p.data.dtype)
    selector[:, l] = chi[:, l]
    only_l = np.zeros(p.shape, dtype=p.data.dtype)
    only_l[:, l] = 1.0
    chi_sum = float(selector.sum())
    p_sum = float((p.data * only_l).sum())
    smooth = 1.0 if (chi_sum == 0.0 and p_sum == 0.0) else 0.0
    numer = T.add(T.mul(T.tsum(T.mul(p, Tensor(selector))), 2.0), smooth)
    denom = T.add(T.tsum(T.mul(p, Tensor(only_l))), chi_sum + smooth)
    return T.div(numer, denom)


def _check_match(p: Tensor, chi: np.ndarray, l: int) -> None:
    if p.shape != chi.shape:
        raise ShapeError(f"probability maps {p.shape} do not match ground truth {chi.shape}")
    if not 0 <= l < chi.shape[1]:
        raise ConfigError(f"class index {l} out of range for {chi.shape[1]} channels")


def segmentation_loss(p: Tensor, ground_truth, config: LossConfig, weights=None) -> Tensor:
    """The scalar objective L = -sum_l w_l * d_l over all classes.

    ``weights`` are the inverse ratios 1/r_l; computed from the batch
    when omitted and config.weighted is set, all ones otherwise.
    Vectorized over channels but numerically identical to composing the
    per-class distance functions.
    """
    chi = _as_channel_stack(ground_truth)
    if p.shape != chi.shape:
        raise ShapeError(f"probability maps {p.shape} do not match ground truth {chi.shape}")
    n_classes = chi.shape[1]
    if weights is None:
        weights = 1.0 / class_weights(chi) if config.weighted else np.ones(n_classes)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (n_classes,):
        raise ShapeError(f"weights shape {weights.shape} != ({n_classes},)")
    chi = chi.astype(p.data.dtype)
    w = Tensor(weights.astype(p.data.dtype))

    if config.distance == "cross_entropy":
        c_total = float(chi.shape[0] * chi.shape[2] * chi.shape[3])
        masked = T.mul(T.log(T.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)), Tensor(chi))
        d = T.mul(ops.sum_per_channel(masked), 1.0 / c_total)
    else:
        chi_sums = chi.sum(axis=(0, 2, 3))
        p_sums = p.data.sum(axis=(0, 2, 3))
        smooth = ((chi_sums == 0) & (p_sums == 0)).astype(np.float64)
        numer = T.add(T.mul(ops.sum_per_channel(T.mul(p, Tensor(chi))), 2.0), Tensor(smooth.astype(p.data.dtype)))
        denom = T.add(ops.sum_per_channel(p), Tensor((chi_sums + smooth).astype(p.data.dtype)))
        d = T.div(numer, denom)
    return -T.tsum(T.mul(d, w))
