"""The training loop: shuffled minibatch partitions, per-batch class
weights, Adam updates, and per-epoch validation in thresholded Jaccard.

Every source of randomness is keyed off the run seed (epoch shuffles
via child(epoch), dropout noise via child(epoch, batch)), so one
(config, seed) pair always produces bit-identical histories and
weights.

Stopping: a run ends at the epoch budget, when the monitored mean
Jaccard has not improved by more than ``min_improvement`` for
``patience`` consecutive epochs, or when an optional ``target_j`` is
reached.  The weights returned are those of the best monitored epoch.
Monitoring uses the validation split; if it is empty, the training
split is monitored instead (useful for overfit probes).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import DatasetSplit, GroundTruth, Sample, build_groundtruth
from .errors import ConfigError, NumericError
from .losses import LossConfig, class_weights, segmentation_loss
from .metrics import certain_pixels, dice, jaccard_from_dice
from .models import Network, organ_probabilities, save_checkpoint
from .optim import Adam
from .rng import Rng


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_jaccard: tuple[float, ...]
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_mean_jaccard: float = float("-inf")
    diverged: bool = False
    monitored_split: str = "valid"

    def to_csv(self) -> str:
        """Metric rows only; timings go to timing_csv so reruns are byte-identical."""
        lines = ["epoch,loss," + ",".join(f"J_class{i}" for i in range(3))]
        for r in self.records:
            js = ",".join(f"{j:.6f}" for j in r.val_jaccard)
            lines.append(f"{r.epoch},{r.loss:.8f},{js}")
        return "\n".join(lines) + "\n"

    def timing_csv(self) -> str:
        lines = ["epoch,seconds"]
        for r in self.records:
            lines.append(f"{r.epoch},{r.seconds:.3f}")
        return "\n".join(lines) + "\n"


def organ_masks(gt: GroundTruth) -> np.ndarray:
    """Per-organ binary masks (3,H,W) regardless of encoding."""
    return gt.channels[1:] if gt.encoding == "entropy" else gt.channels


def pack_batch(samples: Sequence[Sample], gts: Sequence[GroundTruth]):
    x = np.stack([s.image for s in samples]).astype(np.float32)
    chi = np.stack([g.channels for g in gts]).astype(np.float32)
    return x, chi


def validation_jaccard(
    net: Network,
    samples: Sequence[Sample],
    gts: Sequence[GroundTruth],
    epsilon: float = 0.25,
) -> np.ndarray:
    """Mean thresholded Jaccard per organ class over a sample set."""
    scores = np.zeros((len(samples), 3))
    for i, (sample, gt) in enumerate(zip(samples, gts)):
        probs = organ_probabilities(net, sample.image)
        targets = organ_masks(gt)
        for c in range(3):
            scores[i, c] = jaccard_from_dice(dice(certain_pixels(probs[c], epsilon), targets[c]))
    return scores.mean(axis=0)


def train(
    net: Network,
    samples: Sequence[Sample],
    split: DatasetSplit,
    loss_config: LossConfig,
    epochs: int,
    batch_size: int = 2,
    lr: float = 1e-5,
    seed: int = 0,
    patience: int = 50,
    min_improvement: float = 1e-4,
    epsilon: float = 0.25,
    target_j: Optional[float] = None,
    checkpoint_dir=None,
    checkpoint_every: Optional[int] = None,
) -> tuple[Network, TrainHistory]:
    """Optimize ``net`` on the (already normalized) train split.

    Returns the network loaded with its best monitored weights plus the
    full epoch history.  Divergence (non-finite loss or gradients)
    aborts the run; the history carries a ``diverged`` flag and the best
    weights seen so far are kept.
    """
    loss_config.validate_pairing(net.config)
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    by_id = {s.id: s for s in samples}
    missing = [i for i in split.train + split.valid if i not in by_id]
    if missing:
        raise ConfigError(f"split references unknown sample ids: {missing[:5]}")
    if not split.train:
        raise ConfigError("training split is empty")

    encoding = loss_config.encoding
    gt_cache = {s.id: build_groundtruth(s, encoding) for s in samples}
    train_ids = list(split.train)
    monitor_ids = list(split.valid) if split.valid else train_ids
    monitor_samples = [by_id[i] for i in monitor_ids]
    monitor_gts = [gt_cache[i] for i in monitor_ids]

    optimizer = Adam(net.parameters(), lr=lr)
    history = TrainHistory(monitored_split="valid" if split.valid else "train")
    best_state = [(name, p.data.copy()) for name, p in net.parameters()]
    stale = 0
    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None

    for epoch in range(1, epochs + 1):
        started = time.perf_counter()
        perm = Rng(seed).child(epoch).permutation(len(train_ids))
        order = [train_ids[i] for i in perm]
        batch_losses = []
        try:
            for b_idx in range(0, len(order), batch_size):
                batch_ids = order[b_idx : b_idx + batch_size]
                x, chi = pack_batch(
                    [by_id[i] for i in batch_ids], [gt_cache[i] for i in batch_ids]
                )
                weights = 1.0 / class_weights(chi) if loss_config.weighted else None
                out = net.forward(x, mode="train", rng=Rng(seed).child(epoch, b_idx))
                loss = segmentation_loss(out, chi, loss_config, weights=weights)
                net.zero_grad()
                loss.backward()
                optimizer.step()
                batch_losses.append(float(loss.data))
        except NumericError:
            history.diverged = True

        val_j = validation_jaccard(net, monitor_samples, monitor_gts, epsilon=epsilon)
        record = EpochRecord(
            epoch=epoch,
            loss=float(np.mean(batch_losses)) if batch_losses else float("nan"),
            val_jaccard=tuple(float(v) for v in val_j),
            seconds=time.perf_counter() - started,
        )
        history.records.append(record)

        mean_j = float(val_j.mean())
        if mean_j > history.best_mean_jaccard + min_improvement:
            history.best_mean_jaccard = mean_j
            history.best_epoch = epoch
            best_state = [(name, p.data.copy()) for name, p in net.parameters()]
            stale = 0
            if checkpoint_dir is not None:
                save_checkpoint(net, checkpoint_dir / "best.fcxs")
        else:
            stale += 1

        if checkpoint_dir is not None and checkpoint_every and epoch % checkpoint_every == 0:
            save_checkpoint(net, checkpoint_dir / "last.fcxs")
        if history.diverged:
            break
        if target_j is not None and mean_j >= target_j:
            break
        if stale >= patience:
            break

    if checkpoint_dir is not None:
        save_checkpoint(net, checkpoint_dir / "last.fcxs")
    _with_state(net, best_state)
    if checkpoint_dir is not None:
        save_checkpoint(net, checkpoint_dir / "best.fcxs")
    return net, history


def _with_state(net: Network, state: list[tuple[str, np.ndarray]]) -> Network:
    net.load_state_arrays(dict(state))
    return net
