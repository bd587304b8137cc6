"""Test-set evaluation: thresholded masks, per-class overlap scores,
surface distances, report tables, and mask/overlay exports.

``evaluate`` accepts a single network or a list (which votes as a
strict-majority ensemble) and produces one EvalRecord per (image,
class) plus a ReportTable of per-class means.  Scores use the encoding
matching the head: overlapping organ masks for sigmoid heads, disjoint
projections for softmax heads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .data import CLASS_NAMES, Sample, build_groundtruth
from .errors import DataError
from .imageio import write_pgm, write_png
from .metrics import (
    DEFAULT_EPSILON,
    boundary_pixels,
    certain_pixels,
    dice,
    jaccard_from_dice,
    surface_distance_symmetric,
)
from .models import Network, ensemble_predict, organ_probabilities
from .training import organ_masks


@dataclass
class EvalRecord:
    image_id: str
    class_name: str
    dice: float
    jaccard: float
    surface_distance: float  # NaN when undefined (empty mask)


@dataclass
class ReportTable:
    label: str
    class_names: tuple[str, ...]
    mean_dice: tuple[float, ...]
    mean_jaccard: tuple[float, ...]
    mean_surface_distance: tuple[float, ...]
    n_images: int

    def to_csv(self) -> str:
        lines = ["class,mean_dice,mean_jaccard,mean_surface_distance"]
        for i, name in enumerate(self.class_names):
            sd = self.mean_surface_distance[i]
            sd_text = "NA" if math.isnan(sd) else f"{sd:.6f}"
            lines.append(f"{name},{self.mean_dice[i]:.6f},{self.mean_jaccard[i]:.6f},{sd_text}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max(len(n) for n in self.class_names)
        lines = [
            f"{self.label} ({self.n_images} images)",
            f"{'class':<{width}}  {'D':>8}  {'J':>8}  {'S_d':>8}",
        ]
        for i, name in enumerate(self.class_names):
            sd = self.mean_surface_distance[i]
            sd_text = "      NA" if math.isnan(sd) else f"{sd:8.3f}"
            lines.append(
                f"{name:<{width}}  {self.mean_dice[i]:8.3f}  {self.mean_jaccard[i]:8.3f}  {sd_text}"
            )
        return "\n".join(lines)


def predict_masks(
    nets: Union[Network, Sequence[Network]],
    sample: Sample,
    epsilon: float = DEFAULT_EPSILON,
) -> np.ndarray:
    """Per-organ binary masks (3,H,W) from one network or an ensemble vote."""
    if isinstance(nets, (list, tuple)):
        return ensemble_predict(list(nets), sample.image, epsilon)
    probs = organ_probabilities(nets, sample.image)
    return np.stack([certain_pixels(p, epsilon) for p in probs])


def evaluate(
    nets: Union[Network, Sequence[Network]],
    samples: Sequence[Sample],
    epsilon: float = DEFAULT_EPSILON,
    spacing: float = 1.0,
    with_surface_distance: bool = True,
    label: str = "evaluation",
) -> tuple[list[EvalRecord], ReportTable]:
    """Score every sample per class; aggregation follows the stable id order."""
    if not samples:
        raise DataError("evaluate: empty test set")
    first = nets[0] if isinstance(nets, (list, tuple)) else nets
    encoding = "entropy" if first.config.head == "softmax" else "dice"
    records: list[EvalRecord] = []
    for sample in samples:
        gt = build_groundtruth(sample, encoding)
        targets = organ_masks(gt)
        preds = predict_masks(nets, sample, epsilon)
        for c, name in enumerate(CLASS_NAMES):
            d = dice(preds[c], targets[c])
            sd = (
                surface_distance_symmetric(preds[c], targets[c], spacing)
                if with_surface_distance
                else float("nan")
            )
            records.append(EvalRecord(sample.id, name, d, jaccard_from_dice(d), sd))
    table = summarize(records, label=label)
    return records, table


def summarize(records: Sequence[EvalRecord], label: str = "evaluation") -> ReportTable:
    ids = sorted({r.image_id for r in records})
    mean_d, mean_j, mean_sd = [], [], []
    for name in CLASS_NAMES:
        rows = [r for r in records if r.class_name == name]
        mean_d.append(float(np.mean([r.dice for r in rows])))
        mean_j.append(float(np.mean([r.jaccard for r in rows])))
        sds = [r.surface_distance for r in rows if not math.isnan(r.surface_distance)]
        mean_sd.append(float(np.mean(sds)) if sds else float("nan"))
    return ReportTable(
        label=label,
        class_names=CLASS_NAMES,
        mean_dice=tuple(mean_d),
        mean_jaccard=tuple(mean_j),
        mean_surface_distance=tuple(mean_sd),
        n_images=len(ids),
    )


def records_to_csv(records: Sequence[EvalRecord]) -> str:
    lines = ["id,class,dice,jaccard,surface_distance"]
    for r in records:
        sd_text = "NA" if math.isnan(r.surface_distance) else f"{r.surface_distance:.6f}"
        lines.append(f"{r.image_id},{r.class_name},{r.dice:.6f},{r.jaccard:.6f},{sd_text}")
    return "\n".join(lines) + "\n"


def records_from_csv(text: str) -> list[EvalRecord]:
    lines = [ln for ln in text.strip().split("\n") if ln]
    header = lines[0].split(",")
    if header != ["id", "class", "dice", "jaccard", "surface_distance"]:
        raise DataError(f"unexpected record CSV header: {lines[0]!r}")
    records = []
    for ln in lines[1:]:
        image_id, cls, d, j, sd = ln.split(",")
        records.append(
            EvalRecord(image_id, cls, float(d), float(j), float("nan") if sd == "NA" else float(sd))
        )
    return records


def export_masks(
    records_dir,
    sample: Sample,
    masks: np.ndarray,
    overlays: bool = True,
) -> None:
    """Write per-class PGM masks (0/255) and optional contour overlays.

    Overlay convention: ground-truth contour green, prediction red, and
    where the two coincide yellow, on the grayscale image.
    """
    out = Path(records_dir)
    out.mkdir(parents=True, exist_ok=True)
    image = sample.image[0]
    lo, hi = float(image.min()), float(image.max())
    base = np.zeros_like(image) if hi - lo < 1e-12 else (image - lo) / (hi - lo)
    base8 = (base * 255).astype(np.uint8)
    for c, name in enumerate(CLASS_NAMES):
        write_pgm(out / f"{sample.id}_{name}.pgm", masks[c] * 255)
        if overlays:
            gt_contour = boundary_pixels(sample.masks[c]).astype(bool)
            pred_contour = boundary_pixels(masks[c]).astype(bool)
            rgb = np.stack([base8, base8, base8], axis=2)
            rgb[gt_contour] = (0, 255, 0)
            rgb[pred_contour] = (255, 0, 0)
            rgb[gt_contour & pred_contour] = (255, 255, 0)
            write_png(out / f"{sample.id}_{name}_overlay.png", rgb)
