"""Interpretability tools for trained relation models.

All operations are read-only over the model, use deterministic center
frame sampling, and return order-stable (sorted) outputs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .data import Dataset, VideoSample
from .errors import InputError
from .relation import (
    FrameTuple,
    MultiScaleTRN,
    multiscale_forward,
    predict,
    relation_hidden_sum,
)
from .sampling import SamplingPlan, enumerate_tuples, segment_sample
from .training import EvalReport, evaluate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankedTuple:
    """One scale-d tuple with its predicted-class response.

    ``indices`` are video frame positions; ``slots`` the corresponding
    positions among the N sampled frames. Rankings are descending by
    response with lexicographic tie-break on the slots.
    """

    scale: int
    indices: tuple[int, ...]
    slots: tuple[int, ...]
    response: float


@dataclass(frozen=True)
class AlignmentMap:
    """Anchor frame indices per video plus the implied time-warp rates.

    Warp rate j of a video is its j-th anchor gap divided by the mean j-th
    gap across all aligned videos: playing segment j at that rate makes
    every video hit anchor j+1 simultaneously.
    """

    anchor_count: int
    anchors: list[tuple[int, ...]]
    warp_rates: list[tuple[float, ...]]


def _center_features(model: MultiScaleTRN, sample: VideoSample) -> tuple[list[int], np.ndarray]:
    n = sample.num_frames
    if n < model.num_frames:
        raise InputError(
            f"video has {n} frames but the model samples {model.num_frames}"
        )
    plan = SamplingPlan(num_frames=model.num_frames, subsamples=1, mode="center")
    idx = segment_sample(n, plan)
    return idx, sample.frames[idx].astype(model.dtype)


def _full_tuples(model: MultiScaleTRN, feats: np.ndarray) -> dict[int, list[FrameTuple]]:
    return {
        d: [FrameTuple(c, feats[list(c)]) for c in enumerate_tuples(model.num_frames, d)]
        for d in model.scales
    }


def representative_tuples(
    model: MultiScaleTRN, sample: VideoSample, d: int, top_m: int
) -> list[RankedTuple]:
    """Rank every d-tuple of the equidistant frames by how strongly the
    scale-d relation term, evaluated on that tuple alone, supports the
    model's overall predicted class for the video."""
    if d not in model.scales:
        raise InputError(f"scale {d} not in model scales {model.scales}")
    if top_m < 1:
        raise InputError("top_m must be >= 1")
    idx, feats = _center_features(model, sample)
    predicted, _ = predict(multiscale_forward(model, _full_tuples(model, feats)).logits)

    module = model.modules[d]
    combos = enumerate_tuples(model.num_frames, d)
    stacked = np.stack([feats[list(c)].reshape(-1) for c in combos])
    responses = nn.mlp_forward(module.h, nn.mlp_forward(module.g, stacked))[:, predicted]

    if top_m > len(combos):
        log.warning(
            "top_m=%d exceeds the %d enumerable tuples at scale %d; clipping",
            top_m,
            len(combos),
            d,
        )
        top_m = len(combos)
    order = sorted(range(len(combos)), key=lambda t: (-responses[t], combos[t]))
    return [
        RankedTuple(
            scale=d,
            indices=tuple(idx[s] for s in combos[t]),
            slots=combos[t],
            response=float(responses[t]),
        )
        for t in order[:top_m]
    ]


def align_videos(
    model: MultiScaleTRN, samples: list[VideoSample], anchor_count: int = 5
) -> AlignmentMap:
    """Anchor each video at its top representative anchor_count-tuple and
    derive piecewise warp rates that land all videos on the anchors together."""
    if len(samples) < 2:
        raise InputError("alignment needs at least 2 videos")
    if anchor_count not in model.scales:
        raise InputError(
            f"anchor_count {anchor_count} must be one of the model scales {model.scales}"
        )
    anchors = []
    for sample in samples:
        top = representative_tuples(model, sample, anchor_count, top_m=1)[0]
        anchors.append(top.indices)
    gaps = np.array(
        [[a[j + 1] - a[j] for j in range(anchor_count - 1)] for a in anchors],
        dtype=np.float64,
    )
    mean_gaps = gaps.mean(axis=0)
    rates = [tuple(float(r) for r in row / mean_gaps) for row in gaps]
    return AlignmentMap(anchor_count=anchor_count, anchors=anchors, warp_rates=rates)


def early_recognition_eval(
    model,
    dataset: Dataset,
    fraction: float,
    plan: SamplingPlan,
    pooling: str = "temporal-relation",
    frame_order: str = "ordered",
) -> EvalReport:
    """Evaluate on the leading ceil(fraction * n) frames of every video."""
    if not 0.0 < fraction <= 1.0:
        raise InputError(f"fraction must lie in (0, 1], got {fraction}")
    truncated = Dataset(
        samples=[
            VideoSample(s.frames[: math.ceil(fraction * s.num_frames)], s.label)
            for s in dataset.samples
        ],
        split=dataset.split,
        spec=dataset.spec,
        seed=dataset.seed,
    )
    return evaluate(model, truncated, plan, pooling, frame_order)


def class_order_sensitivity(
    model,
    dataset: Dataset,
    plan: SamplingPlan,
    pooling: str = "temporal-relation",
    shuffle_seed: int = 0,
) -> list[dict]:
    """Per-class ordered-minus-shuffled accuracy, sorted by the gap.

    The sample-weighted sum of the deltas equals the overall ordered minus
    shuffled top-1 gap exactly.
    """
    ordered = evaluate(model, dataset, plan, pooling, "ordered")
    shuffled = evaluate(model, dataset, plan, pooling, "shuffled", shuffle_seed=shuffle_seed)
    counts = ordered.class_counts()
    rows = []
    for c in range(len(counts)):
        rows.append(
            {
                "class": c,
                "count": int(counts[c]),
                "ordered": float(ordered.per_class_accuracy[c]),
                "shuffled": float(shuffled.per_class_accuracy[c]),
                "delta": float(
                    ordered.per_class_accuracy[c] - shuffled.per_class_accuracy[c]
                ),
            }
        )
    rows.sort(key=lambda r: (-r["delta"], r["class"]))
    return rows


def export_embeddings(
    model: MultiScaleTRN, dataset: Dataset, scale: int, path
) -> np.ndarray:
    """Post-sum, pre-head hidden vector of the scale-d module per sample.

    Written as columnar text: a '#'-prefixed header, then one row per
    sample with sample index, label, and the hidden values at 9 significant
    digits (exact for float32).
    """
    if scale not in model.scales:
        raise InputError(f"scale {scale} not in model scales {model.scales}")
    module = model.modules[scale]
    combos = enumerate_tuples(model.num_frames, scale)
    vectors = []
    for sample in dataset.samples:
        _, feats = _center_features(model, sample)
        tuples = [FrameTuple(c, feats[list(c)]) for c in combos]
        vectors.append(relation_hidden_sum(module, tuples))
    matrix = np.stack(vectors)
    with open(path, "w") as fh:
        cols = " ".join(f"h{j}" for j in range(matrix.shape[1]))
        fh.write(f"# sample label {cols}\n")
        for i, (sample, vec) in enumerate(zip(dataset.samples, matrix)):
            values = " ".join(f"{float(v):.9g}" for v in vec)
            fh.write(f"{i} {sample.label} {values}\n")
    return matrix
