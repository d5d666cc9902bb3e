"""End-to-end training and evaluation.

Supports the relation model plus the two order-blind baselines: an
average-pool head (mean of the sampled frame features, so any frame
permutation is invisible to it) and a single-frame head (random frame at
training time, the center frame at evaluation). Training is sequential and
fully deterministic given (config, seed, dataset); evaluation always uses
deterministic-center frame sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import nn
from .data import Dataset, VideoSample
from .errors import InputError, TrainingDivergedError
from .relation import (
    FrameTuple,
    MultiScaleTRN,
    multiscale_backward,
    multiscale_forward,
)
from .sampling import SamplingPlan, segment_sample, subsample_tuples

POOLINGS = ("temporal-relation", "average-pool", "single-frame")
FRAME_ORDERS = ("ordered", "shuffled")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.08
    momentum: float = 0.9
    seed: int = 0
    plan: SamplingPlan = field(default_factory=SamplingPlan)
    pooling: str = "temporal-relation"
    frame_order: str = "ordered"
    g_dropout: float = 0.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InputError("epochs and batch_size must be positive")
        if self.learning_rate < 0:
            raise InputError("learning_rate must be non-negative")
        if self.pooling not in POOLINGS:
            raise InputError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.frame_order not in FRAME_ORDERS:
            raise InputError(
                f"frame_order must be one of {FRAME_ORDERS}, got {self.frame_order!r}"
            )
        if not 0.0 <= self.g_dropout < 1.0:
            raise InputError("g_dropout must lie in [0, 1)")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class EvalReport:
    """Accuracy summary; top5 is None when there are 5 or fewer classes."""

    top1: float
    top5: float | None
    per_class_accuracy: np.ndarray
    confusion: np.ndarray  # counts, rows = true class, columns = predicted
    num_samples: int

    def top1_from_confusion(self) -> float:
        return float(np.trace(self.confusion)) / float(self.confusion.sum())

    def class_counts(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    def to_records(self) -> list[dict]:
        rows = []
        for c in range(self.confusion.shape[0]):
            rows.append(
                {
                    "class": c,
                    "count": int(self.class_counts()[c]),
                    "accuracy": float(self.per_class_accuracy[c]),
                }
            )
        return rows


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent deterministic streams for each source of randomness."""
    children = np.random.SeedSequence(seed).spawn(5)
    names = ("init", "order", "sample", "shuffle", "dropout")
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def fetch_features(sample: VideoSample, indices: Sequence[int]) -> np.ndarray:
    """Gather the sampled frames' features; one call per video per step.

    Every relation tuple reuses rows of this one gather, which is the whole
    budget argument: tuples at all scales share the N fetched features.
    """
    return sample.frames[list(indices)]


def build_model(
    feature_dim: int,
    num_classes: int,
    config: TrainConfig,
    hidden_dim: int = 64,
    rng: np.random.Generator | None = None,
):
    """Model for the configured pooling: a relation model, or an MLP head
    of matching capacity over the pooled feature for the baselines."""
    rng = rng if rng is not None else rng_streams(config.seed)["init"]
    if config.pooling == "temporal-relation":
        return MultiScaleTRN.create(
            feature_dim, num_classes, config.plan.num_frames, hidden_dim, rng
        )
    return nn.Mlp(
        [
            nn.DenseLayer.init_random(feature_dim, hidden_dim, "relu", rng),
            nn.DenseLayer.init_random(hidden_dim, hidden_dim, "relu", rng),
            nn.DenseLayer.init_random(hidden_dim, num_classes, "none", rng),
        ]
    )


def _model_dims(model) -> tuple[int, int]:
    if isinstance(model, MultiScaleTRN):
        return model.feature_dim, model.num_classes
    return model.in_dim, model.out_dim


def _model_params(model) -> list[np.ndarray]:
    return model.parameters()


def _set_model_params(model, params: Sequence[np.ndarray]) -> None:
    model.set_parameters(params)


def _check_model_dataset(model, dataset: Dataset, plan: SamplingPlan, pooling: str) -> None:
    if not len(dataset):
        raise InputError("dataset is empty")
    feature_dim, num_classes = _model_dims(model)
    if dataset.feature_dim != feature_dim:
        raise InputError(
            f"dataset feature dim {dataset.feature_dim} != model dim {feature_dim}"
        )
    max_label = int(dataset.labels().max())
    if max_label >= num_classes:
        raise InputError(f"label {max_label} out of range for {num_classes} classes")
    if pooling == "temporal-relation":
        if not isinstance(model, MultiScaleTRN):
            raise InputError("temporal-relation pooling needs a MultiScaleTRN")
        if model.num_frames != plan.num_frames:
            raise InputError(
                f"plan samples {plan.num_frames} frames but model expects {model.num_frames}"
            )
    elif isinstance(model, MultiScaleTRN):
        raise InputError(f"{pooling} pooling needs a plain MLP head")


def _relation_tuples(
    feats: np.ndarray, scales: Iterable[int], k: int, rng: np.random.Generator | None
) -> dict[int, list[FrameTuple]]:
    n_slots = feats.shape[0]
    slots = list(range(n_slots))
    out = {}
    for d in scales:
        out[d] = [
            FrameTuple(combo, feats[list(combo)])
            for combo in subsample_tuples(slots, d, k, rng)
        ]
    return out


def _dropout_masks(
    tuples_by_scale: Mapping[int, list[FrameTuple]],
    hidden_dim: int,
    rate: float,
    rng: np.random.Generator,
    dtype,
) -> dict[int, np.ndarray]:
    masks = {}
    for d, tuples in tuples_by_scale.items():
        keep = rng.random((len(tuples), hidden_dim)) >= rate
        masks[d] = keep.astype(dtype) / (1.0 - rate)
    return masks


def _forward_backward(model, x: np.ndarray, label: int):
    logits = nn.mlp_forward(model, x)
    loss, dlogits = nn.softmax_cross_entropy(logits, label)
    grads, _ = nn.mlp_backward(model, x, dlogits)
    return logits, loss, grads.flat()


def train(
    model, dataset: Dataset, config: TrainConfig
) -> tuple[object, list[EpochStats]]:
    """Train in place; returns the model and per-epoch loss/accuracy.

    Per step: segment-sample each video in the batch, subsample tuples per
    scale (relation pooling), forward, cross-entropy, backward, one
    optimizer step on the batch-mean gradient. Shuffled frame order
    permutes each sampled index set before tuples are formed.
    """
    _check_model_dataset(model, dataset, config.plan, config.pooling)
    streams = rng_streams(config.seed)
    order_rng = streams["order"]
    sample_rng = streams["sample"]
    shuffle_rng = streams["shuffle"]
    dropout_rng = streams["dropout"]

    optimizer = nn.Sgd(config.learning_rate, config.momentum)
    params = _model_params(model)
    dtype = params[0].dtype
    scales = model.scales if isinstance(model, MultiScaleTRN) else ()
    history: list[EpochStats] = []
    step = 0
    for epoch in range(config.epochs):
        order = order_rng.permutation(len(dataset))
        losses = []
        correct = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            batch_grads: list[np.ndarray] | None = None
            step += 1
            for sample_idx in batch:
                sample = dataset.samples[int(sample_idx)]
                if config.pooling == "single-frame":
                    pos = int(sample_rng.integers(sample.num_frames))
                    feats = fetch_features(sample, [pos]).astype(dtype)
                    logits, loss, flat = _forward_backward(model, feats[0], sample.label)
                else:
                    idx = segment_sample(sample.num_frames, config.plan, sample_rng)
                    feats = fetch_features(sample, idx).astype(dtype)
                    if config.frame_order == "shuffled":
                        feats = feats[shuffle_rng.permutation(feats.shape[0])]
                    if config.pooling == "average-pool":
                        logits, loss, flat = _forward_backward(
                            model, feats.mean(axis=0), sample.label
                        )
                    else:
                        tuples = _relation_tuples(
                            feats, scales, config.plan.subsamples, sample_rng
                        )
                        masks = None
                        if config.g_dropout > 0:
                            masks = _dropout_masks(
                                tuples, model.hidden_dim, config.g_dropout, dropout_rng, dtype
                            )
                        out = multiscale_forward(model, tuples, masks)
                        logits = out.logits
                        loss, dlogits = nn.softmax_cross_entropy(logits, sample.label)
                        flat = multiscale_backward(model, tuples, dlogits, masks).flat()
                if not np.isfinite(loss):
                    raise TrainingDivergedError("non-finite training loss", step=step)
                losses.append(loss)
                correct += int(np.argmax(logits)) == sample.label
                if batch_grads is None:
                    batch_grads = [g.copy() for g in flat]
                else:
                    for acc, g in zip(batch_grads, flat):
                        acc += g
            assert batch_grads is not None
            scale = 1.0 / len(batch)
            for g in batch_grads:
                g *= scale
            params = optimizer.step(params, batch_grads)
            _set_model_params(model, params)
        history.append(
            EpochStats(epoch=epoch, loss=float(np.mean(losses)), accuracy=correct / len(order))
        )
    return model, history


def evaluate(
    model,
    dataset: Dataset,
    plan: SamplingPlan,
    pooling: str = "temporal-relation",
    frame_order: str = "ordered",
    shuffle_seed: int = 0,
    tuple_seed: int = 0,
) -> EvalReport:
    """Deterministic evaluation with center frame sampling.

    Relation pooling reuses one fixed set of tuple slots (drawn once from
    ``tuple_seed`` with the training budget) for every video; average-pool
    feeds the mean of the sampled features to the head; single-frame uses
    the video's center frame only. Shuffled frame order permutes each
    sampled feature set with a generator seeded by ``shuffle_seed``.
    """
    if pooling not in POOLINGS:
        raise InputError(f"pooling must be one of {POOLINGS}, got {pooling!r}")
    if frame_order not in FRAME_ORDERS:
        raise InputError(f"frame_order must be one of {FRAME_ORDERS}")
    _check_model_dataset(model, dataset, plan, pooling)
    center_plan = replace(plan, mode="center")
    _, num_classes = _model_dims(model)
    dtype = _model_params(model)[0].dtype

    slot_sets: dict[int, list[tuple[int, ...]]] = {}
    if pooling == "temporal-relation":
        tuple_rng = np.random.default_rng(tuple_seed)
        slots = list(range(plan.num_frames))
        for d in model.scales:
            slot_sets[d] = subsample_tuples(slots, d, plan.subsamples, tuple_rng)

    shuffle_rng = np.random.default_rng(shuffle_seed)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    top5_hits = 0
    for sample in dataset.samples:
        if pooling == "single-frame":
            x = fetch_features(sample, [sample.num_frames // 2]).astype(dtype)[0]
            logits = nn.mlp_forward(model, x)
        else:
            idx = segment_sample(sample.num_frames, center_plan)
            feats = fetch_features(sample, idx).astype(dtype)
            if frame_order == "shuffled":
                feats = feats[shuffle_rng.permutation(feats.shape[0])]
            if pooling == "average-pool":
                logits = nn.mlp_forward(model, feats.mean(axis=0))
            else:
                tuples = {
                    d: [FrameTuple(c, feats[list(c)]) for c in slot_sets[d]]
                    for d in model.scales
                }
                logits = multiscale_forward(model, tuples).logits
        pred = int(np.argmax(logits))
        confusion[sample.label, pred] += 1
        if num_classes > 5:
            ranked = np.argsort(-logits, kind="stable")[:5]
            top5_hits += sample.label in ranked
    total = confusion.sum()
    counts = confusion.sum(axis=1)
    per_class = np.zeros(num_classes, dtype=np.float64)
    present = counts > 0
    per_class[present] = np.diag(confusion)[present] / counts[present]
    return EvalReport(
        top1=float(np.trace(confusion)) / float(total),
        top5=(top5_hits / float(total)) if num_classes > 5 else None,
        per_class_accuracy=per_class,
        confusion=confusion,
        num_samples=int(total),
    )


def fit(
    dataset: Dataset, config: TrainConfig, hidden_dim: int = 64
) -> tuple[object, list[EpochStats]]:
    """Build a fresh model from the config seed and train it."""
    model = build_model(
        dataset.feature_dim,
        dataset.num_classes,
        config,
        hidden_dim,
        rng_streams(config.seed)["init"],
    )
    return train(model, dataset, config)


def compare_poolings(
    train_set: Dataset,
    val_set: Dataset,
    config: TrainConfig,
    scales: Sequence[int] = (2, 3, 4, 5),
    poolings: Sequence[str] = ("temporal-relation", "average-pool"),
    hidden_dim: int = 64,
) -> list[dict]:
    """Top-1 per (pooling, frame count): one model per grid cell, all cells
    sharing the config seed. ``single-frame`` contributes one scale-1 row."""
    rows = []
    for pooling in poolings:
        if pooling == "single-frame":
            cfg = replace(config, pooling=pooling)
            model, _ = fit(train_set, cfg, hidden_dim)
            report = evaluate(model, val_set, cfg.plan, pooling)
            rows.append({"pooling": pooling, "scale": 1, "top1": report.top1})
            continue
        for scale in scales:
            plan = replace(config.plan, num_frames=scale)
            cfg = replace(config, plan=plan, pooling=pooling)
            model, _ = fit(train_set, cfg, hidden_dim)
            report = evaluate(model, val_set, plan, pooling)
            rows.append({"pooling": pooling, "scale": scale, "top1": report.top1})
    return rows
