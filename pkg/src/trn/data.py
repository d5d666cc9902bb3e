"""Synthetic ordered-motif sequences and the frame-feature file format.

Each class is an ordered list of motif ids; a sample places the class's
motifs (unit vectors in feature space) at sorted random frame positions,
fills the remaining frames with distractor motifs or isotropic noise, and
adds Gaussian noise everywhere. Order-sensitive specs give every class the
same motif multiset so that only the temporal order separates classes;
order-free specs give each class its own multiset and randomize the order
per sample, so order carries no information at all.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass
from math import factorial
from typing import Mapping, Sequence

import numpy as np

from . import nn
from .errors import FormatError, InputError

FEATURES_MAGIC = b"TRNF"
FEATURES_VERSION = 1


@dataclass
class VideoSample:
    """An ordered frame-feature sequence with its class label."""

    frames: np.ndarray  # (num_frames, feature_dim)
    label: int

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 2:
            raise InputError("frames must be a 2-D array (frames x feature_dim)")
        if self.label < 0:
            raise InputError("label must be non-negative")
        self.frames = frames

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 8
    motif_count: int = 8
    feature_dim: int = 16
    frames_per_video: int = 32
    motifs_per_class: int = 4
    noise_sigma: float = 0.1
    distractor_rate: float = 0.25
    reversal_pairs: tuple[tuple[int, int], ...] = ()
    order_sensitive: bool = True

    def __post_init__(self):
        if self.num_classes < 2:
            raise InputError("need at least 2 classes")
        if self.motif_count < 1 or self.feature_dim < 1 or self.frames_per_video < 1:
            raise InputError("motif_count, feature_dim and frames_per_video must be positive")
        if not 1 <= self.motifs_per_class <= self.frames_per_video:
            raise InputError("motifs_per_class must lie in [1, frames_per_video]")
        if not 0.0 <= self.distractor_rate <= 1.0:
            raise InputError("distractor_rate must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise InputError("noise_sigma must be non-negative")
        seen: set[int] = set()
        for pair in self.reversal_pairs:
            if len(pair) != 2 or pair[0] == pair[1]:
                raise InputError(f"bad reversal pair {pair}")
            for c in pair:
                if not 0 <= c < self.num_classes:
                    raise InputError(f"reversal pair class {c} out of range")
                if c in seen:
                    raise InputError(f"class {c} appears in more than one reversal pair")
                seen.add(c)
        if not self.order_sensitive and self.reversal_pairs:
            raise InputError(
                "order-free specs cannot have reversal pairs: the paired classes "
                "would share a multiset and be indistinguishable"
            )


@dataclass
class Dataset:
    """Immutable-after-load sample collection with generation provenance."""

    samples: list[VideoSample]
    split: str = ""
    spec: SyntheticSpec | None = None
    seed: int | None = None
    class_sequences: list[list[int]] | None = None
    motifs: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def num_classes(self) -> int:
        if self.spec is not None:
            return self.spec.num_classes
        return int(self.labels().max()) + 1 if self.samples else 0

    @property
    def feature_dim(self) -> int:
        if not self.samples:
            raise InputError("empty dataset has no feature_dim")
        return self.samples[0].feature_dim


def derive_class_sequences(spec: SyntheticSpec) -> list[list[int]]:
    """Ordered motif-id list per class, derived structurally from the spec.

    Order-sensitive: every class gets the same multiset (a handful of motif
    ids, each repeated in one contiguous block) arranged in a class-specific
    block order; reversal-pair classes get mutually reversed orders. Order-
    free: each class gets its own disjoint id set, so the multiset alone
    determines the class.
    """
    C = spec.num_classes
    L = spec.motifs_per_class
    M = spec.motif_count
    if not spec.order_sensitive:
        per_class = max(1, M // C)
        if C * per_class > M:
            raise InputError(
                f"order-free spec needs motif_count >= num_classes, got {M} < {C}"
            )
        sequences = []
        for c in range(C):
            ids = list(range(c * per_class, (c + 1) * per_class))
            sequences.append(_spread(ids, L))
        return sequences

    # Smallest block count whose permutations can cover all classes.
    b = 2
    while factorial(b) < C:
        b += 1
    if b > min(L, M):
        raise InputError(
            f"cannot build {C} order-distinct classes from motifs_per_class={L}, "
            f"motif_count={M}"
        )
    block_ids = list(range(b))
    pair_of = {}
    for a, bb in spec.reversal_pairs:
        pair_of[a] = bb
        pair_of[bb] = a

    all_perms = list(itertools.permutations(range(b)))
    used: set[tuple[int, ...]] = set()
    used_sigs: set[tuple[frozenset, frozenset]] = set()
    orders: dict[int, tuple[int, ...]] = {}
    half = b // 2

    def signature(p: tuple[int, ...]) -> tuple[frozenset, frozenset]:
        # which blocks land in each video half; orderings with distinct
        # signatures stay distinguishable even to 2-frame relations
        return frozenset(p[:half]), frozenset(p[half:])

    def next_unused(need_reverse_free: bool) -> tuple[int, ...]:
        candidates = []
        for p in all_perms:
            if p in used:
                continue
            if need_reverse_free and tuple(reversed(p)) in used:
                continue
            candidates.append(p)
        if not candidates:
            raise InputError(f"not enough block orderings for {C} classes")
        for p in candidates:
            fresh = signature(p) not in used_sigs
            if need_reverse_free:
                fresh = fresh and signature(tuple(reversed(p))) not in used_sigs
            if fresh:
                return p
        return candidates[0]

    for c in range(C):
        if c in orders:
            continue
        if c in pair_of:
            p = next_unused(need_reverse_free=True)
            orders[c] = p
            orders[pair_of[c]] = tuple(reversed(p))
            used.update((p, tuple(reversed(p))))
            used_sigs.update((signature(p), signature(tuple(reversed(p)))))
        else:
            p = next_unused(need_reverse_free=False)
            orders[c] = p
            used.add(p)
            used_sigs.add(signature(p))

    # Block length is attached to the motif id, not the position, so every
    # ordering of the same blocks keeps an identical multiset.
    lengths = _near_equal_lengths(L, b)
    sequences = []
    for c in range(C):
        seq: list[int] = []
        for j in orders[c]:
            seq.extend([block_ids[j]] * lengths[j])
        sequences.append(seq)
    return sequences


def _near_equal_lengths(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _spread(ids: Sequence[int], length: int) -> list[int]:
    out: list[int] = []
    for ident, reps in zip(ids, _near_equal_lengths(length, len(ids))):
        out.extend([ident] * reps)
    return out


def generate_dataset(
    spec: SyntheticSpec, seed: int, counts: Mapping[str, int]
) -> dict[str, Dataset]:
    """One Dataset per split; labels cycle 0..C-1 so counts divisible by C
    give balanced splits. Bit-identical datasets for identical (spec, seed).
    """
    if not counts:
        raise InputError("counts must name at least one split")
    for name, count in counts.items():
        if count < 1:
            raise InputError(f"split {name!r} count must be positive")
    sequences = derive_class_sequences(spec)
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(1 + len(counts))
    motif_rng = np.random.default_rng(children[0])
    motifs = motif_rng.normal(size=(spec.motif_count, spec.feature_dim))
    motifs /= np.linalg.norm(motifs, axis=1, keepdims=True)
    motifs = motifs.astype(np.float32)

    complements = []
    for seq in sequences:
        comp = [m for m in range(spec.motif_count) if m not in set(seq)]
        complements.append(comp if comp else list(range(spec.motif_count)))

    datasets = {}
    for child, (split, count) in zip(children[1:], counts.items()):
        rng = np.random.default_rng(child)
        samples = []
        for i in range(count):
            label = i % spec.num_classes
            samples.append(
                _synthesize_sample(spec, label, sequences[label], complements[label], motifs, rng)
            )
        datasets[split] = Dataset(
            samples=samples,
            split=split,
            spec=spec,
            seed=seed,
            class_sequences=[list(s) for s in sequences],
            motifs=motifs,
        )
    return datasets


def _synthesize_sample(
    spec: SyntheticSpec,
    label: int,
    sequence: Sequence[int],
    distractor_ids: Sequence[int],
    motifs: np.ndarray,
    rng: np.random.Generator,
) -> VideoSample:
    n, D, L = spec.frames_per_video, spec.feature_dim, spec.motifs_per_class
    seq = list(sequence)
    if not spec.order_sensitive:
        seq = [seq[j] for j in rng.permutation(L)]
    if L == n:
        positions = np.arange(n)
    else:
        positions = np.sort(rng.choice(n, size=L, replace=False))
    frames = np.zeros((n, D), dtype=np.float64)
    placed = np.zeros(n, dtype=bool)
    for pos, mid in zip(positions, seq):
        frames[pos] = motifs[mid]
        placed[pos] = True
    for pos in range(n):
        if placed[pos]:
            continue
        if rng.random() < spec.distractor_rate:
            frames[pos] = motifs[distractor_ids[rng.integers(len(distractor_ids))]]
        else:
            frames[pos] = rng.normal(size=D) / np.sqrt(D)
    if spec.noise_sigma > 0:
        frames = frames + rng.normal(0.0, spec.noise_sigma, size=(n, D))
    return VideoSample(frames.astype(np.float32), label)


def shuffle_frames(sample: VideoSample, rng: np.random.Generator) -> VideoSample:
    """Frame-permuted copy (uniform permutation); label unchanged."""
    perm = rng.permutation(sample.num_frames)
    return VideoSample(sample.frames[perm].copy(), sample.label)


# --- canned specs ----------------------------------------------------------


def order_critical_spec() -> SyntheticSpec:
    """All classes share one motif multiset; only temporal order separates
    them, and half the classes are exact order-reversals of the other half."""
    return SyntheticSpec(
        num_classes=8,
        motif_count=8,
        feature_dim=16,
        frames_per_video=32,
        motifs_per_class=18,
        noise_sigma=0.1,
        distractor_rate=0.3,
        reversal_pairs=((0, 1), (2, 3), (4, 5), (6, 7)),
        order_sensitive=True,
    )


def order_free_spec() -> SyntheticSpec:
    """Each class has its own motif ids and a per-sample random order, so
    frame order carries no class information."""
    return SyntheticSpec(
        num_classes=8,
        motif_count=16,
        feature_dim=16,
        frames_per_video=32,
        motifs_per_class=24,
        noise_sigma=0.1,
        distractor_rate=0.3,
        reversal_pairs=(),
        order_sensitive=False,
    )


PRESETS = {
    "order-critical": order_critical_spec,
    "order-free": order_free_spec,
}


# --- frame-feature files ---------------------------------------------------
#
# Magic "TRNF", u32 version = 1, u32 sample count, then per sample:
# u32 label, u32 num_frames, u32 feature_dim, num_frames*feature_dim
# float32 little-endian values, row per frame. Everything little-endian.


def write_features(path, dataset: Dataset) -> None:
    with open(path, "wb") as fh:
        fh.write(FEATURES_MAGIC)
        fh.write(struct.pack("<II", FEATURES_VERSION, len(dataset.samples)))
        for sample in dataset.samples:
            fh.write(
                struct.pack(
                    "<III", sample.label, sample.num_frames, sample.feature_dim
                )
            )
            fh.write(np.ascontiguousarray(sample.frames, dtype="<f4").tobytes())


def read_features(path, split: str = "file") -> Dataset:
    """Exact round-trip reader; format violations carry the byte offset."""
    with open(path, "rb") as fh:
        reader = nn.PayloadReader(fh)
        magic = reader.read_exact(4, "magic")
        if magic != FEATURES_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {FEATURES_MAGIC!r}", offset=0)
        version = reader.read_u32("version")
        if version != FEATURES_VERSION:
            raise FormatError(f"unsupported feature-file version {version}", offset=4)
        count = reader.read_u32("sample count")
        samples = []
        feature_dim: int | None = None
        for i in range(count):
            header_offset = reader.offset
            label = reader.read_u32(f"sample {i} label")
            n = reader.read_u32(f"sample {i} frame count")
            dim = reader.read_u32(f"sample {i} feature dim")
            if n < 1 or dim < 1:
                raise FormatError(
                    f"sample {i} declares empty geometry {n}x{dim}", offset=header_offset
                )
            if feature_dim is None:
                feature_dim = dim
            elif dim != feature_dim:
                raise FormatError(
                    f"sample {i} feature dim {dim} != {feature_dim}", offset=header_offset
                )
            values = reader.read_f32_array(n * dim, f"sample {i} frames")
            samples.append(VideoSample(values.reshape(n, dim).astype(np.float32), label))
        reader.expect_eof()
    return Dataset(samples=samples, split=split)
