"""Frame and tuple sampling.

Training picks one frame per temporal segment (N near-equal contiguous
segments per video), then per scale d picks k random sorted d-subsets of
the N sampled slots. A brute-force enumerator over all d-subsets doubles
as the testing oracle and as the deterministic test-time tuple source.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb
from typing import Sequence

import numpy as np

from .errors import CombinatorialLimitError, InputError

ENUMERATION_LIMIT = 16  # max N accepted by enumerate_tuples
_CHOICE_LIMIT = 200_000  # above this many subsets, sample by rejection

SAMPLE_MODES = ("random", "center")


@dataclass(frozen=True)
class SamplingPlan:
    """How frames and relation tuples are drawn for one video.

    num_frames is both the number of sampled frames and the top relation
    scale; subsamples is the per-scale tuple budget k.
    """

    num_frames: int = 8
    subsamples: int = 3
    mode: str = "random"
    seed: int = 0

    def __post_init__(self):
        if self.num_frames < 2:
            raise InputError("num_frames must be >= 2")
        if self.subsamples < 1:
            raise InputError("subsamples must be >= 1")
        if self.mode not in SAMPLE_MODES:
            raise InputError(f"mode must be one of {SAMPLE_MODES}, got {self.mode!r}")


def segment_bounds(n: int, num_segments: int) -> list[tuple[int, int]]:
    """(start, length) per segment; the remainder goes to leading segments."""
    if n < 1:
        raise InputError("video length must be >= 1")
    base, extra = divmod(n, num_segments)
    bounds = []
    start = 0
    for i in range(num_segments):
        length = base + (1 if i < extra else 0)
        bounds.append((start, length))
        start += length
    return bounds


def segment_sample(
    n: int, plan: SamplingPlan, rng: np.random.Generator | None = None
) -> list[int]:
    """One frame index per segment, non-decreasing.

    Random mode draws uniformly inside each segment and needs ``rng``;
    center mode takes each segment's midpoint (start + len // 2) and is a
    pure function of (n, num_frames). Segments left empty by short videos
    reuse the nearest earlier index, so duplicates appear only when
    n < num_frames.
    """
    if n < 1:
        raise InputError("video length must be >= 1")
    if plan.mode == "random" and rng is None:
        raise InputError("random mode requires a generator")
    indices: list[int] = []
    for start, length in segment_bounds(n, plan.num_frames):
        if length == 0:
            indices.append(indices[-1])
        elif plan.mode == "center":
            indices.append(start + length // 2)
        else:
            indices.append(int(rng.integers(start, start + length)))
    return indices


def enumerate_tuples(num_frames: int, d: int) -> list[tuple[int, ...]]:
    """All C(N, d) sorted d-subsets of slots 0..N-1, lexicographic."""
    if num_frames > ENUMERATION_LIMIT:
        raise CombinatorialLimitError(
            f"enumeration capped at N <= {ENUMERATION_LIMIT}, got {num_frames}"
        )
    if not 2 <= d <= num_frames:
        raise InputError(f"need 2 <= d <= N, got d={d}, N={num_frames}")
    return list(itertools.combinations(range(num_frames), d))


def subsample_tuples(
    frames: Sequence[int],
    d: int,
    k: int,
    rng: np.random.Generator | None = None,
) -> list[tuple[int, ...]]:
    """min(k, C(N, d)) distinct sorted d-subsets of the sampled frames.

    Subsets are chosen uniformly without replacement among the slot
    combinations and returned in lexicographic slot order, mapped through
    ``frames``; with k >= C(N, d) this is exactly the full enumeration.
    For d = N the single full set is returned.
    """
    frames = list(frames)
    n_frames = len(frames)
    if not 2 <= d <= n_frames:
        raise InputError(f"need 2 <= d <= N, got d={d}, N={n_frames}")
    if k < 1:
        raise InputError("k must be >= 1")
    total = comb(n_frames, d)
    if k >= total:
        combos = list(itertools.combinations(range(n_frames), d))
    elif total <= _CHOICE_LIMIT:
        if rng is None:
            raise InputError("subsampling requires a generator")
        all_combos = list(itertools.combinations(range(n_frames), d))
        picked = rng.choice(total, size=k, replace=False)
        combos = [all_combos[i] for i in sorted(picked)]
    else:
        if rng is None:
            raise InputError("subsampling requires a generator")
        seen: set[tuple[int, ...]] = set()
        while len(seen) < k:
            seen.add(tuple(sorted(rng.choice(n_frames, size=d, replace=False).tolist())))
        combos = sorted(seen)
    return [tuple(frames[i] for i in combo) for combo in combos]


def tuples_per_video(plan: SamplingPlan) -> int:
    """Total relation tuples one training example produces across scales."""
    return sum(min(plan.subsamples, comb(plan.num_frames, d)) for d in range(2, plan.num_frames + 1))
