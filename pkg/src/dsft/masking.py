"""Mask-plan construction: base noise masking plus the three targeted
strategies (number-first, span, curriculum top-up), composed sequentially
with prompt protection and an at-least-one-mask guarantee.

All stages only ever add positions, so the masked set grows monotonically
through the pipeline, and the first stage to mask a position owns its
provenance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .tokenizer import TokenClass, TokenizedSequence, MASK_ID


class Provenance(Enum):
    BASE = "base"
    NUMBER_FIRST = "number_first"
    SPAN = "span"
    CURRICULUM = "curriculum"
    FORCED = "forced"


@dataclass(frozen=True)
class NoiseLevel:
    t: float

    def __post_init__(self):
        if not (0.0 < self.t < 1.0):
            raise ValueError(f"noise level must lie in (0, 1), got {self.t}")


@dataclass(frozen=True)
class CurriculumSchedule:
    r_min: float = 0.10
    r_max: float = 0.20
    total_steps: int = 2000

    def __post_init__(self):
        if not (0.0 < self.r_min <= self.r_max < 1.0):
            raise ValueError("need 0 < r_min <= r_max < 1")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")


BASE_FIXED = "r-min"
BASE_SAMPLED = "sampled-t"


@dataclass(frozen=True)
class MaskConfig:
    epsilon: float = 0.01
    number_fraction: float = 0.3
    span_prob: float = 0.1
    span_len: int = 3
    schedule: CurriculumSchedule = field(default_factory=CurriculumSchedule)
    enable_number_first: bool = True
    enable_span: bool = True
    enable_curriculum: bool = True
    enable_weighted_loss: bool = True
    base: str = BASE_FIXED

    def __post_init__(self):
        if not (0.0 < self.epsilon < 0.5):
            raise ValueError("epsilon must lie in (0, 0.5)")
        for name in ("number_fraction", "span_prob"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.span_len < 1:
            raise ValueError("span_len must be >= 1")
        if self.base not in (BASE_FIXED, BASE_SAMPLED):
            raise ValueError(f"base must be {BASE_FIXED!r} or {BASE_SAMPLED!r}")

    @classmethod
    def sft_baseline(cls, epsilon: float = 0.01) -> "MaskConfig":
        """Uniform-noise baseline: base masking at sampled t only."""
        return cls(
            epsilon=epsilon,
            enable_number_first=False,
            enable_span=False,
            enable_curriculum=False,
            enable_weighted_loss=False,
            base=BASE_SAMPLED,
        )


@dataclass(frozen=True)
class MaskPlan:
    masked: frozenset[int]
    provenance: dict[int, Provenance]
    noise: NoiseLevel
    step: int

    def __post_init__(self):
        if not self.masked:
            raise ValueError("a mask plan must mask at least one position")
        if set(self.provenance) != set(self.masked):
            raise ValueError("provenance keys must equal the masked set")

    def sorted_positions(self) -> list[int]:
        return sorted(self.masked)


def sample_noise(rng: np.random.Generator, epsilon: float) -> NoiseLevel:
    """Draw the noise level t uniformly from [epsilon, 1 - epsilon]."""
    if not (0.0 < epsilon < 0.5):
        raise ValueError("epsilon must lie in (0, 0.5)")
    return NoiseLevel(float(rng.uniform(epsilon, 1.0 - epsilon)))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _choose(rng: np.random.Generator, pool: list[int], k: int) -> set[int]:
    if k <= 0 or not pool:
        return set()
    picked = rng.choice(np.array(sorted(pool), dtype=np.int64), size=min(k, len(pool)),
                        replace=False)
    return {int(p) for p in picked}


def base_mask(seq: TokenizedSequence, ratio: float, rng: np.random.Generator) -> set[int]:
    """Uniform masking of round(ratio * |completion|) completion positions."""
    if not (0.0 <= ratio < 1.0):
        raise ValueError("ratio must lie in [0, 1)")
    eligible = list(seq.completion_positions)
    return _choose(rng, eligible, _round_half_up(ratio * len(eligible)))


def number_first_mask(
    seq: TokenizedSequence, existing: set[int], fraction: float, rng: np.random.Generator
) -> set[int]:
    """Additionally mask ceil(fraction * |N|) of the not-yet-masked numeric
    completion positions N."""
    if not (0.0 <= fraction <= 1.0):
        raise ValueError("fraction must lie in [0, 1]")
    numeric = [
        p for p in seq.completion_positions
        if seq.classes[p] is TokenClass.NUMERIC and p not in existing
    ]
    if not numeric or fraction == 0.0:
        return set()
    return _choose(rng, numeric, math.ceil(fraction * len(numeric)))


def span_mask(
    seq: TokenizedSequence,
    existing: set[int],
    span_prob: float,
    span_len: int,
    rng: np.random.Generator,
) -> set[int]:
    """With probability span_prob, mask one contiguous completion span.

    Overlap with existing masks is allowed; the caller keeps the earlier
    provenance for overlapped positions.
    """
    if span_len < 1:
        raise ValueError("span_len must be >= 1")
    if rng.uniform(0.0, 1.0) >= span_prob:
        return set()
    starts = [p for p in seq.completion_positions if p + span_len <= len(seq)]
    if not starts:
        return set()
    s = starts[int(rng.integers(0, len(starts)))]
    return {p for p in range(s, s + span_len) if p >= seq.prompt_len}


def curriculum_ratio(schedule: CurriculumSchedule, step: int) -> float:
    """Linear ramp from r_min to r_max over total_steps, clamped beyond."""
    if step < 0:
        raise ValueError("step must be >= 0")
    s = min(step, schedule.total_steps)
    t = schedule.total_steps
    # Weighted-average form: exact at step 0, t/2 and t in float64.
    return (schedule.r_min * (t - s) + schedule.r_max * s) / t


def curriculum_topup(
    seq: TokenizedSequence, existing: set[int], target_ratio: float, rng: np.random.Generator
) -> set[int]:
    """Add uniformly chosen unmasked completion positions until the masked
    ratio first reaches target_ratio. Never unmasks."""
    if not (0.0 <= target_ratio < 1.0):
        raise ValueError("target_ratio must lie in [0, 1)")
    total = len(seq) - seq.prompt_len
    have = len(existing)
    if have / total >= target_ratio:
        return set()
    # Minimal n with (have + n) / total >= target_ratio, found by float
    # comparison so the guarantee matches what callers can observe.
    n = max(0, math.ceil(target_ratio * total) - have)
    while n > 0 and (have + n - 1) / total >= target_ratio:
        n -= 1
    while (have + n) / total < target_ratio:
        n += 1
    pool = [p for p in seq.completion_positions if p not in existing]
    return _choose(rng, pool, n)


def compose_mask_plan(
    seq: TokenizedSequence,
    config: MaskConfig,
    step: int,
    rng: np.random.Generator,
    trace: list | None = None,
) -> MaskPlan:
    """Run the full masking pipeline for one sequence at one step.

    Stage order: noise sample, base mask (at sampled t or at the
    curriculum floor, per config.base), number-first, span, curriculum
    top-up, then a forced single mask if everything else came up empty.
    Prompt positions are never touched. If trace is a list, one
    (stage, added, cumulative_size) triple is appended per stage.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    if seq.prompt_len >= len(seq):
        raise ValueError("sequence has no completion positions to mask")

    masked: set[int] = set()
    provenance: dict[int, Provenance] = {}

    def absorb(stage: Provenance, positions: set[int]) -> None:
        added = {p for p in positions if p not in masked}
        for p in added:
            provenance[p] = stage
        masked.update(added)
        if trace is not None:
            trace.append((stage, frozenset(added), len(masked)))

    noise = sample_noise(rng, config.epsilon)
    base_ratio = noise.t if config.base == BASE_SAMPLED else config.schedule.r_min
    absorb(Provenance.BASE, base_mask(seq, base_ratio, rng))
    if config.enable_number_first:
        absorb(
            Provenance.NUMBER_FIRST,
            number_first_mask(seq, masked, config.number_fraction, rng),
        )
    if config.enable_span:
        absorb(
            Provenance.SPAN,
            span_mask(seq, masked, config.span_prob, config.span_len, rng),
        )
    if config.enable_curriculum:
        target = curriculum_ratio(config.schedule, step)
        absorb(Provenance.CURRICULUM, curriculum_topup(seq, masked, target, rng))
    if not masked:
        forced = _choose(rng, list(seq.completion_positions), 1)
        absorb(Provenance.FORCED, forced)

    if min(masked) < seq.prompt_len:
        raise AssertionError("prompt position masked; this is a bug")
    return MaskPlan(frozenset(masked), provenance, noise, step)


def apply_mask(seq: TokenizedSequence, plan: MaskPlan) -> list[int]:
    """Corrupt the sequence: MASK at exactly the planned positions."""
    ids = list(seq.ids)
    for p in plan.masked:
        if not (0 <= p < len(ids)):
            raise ValueError(f"masked position {p} out of range for length {len(ids)}")
        ids[p] = MASK_ID
    return ids


def plan_to_json(seq: TokenizedSequence, plan: MaskPlan) -> str:
    """One-line JSON form of a plan, stable byte-for-byte for golden files."""
    obj = {
        "ids": list(seq.ids),
        "masked": plan.sorted_positions(),
        "provenance": {str(p): plan.provenance[p].value for p in plan.sorted_positions()},
        "t": plan.noise.t,
        "step": plan.step,
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))
