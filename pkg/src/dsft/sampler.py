"""Generation by iterative unmasking.

The completion starts fully masked; each of the K steps runs the
denoiser and commits the scheduled number of most-confident masked
positions to their predicted tokens. Committed tokens are never revoked
and the prompt is never altered.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelConfig, Params, forward
from .tokenizer import MASK_ID


@dataclass(frozen=True)
class DecodeConfig:
    steps: int = 16
    completion_len: int = 32
    temperature: float = 0.0
    # Optional explicit per-step commit counts; must sum to completion_len.
    schedule: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.completion_len < 1:
            raise ValueError("completion length must be >= 1")
        if self.temperature < 0.0:
            raise ValueError("temperature must be >= 0")

    def commit_schedule(self) -> list[int]:
        """Per-step commit counts; near-even split with remainders early."""
        if self.schedule is not None:
            counts = list(self.schedule)
            if len(counts) != self.steps or any(c < 0 for c in counts):
                raise ValueError("schedule must list one non-negative count per step")
            if sum(counts) != self.completion_len:
                raise ValueError(
                    f"scheduled commits sum to {sum(counts)}, "
                    f"need completion length {self.completion_len}"
                )
            return counts
        base, extra = divmod(self.completion_len, self.steps)
        return [base + (1 if i < extra else 0) for i in range(self.steps)]


@dataclass
class DecodeTraceStep:
    step: int
    committed: list[int]
    tokens: list[int]
    confidences: list[float]

    def to_json_dict(self) -> dict:
        return {
            "step": self.step,
            "committed": self.committed,
            "tokens": self.tokens,
            "confidences": self.confidences,
        }


def generate(
    params: Params,
    config: ModelConfig,
    prompt_ids,
    decode: DecodeConfig,
    rng: np.random.Generator | None = None,
    trace: list | None = None,
) -> list[int]:
    """Generate completion ids for a prompt (prompt must end with SEP).

    Temperature 0 commits argmax tokens deterministically; otherwise
    tokens are sampled and ranked by their sampled probability. Ties in
    confidence break toward the lower position.
    """
    prompt_ids = [int(t) for t in prompt_ids]
    total_len = len(prompt_ids) + decode.completion_len
    if total_len > config.max_len:
        raise ValueError(f"prompt + completion length {total_len} exceeds max_len")
    if decode.temperature > 0.0 and rng is None:
        raise ValueError("sampling at temperature > 0 requires an rng")

    schedule = decode.commit_schedule()
    x = np.array(prompt_ids + [MASK_ID] * decode.completion_len, dtype=np.int64)
    open_positions = set(range(len(prompt_ids), total_len))

    for step, n_commit in enumerate(schedule):
        logits = forward(params, config, x)
        if n_commit == 0:
            continue
        candidates = []
        for p in sorted(open_positions):
            row = logits[p].astype(np.float64).copy()
            row[MASK_ID] = -np.inf  # never commit a mask token
            if decode.temperature == 0.0:
                tok = int(row.argmax())
                z = row - row.max()
                conf = float(np.exp(z[tok]) / np.exp(z).sum())
            else:
                z = (row - row.max()) / decode.temperature
                probs = np.exp(z)
                probs /= probs.sum()
                tok = int(rng.choice(len(probs), p=probs))
                conf = float(probs[tok])
            candidates.append((p, tok, conf))

        candidates.sort(key=lambda c: (-c[2], c[0]))
        chosen = candidates[:n_commit]
        for p, tok, _ in chosen:
            x[p] = tok
            open_positions.discard(p)
        if trace is not None:
            trace.append(
                DecodeTraceStep(
                    step,
                    [c[0] for c in chosen],
                    [c[1] for c in chosen],
                    [c[2] for c in chosen],
                )
            )

    assert not open_positions and MASK_ID not in x[len(prompt_ids):]
    return [int(t) for t in x[len(prompt_ids):]]
