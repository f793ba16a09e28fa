"""Training: masked cross-entropy objectives (uniform and
numeric-weighted), exact reverse-mode batch gradients, an Adam optimizer,
and a fully reproducible step loop.

Reduction discipline: gradients are always computed per sequence and
summed in batch-slot order, so the result is bit-identical for any
worker count, and the per-(step, slot) random streams make the whole run
a pure function of (config, seed).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .corpus import CorpusRecord, record_to_sequence
from .masking import (
    MaskConfig,
    MaskPlan,
    apply_mask,
    compose_mask_plan,
    curriculum_ratio,
)
from .model import (
    ModelConfig,
    Params,
    backward,
    forward_with_cache,
    init_params,
    zeros_like_params,
)
from .rng import substream
from .tokenizer import TokenClass, TokenizedSequence, Vocabulary

MODE_SFT = "sft"
MODE_DSFT = "dsft"

OBJECTIVE_SFT = "sft"
OBJECTIVE_DSFT_WEIGHTED = "dsft-weighted"


class NonFiniteLossError(RuntimeError):
    def __init__(self, message: str, report: "TrainStepReport | None" = None):
        super().__init__(message)
        self.report = report


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, report: "TrainStepReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class LossWeights:
    """Per-masked-position loss weights: w_num on numeric targets, 1.0
    elsewhere."""

    w: dict[int, float]

    @classmethod
    def for_plan(cls, seq: TokenizedSequence, plan: MaskPlan, w_num: float) -> "LossWeights":
        if w_num < 1.0:
            raise ValueError("w_num must be >= 1")
        return cls(
            {
                p: (w_num if seq.classes[p] is TokenClass.NUMERIC else 1.0)
                for p in plan.masked
            }
        )


def _ce_rows(logits: np.ndarray, targets: Sequence[int], positions: list[int]) -> list[float]:
    """Per-position cross entropy at the given rows, in float64."""
    out = []
    for p in positions:
        row = logits[p].astype(np.float64)
        m = row.max()
        lse = m + math.log(np.exp(row - m).sum())
        out.append(lse - float(row[targets[p]]))
    return out


def sft_loss(logits: np.ndarray, targets: Sequence[int], plan: MaskPlan,
             sum_mode: bool = False) -> float:
    """Cross entropy over masked positions only; mean over the masked
    count unless sum_mode requests the raw sum."""
    positions = plan.sorted_positions()
    if not positions:
        raise ValueError("mask plan is empty")
    ces = _ce_rows(logits, targets, positions)
    total = 0.0
    for ce in ces:
        total += ce
    return total if sum_mode else total / float(len(positions))


def weighted_loss(
    logits: np.ndarray, targets: Sequence[int], plan: MaskPlan, weights: LossWeights
) -> float:
    """Weighted cross entropy over masked positions, normalized by the
    total weight. With unit weights this is bit-identical to sft_loss."""
    positions = plan.sorted_positions()
    if set(weights.w) != set(positions):
        raise ValueError("weights must be defined exactly on the masked positions")
    for p, w in weights.w.items():
        if not (w > 0.0):
            raise ValueError(f"weight at position {p} must be positive, got {w}")
    ces = _ce_rows(logits, targets, positions)
    num = 0.0
    den = 0.0
    for p, ce in zip(positions, ces):
        num += weights.w[p] * ce
        den += weights.w[p]
    return num / den


def _loss_and_dlogits(
    logits: np.ndarray,
    targets: Sequence[int],
    plan: MaskPlan,
    weights: LossWeights | None,
    sum_mode: bool = False,
):
    """Loss plus its gradient with respect to the logits (zero at every
    unmasked row; unmasked positions never contribute)."""
    positions = plan.sorted_positions()
    if weights is None:
        loss = sft_loss(logits, targets, plan, sum_mode=sum_mode)
        scales = {p: (1.0 if sum_mode else 1.0 / len(positions)) for p in positions}
    else:
        loss = weighted_loss(logits, targets, plan, weights)
        total_w = 0.0
        for p in positions:
            total_w += weights.w[p]
        scales = {p: weights.w[p] / total_w for p in positions}

    dlogits = np.zeros_like(logits)
    for p in positions:
        row = logits[p]
        m = row.max()
        e = np.exp(row - m)
        soft = e / e.sum()
        soft[targets[p]] -= 1.0
        dlogits[p] = soft * np.asarray(scales[p], dtype=logits.dtype)
    return loss, dlogits


@dataclass
class SequenceStats:
    loss: float
    masked: int
    numeric_masked: int


def sequence_grad(
    params: Params,
    model_config: ModelConfig,
    seq: TokenizedSequence,
    plan: MaskPlan,
    objective: str,
    w_num: float = 2.0,
    sum_mode: bool = False,
) -> tuple[Params, SequenceStats]:
    """Exact gradients of the chosen per-sequence loss."""
    if objective not in (OBJECTIVE_SFT, OBJECTIVE_DSFT_WEIGHTED):
        raise ValueError(f"unknown objective {objective!r}")
    x_t = apply_mask(seq, plan)
    logits, cache = forward_with_cache(params, model_config, x_t)
    weights = (
        LossWeights.for_plan(seq, plan, w_num)
        if objective == OBJECTIVE_DSFT_WEIGHTED
        else None
    )
    loss, dlogits = _loss_and_dlogits(logits, list(seq.ids), plan, weights, sum_mode)
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss {loss}")
    grads = backward(params, model_config, cache, dlogits)
    numeric = sum(1 for p in plan.masked if seq.classes[p] is TokenClass.NUMERIC)
    return grads, SequenceStats(loss, len(plan.masked), numeric)


def grad_batch(
    params: Params,
    model_config: ModelConfig,
    items: Sequence[tuple[TokenizedSequence, MaskPlan]],
    objective: str,
    w_num: float = 2.0,
    sum_mode: bool = False,
    workers: int = 1,
) -> tuple[Params, SequenceStats]:
    """Mean-over-batch gradients, reduced in slot order regardless of
    worker count."""
    def one(item):
        seq, plan = item
        return sequence_grad(params, model_config, seq, plan, objective, w_num, sum_mode)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(item) for item in items]

    acc = zeros_like_params(params)
    loss = 0.0
    masked = 0
    numeric = 0
    for grads, stats in results:  # fixed slot order
        for name in acc:
            acc[name] += grads[name]
        loss += stats.loss
        masked += stats.masked
        numeric += stats.numeric_masked
    for name in acc:
        acc[name] *= 1.0 / len(items)
    return acc, SequenceStats(loss / len(items), masked, numeric)


@dataclass
class AdamState:
    m: Params
    v: Params
    t: int = 0

    @classmethod
    def fresh(cls, params: Params) -> "AdamState":
        return cls(zeros_like_params(params), zeros_like_params(params), 0)


def optimizer_step(
    params: Params,
    grads: Params,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """In-place Adam update with bias correction."""
    state.t += 1
    b1t = 1.0 - beta1 ** state.t
    b2t = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / b1t) / (np.sqrt(v / b2t) + eps)


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig
    mask: MaskConfig = field(default_factory=MaskConfig)
    mode: str = MODE_DSFT
    learning_rate: float = 3e-4
    batch_size: int = 16
    steps: int = 2000
    w_num: float = 2.0
    seed: int = 0
    workers: int = 1
    checkpoint_every: int = 0
    sft_sum_loss: bool = False

    def __post_init__(self):
        if self.mode not in (MODE_SFT, MODE_DSFT):
            raise ValueError(f"mode must be '{MODE_SFT}' or '{MODE_DSFT}'")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be > 0")
        if self.w_num < 1.0:
            raise ValueError("w_num must be >= 1")
        if self.batch_size < 1 or self.steps < 1 or self.workers < 1:
            raise ValueError("batch_size, steps and workers must be >= 1")

    def effective_mask_config(self) -> MaskConfig:
        """SFT mode reduces masking to the uniform-noise baseline."""
        if self.mode == MODE_SFT:
            return MaskConfig.sft_baseline(epsilon=self.mask.epsilon)
        return self.mask

    def objective(self) -> str:
        if self.mode == MODE_DSFT and self.mask.enable_weighted_loss:
            return OBJECTIVE_DSFT_WEIGHTED
        return OBJECTIVE_SFT

    def to_json_dict(self) -> dict:
        mask = self.mask
        return {
            "mode": self.mode,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "steps": self.steps,
            "w_num": self.w_num,
            "seed": self.seed,
            "workers": self.workers,
            "checkpoint_every": self.checkpoint_every,
            "sft_sum_loss": self.sft_sum_loss,
            "model": self.model.to_json_dict(),
            "mask": {
                "epsilon": mask.epsilon,
                "number_fraction": mask.number_fraction,
                "span_prob": mask.span_prob,
                "span_len": mask.span_len,
                "base": mask.base,
                "curriculum.r_min": mask.schedule.r_min,
                "curriculum.r_max": mask.schedule.r_max,
                "curriculum.total_steps": mask.schedule.total_steps,
                "enable.number_first": mask.enable_number_first,
                "enable.span": mask.enable_span,
                "enable.curriculum": mask.enable_curriculum,
                "enable.weighted_loss": mask.enable_weighted_loss,
            },
        }


@dataclass
class TrainStepReport:
    step: int
    loss: float
    masked_count: int
    numeric_masked: int
    grad_norm: float
    curriculum_ratio: float

    def to_json_dict(self) -> dict:
        return {
            "step": self.step,
            "loss": self.loss,
            "masked_count": self.masked_count,
            "numeric_masked": self.numeric_masked,
            "grad_norm": self.grad_norm,
            "curriculum_ratio": self.curriculum_ratio,
        }


@dataclass
class TrainResult:
    params: Params
    opt_state: AdamState
    reports: list[TrainStepReport]
    step: int


def _grad_norm(grads: Params) -> float:
    total = 0.0
    for name in grads:
        g = grads[name].astype(np.float64)
        total += float((g * g).sum())
    return math.sqrt(total)


DIVERGENCE_FACTOR = 10.0
DIVERGENCE_PATIENCE = 50


def train(
    config: TrainConfig,
    records: Sequence[CorpusRecord],
    vocab: Vocabulary,
    out_dir: str | None = None,
    on_report: Callable[[TrainStepReport], None] | None = None,
    start_params: Params | None = None,
    start_opt: AdamState | None = None,
    start_step: int = 0,
    ckpt_meta: dict | None = None,
) -> TrainResult:
    """Run the optimizer loop: mask, corrupt, denoise, backprop, update.

    Reproducible as a pure function of (config, seed): batches, mask
    plans and init all come from named substreams keyed by absolute step,
    which also makes --resume exact.
    """
    if not records:
        raise ValueError("training corpus is empty")
    seqs = [record_to_sequence(r, vocab) for r in records]
    mask_config = config.effective_mask_config()
    objective = config.objective()

    params = start_params if start_params is not None else init_params(config.model, config.seed)
    opt = start_opt if start_opt is not None else AdamState.fresh(params)

    reports: list[TrainStepReport] = []
    initial_loss: float | None = None
    bad_streak = 0

    def checkpoint(step: int, tag: str) -> None:
        if out_dir is None:
            return
        tensors: Params = dict(params)
        for name, arr in opt.m.items():
            tensors["opt.m." + name] = arr
        for name, arr in opt.v.items():
            tensors["opt.v." + name] = arr
        meta = {"opt_t": opt.t, "train_config": config.to_json_dict()}
        meta.update(ckpt_meta or {})
        save_checkpoint(
            os.path.join(out_dir, tag), tensors, config.model, step, config.seed, meta
        )

    for step in range(start_step, config.steps):
        batch_rng = substream(config.seed, "batch", step)
        idx = batch_rng.integers(0, len(seqs), size=config.batch_size)
        items = []
        for slot, i in enumerate(idx):
            seq = seqs[int(i)]
            plan = compose_mask_plan(
                seq, mask_config, step, substream(config.seed, "mask", step, slot)
            )
            items.append((seq, plan))

        try:
            grads, stats = grad_batch(
                params,
                config.model,
                items,
                objective,
                w_num=config.w_num,
                sum_mode=config.sft_sum_loss,
                workers=config.workers,
            )
        except NonFiniteLossError as exc:
            report = TrainStepReport(step, float("nan"), 0, 0, float("nan"),
                                     curriculum_ratio(mask_config.schedule, step))
            raise NonFiniteLossError(str(exc), report) from exc

        report = TrainStepReport(
            step,
            stats.loss,
            stats.masked,
            stats.numeric_masked,
            _grad_norm(grads),
            curriculum_ratio(mask_config.schedule, step),
        )
        reports.append(report)
        if on_report is not None:
            on_report(report)

        if initial_loss is None:
            initial_loss = stats.loss
        if stats.loss > DIVERGENCE_FACTOR * initial_loss:
            bad_streak += 1
            if bad_streak >= DIVERGENCE_PATIENCE:
                raise TrainingDiverged(
                    f"loss {stats.loss:.4g} above {DIVERGENCE_FACTOR}x initial "
                    f"{initial_loss:.4g} for {bad_streak} consecutive steps",
                    report,
                )
        else:
            bad_streak = 0

        optimizer_step(params, grads, opt, config.learning_rate)

        done = step + 1
        if config.checkpoint_every and done % config.checkpoint_every == 0 and done < config.steps:
            checkpoint(done, f"ckpt_{done:06d}")

    checkpoint(config.steps, "ckpt_final")
    return TrainResult(params, opt, reports, config.steps)


def split_checkpoint_tensors(tensors: Params) -> tuple[Params, AdamState | None]:
    """Separate model parameters from optimizer moments in a loaded
    checkpoint tensor map."""
    params: Params = {}
    m: Params = {}
    v: Params = {}
    for name, arr in tensors.items():
        if name.startswith("opt.m."):
            m[name[len("opt.m."):]] = arr
        elif name.startswith("opt.v."):
            v[name[len("opt.v."):]] = arr
        else:
            params[name] = arr
    if not m:
        return params, None
    return params, AdamState(m, v, 0)
