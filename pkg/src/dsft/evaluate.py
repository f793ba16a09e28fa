"""Evaluation: masked-reconstruction accuracy stratified by token class,
exact-match answer accuracy, and side-by-side run comparisons.

Evaluation masking depends only on (corpus, seed), never on the model
under test, so two checkpoints always face identical masks.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import CorpusRecord, record_to_sequence
from .masking import CurriculumSchedule, MaskConfig, apply_mask, compose_mask_plan
from .model import ModelConfig, Params, forward
from .rng import substream
from .sampler import DecodeConfig, generate
from .tokenizer import TokenClass, Vocabulary, detokenize

# Mid-band masking ratio used for all reconstruction evals.
EVAL_MASK_RATIO = 0.15


def corpus_fingerprint(records: Sequence[CorpusRecord]) -> str:
    h = hashlib.sha256()
    for rec in records:
        h.update(json.dumps([rec.prompt, rec.completion, rec.answer]).encode("utf-8"))
    return h.hexdigest()


def _eval_mask_config() -> MaskConfig:
    return MaskConfig(
        schedule=CurriculumSchedule(
            r_min=EVAL_MASK_RATIO, r_max=EVAL_MASK_RATIO, total_steps=1
        ),
        enable_number_first=False,
        enable_span=False,
        enable_curriculum=False,
        enable_weighted_loss=False,
        base="r-min",
    )


@dataclass(frozen=True)
class EvalReport:
    acc_overall: float
    acc_numeric: float | None
    acc_operator: float | None
    acc_word: float | None
    exact_match: float | None
    n: int
    seed: int
    fingerprint: str
    counts: dict[str, int]

    def to_json_dict(self) -> dict:
        return {
            "acc_overall": self.acc_overall,
            "acc_numeric": self.acc_numeric,
            "acc_operator": self.acc_operator,
            "acc_word": self.acc_word,
            "exact_match": self.exact_match,
            "n": self.n,
            "seed": self.seed,
            "fingerprint": self.fingerprint,
            "counts": self.counts,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "EvalReport":
        return cls(
            acc_overall=obj["acc_overall"],
            acc_numeric=obj["acc_numeric"],
            acc_operator=obj["acc_operator"],
            acc_word=obj["acc_word"],
            exact_match=obj["exact_match"],
            n=obj["n"],
            seed=obj["seed"],
            fingerprint=obj["fingerprint"],
            counts=dict(obj.get("counts", {})),
        )


_CLASS_KEYS = {
    TokenClass.NUMERIC: "numeric",
    TokenClass.OPERATOR: "operator",
    TokenClass.WORD: "word",
}


def reconstruction_eval(
    params: Params,
    model_config: ModelConfig,
    records: Sequence[CorpusRecord],
    vocab: Vocabulary,
    seed: int,
    exact_match: float | None = None,
) -> EvalReport:
    """Mask each record with the frozen eval seed, predict argmax at the
    masked positions, and tally accuracy overall and per target class."""
    mask_config = _eval_mask_config()
    hit = {cls: 0 for cls in _CLASS_KEYS}
    tot = {cls: 0 for cls in _CLASS_KEYS}
    for i, rec in enumerate(records):
        seq = record_to_sequence(rec, vocab)
        plan = compose_mask_plan(seq, mask_config, 0, substream(seed, "eval-mask", i))
        logits = forward(params, model_config, apply_mask(seq, plan))
        for p in plan.sorted_positions():
            cls = seq.classes[p]
            tot[cls] += 1
            if int(logits[p].argmax()) == seq.ids[p]:
                hit[cls] += 1

    n = sum(tot.values())
    if n == 0:
        raise ValueError("no positions were masked during evaluation")

    def acc(cls: TokenClass) -> float | None:
        return hit[cls] / tot[cls] if tot[cls] else None

    return EvalReport(
        acc_overall=sum(hit.values()) / n,
        acc_numeric=acc(TokenClass.NUMERIC),
        acc_operator=acc(TokenClass.OPERATOR),
        acc_word=acc(TokenClass.WORD),
        exact_match=exact_match,
        n=n,
        seed=seed,
        fingerprint=corpus_fingerprint(records),
        counts={_CLASS_KEYS[cls]: tot[cls] for cls in _CLASS_KEYS},
    )


_DIGIT_RUN_RE = re.compile(r"[0-9.]+")


def extract_answer(text: str) -> str | None:
    """Last maximal digit/decimal-point run containing at least one digit."""
    best = None
    for m in _DIGIT_RUN_RE.finditer(text):
        if any(c.isdigit() for c in m.group()):
            best = m.group()
    return best


def normalize_answer(s: str) -> str:
    """Whitespace, trailing sentence periods and leading zeros do not
    count: '07' matches '7'."""
    s = s.strip().rstrip(".")
    if not s:
        return ""
    return s.lstrip("0") or "0"


def exact_match_eval(
    params: Params,
    model_config: ModelConfig,
    records: Sequence[CorpusRecord],
    vocab: Vocabulary,
    decode: DecodeConfig,
    rng: np.random.Generator | None = None,
) -> tuple[float, list[dict]]:
    """Generate a completion per prompt and compare the extracted final
    number to the canonical answer. Returns (rate, per-record log)."""
    if not records:
        raise ValueError("no records to evaluate")
    log = []
    correct = 0
    for i, rec in enumerate(records):
        if not rec.answer:
            raise ValueError(f"record {i} has no canonical answer")
        seq = record_to_sequence(rec, vocab)
        prompt_ids = list(seq.ids[: seq.prompt_len])
        completion_ids = generate(params, model_config, prompt_ids, decode, rng)
        text = detokenize(completion_ids, vocab)
        extracted = extract_answer(text)
        ok = extracted is not None and normalize_answer(extracted) == normalize_answer(
            rec.answer
        )
        correct += ok
        log.append(
            {
                "record": i,
                "answer": rec.answer,
                "extracted": extracted,
                "correct": bool(ok),
                "text": text,
            }
        )
    return correct / len(records), log


def relative_delta(a: float, b: float) -> float:
    """Relative change from a to b, as used in comparison tables."""
    if a == 0:
        raise ZeroDivisionError("baseline metric is zero; relative delta undefined")
    return (b - a) / a


def format_delta(rel: float) -> str:
    arrow = "=" if rel == 0 else ("↑" if rel > 0 else "↓")
    return f"{arrow}{abs(rel) * 100:.2f}%"


_METRICS = ("acc_overall", "acc_numeric", "acc_operator", "acc_word", "exact_match")


def compare_runs(a: EvalReport, b: EvalReport) -> list[dict]:
    """Per-metric absolute and relative deltas of b over a.

    Refuses apples-to-oranges comparisons: both reports must carry the
    same corpus fingerprint and eval seed.
    """
    if a.fingerprint != b.fingerprint:
        raise ValueError("reports have different corpus fingerprints")
    if a.seed != b.seed:
        raise ValueError("reports have different eval seeds")
    rows = []
    for metric in _METRICS:
        va, vb = getattr(a, metric), getattr(b, metric)
        if va is None or vb is None:
            continue
        rel = relative_delta(va, vb) if va != 0 else None
        rows.append(
            {
                "metric": metric,
                "a": va,
                "b": vb,
                "abs_delta": vb - va,
                "rel_delta": rel,
                "rendered": format_delta(rel) if rel is not None else "n/a",
            }
        )
    return rows


def render_comparison(rows: list[dict]) -> str:
    lines = [f"{'metric':<14} {'a':>10} {'b':>10} {'abs':>10} {'rel':>10}"]
    for row in rows:
        lines.append(
            f"{row['metric']:<14} {row['a']:>10.4f} {row['b']:>10.4f}"
            f" {row['abs_delta']:>+10.4f} {row['rendered']:>10}"
        )
    return "\n".join(lines)
