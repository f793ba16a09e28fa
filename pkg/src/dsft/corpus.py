"""Synthetic arithmetic word-problem corpus, JSONL ingestion, and
per-class entropy statistics over the tokenized corpus."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .rng import substream
from .tokenizer import (
    TokenClass,
    TokenizedSequence,
    Vocabulary,
    classify_token,
    tokenize,
)


@dataclass(frozen=True)
class CorpusRecord:
    """One prompt/completion pair; answer is the canonical numeric string
    for exact-match scoring (empty when unknown)."""

    prompt: str
    completion: str
    answer: str = ""

    def __post_init__(self):
        if not self.prompt.strip():
            raise ValueError("prompt must be non-empty")
        if not self.completion.strip():
            raise ValueError("completion must be non-empty")
        if self.answer and self.answer not in self.completion:
            raise ValueError("answer must appear verbatim in the completion")


@dataclass(frozen=True)
class GeneratorSpec:
    count: int = 1000
    ops: tuple[str, ...] = ("+", "-", "*", "/")
    min_operand: int = 2
    max_operand: int = 99
    min_steps: int = 1
    max_steps: int = 3

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        bad = set(self.ops) - set("+-*/")
        if bad:
            raise ValueError(f"unsupported operators: {sorted(bad)}")
        if not (1 <= self.min_operand <= self.max_operand <= 999):
            raise ValueError("operand range must satisfy 1 <= min <= max <= 999")
        if not (1 <= self.min_steps <= self.max_steps <= 3):
            raise ValueError("steps range must satisfy 1 <= min <= max <= 3")


_NAMES = (
    "Tom", "Anna", "Ravi", "Mia", "Leo", "Sara",
    "Ben", "Lily", "Omar", "Ada", "Igor", "Nina",
)
_ITEMS = (
    "apples", "pens", "coins", "books", "marbles",
    "shells", "cards", "stickers", "stamps", "beads",
)

_STEP_PHRASES = {
    "+": (
        "and then {name} finds {b} more of the {item}",
        "and then {name} buys {b} more of the {item}",
    ),
    "-": (
        "and then {name} gives {b} of the {item} away",
        "and then {name} loses {b} of the {item}",
    ),
    "*": ("and then the count of the {item} grows {b} times",),
    "/": ("and then {name} puts the {item} into {b} equal piles and keeps one pile",),
}

# Running value stays inside this bound so multiplications cannot blow up
# the digit count.
_VALUE_CAP = 9999


def generate_corpus(spec: GeneratorSpec, seed: int) -> list[CorpusRecord]:
    """Deterministically generate arithmetic word problems.

    Every completion spells out the full equation chain and ends with
    "The answer is K.", so answers are correct by construction and
    recoverable by the exact-match evaluator.
    """
    rng = substream(seed, "corpus")
    records = []
    for _ in range(spec.count):
        records.append(_one_record(spec, rng))
    return records


def _draw_int(rng: np.random.Generator, lo: int, hi: int) -> int:
    return int(rng.integers(lo, hi + 1))


def _one_record(spec: GeneratorSpec, rng: np.random.Generator) -> CorpusRecord:
    name = _NAMES[_draw_int(rng, 0, len(_NAMES) - 1)]
    item = _ITEMS[_draw_int(rng, 0, len(_ITEMS) - 1)]
    n_steps = _draw_int(rng, spec.min_steps, spec.max_steps)

    value = _draw_int(rng, spec.min_operand, spec.max_operand)
    prompt_parts = [f"{name} has {value} of the {item}"]
    equations = []
    for op_step in range(n_steps):
        op, operand = _pick_step(spec, rng, value)
        result = _apply(op, value, operand)
        phrases = _STEP_PHRASES[op]
        phrase = phrases[_draw_int(rng, 0, len(phrases) - 1)]
        prompt_parts.append(phrase.format(name=name, item=item, b=operand))
        equations.append(f"{value} {op} {operand} = {result}")
        value = result
    prompt_parts.append(f"so how many of the {item} does {name} have at the end?")

    # Connectives between equations keep a result and the next equation's
    # first operand from fusing into one number when detokenized.
    answer = str(value)
    completion = (
        " and then ".join(equations)
        + f" so at the end the count of the {item} is {answer}."
        + f" The answer is {answer}."
    )
    return CorpusRecord(" ".join(prompt_parts), completion, answer)


def _pick_step(spec: GeneratorSpec, rng: np.random.Generator, value: int) -> tuple[str, int]:
    candidates = []
    for op in spec.ops:
        if op == "+":
            candidates.append(op)
        elif op == "-" and value >= 2:
            candidates.append(op)
        elif op == "*" and any(value * b <= _VALUE_CAP for b in range(2, 10)):
            candidates.append(op)
        elif op == "/" and any(value % d == 0 for d in range(2, 10)):
            candidates.append(op)
    if not candidates:
        candidates = ["+"]
    op = candidates[_draw_int(rng, 0, len(candidates) - 1)]

    if op == "+":
        operand = _draw_int(rng, spec.min_operand, spec.max_operand)
    elif op == "-":
        operand = _draw_int(rng, 1, value - 1)
    elif op == "*":
        choices = [b for b in range(2, 10) if value * b <= _VALUE_CAP]
        operand = choices[_draw_int(rng, 0, len(choices) - 1)]
    else:
        divisors = [d for d in range(2, 10) if value % d == 0]
        operand = divisors[_draw_int(rng, 0, len(divisors) - 1)]
    return op, operand


def _apply(op: str, a: int, b: int) -> int:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    return a // b


_EQUATION_RE = re.compile(r"(\d+)\s*([+\-*/])\s*(\d+)\s*=\s*(\d+)")
_ANSWER_RE = re.compile(r"The answer is (\d+)")


def verify_record(record: CorpusRecord) -> bool:
    """Re-parse the completion text and re-compute every equation.

    Deliberately independent of the generator: it sees only the final
    strings. Returns True iff all embedded equations hold and the stated
    answer matches the last result.
    """
    equations = _EQUATION_RE.findall(record.completion)
    if not equations:
        return False
    for a, op, b, c in equations:
        if _apply(op, int(a), int(b)) != int(c):
            return False
    m = _ANSWER_RE.search(record.completion)
    if m is None:
        return False
    if record.answer and m.group(1) != record.answer:
        return False
    return m.group(1) == equations[-1][3]


class CorpusFormatError(ValueError):
    """Raised on malformed JSONL corpus input; message names the line."""


def ingest_jsonl(path) -> list[CorpusRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise CorpusFormatError(f"line {lineno}: expected a JSON object")
            for key in ("prompt", "completion"):
                if key not in obj:
                    raise CorpusFormatError(f"line {lineno}: missing field {key!r}")
                if not isinstance(obj[key], str):
                    raise CorpusFormatError(f"line {lineno}: field {key!r} must be a string")
            answer = obj.get("answer", "")
            if not isinstance(answer, str):
                raise CorpusFormatError(f"line {lineno}: field 'answer' must be a string")
            try:
                records.append(CorpusRecord(obj["prompt"], obj["completion"], answer))
            except ValueError as exc:
                raise CorpusFormatError(f"line {lineno}: {exc}") from exc
    return records


def export_jsonl(records: Sequence[CorpusRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {"prompt": rec.prompt, "completion": rec.completion, "answer": rec.answer},
                    ensure_ascii=False,
                )
                + "\n"
            )


def record_to_sequence(record: CorpusRecord, vocab: Vocabulary) -> TokenizedSequence:
    """Tokenize a record as prompt + SEP + completion."""
    text = record.prompt + " " + record.completion
    return tokenize(text, len(record.prompt), vocab)


@dataclass(frozen=True)
class ClassStats:
    p_mass: float
    mean_surprisal_nats: float
    entropy_nats: float
    token_count: int


@dataclass(frozen=True)
class EntropyReport:
    per_class: dict[TokenClass, ClassStats]
    total_entropy_nats: float
    token_count: int

    @property
    def total_entropy_bits(self) -> float:
        return self.total_entropy_nats / math.log(2.0)

    def to_json_dict(self) -> dict:
        classes = []
        for cls in TokenClass:
            if cls not in self.per_class:
                continue
            st = self.per_class[cls]
            classes.append(
                {
                    "class": cls.value,
                    "p_mass": st.p_mass,
                    "mean_surprisal_nats": st.mean_surprisal_nats,
                    "entropy_nats": st.entropy_nats,
                    "token_count": st.token_count,
                }
            )
        return {
            "token_count": self.token_count,
            "total_entropy_nats": self.total_entropy_nats,
            "total_entropy_bits": self.total_entropy_bits,
            "classes": classes,
        }

    def render_table(self) -> str:
        lines = [
            f"tokens: {self.token_count}",
            f"entropy: {self.total_entropy_nats:.6f} nats"
            f" ({self.total_entropy_bits:.6f} bits)",
            f"{'class':<10} {'p_mass':>10} {'surprisal':>12} {'entropy':>10} {'count':>10}",
        ]
        for cls in TokenClass:
            if cls not in self.per_class:
                continue
            st = self.per_class[cls]
            lines.append(
                f"{cls.value:<10} {st.p_mass:>10.6f} {st.mean_surprisal_nats:>12.6f}"
                f" {st.entropy_nats:>10.6f} {st.token_count:>10}"
            )
        return "\n".join(lines)


def token_counts(corpus: Iterable[TokenizedSequence], vocab: Vocabulary) -> np.ndarray:
    """Occurrence counts over content tokens. Structural specials (SEP)
    are not part of the text distribution and are excluded."""
    counts = np.zeros(len(vocab), dtype=np.int64)
    for seq in corpus:
        for idx, cls in zip(seq.ids, seq.classes):
            if cls is not TokenClass.SPECIAL:
                counts[idx] += 1
    return counts


def entropy_report(corpus: Sequence[TokenizedSequence], vocab: Vocabulary) -> EntropyReport:
    """Empirical unigram entropy in nats, with occurrence-weighted mean
    surprisal and entropy contribution per token class."""
    if not corpus:
        raise ValueError("corpus must be non-empty")
    counts = token_counts(corpus, vocab)
    total = int(counts.sum())
    p = counts / total

    per_class: dict[TokenClass, ClassStats] = {}
    total_entropy = 0.0
    for cls in TokenClass:
        members = [i for i in range(len(vocab)) if counts[i] > 0
                   and classify_token(vocab.token_of(i)) is cls]
        if not members:
            continue
        mass = float(p[members].sum())
        surprisal = -np.log(p[members])
        mean_surprisal = float((counts[members] * surprisal).sum() / counts[members].sum())
        entropy = float((p[members] * surprisal).sum())
        per_class[cls] = ClassStats(mass, mean_surprisal, entropy, int(counts[members].sum()))
        total_entropy += entropy
    return EntropyReport(per_class, total_entropy, total)


def surprisal_comparison(
    corpus: Sequence[TokenizedSequence], vocab: Vocabulary, top_k: int = 10
) -> tuple[float, float, list[str]]:
    """Mean surprisal of numeric tokens vs the top_k most frequent words.

    Returns (numeric_mean, stopword_mean, stopwords). The interesting
    direction on mathematical text is numeric_mean > stopword_mean.
    """
    counts = token_counts(corpus, vocab)
    total = counts.sum()
    numeric_ids = [i for i in range(len(vocab)) if counts[i] > 0
                   and classify_token(vocab.token_of(i)) is TokenClass.NUMERIC]
    word_ids = [i for i in range(len(vocab)) if counts[i] > 0
                and classify_token(vocab.token_of(i)) is TokenClass.WORD]
    if not numeric_ids or not word_ids:
        raise ValueError("corpus must contain both numeric and word tokens")
    word_ids.sort(key=lambda i: (-counts[i], vocab.token_of(i)))
    stop_ids = word_ids[:top_k]

    def mean_surprisal(ids: list[int]) -> float:
        c = counts[ids]
        return float((c * -np.log(c / total)).sum() / c.sum())

    return mean_surprisal(numeric_ids), mean_surprisal(stop_ids), [vocab.token_of(i) for i in stop_ids]
