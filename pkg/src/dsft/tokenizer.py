"""Word-level tokenizer with per-digit numbers and token-class tags.

Numbers are split into single-digit tokens so the numeric token set is
closed (digits plus the decimal point) at any corpus size, and every
token carries a context-free class: Numeric, Operator, Word or Special.
Downstream masking and loss weighting key off these classes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator

VOCAB_HEADER = "DSFT-VOCAB v1"

MASK_TOKEN = "[MASK]"
PAD_TOKEN = "[PAD]"
BOS_TOKEN = "[BOS]"
EOS_TOKEN = "[EOS]"
SEP_TOKEN = "[SEP]"
UNK_TOKEN = "<unk>"

# Fixed ids for the five specials, in file order.
MASK_ID = 0
PAD_ID = 1
BOS_ID = 2
EOS_ID = 3
SEP_ID = 4

SPECIAL_TOKENS = (MASK_TOKEN, PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, SEP_TOKEN)

DIGIT_CHARS = "0123456789"
POINT_CHAR = "."
# ASCII forms first; unicode minus/times/divide kept as aliases seen in text.
OPERATOR_CHARS = "+-*/=<>%()×÷−"

_ATOMIC_CHARS = set(DIGIT_CHARS + POINT_CHAR + OPERATOR_CHARS)


class TokenClass(Enum):
    NUMERIC = "numeric"
    OPERATOR = "operator"
    WORD = "word"
    SPECIAL = "special"


class TokenizeError(ValueError):
    """Raised when text cannot be mapped to vocabulary ids."""


def classify_token(token: str) -> TokenClass:
    """Class of a token string; pure and total, no context involved."""
    if token in SPECIAL_TOKENS:
        return TokenClass.SPECIAL
    if len(token) == 1 and (token in DIGIT_CHARS or token == POINT_CHAR):
        return TokenClass.NUMERIC
    if len(token) == 1 and token in OPERATOR_CHARS:
        return TokenClass.OPERATOR
    return TokenClass.WORD


def lex(text: str) -> list[tuple[str, int]]:
    """Split text into (token, offset) pairs.

    Digits, the decimal point and operator symbols are atomic single-char
    tokens; everything else groups into maximal word runs between them.
    """
    out: list[tuple[str, int]] = []
    word_start = -1
    for i, ch in enumerate(text):
        if ch.isspace() or ch in _ATOMIC_CHARS:
            if word_start >= 0:
                out.append((text[word_start:i], word_start))
                word_start = -1
            if not ch.isspace():
                out.append((ch, i))
        elif word_start < 0:
            word_start = i
    if word_start >= 0:
        out.append((text[word_start:], word_start))
    return out


@dataclass(frozen=True)
class Vocabulary:
    """Immutable dense token<->id table with the five specials at ids 0-4."""

    tokens: tuple[str, ...]
    _ids: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        if tuple(self.tokens[:5]) != SPECIAL_TOKENS:
            raise ValueError("special tokens must occupy ids 0-4 in fixed order")
        ids = {tok: i for i, tok in enumerate(self.tokens)}
        if len(ids) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")
        object.__setattr__(self, "_ids", ids)

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int | None:
        return self._ids.get(token)

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    @property
    def unk_id(self) -> int | None:
        return self._ids.get(UNK_TOKEN)


@dataclass(frozen=True)
class TokenizedSequence:
    """Token ids with per-token classes and a prompt/completion boundary.

    prompt_len counts the leading prompt tokens including the SEP that
    closes them; everything at and past prompt_len is completion.
    """

    ids: tuple[int, ...]
    classes: tuple[TokenClass, ...]
    prompt_len: int

    def __post_init__(self):
        if len(self.ids) != len(self.classes):
            raise ValueError("ids and classes length mismatch")
        if not (0 < self.prompt_len < len(self.ids)):
            raise ValueError("prompt must be non-empty and completion non-empty")
        if self.ids[self.prompt_len - 1] != SEP_ID:
            raise ValueError("position prompt_len-1 must hold SEP")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def completion_positions(self) -> range:
        return range(self.prompt_len, len(self.ids))


@dataclass(frozen=True)
class TokenizerConfig:
    min_word_freq: int = 2


def build_vocab(corpus: Iterable[str], config: TokenizerConfig = TokenizerConfig()) -> Vocabulary:
    """Build a vocabulary: specials, digits, point, operators, UNK, then
    every word at or above the frequency floor, most frequent first."""
    counts: dict[str, int] = {}
    n_records = 0
    for record in corpus:
        n_records += 1
        for tok, _ in lex(record):
            if classify_token(tok) is TokenClass.WORD:
                counts[tok] = counts.get(tok, 0) + 1
    if n_records == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")

    tokens = list(SPECIAL_TOKENS)
    tokens.extend(DIGIT_CHARS)
    tokens.append(POINT_CHAR)
    tokens.extend(OPERATOR_CHARS)
    tokens.append(UNK_TOKEN)
    words = [w for w, c in counts.items() if c >= config.min_word_freq]
    words.sort(key=lambda w: (-counts[w], w))
    tokens.extend(words)
    return Vocabulary(tuple(tokens))


def tokenize(text: str, prompt_boundary: int, vocab: Vocabulary) -> TokenizedSequence:
    """Tokenize prompt+completion text, inserting SEP at the boundary.

    prompt_boundary is an offset into text and must fall on a whitespace
    boundary (it may not split a token chunk).
    """
    if not (0 < prompt_boundary < len(text)):
        raise TokenizeError("prompt boundary must lie strictly inside the text")
    if not (text[prompt_boundary - 1].isspace() or text[prompt_boundary].isspace()):
        raise TokenizeError(f"prompt boundary at offset {prompt_boundary} splits a token")

    def encode(part: str, base: int) -> tuple[list[int], list[TokenClass]]:
        ids: list[int] = []
        classes: list[TokenClass] = []
        for tok, off in lex(part):
            cls = classify_token(tok)
            idx = vocab.id_of(tok)
            if idx is None:
                if cls is TokenClass.WORD and vocab.unk_id is not None:
                    idx = vocab.unk_id
                else:
                    raise TokenizeError(
                        f"token {tok!r} at offset {base + off} not in vocabulary"
                    )
            ids.append(idx)
            classes.append(cls)
        return ids, classes

    p_ids, p_classes = encode(text[:prompt_boundary], 0)
    c_ids, c_classes = encode(text[prompt_boundary:], prompt_boundary)
    if not p_ids:
        raise TokenizeError("prompt region is empty")
    if not c_ids:
        raise TokenizeError("completion region is empty")

    ids = p_ids + [SEP_ID] + c_ids
    classes = p_classes + [TokenClass.SPECIAL] + c_classes
    return TokenizedSequence(tuple(ids), tuple(classes), len(p_ids) + 1)


def encode_prompt(text: str, vocab: Vocabulary) -> list[int]:
    """Encode bare prompt text and close it with SEP, for generation."""
    ids: list[int] = []
    for tok, off in lex(text):
        idx = vocab.id_of(tok)
        if idx is None:
            if classify_token(tok) is TokenClass.WORD and vocab.unk_id is not None:
                idx = vocab.unk_id
            else:
                raise TokenizeError(f"token {tok!r} at offset {off} not in vocabulary")
        ids.append(idx)
    if not ids:
        raise TokenizeError("prompt is empty")
    ids.append(SEP_ID)
    return ids


def detokenize(ids: Iterable[int], vocab: Vocabulary) -> str:
    """Render ids back to text.

    Adjacent numeric tokens glue into number literals and a point after a
    word attaches as sentence punctuation; special tokens are dropped.
    Round trips generated corpus text up to whitespace normalization.
    """
    pieces: list[str] = []
    prev: str | None = None
    for idx in ids:
        tok = vocab.token_of(idx)
        if classify_token(tok) is TokenClass.SPECIAL:
            continue
        if prev is None:
            pieces.append(tok)
        elif (
            classify_token(tok) is TokenClass.NUMERIC
            and classify_token(prev) is TokenClass.NUMERIC
        ) or tok == POINT_CHAR:
            pieces.append(tok)
        else:
            pieces.append(" " + tok)
        prev = tok
    return "".join(pieces)


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


def save_vocab(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(VOCAB_HEADER + "\n")
        for tok in vocab.tokens:
            fh.write(tok + "\n")


def load_vocab(path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != VOCAB_HEADER:
            raise ValueError(f"not a vocabulary file (header {header!r})")
        tokens = [line.rstrip("\n") for line in fh]
    while tokens and tokens[-1] == "":
        tokens.pop()
    return Vocabulary(tuple(tokens))


def iter_token_strings(seq: TokenizedSequence, vocab: Vocabulary) -> Iterator[str]:
    for idx in seq.ids:
        yield vocab.token_of(idx)
